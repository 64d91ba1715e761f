#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/data/frame.hpp"

namespace modclass::signal {

using Complex = std::complex<double>;
using ComplexSignal = std::vector<Complex>;

enum class ModulationMode : std::uint8_t { OOK, ASK4, BPSK, QPSK, PSK8, QAM16, QAM64, GMSK, FM };

inline constexpr std::size_t kModeCount = 9;

std::string_view mode_name(ModulationMode mode);
// Accepts the names produced by mode_name, case-insensitively.
std::optional<ModulationMode> parse_mode(std::string_view name);
std::vector<ModulationMode> all_modes();

// Linear modes map Gray-coded bit groups onto a fixed constellation.
bool is_linear(ModulationMode mode);
std::size_t bits_per_symbol(ModulationMode mode);

// constellation(mode)[b] is the symbol for bit group b (first bit is the most
// significant). Scaled to unit mean power. Throws for GMSK and FM.
const std::vector<Complex>& constellation(ModulationMode mode);

// Maps a bit sequence, bits_per_symbol(mode) at a time, onto symbols. A short
// trailing group is an error.
ComplexSignal map_bits(ModulationMode mode, std::span<const std::uint8_t> bits);

enum class PulseKind : std::uint8_t { RootRaisedCosine, Rectangular, None };

struct ImpairmentConfig {
  double amplitude = 1.0;             // A
  double carrier_offset = 0.0;        // f0, cycles per sample
  double phase_jitter_std = 0.0;      // radians, i.i.d. per sample
  double timing_error = 0.0;          // eps_T, fraction of a symbol
  std::size_t samples_per_symbol = 8;
  PulseKind pulse = PulseKind::RootRaisedCosine;
  double rolloff = 0.35;
  std::size_t filter_span = 8;        // RRC span in symbols

  friend bool operator==(const ImpairmentConfig&, const ImpairmentConfig&) = default;
};

// Throws std::invalid_argument on an invalid configuration.
void validate(const ImpairmentConfig& imp);

void to_json(nlohmann::json& j, const ImpairmentConfig& imp);
void from_json(const nlohmann::json& j, ImpairmentConfig& imp);

// Parameters of the two non-linear generators, recorded in manifests.
inline constexpr double kGmskBt = 0.3;
inline constexpr double kGmskModulationIndex = 0.5;
inline constexpr double kFmMessageCutoff = 0.05;  // cycles per sample
inline constexpr double kFmModulationIndex = 1.0;

// Root-raised-cosine taps sampled at sps points per symbol over `span` symbols,
// delayed by `delay` symbols, scaled to unit energy.
std::vector<double> rrc_taps(double rolloff, std::size_t sps, std::size_t span, double delay = 0.0);

// Number of leading samples that modulate() discards as filter transient.
std::size_t transient_length(ModulationMode mode, const ImpairmentConfig& imp);

// Smallest n_symbols for which modulate() yields at least `samples` samples.
std::size_t symbols_for(std::size_t samples, ModulationMode mode, const ImpairmentConfig& imp);

// Noise-free received signal: shaped, power-normalized to 1, then faded,
// rotated by the carrier offset and jittered. Length is
// n_symbols * samples_per_symbol - transient_length(mode, imp).
ComplexSignal modulate(ModulationMode mode, std::uint64_t seed, std::size_t n_symbols, const ImpairmentConfig& imp);

double mean_power(std::span<const Complex> signal);

// Adds circular complex Gaussian noise of total variance
// mean_power(signal) * 10^(-snr_db / 10).
ComplexSignal add_awgn(std::span<const Complex> signal, double snr_db, std::uint64_t seed);

// 10 log10(P_clean / P_noise); +infinity when the two are identical.
double measure_snr(std::span<const Complex> clean, std::span<const Complex> noisy);

struct SynthesizedFrame {
  data::IqFrame frame;  // label is the ModulationMode value
  ComplexSignal clean;  // the noise-free reference, same length
};

SynthesizedFrame synth_frame_with_reference(ModulationMode mode, int snr_db, const ImpairmentConfig& imp,
                                            std::uint64_t seed);
data::IqFrame synth_frame(ModulationMode mode, int snr_db, const ImpairmentConfig& imp, std::uint64_t seed);

struct DatasetRequest {
  std::vector<ModulationMode> modes;
  std::vector<int> snr_grid;
  std::size_t frames_per_cell = 100;
  ImpairmentConfig impairments;
  std::uint64_t seed = 0;
};

std::vector<int> default_snr_grid();  // -20:2:30

// Frames in dataset order. Labels index request.modes. The order is a
// seeded shuffle of all cells.
std::vector<data::IqFrame> synth_frames(const DatasetRequest& request);

struct DatasetFiles {
  std::filesystem::path shard;
  std::filesystem::path manifest;
  std::size_t frame_count = 0;
};

// Writes <dir>/frames.iqs and <dir>/manifest.json.
DatasetFiles synth_dataset(const DatasetRequest& request, const std::filesystem::path& dir);

nlohmann::json dataset_manifest(const DatasetRequest& request, const std::vector<data::IqFrame>& frames);

}  // namespace modclass::signal
