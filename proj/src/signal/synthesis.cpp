#include "modclass/signal/synthesis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

#include "modclass/common/files.hpp"
#include "modclass/common/random.hpp"
#include "modclass/data/shard.hpp"
#include "modclass/nn/parallel.hpp"

namespace modclass::signal {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr std::array<std::string_view, kModeCount> kModeNames{"OOK",   "4ASK",  "BPSK", "QPSK", "8PSK",
                                                               "16QAM", "64QAM", "GMSK", "FM"};

// Gaussian frequency filter span for GMSK, in symbols.
constexpr std::size_t kGmskSpan = 4;
constexpr std::size_t kFmFilterTaps = 129;

std::size_t index_of(ModulationMode mode) { return static_cast<std::size_t>(mode); }

std::size_t gray_decode(std::size_t g) {
  std::size_t b = 0;
  for (; g != 0; g >>= 1) b ^= g;
  return b;
}

// Gray-coded PAM on levels -(M-1), ..., M-1, indexed by the bit group.
std::vector<double> gray_pam(std::size_t bits) {
  const std::size_t m = std::size_t{1} << bits;
  std::vector<double> levels(m);
  for (std::size_t g = 0; g < m; ++g) {
    levels[g] = 2.0 * static_cast<double>(gray_decode(g)) - static_cast<double>(m - 1);
  }
  return levels;
}

void normalize_power(std::vector<Complex>& points) {
  const double p = mean_power(points);
  const double scale = 1.0 / std::sqrt(p);
  for (Complex& s : points) s *= scale;
}

std::vector<Complex> build_constellation(ModulationMode mode) {
  std::vector<Complex> pts;
  switch (mode) {
    case ModulationMode::OOK:
      pts = {0.0, 1.0};
      break;
    case ModulationMode::ASK4:
      for (double v : gray_pam(2)) pts.emplace_back(v, 0.0);
      break;
    case ModulationMode::BPSK:
      pts = {1.0, -1.0};
      break;
    case ModulationMode::QPSK:
      // first bit drives I, second drives Q; 0 maps to +.
      for (std::size_t b = 0; b < 4; ++b) pts.emplace_back(b & 2 ? -1.0 : 1.0, b & 1 ? -1.0 : 1.0);
      break;
    case ModulationMode::PSK8:
      for (std::size_t g = 0; g < 8; ++g) pts.push_back(std::polar(1.0, 2.0 * kPi * static_cast<double>(gray_decode(g)) / 8.0));
      break;
    case ModulationMode::QAM16:
    case ModulationMode::QAM64: {
      const std::size_t half = mode == ModulationMode::QAM16 ? 2 : 3;
      const std::vector<double> axis = gray_pam(half);
      const std::size_t m = axis.size();
      for (std::size_t b = 0; b < m * m; ++b) pts.emplace_back(axis[b / m], axis[b % m]);
      break;
    }
    default:
      throw std::invalid_argument("no constellation for " + std::string(mode_name(mode)));
  }
  normalize_power(pts);
  return pts;
}

std::vector<double> rectangular_taps(std::size_t sps, double delay) {
  const double shift = delay * static_cast<double>(sps);
  const std::size_t n = sps + (shift > 0.0 ? 1 : 0);
  std::vector<double> h(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    const double t = static_cast<double>(m) - shift;
    if (t > -0.5 && t < static_cast<double>(sps) - 0.5) h[m] = 1.0;
  }
  return h;
}

std::vector<double> pulse_taps(const ImpairmentConfig& imp) {
  switch (imp.pulse) {
    case PulseKind::RootRaisedCosine:
      return rrc_taps(imp.rolloff, imp.samples_per_symbol, imp.filter_span, imp.timing_error);
    case PulseKind::Rectangular:
      return rectangular_taps(imp.samples_per_symbol, imp.timing_error);
    case PulseKind::None: {
      const auto d = static_cast<std::size_t>(std::lround(imp.timing_error * static_cast<double>(imp.samples_per_symbol)));
      std::vector<double> h(d + 1, 0.0);
      h[d] = 1.0;
      return h;
    }
  }
  throw std::invalid_argument("unknown pulse shape");
}

std::vector<double> gaussian_taps(std::size_t sps, double delay) {
  const double sigma = std::sqrt(std::log(2.0)) / (2.0 * kPi * kGmskBt);
  const std::size_t n = kGmskSpan * sps + 1;
  const double centre = static_cast<double>(kGmskSpan) / 2.0;
  std::vector<double> h(n);
  double sum = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    const double t = static_cast<double>(m) / static_cast<double>(sps) - centre - delay;
    h[m] = std::exp(-t * t / (2.0 * sigma * sigma));
    sum += h[m];
  }
  for (double& v : h) v /= sum;
  return h;
}

// Hamming-windowed sinc low-pass with unit DC gain.
std::vector<double> lowpass_taps(double cutoff, std::size_t n) {
  std::vector<double> h(n);
  const double centre = static_cast<double>(n - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    const double t = static_cast<double>(m) - centre;
    const double sinc = t == 0.0 ? 2.0 * cutoff : std::sin(2.0 * kPi * cutoff * t) / (kPi * t);
    const double w = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(m) / static_cast<double>(n - 1));
    h[m] = sinc * w;
    sum += h[m];
  }
  for (double& v : h) v /= sum;
  return h;
}

// Steady-state part of the full convolution: outputs that see every tap.
template <typename S>
std::vector<S> filter_steady(const std::vector<S>& x, const std::vector<double>& h) {
  if (x.size() < h.size()) return {};
  std::vector<S> y(x.size() - h.size() + 1);
  const std::size_t last = h.size() - 1;
  for (std::size_t n = 0; n < y.size(); ++n) {
    S acc{};
    for (std::size_t m = 0; m < h.size(); ++m) acc += h[m] * x[n + last - m];
    y[n] = acc;
  }
  return y;
}

ComplexSignal linear_baseband(ModulationMode mode, std::mt19937_64& bits, std::size_t n_symbols,
                              const ImpairmentConfig& imp) {
  const auto& points = constellation(mode);
  const std::uint64_t mask = points.size() - 1;
  const std::size_t sps = imp.samples_per_symbol;
  ComplexSignal stuffed(n_symbols * sps, Complex{});
  for (std::size_t n = 0; n < n_symbols; ++n) stuffed[n * sps] = points[bits() & mask];
  return filter_steady(stuffed, pulse_taps(imp));
}

ComplexSignal gmsk_baseband(std::mt19937_64& bits, std::size_t n_symbols, const ImpairmentConfig& imp) {
  const std::size_t sps = imp.samples_per_symbol;
  std::vector<double> nrz(n_symbols * sps);
  for (std::size_t n = 0; n < n_symbols; ++n) {
    const double v = (bits() & 1) ? -1.0 : 1.0;
    std::fill_n(nrz.begin() + static_cast<std::ptrdiff_t>(n * sps), sps, v);
  }
  const std::vector<double> freq = filter_steady(nrz, gaussian_taps(sps, imp.timing_error));
  ComplexSignal out(freq.size());
  double phase = 0.0;
  const double step = kPi * kGmskModulationIndex / static_cast<double>(sps);
  for (std::size_t k = 0; k < freq.size(); ++k) {
    phase += step * freq[k];
    out[k] = std::polar(1.0, phase);
  }
  return out;
}

ComplexSignal fm_baseband(std::uint64_t seed, std::size_t n_samples) {
  GaussianSource gauss(seed);
  std::vector<double> white(n_samples);
  for (double& v : white) v = gauss();
  std::vector<double> message = filter_steady(white, lowpass_taps(kFmMessageCutoff, kFmFilterTaps));
  double power = 0.0;
  for (double v : message) power += v * v;
  const double rms = std::sqrt(power / static_cast<double>(std::max<std::size_t>(message.size(), 1)));
  // Peak deviation index * cutoff for a unit-RMS message.
  const double step = 2.0 * kPi * kFmModulationIndex * kFmMessageCutoff / (rms > 0.0 ? rms : 1.0);
  ComplexSignal out(message.size());
  double phase = 0.0;
  for (std::size_t k = 0; k < message.size(); ++k) {
    phase += step * message[k];
    out[k] = std::polar(1.0, phase);
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view pulse_name(PulseKind kind) {
  switch (kind) {
    case PulseKind::RootRaisedCosine: return "rrc";
    case PulseKind::Rectangular: return "rectangular";
    case PulseKind::None: return "none";
  }
  return "?";
}

}  // namespace

std::string_view mode_name(ModulationMode mode) {
  const std::size_t i = index_of(mode);
  if (i >= kModeCount) throw std::invalid_argument("unsupported modulation tag " + std::to_string(i));
  return kModeNames[i];
}

std::optional<ModulationMode> parse_mode(std::string_view name) {
  const std::string want = lower(name);
  for (std::size_t i = 0; i < kModeCount; ++i) {
    if (lower(kModeNames[i]) == want) return static_cast<ModulationMode>(i);
  }
  return std::nullopt;
}

std::vector<ModulationMode> all_modes() {
  std::vector<ModulationMode> modes;
  for (std::size_t i = 0; i < kModeCount; ++i) modes.push_back(static_cast<ModulationMode>(i));
  return modes;
}

bool is_linear(ModulationMode mode) {
  return mode != ModulationMode::GMSK && mode != ModulationMode::FM && index_of(mode) < kModeCount;
}

std::size_t bits_per_symbol(ModulationMode mode) {
  switch (mode) {
    case ModulationMode::OOK:
    case ModulationMode::BPSK:
    case ModulationMode::GMSK: return 1;
    case ModulationMode::ASK4:
    case ModulationMode::QPSK: return 2;
    case ModulationMode::PSK8: return 3;
    case ModulationMode::QAM16: return 4;
    case ModulationMode::QAM64: return 6;
    case ModulationMode::FM: return 0;
  }
  throw std::invalid_argument("unsupported modulation tag " + std::to_string(index_of(mode)));
}

const std::vector<Complex>& constellation(ModulationMode mode) {
  static const std::array<std::vector<Complex>, 7> tables = [] {
    std::array<std::vector<Complex>, 7> t;
    for (std::size_t i = 0; i < 7; ++i) t[i] = build_constellation(static_cast<ModulationMode>(i));
    return t;
  }();
  if (!is_linear(mode)) throw std::invalid_argument(std::string(mode_name(mode)) + " has no constellation");
  return tables[index_of(mode)];
}

ComplexSignal map_bits(ModulationMode mode, std::span<const std::uint8_t> bits) {
  const auto& points = constellation(mode);
  const std::size_t k = bits_per_symbol(mode);
  if (bits.size() % k != 0) {
    throw std::invalid_argument(std::to_string(bits.size()) + " bits do not fill whole " + std::string(mode_name(mode)) +
                                " symbols");
  }
  ComplexSignal out;
  for (std::size_t n = 0; n < bits.size(); n += k) {
    std::size_t group = 0;
    for (std::size_t b = 0; b < k; ++b) group = (group << 1) | (bits[n + b] & 1u);
    out.push_back(points[group]);
  }
  return out;
}

void validate(const ImpairmentConfig& imp) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("impairments: " + what); };
  if (!(imp.amplitude > 0.0) || !std::isfinite(imp.amplitude)) fail("amplitude must be > 0");
  if (imp.samples_per_symbol < 2) fail("samples_per_symbol must be >= 2");
  if (!(imp.timing_error >= 0.0 && imp.timing_error < 1.0)) fail("timing_error must be in [0, 1)");
  if (!(imp.rolloff >= 0.0 && imp.rolloff <= 1.0)) fail("rolloff must be in [0, 1]");
  if (!(imp.phase_jitter_std >= 0.0) || !std::isfinite(imp.phase_jitter_std)) fail("phase_jitter_std must be >= 0");
  if (!std::isfinite(imp.carrier_offset)) fail("carrier_offset must be finite");
  if (imp.pulse == PulseKind::RootRaisedCosine && imp.filter_span < 1) fail("filter_span must be >= 1");
}

void to_json(nlohmann::json& j, const ImpairmentConfig& imp) {
  j = nlohmann::json{{"amplitude", imp.amplitude},
                     {"carrier_offset", imp.carrier_offset},
                     {"phase_jitter_std", imp.phase_jitter_std},
                     {"timing_error", imp.timing_error},
                     {"samples_per_symbol", imp.samples_per_symbol},
                     {"pulse", pulse_name(imp.pulse)},
                     {"rolloff", imp.rolloff},
                     {"filter_span", imp.filter_span}};
}

void from_json(const nlohmann::json& j, ImpairmentConfig& imp) {
  ImpairmentConfig d;
  imp.amplitude = j.value("amplitude", d.amplitude);
  imp.carrier_offset = j.value("carrier_offset", d.carrier_offset);
  imp.phase_jitter_std = j.value("phase_jitter_std", d.phase_jitter_std);
  imp.timing_error = j.value("timing_error", d.timing_error);
  imp.samples_per_symbol = j.value("samples_per_symbol", d.samples_per_symbol);
  imp.rolloff = j.value("rolloff", d.rolloff);
  imp.filter_span = j.value("filter_span", d.filter_span);
  const std::string pulse = j.value("pulse", std::string(pulse_name(d.pulse)));
  if (pulse == "rrc") imp.pulse = PulseKind::RootRaisedCosine;
  else if (pulse == "rectangular") imp.pulse = PulseKind::Rectangular;
  else if (pulse == "none") imp.pulse = PulseKind::None;
  else throw std::invalid_argument("impairments: unknown pulse '" + pulse + "'");
}

std::vector<double> rrc_taps(double rolloff, std::size_t sps, std::size_t span, double delay) {
  const std::size_t n = span * sps + 1;
  const double centre = static_cast<double>(span) / 2.0;
  const double b = rolloff;
  std::vector<double> h(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double t = static_cast<double>(m) / static_cast<double>(sps) - centre - delay;
    double v;
    if (std::abs(t) < 1e-12) {
      v = 1.0 - b + 4.0 * b / kPi;
    } else if (b > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-12) {
      v = b / std::sqrt(2.0) *
          ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * b)) + (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * b)));
    } else {
      const double x = 4.0 * b * t;
      v = (std::sin(kPi * t * (1.0 - b)) + 4.0 * b * t * std::cos(kPi * t * (1.0 + b))) / (kPi * t * (1.0 - x * x));
    }
    h[m] = v;
  }
  double energy = 0.0;
  for (double v : h) energy += v * v;
  for (double& v : h) v /= std::sqrt(energy);
  return h;
}

std::size_t transient_length(ModulationMode mode, const ImpairmentConfig& imp) {
  switch (mode) {
    case ModulationMode::GMSK: return kGmskSpan * imp.samples_per_symbol;
    case ModulationMode::FM: return kFmFilterTaps - 1;
    default: return pulse_taps(imp).size() - 1;
  }
}

std::size_t symbols_for(std::size_t samples, ModulationMode mode, const ImpairmentConfig& imp) {
  const std::size_t need = samples + transient_length(mode, imp);
  return (need + imp.samples_per_symbol - 1) / imp.samples_per_symbol;
}

ComplexSignal modulate(ModulationMode mode, std::uint64_t seed, std::size_t n_symbols, const ImpairmentConfig& imp) {
  validate(imp);
  mode_name(mode);  // rejects unknown tags
  const std::size_t transient = transient_length(mode, imp);
  if (n_symbols * imp.samples_per_symbol < data::kFrameLength + transient) {
    throw std::invalid_argument(std::to_string(n_symbols) + " symbols cannot fill a " +
                                std::to_string(data::kFrameLength) + "-sample frame after a " +
                                std::to_string(transient) + "-sample transient");
  }
  std::mt19937_64 bits(derive_seed(seed, 1));
  ComplexSignal s;
  if (mode == ModulationMode::GMSK) {
    s = gmsk_baseband(bits, n_symbols, imp);
  } else if (mode == ModulationMode::FM) {
    s = fm_baseband(derive_seed(seed, 3), n_symbols * imp.samples_per_symbol);
  } else {
    s = linear_baseband(mode, bits, n_symbols, imp);
  }

  const double p = mean_power(s);
  const double gain = p > 0.0 ? imp.amplitude / std::sqrt(p) : imp.amplitude;
  const bool rotate = imp.carrier_offset != 0.0 || imp.phase_jitter_std > 0.0;
  GaussianSource jitter(derive_seed(seed, 2));
  for (std::size_t k = 0; k < s.size(); ++k) {
    s[k] *= gain;
    if (rotate) {
      const double theta = 2.0 * kPi * imp.carrier_offset * static_cast<double>(k) + imp.phase_jitter_std * jitter();
      s[k] *= std::polar(1.0, theta);
    }
  }
  return s;
}

double mean_power(std::span<const Complex> signal) {
  if (signal.empty()) return 0.0;
  double p = 0.0;
  for (const Complex& s : signal) p += std::norm(s);
  return p / static_cast<double>(signal.size());
}

ComplexSignal add_awgn(std::span<const Complex> signal, double snr_db, std::uint64_t seed) {
  if (signal.empty()) throw std::invalid_argument("add_awgn: empty signal");
  for (const Complex& s : signal) {
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) throw std::invalid_argument("add_awgn: non-finite input");
  }
  if (!std::isfinite(snr_db)) throw std::invalid_argument("add_awgn: snr must be finite");
  const double noise_power = mean_power(signal) * std::pow(10.0, -snr_db / 10.0);
  const double sigma = std::sqrt(noise_power / 2.0);
  GaussianSource gauss(seed);
  ComplexSignal out(signal.begin(), signal.end());
  for (Complex& s : out) {
    const double ni = gauss();
    const double nq = gauss();
    s += Complex(sigma * ni, sigma * nq);
  }
  return out;
}

double measure_snr(std::span<const Complex> clean, std::span<const Complex> noisy) {
  if (clean.size() != noisy.size()) throw std::invalid_argument("measure_snr: length mismatch");
  double ps = 0.0, pn = 0.0;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    ps += std::norm(clean[k]);
    pn += std::norm(noisy[k] - clean[k]);
  }
  if (pn == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ps / pn);
}

SynthesizedFrame synth_frame_with_reference(ModulationMode mode, int snr_db, const ImpairmentConfig& imp,
                                            std::uint64_t seed) {
  const std::size_t n = symbols_for(data::kFrameLength, mode, imp);
  ComplexSignal clean = modulate(mode, derive_seed(seed, 0x51), n, imp);
  clean.resize(data::kFrameLength);
  // Noise is calibrated against the power of the frame actually emitted.
  const ComplexSignal noisy = add_awgn(clean, snr_db, derive_seed(seed, 0x4e));
  SynthesizedFrame out;
  out.frame.label = static_cast<std::uint8_t>(mode);
  out.frame.snr_db = snr_db;
  out.frame.i.resize(data::kFrameLength);
  out.frame.q.resize(data::kFrameLength);
  for (std::size_t k = 0; k < data::kFrameLength; ++k) {
    out.frame.i[k] = static_cast<float>(noisy[k].real());
    out.frame.q[k] = static_cast<float>(noisy[k].imag());
  }
  out.clean = std::move(clean);
  return out;
}

data::IqFrame synth_frame(ModulationMode mode, int snr_db, const ImpairmentConfig& imp, std::uint64_t seed) {
  return synth_frame_with_reference(mode, snr_db, imp, seed).frame;
}

std::vector<int> default_snr_grid() {
  std::vector<int> grid;
  for (int s = -20; s <= 30; s += 2) grid.push_back(s);
  return grid;
}

std::vector<data::IqFrame> synth_frames(const DatasetRequest& request) {
  if (request.modes.empty()) throw std::invalid_argument("synth: empty mode set");
  if (request.snr_grid.empty()) throw std::invalid_argument("synth: empty SNR grid");
  if (request.frames_per_cell < 1) throw std::invalid_argument("synth: frames_per_cell must be >= 1");
  for (std::size_t a = 0; a < request.modes.size(); ++a) {
    mode_name(request.modes[a]);
    for (std::size_t b = a + 1; b < request.modes.size(); ++b) {
      if (request.modes[a] == request.modes[b]) throw std::invalid_argument("synth: duplicate mode in set");
    }
  }
  for (int snr : request.snr_grid) {
    if (snr < -128 || snr > 127) throw std::invalid_argument("synth: SNR " + std::to_string(snr) + " does not fit in i8");
  }
  validate(request.impairments);

  const std::size_t per_mode = request.snr_grid.size() * request.frames_per_cell;
  const std::size_t total = request.modes.size() * per_mode;
  std::vector<data::IqFrame> frames(total);
  // Each frame's seed depends only on its cell and index, so the contents
  // are independent of the worker count and of the order modes are listed in.
  nn::parallel_for(total, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t n = begin; n < end; ++n) {
      const std::size_t m = n / per_mode;
      const std::size_t s = (n % per_mode) / request.frames_per_cell;
      const std::size_t f = n % request.frames_per_cell;
      const ModulationMode mode = request.modes[m];
      const int snr = request.snr_grid[s];
      const std::uint64_t seed =
          derive_seed(request.seed, index_of(mode), static_cast<std::uint64_t>(static_cast<std::int64_t>(snr)), f);
      frames[n] = synth_frame(mode, snr, request.impairments, seed);
      frames[n].label = static_cast<std::uint8_t>(m);
    }
  });
  std::mt19937_64 order_rng(derive_seed(request.seed, 0x0da7a5e7));
  shuffle(frames, order_rng);
  return frames;
}

nlohmann::json dataset_manifest(const DatasetRequest& request, const std::vector<data::IqFrame>& frames) {
  std::map<std::pair<std::size_t, int>, std::size_t> counts;
  for (const auto& f : frames) ++counts[{f.label, f.snr_db}];
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t m = 0; m < request.modes.size(); ++m) {
    for (int snr : request.snr_grid) {
      auto it = counts.find({m, snr});
      cells.push_back({{"mode", mode_name(request.modes[m])}, {"snr_db", snr}, {"count", it == counts.end() ? 0 : it->second}});
    }
  }
  nlohmann::json modes = nlohmann::json::array();
  for (ModulationMode mode : request.modes) modes.push_back(mode_name(mode));
  return nlohmann::json{
      {"format", "IQS1"},
      {"shard", "frames.iqs"},
      {"modes", modes},
      {"snr_grid", request.snr_grid},
      {"frames_per_cell", request.frames_per_cell},
      {"frame_count", frames.size()},
      {"frame_length", data::kFrameLength},
      {"root_seed", request.seed},
      {"impairments", request.impairments},
      {"generators",
       {{"gmsk", {{"bt", kGmskBt}, {"modulation_index", kGmskModulationIndex}}},
        {"fm", {{"message_cutoff", kFmMessageCutoff}, {"modulation_index", kFmModulationIndex}}}}},
      {"cells", cells},
  };
}

DatasetFiles synth_dataset(const DatasetRequest& request, const std::filesystem::path& dir) {
  const std::vector<data::IqFrame> frames = synth_frames(request);
  std::vector<std::string> names;
  for (ModulationMode mode : request.modes) names.emplace_back(mode_name(mode));
  DatasetFiles out;
  out.shard = dir / "frames.iqs";
  out.manifest = dir / "manifest.json";
  out.frame_count = data::write_shard(out.shard, frames, names);
  write_text_atomic(out.manifest, dataset_manifest(request, frames).dump(2) + "\n");
  return out;
}

}  // namespace modclass::signal
