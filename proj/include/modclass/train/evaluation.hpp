#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/data/frame.hpp"
#include "modclass/nn/tensor.hpp"

namespace modclass::train {

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  friend bool operator==(const Tally&, const Tally&) = default;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::map<int, Tally> per_snr;        // only SNRs that occur
  std::vector<Tally> per_class;        // indexed by true class
  Tally overall;
  // confusion[truth][prediction] over every frame, and over the frames at
  // `confusion_snr` when a filter was requested.
  std::vector<std::vector<std::size_t>> confusion;
  std::optional<int> confusion_snr;
  std::vector<std::vector<std::size_t>> confusion_at_snr;

  double overall_accuracy() const { return overall.accuracy(); }
  std::map<int, double> per_snr_accuracy() const;
  // Unweighted mean over the even SNR bins 0..10 dB that are present.
  std::optional<double> band_0_10_accuracy() const;
  // Highest single-SNR accuracy and the SNR it occurs at (lowest SNR on ties).
  std::optional<std::pair<int, double>> max_snr_accuracy() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Builds a report from parallel truth / prediction / SNR arrays.
EvalReport build_report(std::span<const int> truth, std::span<const int> predicted, std::span<const int> snr_db,
                        const std::vector<std::string>& class_names, std::optional<int> confusion_snr = std::nullopt);

// Maps a [b, L, 2] batch of frames to class indices.
using Predictor = std::function<std::vector<int>(const nn::Tensor&)>;

// Runs the predictor over `indices` in chunks of `batch_size`.
EvalReport evaluate(const Predictor& predictor, std::span<const data::IqFrame> frames,
                    std::span<const std::size_t> indices, const std::vector<std::string>& class_names,
                    std::size_t batch_size = 256, std::optional<int> confusion_snr = std::nullopt);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainingCurve {
  std::vector<EpochRecord> epochs;
  friend bool operator==(const TrainingCurve&, const TrainingCurve&) = default;
};

// The three headline numbers plus counts, all recomputable from
// accuracy_by_snr.csv and confusion.csv.
nlohmann::json summary_json(const EvalReport& report);

// Writes accuracy_by_snr.csv, confusion.csv (plus confusion_snr<N>.csv when
// filtered), summary.json and, when a curve is given, curves.csv into `dir`.
void report_csv(const EvalReport& report, const TrainingCurve* curve, const std::filesystem::path& dir);

// Rebuilds the report tallies from the CSVs written by report_csv.
EvalReport read_report_csv(const std::filesystem::path& dir);
TrainingCurve read_curves_csv(const std::filesystem::path& path);

// RFC 4180 field quoting.
std::string csv_field(const std::string& s);
std::vector<std::string> parse_csv_line(const std::string& line);

}  // namespace modclass::train
