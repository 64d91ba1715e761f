#include "modclass/train/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "modclass/common/files.hpp"
#include "modclass/data/split.hpp"

namespace modclass::train {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::vector<std::size_t>> square(std::size_t k) {
  return std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0));
}

std::string confusion_csv(const std::vector<std::string>& names, const std::vector<std::vector<std::size_t>>& m) {
  std::string out = "truth/predicted";
  for (const auto& n : names) out += "," + csv_field(n);
  out += "\n";
  for (std::size_t r = 0; r < names.size(); ++r) {
    out += csv_field(names[r]);
    for (std::size_t c = 0; c < names.size(); ++c) out += "," + std::to_string(m[r][c]);
    out += "\n";
  }
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_csv_line(line));
  }
  return rows;
}

std::size_t to_count(const std::string& s, const std::filesystem::path& where) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error(where.string() + ": expected a count, got '" + s + "'");
  }
}

std::pair<std::vector<std::string>, std::vector<std::vector<std::size_t>>> read_confusion(
    const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty confusion matrix");
  std::vector<std::string> names(rows[0].begin() + 1, rows[0].end());
  const std::size_t k = names.size();
  if (rows.size() != k + 1) throw std::runtime_error(path.string() + ": expected " + std::to_string(k) + " rows");
  auto m = square(k);
  for (std::size_t r = 0; r < k; ++r) {
    if (rows[r + 1].size() != k + 1 || rows[r + 1][0] != names[r]) {
      throw std::runtime_error(path.string() + ": malformed row " + std::to_string(r + 1));
    }
    for (std::size_t c = 0; c < k; ++c) m[r][c] = to_count(rows[r + 1][c + 1], path);
  }
  return {names, m};
}

}  // namespace

std::map<int, double> EvalReport::per_snr_accuracy() const {
  std::map<int, double> out;
  for (const auto& [snr, t] : per_snr) out[snr] = t.accuracy();
  return out;
}

std::optional<double> EvalReport::band_0_10_accuracy() const {
  double sum = 0.0;
  int n = 0;
  for (int snr = 0; snr <= 10; snr += 2) {
    auto it = per_snr.find(snr);
    if (it == per_snr.end()) continue;
    sum += it->second.accuracy();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<std::pair<int, double>> EvalReport::max_snr_accuracy() const {
  std::optional<std::pair<int, double>> best;
  for (const auto& [snr, t] : per_snr) {
    if (!best || t.accuracy() > best->second) best = std::pair{snr, t.accuracy()};
  }
  return best;
}

EvalReport build_report(std::span<const int> truth, std::span<const int> predicted, std::span<const int> snr_db,
                        const std::vector<std::string>& class_names, std::optional<int> confusion_snr) {
  if (truth.size() != predicted.size() || truth.size() != snr_db.size()) {
    throw std::invalid_argument("build_report: truth, prediction and SNR counts differ");
  }
  const std::size_t k = class_names.size();
  EvalReport r;
  r.class_names = class_names;
  r.per_class.assign(k, Tally{});
  r.confusion = square(k);
  r.confusion_snr = confusion_snr;
  if (confusion_snr) r.confusion_at_snr = square(k);
  for (std::size_t n = 0; n < truth.size(); ++n) {
    const int t = truth[n], p = predicted[n];
    if (t < 0 || static_cast<std::size_t>(t) >= k || p < 0 || static_cast<std::size_t>(p) >= k) {
      throw std::invalid_argument("build_report: class index outside [0, " + std::to_string(k) + ")");
    }
    const bool ok = t == p;
    Tally& s = r.per_snr[snr_db[n]];
    s.correct += ok;
    ++s.total;
    r.per_class[static_cast<std::size_t>(t)].correct += ok;
    ++r.per_class[static_cast<std::size_t>(t)].total;
    r.overall.correct += ok;
    ++r.overall.total;
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (confusion_snr && snr_db[n] == *confusion_snr) ++r.confusion_at_snr[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return r;
}

EvalReport evaluate(const Predictor& predictor, std::span<const data::IqFrame> frames,
                    std::span<const std::size_t> indices, const std::vector<std::string>& class_names,
                    std::size_t batch_size, std::optional<int> confusion_snr) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  std::vector<int> truth, predicted, snr;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    const data::Batch batch = data::make_batch(frames, indices.subspan(start, n));
    const std::vector<int> p = predictor(batch.inputs);
    if (p.size() != n) throw std::runtime_error("evaluate: predictor returned the wrong number of labels");
    predicted.insert(predicted.end(), p.begin(), p.end());
    for (std::size_t b = 0; b < n; ++b) {
      truth.push_back(static_cast<int>(batch.labels[b]));
      snr.push_back(batch.snr_db[b]);
    }
  }
  return build_report(truth, predicted, snr, class_names, confusion_snr);
}

nlohmann::json summary_json(const EvalReport& report) {
  nlohmann::json j;
  j["overall_accuracy"] = report.overall_accuracy();
  const auto band = report.band_0_10_accuracy();
  j["accuracy_0_10_db"] = band ? nlohmann::json(*band) : nlohmann::json(nullptr);
  const auto best = report.max_snr_accuracy();
  j["max_snr_accuracy"] = best ? nlohmann::json(best->second) : nlohmann::json(nullptr);
  j["max_snr_accuracy_db"] = best ? nlohmann::json(best->first) : nlohmann::json(nullptr);
  j["frames"] = report.overall.total;
  j["correct"] = report.overall.correct;
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    per_class[report.class_names[c]] = report.per_class[c].accuracy();
  }
  j["per_class_accuracy"] = per_class;
  return j;
}

void report_csv(const EvalReport& report, const TrainingCurve* curve, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string snr = "snr_db,accuracy,correct,total\n";
  for (const auto& [s, t] : report.per_snr) {
    snr += std::to_string(s) + "," + fixed(t.accuracy()) + "," + std::to_string(t.correct) + "," +
           std::to_string(t.total) + "\n";
  }
  write_text_atomic(dir / "accuracy_by_snr.csv", snr);
  write_text_atomic(dir / "confusion.csv", confusion_csv(report.class_names, report.confusion));
  if (report.confusion_snr) {
    write_text_atomic(dir / ("confusion_snr" + std::to_string(*report.confusion_snr) + ".csv"),
                      confusion_csv(report.class_names, report.confusion_at_snr));
  }
  if (curve) {
    std::string c = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& e : curve->epochs) {
      c += std::to_string(e.epoch) + "," + general(e.train_loss) + "," + general(e.train_accuracy) + "," +
           general(e.val_loss) + "," + general(e.val_accuracy) + "\n";
    }
    write_text_atomic(dir / "curves.csv", c);
  }
  write_text_atomic(dir / "summary.json", summary_json(report).dump(2) + "\n");
}

EvalReport read_report_csv(const std::filesystem::path& dir) {
  EvalReport r;
  auto [names, confusion] = read_confusion(dir / "confusion.csv");
  r.class_names = names;
  r.confusion = confusion;
  r.per_class.assign(names.size(), Tally{});
  for (std::size_t t = 0; t < names.size(); ++t) {
    for (std::size_t p = 0; p < names.size(); ++p) {
      r.per_class[t].total += confusion[t][p];
      if (t == p) r.per_class[t].correct += confusion[t][p];
    }
  }
  const auto path = dir / "accuracy_by_snr.csv";
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"snr_db", "accuracy", "correct", "total"}) {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 4) throw std::runtime_error(path.string() + ": malformed row " + std::to_string(i));
    Tally t{to_count(rows[i][2], path), to_count(rows[i][3], path)};
    r.per_snr[std::stoi(rows[i][0])] = t;
    r.overall.correct += t.correct;
    r.overall.total += t.total;
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("confusion_snr") && name.ends_with(".csv")) {
      r.confusion_snr = std::stoi(name.substr(13, name.size() - 17));
      r.confusion_at_snr = read_confusion(entry.path()).second;
    }
  }
  return r;
}

TrainingCurve read_curves_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  TrainingCurve curve;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 5) throw std::runtime_error(path.string() + ": malformed row " + std::to_string(i));
    curve.epochs.push_back({to_count(rows[i][0], path), std::stod(rows[i][1]), std::stod(rows[i][2]),
                            std::stod(rows[i][3]), std::stod(rows[i][4])});
  }
  return curve;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace modclass::train
