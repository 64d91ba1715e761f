#include "modclass/ensemble/ensemble.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <stdexcept>

#include "modclass/common/files.hpp"
#include "modclass/data/split.hpp"

namespace modclass::ensemble {

void to_json(nlohmann::json& j, const EnsembleSpec& spec) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : spec.members) members.push_back(m.string());
  j = nlohmann::json{{"members", members},
                     {"tie_break", spec.tie_break == TieBreak::mean_probability ? "mean_probability" : "lowest_index"}};
}

void from_json(const nlohmann::json& j, EnsembleSpec& spec) {
  spec.members.clear();
  for (const auto& m : j.at("members")) spec.members.emplace_back(m.get<std::string>());
  const std::string tb = j.value("tie_break", std::string("mean_probability"));
  if (tb == "mean_probability") spec.tie_break = TieBreak::mean_probability;
  else if (tb == "lowest_index") spec.tie_break = TieBreak::lowest_index;
  else throw std::invalid_argument("ensemble: unknown tie_break '" + tb + "'");
}

EnsembleSpec load_spec(const std::filesystem::path& path) {
  EnsembleSpec spec = nlohmann::json::parse(read_text(path)).get<EnsembleSpec>();
  for (auto& m : spec.members) {
    if (m.is_relative()) m = path.parent_path() / m;
  }
  return spec;
}

std::vector<int> vote(std::span<const nn::Tensor> probs, TieBreak tie_break) {
  if (probs.empty()) throw std::invalid_argument("vote: no members");
  const std::size_t rows = probs[0].batch() * probs[0].length();
  const std::size_t k = probs[0].channels();
  for (const auto& p : probs) {
    if (p.shape() != probs[0].shape()) throw std::invalid_argument("vote: member outputs differ in shape");
  }
  std::vector<int> out(rows);
  std::vector<std::size_t> votes(k);
  std::vector<float> column(probs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const auto& p : probs) {
      const float* row = p.data() + r * k;
      ++votes[static_cast<std::size_t>(std::max_element(row, row + k) - row)];
    }
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    int chosen = -1;
    double chosen_mass = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (votes[c] != top) continue;
      if (tie_break == TieBreak::lowest_index) {
        chosen = static_cast<int>(c);
        break;
      }
      for (std::size_t m = 0; m < probs.size(); ++m) column[m] = probs[m].data()[r * k + c];
      std::sort(column.begin(), column.end());
      double mass = 0.0;
      for (float v : column) mass += v;
      if (chosen < 0 || mass > chosen_mass) {
        chosen = static_cast<int>(c);
        chosen_mass = mass;
      }
    }
    out[r] = chosen;
  }
  return out;
}

Ensemble::Ensemble(std::vector<model::SeMsfnModel<float>> members, std::vector<std::string> names, TieBreak tie_break)
    : members_(std::move(members)), names_(std::move(names)), tie_break_(tie_break) {
  if (members_.size() < 2) throw std::invalid_argument("ensemble: need at least 2 members, got " + std::to_string(members_.size()));
  if (names_.size() != members_.size()) throw std::invalid_argument("ensemble: one name per member required");
  const auto& ref = members_[0].config();
  for (std::size_t i = 1; i < members_.size(); ++i) {
    const auto& c = members_[i].config();
    if (c.num_classes != ref.num_classes) {
      throw std::invalid_argument("ensemble: member " + names_[i] + " has " + std::to_string(c.num_classes) +
                                  " classes, expected " + std::to_string(ref.num_classes));
    }
    if (c.input_length != ref.input_length || c.input_channels != ref.input_channels) {
      throw std::invalid_argument("ensemble: member " + names_[i] + " expects a different input shape");
    }
  }
}

Ensemble Ensemble::load(const EnsembleSpec& spec) {
  std::vector<model::SeMsfnModel<float>> members;
  std::vector<std::string> names;
  if (spec.members.size() < 2) throw std::invalid_argument("ensemble: need at least 2 members, got " + std::to_string(spec.members.size()));
  for (const auto& path : spec.members) {
    members.push_back(model::SeMsfnModel<float>::from_checkpoint(nn::load_checkpoint(path)));
    names.push_back(path.string());
  }
  return Ensemble(std::move(members), std::move(names), spec.tie_break);
}

std::vector<nn::Tensor> Ensemble::member_probabilities(const nn::Tensor& x) {
  std::vector<nn::Tensor> probs;
  probs.reserve(members_.size());
  for (auto& m : members_) probs.push_back(m.predict_proba(x));
  return probs;
}

std::vector<int> Ensemble::predict(const nn::Tensor& x) { return vote(member_probabilities(x), tie_break_); }

EnsembleEvaluation Ensemble::evaluate(std::span<const data::IqFrame> frames, std::span<const std::size_t> indices,
                                      const std::vector<std::string>& class_names, std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("ensemble: empty test set");
  const std::size_t m = members_.size();
  std::vector<std::vector<int>> member_pred(m);
  std::vector<int> ensemble_pred, truth, snr;
  double seconds = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    const data::Batch batch = data::make_batch(frames, indices.subspan(start, n));
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<nn::Tensor> probs = member_probabilities(batch.inputs);
    const std::vector<int> voted = vote(probs, tie_break_);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ensemble_pred.insert(ensemble_pred.end(), voted.begin(), voted.end());
    for (std::size_t i = 0; i < m; ++i) {
      const auto p = model::argmax_rows(probs[i]);
      member_pred[i].insert(member_pred[i].end(), p.begin(), p.end());
    }
    for (std::size_t b = 0; b < n; ++b) {
      truth.push_back(static_cast<int>(batch.labels[b]));
      snr.push_back(batch.snr_db[b]);
    }
  }
  EnsembleEvaluation out;
  out.ensemble = train::build_report(truth, ensemble_pred, snr, class_names);
  for (std::size_t i = 0; i < m; ++i) {
    out.members.push_back({names_[i], members_[i].config(), members_[i].parameter_count(),
                           train::build_report(truth, member_pred[i], snr, class_names)});
  }
  out.seconds_per_frame = seconds / static_cast<double>(indices.size());
  return out;
}

std::string member_table_csv(const EnsembleEvaluation& e) {
  std::string out = "member,kernel_size,blocks,reduction_ratio,repetition,parameters,accuracy\n";
  auto row = [&](const std::string& name, const model::ModelConfig* c, std::size_t params, double acc) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", acc);
    out += train::csv_field(name) + ",";
    if (c) {
      out += std::to_string(c->kernel_size) + "," + std::to_string(c->blocks) + "," +
             std::to_string(c->reduction_ratio) + "," + std::to_string(c->repetition) + ",";
    } else {
      out += ",,,,";
    }
    out += std::to_string(params) + "," + buf + "\n";
  };
  std::size_t total = 0;
  for (const auto& m : e.members) {
    row(m.name, &m.config, m.parameter_count, m.report.overall_accuracy());
    total += m.parameter_count;
  }
  row("ensemble", nullptr, total, e.ensemble.overall_accuracy());
  return out;
}

}  // namespace modclass::ensemble
