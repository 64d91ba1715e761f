#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/model/se_msfn.hpp"
#include "modclass/train/evaluation.hpp"

namespace modclass::ensemble {

enum class TieBreak { mean_probability, lowest_index };

struct EnsembleSpec {
  std::vector<std::filesystem::path> members;
  TieBreak tie_break = TieBreak::mean_probability;
};

void to_json(nlohmann::json& j, const EnsembleSpec& spec);
void from_json(const nlohmann::json& j, EnsembleSpec& spec);
// Relative member paths are resolved against the spec file's directory.
EnsembleSpec load_spec(const std::filesystem::path& path);

// Plurality vote over member probability matrices, each [b, 1, K]. Ties
// among the most-voted classes go to the highest mean probability among
// those classes (or the lowest tied index), then to the lowest index. Per
// class, member probabilities are summed in sorted order, so the result
// does not depend on member order.
std::vector<int> vote(std::span<const nn::Tensor> member_probabilities, TieBreak tie_break);

struct MemberResult {
  std::string name;
  model::ModelConfig config;
  std::size_t parameter_count = 0;
  train::EvalReport report;
};

struct EnsembleEvaluation {
  train::EvalReport ensemble;
  std::vector<MemberResult> members;
  double seconds_per_frame = 0.0;
};

class Ensemble {
 public:
  // Throws std::invalid_argument with fewer than two members or when the
  // members disagree on class count or input shape.
  Ensemble(std::vector<model::SeMsfnModel<float>> members, std::vector<std::string> names, TieBreak tie_break);
  static Ensemble load(const EnsembleSpec& spec);

  std::size_t size() const { return members_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  model::SeMsfnModel<float>& member(std::size_t i) { return members_[i]; }

  std::vector<int> predict(const nn::Tensor& x);
  // Member probabilities for x, one [b, 1, K] tensor per member.
  std::vector<nn::Tensor> member_probabilities(const nn::Tensor& x);

  EnsembleEvaluation evaluate(std::span<const data::IqFrame> frames, std::span<const std::size_t> indices,
                              const std::vector<std::string>& class_names, std::size_t batch_size = 256);

 private:
  std::vector<model::SeMsfnModel<float>> members_;
  std::vector<std::string> names_;
  TieBreak tie_break_;
};

// Per-member comparison table: name, kernel size, parameters, accuracy.
std::string member_table_csv(const EnsembleEvaluation& evaluation);

}  // namespace modclass::ensemble
