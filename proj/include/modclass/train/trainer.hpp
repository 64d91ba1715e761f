#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>

#include <nlohmann/json.hpp>

#include "modclass/data/frame.hpp"
#include "modclass/model/se_msfn.hpp"
#include "modclass/train/evaluation.hpp"

namespace modclass::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the best checkpoint
  std::optional<std::size_t> early_stop_patience;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);
void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Periodic checkpoints go to <dir>/epoch_NNN.mck when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  nlohmann::json checkpoint_extras = nlohmann::json::object();
};

struct TrainResult {
  TrainingCurve curve;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_accuracy = 0.0;
  bool early_stopped = false;
};

// Adam on softmax cross-entropy, one permutation per epoch keyed by
// (config.seed, epoch). The model is left holding the weights of the epoch
// with the best validation accuracy (earliest on ties). Throws
// nn::NumericError naming the batch and layer on a non-finite value.
TrainResult train(model::SeMsfnModel<float>& model, std::span<const data::IqFrame> frames,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const TrainConfig& config, const TrainHooks& hooks = {});

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and accuracy in inference mode.
LossAccuracy evaluate_loss(model::SeMsfnModel<float>& model, std::span<const data::IqFrame> frames,
                           std::span<const std::size_t> indices, std::size_t batch_size = 256);

Predictor model_predictor(model::SeMsfnModel<float>& model);

}  // namespace modclass::train
