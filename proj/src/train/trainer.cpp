#include "modclass/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include "modclass/data/split.hpp"
#include "modclass/nn/ops.hpp"

namespace modclass::train {

namespace {

std::vector<int> as_int(const std::vector<std::size_t>& v) { return std::vector<int>(v.begin(), v.end()); }

std::size_t count_correct(const nn::Tensor& logits, std::span<const int> labels) {
  const std::vector<int> p = model::argmax_rows(logits);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += p[i] == labels[i];
  return ok;
}

// Parameter values and normalization buffers, for restoring the best epoch.
struct Snapshot {
  std::vector<std::vector<float>> params;
  std::vector<std::vector<float>> buffers;

  void take(model::SeMsfnModel<float>& m) {
    params.clear();
    buffers.clear();
    for (auto* p : m.parameters()) params.emplace_back(p->value.values().begin(), p->value.values().end());
    for (const auto& b : m.buffers()) buffers.push_back(*b.values);
  }

  void restore(model::SeMsfnModel<float>& m) const {
    const auto& ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) std::copy(params[i].begin(), params[i].end(), ps[i]->value.values().begin());
    const auto& bs = m.buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i].values = buffers[i];
  }
};

}  // namespace

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (c.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw std::invalid_argument("train: lr must be > 0");
  if (c.early_stop_patience && *c.early_stop_patience < 1) {
    throw std::invalid_argument("train: early_stop_patience must be >= 1");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.learning_rate},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"early_stop_patience", c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("lr", d.learning_rate);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.early_stop_patience.reset();
  if (j.contains("early_stop_patience") && !j["early_stop_patience"].is_null()) {
    c.early_stop_patience = j["early_stop_patience"].get<std::size_t>();
  }
}

LossAccuracy evaluate_loss(model::SeMsfnModel<float>& model, std::span<const data::IqFrame> frames,
                           std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate_loss: empty index set");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    const data::Batch batch = data::make_batch(frames, indices.subspan(start, n));
    const nn::Tensor logits = model.forward(batch.inputs, nn::Mode::infer);
    const std::vector<int> labels = as_int(batch.labels);
    loss += nn::softmax_cross_entropy(logits, labels).loss * static_cast<double>(n);
    correct += count_correct(logits, labels);
  }
  const double total = static_cast<double>(indices.size());
  return {loss / total, static_cast<double>(correct) / total};
}

Predictor model_predictor(model::SeMsfnModel<float>& model) {
  return [&model](const nn::Tensor& x) { return model.predict(x); };
}

TrainResult train(model::SeMsfnModel<float>& model, std::span<const data::IqFrame> frames,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const TrainConfig& config, const TrainHooks& hooks) {
  validate(config);
  if (train_indices.empty()) throw std::invalid_argument("train: empty training set");
  if (val_indices.empty()) throw std::invalid_argument("train: empty validation set");
  const std::unordered_set<std::size_t> train_set(train_indices.begin(), train_indices.end());
  for (std::size_t i : val_indices) {
    if (train_set.count(i)) throw std::invalid_argument("train: frame " + std::to_string(i) + " is in both train and val");
  }
  const nn::AdamOptions adam{.learning_rate = config.learning_rate};

  TrainResult result;
  Snapshot best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    data::BatchStream stream(frames, train_indices, config.batch_size, config.seed, epoch);
    data::Batch batch;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, step = 0;
    while (stream.next(batch)) {
      ++step;
      const std::vector<int> labels = as_int(batch.labels);
      try {
        model.zero_grad();
        const nn::Tensor logits = model.forward(batch.inputs, nn::Mode::train);
        const auto loss = nn::softmax_cross_entropy(logits, labels);
        model.backward(loss.grad_logits);
        for (auto* p : model.parameters()) nn::adam_step(*p, adam);
        loss_sum += loss.loss * static_cast<double>(labels.size());
        correct += count_correct(logits, labels);
        seen += labels.size();
      } catch (const nn::NumericError& e) {
        throw nn::NumericError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(step) + ": " + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    try {
      const LossAccuracy val = evaluate_loss(model, frames, val_indices);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
    } catch (const nn::NumericError& e) {
      throw nn::NumericError("epoch " + std::to_string(epoch + 1) + ", validation: " + e.what());
    }
    result.curve.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (result.best_epoch == 0 || rec.val_accuracy > result.best_val_accuracy) {
      result.best_epoch = rec.epoch;
      result.best_val_accuracy = rec.val_accuracy;
      best.take(model);
      since_best = 0;
    } else {
      ++since_best;
    }
    if (hooks.checkpoint_dir && config.checkpoint_every > 0 && rec.epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.mck", rec.epoch);
      std::filesystem::create_directories(*hooks.checkpoint_dir);
      nlohmann::json extras = hooks.checkpoint_extras;
      extras["epoch"] = rec.epoch;
      nn::save_checkpoint(*hooks.checkpoint_dir / name, model.to_checkpoint(extras));
    }
    if (config.early_stop_patience && since_best >= *config.early_stop_patience) {
      result.early_stopped = rec.epoch < config.epochs;
      break;
    }
  }
  best.restore(model);
  return result;
}

}  // namespace modclass::train
