#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "modclass/common/files.hpp"
#include "modclass/data/split.hpp"
#include "modclass/train/trainer.hpp"

namespace nn = modclass::nn;
namespace data = modclass::data;
namespace model = modclass::model;
using namespace modclass::train;
using modclass::read_text;
using modclass::data::IqFrame;

namespace {

model::ModelConfig tiny_config(std::size_t length = 64) {
  model::ModelConfig c;
  c.kernel_size = 3;
  c.blocks = 2;
  c.repetition = 1;
  c.reduction_ratio = 2;
  c.base_filters = 4;
  c.num_classes = 3;
  c.input_length = length;
  return c;
}

// Class c is a tone at a class-specific frequency plus noise, so there is
// structure to learn.
std::vector<IqFrame> tone_frames(std::size_t n, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  std::vector<IqFrame> out;
  for (std::size_t k = 0; k < n; ++k) {
    IqFrame f;
    f.label = static_cast<std::uint8_t>(k % 3);
    f.snr_db = static_cast<int>(2 * (k % 4));
    const double freq = 0.05 + 0.1 * f.label;
    for (std::size_t t = 0; t < length; ++t) {
      f.i.push_back(static_cast<float>(std::cos(2 * M_PI * freq * static_cast<double>(t))) + noise(rng));
      f.q.push_back(static_cast<float>(std::sin(2 * M_PI * freq * static_cast<double>(t))) + noise(rng));
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> v;
  for (std::size_t i = a; i < b; ++i) v.push_back(i);
  return v;
}

const std::vector<std::string> kNames{"a", "b", "c"};

}  // namespace

TEST_CASE("perfect and constant predictors") {
  std::vector<int> truth, snr;
  for (int n = 0; n < 90; ++n) {
    truth.push_back(n % 3);
    snr.push_back(10 * (n % 5));
  }
  const EvalReport perfect = build_report(truth, truth, snr, kNames);
  CHECK(perfect.overall_accuracy() == 1.0);
  for (const auto& [s, acc] : perfect.per_snr_accuracy()) CHECK(acc == 1.0);
  for (const auto& t : perfect.per_class) CHECK(t.accuracy() == 1.0);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(perfect.confusion[r][c] == (r == c ? 30u : 0u));

  const std::vector<int> constant(truth.size(), 1);
  const EvalReport flat = build_report(truth, constant, snr, kNames);
  CHECK(flat.overall_accuracy() == doctest::Approx(1.0 / 3.0));
  CHECK(flat.per_class[1].accuracy() == 1.0);
  CHECK(flat.per_class[0].accuracy() == 0.0);
  CHECK_THROWS_AS(build_report(truth, std::vector<int>(90, 3), snr, kNames), std::invalid_argument);
  CHECK_THROWS_AS(build_report(truth, constant, std::vector<int>(3), kNames), std::invalid_argument);
}

TEST_CASE("report identities on random predictions") {
  std::mt19937_64 rng(5);
  std::vector<int> truth, pred, snr;
  for (int n = 0; n < 1000; ++n) {
    truth.push_back(static_cast<int>(rng() % 3));
    pred.push_back(rng() % 4 == 0 ? static_cast<int>(rng() % 3) : truth.back());
    snr.push_back(-4 + 2 * static_cast<int>(rng() % 9));
  }
  const EvalReport r = build_report(truth, pred, snr, kNames, 2);
  double weighted = 0.0;
  std::size_t frames = 0;
  for (const auto& [s, t] : r.per_snr) {
    weighted += t.accuracy() * static_cast<double>(t.total);
    frames += t.total;
  }
  CHECK(frames == 1000);
  CHECK(weighted / 1000.0 == doctest::Approx(r.overall_accuracy()).epsilon(1e-12));
  std::size_t trace = 0, total = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < 3; ++p) row += r.confusion[t][p];
    CHECK(row == r.per_class[t].total);
    trace += r.confusion[t][t];
    total += row;
  }
  CHECK(total == 1000);
  CHECK(static_cast<double>(trace) / static_cast<double>(total) == r.overall_accuracy());
  std::size_t at2 = 0;
  for (const auto& row : r.confusion_at_snr)
    for (std::size_t v : row) at2 += v;
  CHECK(at2 == r.per_snr.at(2).total);
}

TEST_CASE("headline metrics") {
  // Bins -2..12 with accuracy (snr + 4) / 20 from 20 frames each.
  std::vector<int> truth, pred, snr;
  for (int s = -2; s <= 12; s += 2) {
    for (int n = 0; n < 20; ++n) {
      truth.push_back(0);
      pred.push_back(n < s + 4 ? 0 : 1);
      snr.push_back(s);
    }
  }
  const EvalReport r = build_report(truth, pred, snr, kNames);
  const double want = (4 + 6 + 8 + 10 + 12 + 14) / 6.0 / 20.0;
  CHECK(*r.band_0_10_accuracy() == doctest::Approx(want).epsilon(1e-15));
  CHECK(r.max_snr_accuracy()->first == 12);
  CHECK(r.max_snr_accuracy()->second == doctest::Approx(16.0 / 20.0));

  const EvalReport high = build_report(std::vector<int>{0}, std::vector<int>{0}, std::vector<int>{20}, kNames);
  CHECK_FALSE(high.band_0_10_accuracy().has_value());
  CHECK(summary_json(high)["accuracy_0_10_db"].is_null());
}

TEST_CASE("CSV outputs round-trip and omit empty SNR bins") {
  std::vector<int> truth{0, 1, 2, 2, 1}, pred{0, 2, 2, 2, 1}, snr{0, 0, 10, 30, 30};
  const std::vector<std::string> names{"OOK", "a,b", "say \"hi\""};
  const EvalReport r = build_report(truth, pred, snr, names, 30);
  TrainingCurve curve;
  curve.epochs.push_back({1, 1.25, 0.5, 1.5, 0.4});
  curve.epochs.push_back({2, 0.75, 0.75, 0.9, 0.8});
  const auto dir = std::filesystem::temp_directory_path() / "modclass_report_csv";
  std::filesystem::remove_all(dir);
  report_csv(r, &curve, dir);

  const std::string snr_csv = read_text(dir / "accuracy_by_snr.csv");
  CHECK(snr_csv == "snr_db,accuracy,correct,total\n0,0.500000,1,2\n10,1.000000,1,1\n30,1.000000,2,2\n");
  CHECK(read_text(dir / "confusion.csv").starts_with("truth/predicted,OOK,\"a,b\",\"say \"\"hi\"\"\"\n"));
  CHECK(std::filesystem::exists(dir / "confusion_snr30.csv"));

  const EvalReport back = read_report_csv(dir);
  CHECK(back == r);
  CHECK(nlohmann::json::parse(read_text(dir / "summary.json")) == summary_json(r));
  CHECK(summary_json(back).dump(2) + "\n" == read_text(dir / "summary.json"));
  CHECK(read_curves_csv(dir / "curves.csv") == curve);
  std::filesystem::remove_all(dir);

  CHECK(parse_csv_line("a,\"b,c\",\"d\"\"e\",") == std::vector<std::string>{"a", "b,c", "d\"e", ""});
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  CHECK(c.epochs == 30);
  CHECK(c.batch_size == 128);
  CHECK(c.learning_rate == 1e-3);
  c.early_stop_patience = 4;
  c.seed = 99;
  CHECK(nlohmann::json(c).get<TrainConfig>() == c);
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = {};
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = {};
  bad.learning_rate = 0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("a single example is memorized") {
  const auto frames = tone_frames(2, 64, 1);
  model::SeMsfnModel<float> m(tiny_config());
  m.init(3);
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 1;
  const std::vector<std::size_t> train_idx{0}, val_idx{1};
  const TrainResult r = train(m, frames, train_idx, val_idx, c);
  CHECK(r.curve.epochs.size() == 200);
  CHECK(r.curve.epochs.back().train_accuracy == 1.0);
  CHECK(r.curve.epochs.back().train_loss < r.curve.epochs.front().train_loss / 10);
}

TEST_CASE("loss falls over the first Adam steps on a fixed batch") {
  const auto frames = tone_frames(48, 64, 2);
  model::SeMsfnModel<float> m(tiny_config());
  m.init(4);
  const auto batch = data::make_batch(frames, range(0, 48));
  const std::vector<int> labels(batch.labels.begin(), batch.labels.end());
  std::vector<double> losses;
  for (int step = 0; step <= 5; ++step) {
    m.zero_grad();
    const auto loss = nn::softmax_cross_entropy(m.forward(batch.inputs, nn::Mode::train), labels);
    losses.push_back(loss.loss);
    m.backward(loss.grad_logits);
    for (auto* p : m.parameters()) nn::adam_step(*p, nn::AdamOptions{});
  }
  double mean = 0.0;
  for (int s = 1; s <= 5; ++s) mean += losses[static_cast<std::size_t>(s)] / 5.0;
  CHECK(mean <= losses[0]);
  CHECK(losses[5] < losses[0]);
}

TEST_CASE("training is reproducible and restores the best epoch") {
  const auto frames = tone_frames(120, 64, 3);
  const auto split = data::split(frames, data::SplitSpec{.seed = 2});
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 16;
  c.seed = 8;
  auto run = [&](TrainResult& out) {
    model::SeMsfnModel<float> m(tiny_config());
    m.init(5);
    out = train(m, frames, split.train, split.val, c);
    return evaluate_loss(m, frames, split.val);
  };
  TrainResult a, b;
  const LossAccuracy va = run(a);
  const LossAccuracy vb = run(b);
  CHECK(a.curve == b.curve);
  CHECK(va.loss == vb.loss);
  CHECK(a.curve.epochs.size() == 4);
  CHECK(va.accuracy == a.best_val_accuracy);
  CHECK(a.curve.epochs[a.best_epoch - 1].val_accuracy == a.best_val_accuracy);
  for (const auto& e : a.curve.epochs) CHECK(e.val_accuracy <= a.best_val_accuracy);
}

TEST_CASE("early stopping, periodic checkpoints and guards") {
  const auto frames = tone_frames(60, 64, 4);
  const auto split = data::split(frames, data::SplitSpec{.seed = 1});
  model::SeMsfnModel<float> m(tiny_config());
  m.init(6);
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 32;
  c.learning_rate = 1e-12;  // only the normalization statistics move
  c.early_stop_patience = 2;
  c.checkpoint_every = 1;
  TrainHooks hooks;
  const auto dir = std::filesystem::temp_directory_path() / "modclass_train_ckpt";
  std::filesystem::remove_all(dir);
  hooks.checkpoint_dir = dir;
  std::size_t calls = 0;
  hooks.on_epoch = [&](const EpochRecord&) { ++calls; };
  const TrainResult r = train(m, frames, split.train, split.val, c, hooks);
  REQUIRE(r.early_stopped);
  CHECK(r.curve.epochs.size() == r.best_epoch + 2);
  CHECK(calls == r.curve.epochs.size());
  for (std::size_t e = r.best_epoch; e < r.curve.epochs.size(); ++e) {
    CHECK(r.curve.epochs[e].val_accuracy <= r.best_val_accuracy);
  }
  for (std::size_t e = 1; e <= r.curve.epochs.size(); ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.mck", e);
    CHECK(std::filesystem::exists(dir / name));
  }
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(train(m, frames, split.train, split.train, c), std::invalid_argument);
  CHECK_THROWS_AS(train(m, frames, std::vector<std::size_t>{}, split.val, c), std::invalid_argument);
}

TEST_CASE("a non-finite value aborts training and names the layer") {
  const auto frames = tone_frames(90, 64, 5);
  const auto split = data::split(frames, data::SplitSpec{});
  model::SeMsfnModel<float> m(tiny_config());
  m.init(7);
  for (auto* p : m.parameters()) {
    if (p->name == "stem.conv2.conv.weight") p->value.values()[0] = std::nanf("");
  }
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  try {
    train(m, frames, split.train, split.val, c);
    FAIL("expected NumericError");
  } catch (const nn::NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1, batch 1") != std::string::npos);
    CHECK(msg.find("stem.conv2") != std::string::npos);
  }
}

TEST_CASE("inference-mode evaluation does not depend on batch size") {
  const auto frames = tone_frames(50, 64, 6);
  model::SeMsfnModel<float> m(tiny_config());
  m.init(8);
  // Move the running statistics away from their initial values first.
  const auto b = data::make_batch(frames, range(0, 50));
  m.forward(b.inputs, nn::Mode::train);
  const auto idx = range(0, 50);
  const EvalReport one = evaluate(model_predictor(m), frames, idx, kNames, 1, 0);
  for (std::size_t bs : {7u, 50u, 256u}) CHECK(evaluate(model_predictor(m), frames, idx, kNames, bs, 0) == one);
  CHECK(one.overall.total == 50);
  CHECK_THROWS_AS(evaluate(model_predictor(m), frames, std::vector<std::size_t>{}, kNames), std::invalid_argument);
}
