#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "modclass/common/files.hpp"
#include "modclass/ensemble/ensemble.hpp"
#include "modclass/train/trainer.hpp"

using namespace modclass;
using namespace modclass::ensemble;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor rows(std::vector<std::vector<float>> values) {
  const std::size_t k = values.front().size();
  Tensor t(Shape{values.size(), 1, k});
  for (std::size_t r = 0; r < values.size(); ++r) std::copy(values[r].begin(), values[r].end(), t.data() + r * k);
  return t;
}

Tensor random_probs(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(Shape{n, 1, k});
  for (std::size_t r = 0; r < n; ++r) {
    float sum = 0.0f;
    for (std::size_t c = 0; c < k; ++c) sum += (t.data()[r * k + c] = u(rng));
    for (std::size_t c = 0; c < k; ++c) t.data()[r * k + c] /= sum;
  }
  return t;
}

model::ModelConfig tiny(std::size_t k = 3, std::size_t classes = 3) {
  model::ModelConfig c;
  c.kernel_size = k;
  c.blocks = 2;
  c.repetition = 1;
  c.base_filters = 4;
  c.num_classes = classes;
  c.input_length = 32;
  return c;
}

model::SeMsfnModel<float> tiny_model(std::uint64_t seed, std::size_t k = 3, std::size_t classes = 3) {
  model::SeMsfnModel<float> m(tiny(k, classes));
  m.init(seed);
  return m;
}

}  // namespace

TEST_CASE("majority and tie-break") {
  const Tensor a = rows({{0.6f, 0.3f, 0.1f}});
  const Tensor b = rows({{0.2f, 0.7f, 0.1f}});
  const std::vector<Tensor> aab{a, a, b};
  CHECK(vote(aab, TieBreak::mean_probability) == std::vector<int>{0});

  // One vote each; the mean favours class 1.
  const Tensor weak_a = rows({{0.4f, 0.35f, 0.25f}});
  const Tensor strong_b = rows({{0.05f, 0.9f, 0.05f}});
  const std::vector<Tensor> split{weak_a, strong_b};
  CHECK(vote(split, TieBreak::mean_probability) == std::vector<int>{1});
  CHECK(vote(split, TieBreak::lowest_index) == std::vector<int>{0});
}

TEST_CASE("tie-break only considers the tied classes") {
  // Votes: 0, 0, 1, 1. Class 2 has the largest mean probability but no
  // plurality, so it must not win.
  const Tensor p0 = rows({{0.40f, 0.01f, 0.39f, 0.2f}});
  const Tensor p1 = rows({{0.41f, 0.00f, 0.39f, 0.2f}});
  const Tensor p2 = rows({{0.00f, 0.41f, 0.39f, 0.2f}});
  const Tensor p3 = rows({{0.01f, 0.60f, 0.39f, 0.0f}});
  const std::vector<Tensor> members{p0, p1, p2, p3};
  CHECK(vote(members, TieBreak::mean_probability) == std::vector<int>{1});
  CHECK(vote(members, TieBreak::lowest_index) == std::vector<int>{0});
}

TEST_CASE("unanimity and permutation invariance on random scores") {
  std::mt19937_64 rng(1);
  const std::size_t n = 1000, k = 5;
  std::vector<Tensor> members{random_probs(n, k, rng), random_probs(n, k, rng), random_probs(n, k, rng)};
  for (TieBreak tb : {TieBreak::mean_probability, TieBreak::lowest_index}) {
    const auto base = vote(members, tb);
    std::vector<std::size_t> order{0, 1, 2};
    while (std::next_permutation(order.begin(), order.end())) {
      std::vector<Tensor> shuffled;
      for (std::size_t i : order) shuffled.push_back(members[i]);
      CHECK(vote(shuffled, tb) == base);
    }
    const auto single = model::argmax_rows(members[1]);
    const std::vector<Tensor> same{members[1], members[1], members[1]};
    CHECK(vote(same, tb) == single);
  }
  // Wherever the three members agree, the vote is that class.
  const auto m0 = model::argmax_rows(members[0]), m1 = model::argmax_rows(members[1]), m2 = model::argmax_rows(members[2]);
  const auto v = vote(members, TieBreak::mean_probability);
  std::size_t agreed = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (m0[r] == m1[r] && m1[r] == m2[r]) {
      CHECK(v[r] == m0[r]);
      ++agreed;
    }
  }
  CHECK(agreed > 0);
}

TEST_CASE("one strong and two random members on separable data") {
  std::mt19937_64 rng(2);
  const std::size_t n = 2000, k = 4;
  std::vector<int> truth(n);
  Tensor strong(Shape{n, 1, k});
  for (std::size_t r = 0; r < n; ++r) {
    truth[r] = static_cast<int>(rng() % k);
    for (std::size_t c = 0; c < k; ++c) strong.data()[r * k + c] = 0.02f;
    strong.data()[r * k + static_cast<std::size_t>(truth[r])] = 0.94f;
  }
  const Tensor r1 = random_probs(n, k, rng), r2 = random_probs(n, k, rng);
  auto accuracy = [&](const std::vector<int>& p) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) ok += p[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(n);
  };
  const std::vector<Tensor> members{strong, r1, r2};
  const double ens = accuracy(vote(members, TieBreak::mean_probability));
  CHECK(ens >= accuracy(model::argmax_rows(r1)));
  CHECK(ens >= accuracy(model::argmax_rows(r2)));
}

TEST_CASE("ensemble of identical models matches the single model") {
  std::vector<model::SeMsfnModel<float>> members;
  for (int i = 0; i < 3; ++i) members.push_back(tiny_model(11));
  model::SeMsfnModel<float> single = tiny_model(11);
  Ensemble e(std::move(members), {"a", "b", "c"}, TieBreak::mean_probability);

  std::mt19937_64 rng(3);
  std::normal_distribution<float> g;
  std::vector<data::IqFrame> frames;
  for (int n = 0; n < 40; ++n) {
    data::IqFrame f;
    f.label = static_cast<std::uint8_t>(n % 3);
    f.snr_db = n % 2 ? 10 : 20;
    for (int t = 0; t < 32; ++t) {
      f.i.push_back(g(rng));
      f.q.push_back(g(rng));
    }
    frames.push_back(f);
  }
  std::vector<std::size_t> idx(40);
  for (std::size_t i = 0; i < 40; ++i) idx[i] = i;
  const std::vector<std::string> names{"x", "y", "z"};
  const auto eval = e.evaluate(frames, idx, names, 16);
  const auto solo = train::evaluate(train::model_predictor(single), frames, idx, names, 16);
  CHECK(eval.ensemble == solo);
  REQUIRE(eval.members.size() == 3);
  for (const auto& m : eval.members) CHECK(m.report == solo);
  const std::string table = member_table_csv(eval);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  CHECK(table.find("ensemble,,,,,") != std::string::npos);
}

TEST_CASE("ensemble preconditions and spec files") {
  std::vector<model::SeMsfnModel<float>> one;
  one.push_back(tiny_model(1));
  CHECK_THROWS_AS(Ensemble(std::move(one), {"a"}, TieBreak::mean_probability), std::invalid_argument);

  std::vector<model::SeMsfnModel<float>> mixed;
  mixed.push_back(tiny_model(1));
  mixed.push_back(tiny_model(2, 3, 4));
  CHECK_THROWS_AS(Ensemble(std::move(mixed), {"a", "b"}, TieBreak::mean_probability), std::invalid_argument);

  const auto dir = std::filesystem::temp_directory_path() / "modclass_ensemble_spec";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (std::size_t k : {3u, 5u}) {
    auto m = tiny_model(k, k);
    nn::save_checkpoint(dir / ("k" + std::to_string(k) + ".mck"), m.to_checkpoint());
  }
  write_text_atomic(dir / "spec.json", R"({"members": ["k3.mck", "k5.mck"], "tie_break": "lowest_index"})");
  const EnsembleSpec spec = load_spec(dir / "spec.json");
  CHECK(spec.tie_break == TieBreak::lowest_index);
  CHECK(spec.members[0] == dir / "k3.mck");
  const Ensemble loaded = Ensemble::load(spec);
  CHECK(loaded.size() == 2);
  CHECK(nlohmann::json(spec).get<EnsembleSpec>().members == spec.members);

  EnsembleSpec lonely;
  lonely.members = {dir / "k3.mck"};
  CHECK_THROWS_AS(Ensemble::load(lonely), std::invalid_argument);
  CHECK_THROWS_AS((nlohmann::json{{"members", nlohmann::json::array()}, {"tie_break", "coin"}}.get<EnsembleSpec>()),
                  std::invalid_argument);
  std::filesystem::remove_all(dir);
}
