#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedbss/data.hpp"
#include "fedbss/errors.hpp"
#include "fedbss/nn.hpp"
#include "fedbss/selection.hpp"
#include "support.hpp"

using namespace fedbss;
using namespace fedbss::selection;

namespace {

std::vector<ScoreEntry> entries_with(std::vector<double> uncertainties) {
  std::vector<ScoreEntry> out;
  for (std::size_t i = 0; i < uncertainties.size(); ++i) {
    out.push_back({i, static_cast<double>(i), uncertainties[i]});
  }
  return out;
}

// Table with `unbiased` entries at or before the split and `biased` after it.
SampleScoreTable split_table(std::size_t unbiased, std::size_t biased) {
  std::vector<double> u(unbiased + biased, 0.1);
  u[unbiased - 1] = 0.9;
  return make_table(entries_with(u));
}

// Hand-set softmax regression used by the scoring oracle below.
nn::Model scoring_model() {
  nn::Model m(nn::softmax_regression({2}, 3));
  const float w[] = {1.0f, -0.5f, 0.2f, 0.8f, -1.0f, 0.3f};
  const float b[] = {0.1f, 0.0f, -0.1f};
  std::copy(std::begin(w), std::end(w), m.mutable_params().segment(0).begin());
  std::copy(std::begin(b), std::end(b), m.mutable_params().segment(1).begin());
  return m;
}

}  // namespace

TEST_CASE("score_samples: zero-weight model gives ln C and uncertainty 1") {
  nn::Model m(nn::softmax_regression({2}, 4));
  data::Dataset d = testing::separable_dataset(5, 4);
  SampleScoreTable t = score_samples(m, d);
  REQUIRE(t.entries.size() == 20);
  for (const auto& e : t.entries) {
    CHECK(e.loss == doctest::Approx(std::log(4.0)));
    CHECK(e.uncertainty == doctest::Approx(1.0));
  }
  // Every loss ties, so the stable sort keeps sample order and the split is 0.
  for (std::size_t i = 0; i < 20; ++i) CHECK(t.entries[i].sample == i);
  CHECK(t.split_pos == 0);
}

TEST_CASE("uncertainty arithmetic") {
  const double p[] = {0.7, 0.2, 0.1};
  CHECK(uncertainty(p) == doctest::Approx(0.4));
  const double one_hot[] = {0.0, 1.0, 0.0};
  CHECK(uncertainty(one_hot) == 0.0);
  const double flat[] = {0.25, 0.25, 0.25, 0.25};
  CHECK(uncertainty(flat) == 1.0);
}

TEST_CASE("uncertainty property: bounded, 1 only for uniform") {
  std::mt19937_64 rng(17);
  std::gamma_distribution<double> gamma(0.3, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> p(2 + rng() % 10);
    double sum = 0.0;
    for (double& v : p) sum += (v = gamma(rng) + 1e-12);
    for (double& v : p) v /= sum;
    const double u = uncertainty(p);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    if (*hi - *lo > 1e-9) CHECK(u < 1.0);
  }
  for (double peak : {0.9, 0.99, 0.999, 0.9999}) {
    const double p[] = {peak, 1.0 - peak};
    CHECK(uncertainty(p) == doctest::Approx(2.0 * (1.0 - peak)));
  }
}

TEST_CASE("score_samples matches an independent scoring oracle") {
  const float xs[] = {0.5f, 1.0f, 2.0f, -1.0f, -1.0f, 0.5f, 0.0f, 0.0f, 1.5f, 1.5f};
  data::Dataset d = data::make_dataset(nn::Tensor({5, 2}, std::vector<float>(std::begin(xs), std::end(xs))),
                                       {1, 0, 2, 1, 0}, 3);
  nn::Model m = scoring_model();
  const nn::ParamVector before = m.params();
  SampleScoreTable t = score_samples(m, d);
  CHECK(m.params() == before);

  // numpy: softmax, cross entropy and 1 - (max - min), then a stable sort.
  struct Row {
    std::size_t sample;
    double loss, uncertainty;
  };
  const Row expected[] = {{1, 0.05498523537714727, 0.05987833836954859},
                          {2, 0.43062466227316837, 0.421930578480031},
                          {0, 0.5599147009875639, 0.6008017502099886},
                          {3, 1.1019428482292442, 0.9334442042448018},
                          {4, 1.115428799289161, 0.4164936627124798}};
  REQUIRE(t.entries.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CAPTURE(i);
    CHECK(t.entries[i].sample == expected[i].sample);
    CHECK(std::abs(t.entries[i].loss - expected[i].loss) < 1e-5);
    CHECK(std::abs(t.entries[i].uncertainty - expected[i].uncertainty) < 1e-5);
  }
  CHECK(t.split_pos == 3);
  CHECK(t.unbiased_count() == 4);
  CHECK(t.biased_count() == 1);
}

TEST_CASE("score_samples rejects a mismatched model") {
  nn::Model m(nn::softmax_regression({3}, 2));
  CHECK_THROWS_AS(score_samples(m, testing::separable_dataset()), ShapeError);
}

TEST_CASE("split_point examples") {
  CHECK(split_point(entries_with({0.2, 0.9, 0.4})) == 1);
  CHECK(split_point(entries_with({0.3})) == 0);
  CHECK(split_point(entries_with({0.5, 0.5, 0.5})) == 0);
  CHECK(split_point(entries_with({0.1, 0.7, 0.3, 0.7})) == 1);

  SampleScoreTable t = make_table(entries_with({0.2, 0.9, 0.4}));
  CHECK(t.unbiased_count() == 2);
  CHECK(t.biased_count() == 1);
  CHECK(make_table(entries_with({0.3})).biased_count() == 0);
}

TEST_CASE("make_table sorts stably by loss") {
  std::vector<ScoreEntry> raw = {{0, 0.5, 0.1}, {1, 0.2, 0.1}, {2, 0.5, 0.1}, {3, 0.2, 0.1}, {4, 0.1, 0.1}};
  SampleScoreTable t = make_table(raw);
  std::vector<std::size_t> order;
  for (const auto& e : t.entries) order.push_back(e.sample);
  CHECK(order == std::vector<std::size_t>{4, 1, 3, 0, 2});
}

TEST_CASE("table invariants hold on random models") {
  std::mt19937_64 rng(5);
  data::Dataset d = data::synth_gaussian_mixture(4, 15, 3, 1.5, 2);
  for (int trial = 0; trial < 20; ++trial) {
    nn::Model m(nn::mlp({3}, 6, 4));
    m.set_params(testing::random_params(m.params(), rng));
    SampleScoreTable t = score_samples(m, d);
    REQUIRE(t.entries.size() == d.size());
    CHECK(t.split_pos < t.entries.size());
    for (std::size_t i = 1; i < t.entries.size(); ++i) CHECK(t.entries[i - 1].loss <= t.entries[i].loss);
    for (const auto& e : t.entries) {
      CHECK(e.uncertainty >= 0.0);
      CHECK(e.uncertainty <= 1.0);
    }
    const double best = std::max_element(t.entries.begin(), t.entries.end(), [](const auto& a, const auto& b) {
                          return a.uncertainty < b.uncertainty;
                        })->uncertainty;
    CHECK(t.entries[t.split_pos].uncertainty == best);
    for (std::size_t i = 0; i < t.split_pos; ++i) CHECK(t.entries[i].uncertainty < best);
  }
}

TEST_CASE("schedule_alpha examples and errors") {
  CHECK(schedule_alpha(0, 10) == 0.0);
  CHECK(schedule_alpha(10, 10) == 1.0);
  CHECK(schedule_alpha(5, 10) == doctest::Approx(0.5));
  CHECK(schedule_alpha(1, 10) == doctest::Approx(0.024471741852423234));
  CHECK_THROWS_AS(schedule_alpha(11, 10), ScheduleError);
  CHECK_THROWS_AS(schedule_alpha(0, 0), ScheduleError);
  for (std::size_t total : {1u, 2u, 7u, 50u}) {
    for (std::size_t e = 1; e <= total; ++e) CHECK(schedule_alpha(e - 1, total) <= schedule_alpha(e, total));
  }
}

TEST_CASE("epoch_training_set examples") {
  SampleScoreTable t = split_table(4, 4);
  EpochTrainingSet mid = epoch_training_set(t, 6, 11);
  CHECK(mid.alpha == doctest::Approx(0.5));
  CHECK(mid.indices == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

  CHECK(epoch_training_set(t, 1, 11).indices.size() == 4);
  CHECK(epoch_training_set(t, 11, 11).indices.size() == 8);
  CHECK(epoch_training_set(t, 1, 1).indices.size() == 8);
  CHECK(epoch_training_set(t, 1, 1).alpha == 1.0);
  CHECK_THROWS_AS(epoch_training_set(t, 0, 5), ScheduleError);
  CHECK_THROWS_AS(epoch_training_set(t, 6, 5), ScheduleError);
}

TEST_CASE("epoch sets: monotone growth and full coverage") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<ScoreEntry> raw;
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back({i, static_cast<double>(rng() % 10), static_cast<double>(rng() % 100) / 100.0});
    }
    SampleScoreTable t = make_table(raw);
    const std::size_t total = 1 + rng() % 12;
    std::vector<std::size_t> prev;
    for (std::size_t e = 1; e <= total; ++e) {
      EpochTrainingSet s = epoch_training_set(t, e, total);
      CHECK(std::is_sorted(s.indices.begin(), s.indices.end()));
      CHECK(std::includes(s.indices.begin(), s.indices.end(), prev.begin(), prev.end()));
      for (std::size_t pos = 0; pos <= t.split_pos; ++pos) {
        CHECK(std::binary_search(s.indices.begin(), s.indices.end(), t.entries[pos].sample));
      }
      CHECK(s.alpha >= 0.0);
      CHECK(s.alpha <= 1.0);
      prev = s.indices;
    }
    CHECK(prev.size() == n);
  }
}

TEST_CASE("epoch sets take the lowest-loss biased samples first") {
  std::vector<ScoreEntry> raw = {{0, 0.9, 0.1}, {1, 0.1, 0.8}, {2, 0.5, 0.2}, {3, 0.3, 0.1},
                                 {4, 0.7, 0.3}, {5, 0.05, 0.1}};
  SampleScoreTable t = make_table(raw);
  // Sorted samples: 5, 1, 3, 2, 4, 0 with the split at sample 1.
  CHECK(t.split_pos == 1);
  std::vector<std::size_t> sorted;
  for (const auto& e : t.entries) sorted.push_back(e.sample);
  for (std::size_t e = 1; e <= 7; ++e) {
    CHECK(epoch_training_set(t, e, 7).indices == oracle::cosine_epoch_oracle(sorted, t.split_pos, e, 7));
  }
  CHECK(epoch_training_set(t, 4, 7).indices == std::vector<std::size_t>{1, 2, 3, 5});
}

TEST_CASE("strategy variants") {
  SampleScoreTable t = split_table(4, 20);
  for (std::size_t e = 1; e <= 11; ++e) {
    CHECK(strategy_variant(t, e, 11, Variant::kFilter).indices.size() == 4);
    CHECK(strategy_variant(t, e, 11, Variant::kCosine).indices == epoch_training_set(t, e, 11).indices);
    const std::size_t lin = strategy_variant(t, e, 11, Variant::kLinear).indices.size() - 4;
    CHECK(lin == (e - 1) * 20 / 10);
  }
  CHECK(strategy_variant(t, 6, 11, Variant::kLinear).indices.size() ==
        strategy_variant(t, 6, 11, Variant::kCosine).indices.size());
  // Early epochs: cosine adds floor(0.0245 * 20) = 0, linear floor(0.1 * 20) = 2.
  CHECK(strategy_variant(t, 2, 11, Variant::kCosine).indices.size() == 4);
  CHECK(strategy_variant(t, 2, 11, Variant::kLinear).indices.size() == 6);
  for (std::size_t e = 1; e <= 6; ++e) {
    CHECK(strategy_variant(t, e, 11, Variant::kCosine).indices.size() <=
          strategy_variant(t, e, 11, Variant::kLinear).indices.size());
  }

  CHECK(parse_variant("filter") == Variant::kFilter);
  CHECK(parse_variant("linear") == Variant::kLinear);
  CHECK(parse_variant("cosine") == Variant::kCosine);
  CHECK(variant_name(Variant::kLinear) == "linear");
  CHECK_THROWS_AS(parse_variant("quadratic"), ConfigError);
}
