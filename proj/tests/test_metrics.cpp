#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flood/metrics.hpp"
#include "flood/optim.hpp"
#include "flood/random.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace flood;

using testing::brute_force;

namespace {

Tensor<float> probs(Index n, Index k, std::vector<float> v) { return Tensor<float>({n, k}, std::move(v)); }

}  // namespace

TEST_CASE("two-class worked example") {
  const ConfusionMatrix cm(2, {5, 1, 2, 3});
  CHECK(cm.total() == 11);
  CHECK(cm.trace() == 8);
  const auto r = compute_metrics(cm);
  CHECK(r.accuracy == doctest::Approx(8.0 / 11));
  CHECK(r.per_class[0].precision == doctest::Approx(5.0 / 7));
  CHECK(r.per_class[1].precision == doctest::Approx(3.0 / 4));
  CHECK(r.per_class[0].recall == doctest::Approx(5.0 / 6));
  CHECK(r.per_class[1].recall == doctest::Approx(3.0 / 5));
  CHECK(r.per_class[0].support == 6);
  CHECK(r.macro_precision == doctest::Approx((5.0 / 7 + 0.75) / 2));
  CHECK(std::abs(r.mcc - 13.0 / std::sqrt(840.0)) <= 1e-12);
  CHECK(r.zero_divisions == 0);
}

TEST_CASE("degenerate matrices") {
  // Every prediction in one class: the MCC denominator vanishes.
  const ConfusionMatrix all_one(3, {0, 4, 0, 0, 5, 0, 0, 2, 0});
  const auto r = compute_metrics(all_one);
  CHECK(r.mcc == 0.0);
  CHECK(r.per_class[0].precision == 0.0);
  CHECK(r.zero_divisions >= 2);
  CHECK(mcc(ConfusionMatrix(2, {3, 0, 0, 0})) == 0.0);
  CHECK(mcc(ConfusionMatrix(2, {3, 0, 0, 4})) == doctest::Approx(1.0));
  CHECK(mcc(ConfusionMatrix(2, {0, 3, 4, 0})) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(3)), InvalidArgument);
  CHECK_THROWS_AS(ConfusionMatrix(2, {1, 2, 3}), InvalidShape);
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(2, 0), InvalidArgument);
}

TEST_CASE("metrics agree with a brute-force oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    std::vector<std::int64_t> c(static_cast<std::size_t>(k * k));
    for (auto& v : c) v = rng.below(4) == 0 ? 0 : static_cast<std::int64_t>(rng.below(50));
    c[0] += 1;
    const auto o = brute_force(k, c);
    const auto r = compute_metrics(ConfusionMatrix(k, c));
    CHECK(std::abs(r.accuracy - o.accuracy) <= 1e-12);
    CHECK(std::abs(r.macro_precision - o.macro_p) <= 1e-12);
    CHECK(std::abs(r.macro_recall - o.macro_r) <= 1e-12);
    CHECK(std::abs(r.macro_f1 - o.macro_f1) <= 1e-12);
    CHECK(std::abs(r.mcc - o.mcc) <= 1e-12);
    CHECK(r.mcc >= -1.0 - 1e-12);
    CHECK(r.mcc <= 1.0 + 1e-12);
  }
}

TEST_CASE("confusion merging and argmax") {
  ConfusionMatrix a(3), b(3), whole(3);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const int t = static_cast<int>(rng.below(3)), p = static_cast<int>(rng.below(3));
    (i % 2 ? a : b).add(t, p);
    whole.add(t, p);
  }
  a += b;
  CHECK(a == whole);
  const std::vector<float> tie{0.3f, 0.3f, 0.1f};
  CHECK(argmax(tie) == 0);
  const auto cm = confusion_from_probabilities(probs(2, 2, {0.9f, 0.1f, 0.4f, 0.6f}), std::vector<int>{0, 0});
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK_THROWS(confusion_from_probabilities(probs(2, 2, {1, 0, 0, 1}), std::vector<int>{0}));
}

TEST_CASE("soft vote") {
  const auto avg = ensemble_soft_vote({probs(1, 2, {0.6f, 0.4f}), probs(1, 2, {0.2f, 0.8f})});
  CHECK(avg[0] == 0.4f);
  CHECK(avg[1] == 0.6f);

  std::vector<Tensor<float>> members;
  for (std::uint64_t s = 0; s < 5; ++s) members.push_back(seeded_random<float>({7, 4}, s, UniformDist{0, 1}));
  const auto ref = ensemble_soft_vote(members);
  std::vector<std::size_t> perm{0, 1, 2, 3, 4};
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<Tensor<float>> shuffled;
    for (auto i : perm) shuffled.push_back(members[i]);
    CHECK(testing::values(ensemble_soft_vote(shuffled)) == testing::values(ref));
  }
  // Averaging copies of one member returns it.
  CHECK(testing::values(ensemble_soft_vote({members[0], members[0], members[0]})) == testing::values(members[0]));
  CHECK(testing::values(ensemble_soft_vote({members[1]})) == testing::values(members[1]));
  CHECK_THROWS_AS(ensemble_soft_vote({}), InvalidArgument);
  CHECK_THROWS_AS(ensemble_soft_vote({probs(1, 2, {0.5f, 0.5f}), probs(1, 3, {0.2f, 0.3f, 0.5f})}), InvalidShape);
}

TEST_CASE("hard vote") {
  const auto v = ensemble_hard_vote({probs(2, 3, {0.6f, 0.3f, 0.1f, 0.1f, 0.2f, 0.7f}),
                                     probs(2, 3, {0.2f, 0.5f, 0.3f, 0.1f, 0.8f, 0.1f}),
                                     probs(2, 3, {0.1f, 0.6f, 0.3f, 0.5f, 0.4f, 0.1f})});
  CHECK(testing::values(v) == std::vector<float>{0, 1, 0, 1, 0, 0});  // row 1 is a three-way tie -> class 0
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient and zero decay leave parameters alone") {
    std::vector<double> p{1.5, -2.0}, g{0, 0};
    AdamState<double> st;
    for (int i = 0; i < 5; ++i) adamw_step<double>(p, g, st, {0.1, 0.0});
    CHECK(p == std::vector<double>{1.5, -2.0});
    CHECK(st.step == 5);
  }
  SUBCASE("decay only shrinks geometrically") {
    std::vector<double> p{2.0}, g{0};
    AdamState<double> st;
    for (int i = 0; i < 3; ++i) adamw_step<double>(p, g, st, {0.1, 0.5});
    CHECK(p[0] == doctest::Approx(2.0 * std::pow(1 - 0.05, 3)).epsilon(1e-14));
  }
  SUBCASE("first step moves by the learning rate") {
    std::vector<double> p{1.0}, g{1.0};
    AdamState<double> st;
    adamw_step<double>(p, g, st, {0.1, 0.0});
    CHECK(std::abs(p[0] - 0.9) <= 1e-7);
    std::vector<double> q{1.0}, h{-3.0};
    AdamState<double> s2;
    adamw_step<double>(q, h, s2, {0.1, 0.0});
    CHECK(std::abs(q[0] - 1.1) <= 1e-7);
  }
  SUBCASE("minimizes a quadratic") {
    std::vector<double> p{3.0, -4.0};
    AdamState<double> st;
    for (int i = 0; i < 2000; ++i) {
      std::vector<double> g{2 * p[0], 2 * p[1]};
      adamw_step<double>(p, g, st, {0.05, 0.0});
    }
    CHECK(std::abs(p[0]) < 1e-2);
    CHECK(std::abs(p[1]) < 1e-2);
  }
  SUBCASE("size mismatch") {
    std::vector<double> p{1.0, 2.0}, g{1.0};
    AdamState<double> st;
    CHECK_THROWS_AS(adamw_step<double>(p, g, st, {}), InvalidShape);
  }
}
