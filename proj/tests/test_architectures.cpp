#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "arch_configs.hpp"
#include "grad_suite.hpp"
#include "flood/architectures.hpp"
#include "flood/flops.hpp"
#include "support.hpp"

using namespace flood;
using testing::rnd;
using testing::values;

TEST_CASE("presets validate and carry the published input sizes") {
  CHECK(preset("cct-afssa").height == 128);
  CHECK(preset("vit-afssa").height == 128);
  CHECK(preset("swin-afssa").height == 72);
  CHECK(preset("eanet-afssa").height == 48);
  for (const auto& n : preset_names()) {
    CHECK_NOTHROW(preset(n).validate());
    CHECK(preset(n).num_classes == 4);
  }
  CHECK_THROWS_AS(preset("resnet"), InvalidArgument);
}

TEST_CASE("shipped preset parameter counts") {
  const std::vector<std::pair<std::string, double>> table{
      {"cct", 407365}, {"swin", 222388}, {"eanet", 310899}, {"vit", 11211979}};
  std::vector<Index> totals;
  for (const auto& [name, published] : table) {
    const Classifier<float> m(preset(name));
    const auto count = count_parameters(m);
    const auto closed = analytic_parameter_count(m.config());
    CHECK(count.total == closed.total);
    CHECK(count.trainable == closed.trainable);
    CHECK(std::abs(static_cast<double>(count.total) / published - 1) <= 0.10);
    totals.push_back(count.total);
  }
  CHECK(totals[1] < totals[2]);
  CHECK(totals[2] < totals[0]);
  CHECK(totals[0] < totals[3]);
  CHECK(count_parameters(Classifier<float>(preset("cct"))).non_trainable() == 0);
}

TEST_CASE("random configs: runtime count equals the closed form, forward shape holds") {
  Rng r(2024);
  for (int i = 0; i < 100; ++i) {
    const auto c = testing::random_config(r);
    const Classifier<float> m(c);
    const auto count = count_parameters(m);
    const auto closed = analytic_parameter_count(c);
    INFO(config_to_json(c).dump());
    CHECK(count.total == closed.total);
    CHECK(count.trainable == closed.trainable);
    if (i % 10 == 0) {
      auto p = forward_classify(m, rnd<float>({2, c.height, c.width, 3}, 5, 0, 1));
      CHECK(p.shape() == Shape{2, c.num_classes});
    }
  }
}

TEST_CASE("frozen positional tables are non-trainable") {
  auto c = preset("vit");
  c.freeze_positional = true;
  const auto count = analytic_parameter_count(c);
  CHECK(count.non_trainable() == (c.height / c.patch_size) * (c.width / c.patch_size) * c.dim + c.dim);
  CHECK(count_parameters(Classifier<float>(c)).non_trainable() == count.non_trainable());
}

TEST_CASE("build_model is deterministic and parameter names are unique") {
  const auto c = with_input_size(preset("swin"), 24);
  const Classifier<float> a(c), b(c);
  REQUIRE(a.parameters().size() == b.parameters().size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters().items()[i].name == b.parameters().items()[i].name);
    CHECK(values(a.parameters().items()[i].value) == values(b.parameters().items()[i].value));
    names.insert(a.parameters().items()[i].name);
  }
  CHECK(names.size() == a.parameters().size());
  auto other = c;
  other.seed = 1;
  CHECK(values(Classifier<float>(other).parameters().items()[0].value) !=
        values(a.parameters().items()[0].value));
  // Weights truncated normal, biases zero.
  for (const auto& p : a.parameters().items()) {
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
      for (float v : p.value.data()) CHECK(v == 0.0f);
    }
  }
}

TEST_CASE("vit preset forward on zeros") {
  const Classifier<float> m(preset("vit"));
  auto p = forward_classify(m, Tensor<float>({2, 128, 128, 3}, 0.0f));
  CHECK(p.shape() == Shape{2, 4});
}

TEST_CASE("forward_classify contract") {
  for (const auto& name : {"cct", "swin", "eanet"}) {
    const Classifier<float> m(preset(name));
    const auto& c = m.config();
    auto one = rnd<float>({1, c.height, c.width, 3}, 3, 0, 1);
    auto two = rnd<float>({1, c.height, c.width, 3}, 4, 0, 1);
    Tensor<float> batch({3, c.height, c.width, 3});
    auto d = batch.data();
    std::copy(one.data().begin(), one.data().end(), d.begin());
    std::copy(two.data().begin(), two.data().end(), d.begin() + one.numel());
    std::copy(one.data().begin(), one.data().end(), d.begin() + 2 * one.numel());
    auto p = forward_classify(m, batch);
    for (Index r = 0; r < 3; ++r) {
      double s = 0;
      for (Index k = 0; k < 4; ++k) {
        s += p[r * 4 + k];
        CHECK(p[r * 4 + k] >= 0.1f);
        CHECK(p[r * 4 + k] <= 0.5f);
      }
      CHECK(std::abs(s - 1) <= 1e-6);
    }
    for (Index k = 0; k < 4; ++k) CHECK(p[k] == p[8 + k]);
    // Batch independence.
    auto single = forward_classify(m, two);
    for (Index k = 0; k < 4; ++k) CHECK(std::abs(single[k] - p[4 + k]) <= 1e-6);
    // Determinism.
    CHECK(values(forward_classify(m, batch)) == values(p));
    CHECK_THROWS_AS(forward_classify(m, Tensor<float>({1, c.height + 4, c.width, 3}, 0.0f)), InvalidShape);
  }
}

TEST_CASE("invalid configs are rejected") {
  auto c = preset("vit");
  c.height = 100;
  CHECK_THROWS_AS(c.validate(), InvalidShape);
  c = preset("cct");
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = preset("swin");
  c.window_sizes = {5, 3};
  CHECK_THROWS_AS(c.validate(), InvalidShape);
  c = preset("cct");
  c.heads = 3;
  CHECK_THROWS_AS(Classifier<float>{c}, InvalidArgument);
  CHECK_THROWS_AS(with_input_size(preset("cct"), 0), InvalidArgument);
  CHECK_THROWS_AS(with_input_size(preset("vit"), 100), InvalidShape);
}

TEST_CASE("config json round trip and strictness") {
  for (const auto& n : preset_names()) {
    const auto c = preset(n);
    CHECK(config_from_json(nlohmann::json::parse(config_to_json(c).dump())) == c);
  }
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"kind", "cct"}, {"dimm", 3}}), ConfigError);
  try {
    config_from_json(nlohmann::json{{"kind", "cct"}, {"dimm", 3}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dimm") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"kind", "transformer"}}), ConfigError);
  const auto small = config_from_json(nlohmann::json{{"preset", "eanet-afssa"}, {"depth", 1}});
  CHECK(small.depth == 1);
  CHECK(small.memory_units == 64);
}

TEST_CASE("flop accounting closed forms") {
  CHECK(linear_flops(3, 4) == 28);
  CHECK(linear_flops(3, 4, 1, false) == 24);
  CHECK(linear_flops(3, 4, 10) == 280);
  CHECK(conv2d_flops(3, 3, 3, 8, 32, 32, false) == 442368);
  CHECK(conv2d_flops(3, 3, 3, 8, 32, 32, true) == 442368 + 8 * 32 * 32);
  CHECK(attention_product_flops(10, 8) == 2 * (2 * 10 * 10 * 8));
  CHECK(external_attention_flops(10, 4, 8) == 2 * (2 * 10 * 4 * 8));
  for (const auto& n : preset_names()) {
    const auto c = preset(n);
    const auto r = estimate_flops(c);
    Index s = 0;
    for (const auto& e : r.layers) s += e.flops;
    CHECK(s == r.total);
    CHECK(!r.convention.empty());
    // Larger input, more work.
    const auto bigger = estimate_flops(with_input_size(c, c.height * 2));
    CHECK(bigger.total > r.total);
  }
  const double cct = static_cast<double>(estimate_flops(preset("cct")).total) / 1e9;
  CHECK(cct > 0.0896);
  CHECK(cct < 8.96);  // same order of magnitude as the published 0.896 G
}

TEST_CASE("full architectures pass finite-difference checks") {
  for (const auto& c : testing::architecture_gradient_cases(1)) {
    INFO(c.name << " rel err " << c.error);
    CHECK(c.error <= 1e-4);
  }
}
