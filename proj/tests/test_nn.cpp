#include <doctest.h>

#include <cmath>
#include <random>

#include "genrelens/autodiff.hpp"
#include "genrelens/checkpoint.hpp"
#include "genrelens/errors.hpp"
#include "genrelens/nn.hpp"
#include "oracles.hpp"

using namespace genrelens;
using namespace genrelens::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                     double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("linear identity and hand arithmetic") {
  ParameterStore store;
  auto& w = store.create("w", Tensor({2, 2}, {1, 0, 0, 1}));
  auto& b = store.create("b", Tensor({1, 2}, {0, 0}));
  LinearParams p{&w, &b};
  NodePtr y = linear(constant(Tensor({1, 2}, {1, 2})), p);
  CHECK(y->value[0] == doctest::Approx(1));
  CHECK(y->value[1] == doctest::Approx(2));

  w.value() = Tensor({2, 2}, {2, 3, 4, 5});
  b.value() = Tensor({1, 2}, {1, 1});
  y = linear(constant(Tensor({1, 2}, {1, 1})), p);
  CHECK(y->value[0] == doctest::Approx(7));
  CHECK(y->value[1] == doctest::Approx(9));
}

TEST_CASE("linear shape mismatch names both shapes") {
  ParameterStore store;
  auto& w = store.create("w", Tensor({3, 2}));
  auto& b = store.create("b", Tensor({1, 2}));
  LinearParams p{&w, &b};
  CHECK_THROWS_WITH_AS(linear(constant(Tensor({1, 2})), p),
                       doctest::Contains("[1x2]"), DimensionError);
}

TEST_CASE("linear gradient matches finite differences") {
  std::mt19937_64 rng(7);
  ParameterStore store;
  store.create("w", random_tensor({4, 5}, rng));
  store.create("b", random_tensor({1, 5}, rng));
  LinearParams p{store.find("w"), store.find("b")};
  Tensor x = random_tensor({3, 4}, rng);
  auto loss_fn = [&]() { return sum_all(linear(constant(x), p)); };
  auto report = finite_difference_check(loss_fn, store.all(), 1e-5);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("softmax uniform, known values, shift invariance") {
  Tensor probs = softmax_rows(Tensor({1, 3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(probs[i] == doctest::Approx(1.0 / 3));

  probs = softmax_rows(Tensor({1, 3}, {1, 2, 3}));
  CHECK(probs[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(probs[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(probs[2] == doctest::Approx(0.66524096).epsilon(1e-7));

  std::mt19937_64 rng(11);
  for (double c : {-50.0, -3.2, 0.5, 17.0, 50.0}) {
    Tensor x = random_tensor({1, 6}, rng, 2.0);
    Tensor shifted = x;
    for (std::size_t i = 0; i < x.size(); ++i) shifted[i] += c;
    Tensor a = softmax_rows(x), b = softmax_rows(shifted);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("layer_norm known rows and moments") {
  ParameterStore store;
  auto& gain = store.create("g", Tensor({1, 4}, 1.0));
  auto& bias = store.create("b", Tensor({1, 4}));

  NodePtr y = layer_norm(constant(Tensor({1, 4}, {1, 1, 1, 1})), gain.node,
                         bias.node);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(y->value[i]) < 1e-6);

  ParameterStore store2;
  auto& g2 = store2.create("g", Tensor({1, 2}, 1.0));
  auto& b2 = store2.create("b", Tensor({1, 2}));
  y = layer_norm(constant(Tensor({1, 2}, {1, -1})), g2.node, b2.node);
  CHECK(y->value[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y->value[1] == doctest::Approx(-1.0).epsilon(1e-4));

  std::mt19937_64 rng(3);
  ParameterStore store3;
  auto& g3 = store3.create("g", Tensor({1, 8}, 1.0));
  auto& b3 = store3.create("b", Tensor({1, 8}));
  Tensor x = random_tensor({4, 8}, rng, 3.0);
  y = layer_norm(constant(x), g3.node, b3.node);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mu += y->value.at(r, c);
    mu /= 8.0;
    for (std::size_t c = 0; c < 8; ++c) {
      double d = y->value.at(r, c) - mu;
      var += d * d;
    }
    var /= 8.0;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("layer_norm gradient") {
  std::mt19937_64 rng(5);
  ParameterStore store;
  store.create("g", random_tensor({1, 6}, rng));
  store.create("b", random_tensor({1, 6}, rng));
  store.create("x", random_tensor({3, 6}, rng));
  auto loss_fn = [&]() {
    NodePtr y = layer_norm(store.find("x")->node, store.find("g")->node,
                           store.find("b")->node);
    return sum_all(matmul(y, transpose(y)));
  };
  auto report = finite_difference_check(loss_fn, store.all(), 1e-5);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("attention: single token, masking, oracle match") {
  std::mt19937_64 rng(13);
  ParameterStore store;
  AttentionParams p = make_attention(store, "attn", 6, 2, rng);

  SUBCASE("single token attention matrix is [[1]]") {
    Tensor x = random_tensor({1, 6}, rng);
    std::vector<Tensor> capture;
    NodePtr out = multi_head_self_attention(constant(x), p, {true}, &capture);
    REQUIRE(capture.size() == 2);
    for (const auto& a : capture) CHECK(a[0] == doctest::Approx(1.0));
    Tensor ref = oracles::attention_ref(x, p, {true});
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(out->value[i] - ref[i]) < 1e-12);
  }

  SUBCASE("masked key column is exactly zero, rows sum to one") {
    Tensor x = random_tensor({3, 6}, rng);
    std::vector<Tensor> capture;
    std::vector<bool> mask = {true, true, false};
    multi_head_self_attention(constant(x), p, mask, &capture);
    for (const auto& a : capture) {
      for (std::size_t r = 0; r < 3; ++r) {
        CHECK(a.at(r, 2) == 0.0);
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) sum += a.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }

  SUBCASE("random 3x6 two heads matches naive oracle to 1e-10") {
    Tensor x = random_tensor({3, 6}, rng);
    NodePtr out = multi_head_self_attention(constant(x), p,
                                            {true, true, true});
    Tensor ref = oracles::attention_ref(x, p, {true, true, true});
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(out->value[i] - ref[i]) < 1e-10);
  }

  SUBCASE("all-false mask is an error") {
    Tensor x = random_tensor({2, 6}, rng);
    CHECK_THROWS_WITH(multi_head_self_attention(constant(x), p, {false, false}),
                      doctest::Contains("empty attention context"));
  }
}

TEST_CASE("attention gradient check") {
  std::mt19937_64 rng(17);
  ParameterStore store;
  AttentionParams p = make_attention(store, "attn", 6, 2, rng);
  Tensor x = random_tensor({3, 6}, rng);
  auto loss_fn = [&]() {
    return sum_all(multi_head_self_attention(constant(x), p, {true, true, true}));
  };
  auto report = finite_difference_check(loss_fn, store.all(), 1e-4);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("feed_forward zero cases and gradient") {
  std::mt19937_64 rng(19);
  ParameterStore store;
  FeedForwardParams p = make_feed_forward(store, "ffn", 6, 24, rng);

  SUBCASE("zero input with zero biases gives zero output") {
    NodePtr out = feed_forward(constant(Tensor({2, 6})), p);
    for (std::size_t i = 0; i < out->value.size(); ++i)
      CHECK(out->value[i] == 0.0);
  }

  SUBCASE("all-negative pre-activations give the contraction bias") {
    // Push every hidden unit negative with a large negative expand bias.
    p.expand.bias->value().fill(-1e3);
    p.contract.bias->value() = random_tensor({1, 6}, rng);
    Tensor x = random_tensor({2, 6}, rng, 0.1);
    NodePtr out = feed_forward(constant(x), p);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 6; ++c)
        CHECK(out->value.at(r, c) ==
              doctest::Approx(p.contract.bias->value()[c]));
  }

  SUBCASE("gradient check on random 2x6") {
    Tensor x = random_tensor({2, 6}, rng);
    auto loss_fn = [&]() { return sum_all(feed_forward(constant(x), p)); };
    auto report = finite_difference_check(loss_fn, store.all(), 1e-5);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("cross entropy values and oracle") {
  SUBCASE("certain prediction has zero loss") {
    Tensor logits({1, 4}, {100.0, 0.0, 0.0, 0.0});
    NodePtr loss = cross_entropy(constant(logits), {0});
    CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("uniform logits over 30 classes give ln 30") {
    Tensor logits({1, 30});
    NodePtr loss = cross_entropy(constant(logits), {12});
    CHECK(loss->value[0] == doctest::Approx(std::log(30.0)).epsilon(1e-12));
  }

  SUBCASE("random batch matches log-sum-exp oracle to 1e-10") {
    std::mt19937_64 rng(23);
    Tensor logits = random_tensor({4, 30}, rng, 5.0);
    std::vector<int> labels = {3, 17, 0, 29};
    NodePtr loss = cross_entropy(constant(logits), labels);
    CHECK(std::abs(loss->value[0] -
                   oracles::cross_entropy_lse_ref(logits, labels)) < 1e-10);
  }

  SUBCASE("out-of-range label carries the offending index") {
    CHECK_THROWS_WITH(cross_entropy(constant(Tensor({1, 4})), {7}),
                      doctest::Contains("7"));
  }

  SUBCASE("gradient is (softmax - onehot)/B") {
    std::mt19937_64 rng(29);
    Tensor logits = random_tensor({2, 5}, rng);
    NodePtr node = leaf(logits);
    backward(cross_entropy(node, {1, 4}));
    Tensor probs = softmax_rows(logits);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        double expected = (probs.at(r, c) - ((r == 0 && c == 1) ||
                                             (r == 1 && c == 4) ? 1.0 : 0.0)) / 2.0;
        CHECK(node->grad.at(r, c) == doctest::Approx(expected).epsilon(1e-12));
      }
  }
}

TEST_CASE("adam: zero grad, first step, reference trace") {
  SUBCASE("zero gradient leaves the parameter unchanged") {
    ParameterStore store;
    store.create("w", Tensor({1, 3}, {1.0, -2.0, 0.5}));
    AdamOptimizer opt({1e-2});
    opt.step(store.all());
    CHECK(store.find("w")->value()[0] == 1.0);
    CHECK(store.find("w")->value()[1] == -2.0);
    CHECK(opt.state("w")->step == 1);
  }

  SUBCASE("first step moves by about -lr * sign(g)") {
    ParameterStore store;
    store.create("w", Tensor({1, 1}, {0.3}));
    store.find("w")->grad()[0] = 0.7;
    AdamOptimizer opt({1e-3});
    opt.step(store.all());
    CHECK(store.find("w")->value()[0] ==
          doctest::Approx(0.3 - 1e-3).epsilon(1e-6));
  }

  SUBCASE("five steps on f(w)=w^2 match the scalar reference to 1e-12") {
    ParameterStore store;
    store.create("w", Tensor({1, 1}, {1.0}));
    AdamOptimizer opt({1e-2});
    oracles::ScalarAdamRef ref;
    double w_ref = 1.0;
    for (int i = 0; i < 5; ++i) {
      double w = store.find("w")->value()[0];
      store.find("w")->grad()[0] = 2.0 * w;
      opt.step(store.all());
      w_ref = ref.step(w_ref, 2.0 * w_ref, 1e-2);
      CHECK(std::abs(store.find("w")->value()[0] - w_ref) < 1e-12);
      store.find("w")->grad()[0] = 0.0;
    }
  }
}

TEST_CASE("finite_difference_check edge behavior") {
  SUBCASE("constant closure passes with near-zero gradients") {
    ParameterStore store;
    store.create("w", Tensor({1, 2}, {1.0, 2.0}));
    auto loss_fn = [&]() { return constant(Tensor({1, 1}, {42.0})); };
    auto report = finite_difference_check(loss_fn, store.all(), 1e-5);
    CHECK(report.max_rel_error < 1e-7);
  }

  SUBCASE("non-deterministic closure is rejected") {
    ParameterStore store;
    store.create("w", Tensor({1, 1}, {1.0}));
    int calls = 0;
    auto loss_fn = [&]() {
      return constant(Tensor({1, 1}, {double(calls++)}));
    };
    CHECK_THROWS_WITH(finite_difference_check(loss_fn, store.all(), 1e-5),
                      doctest::Contains("non-deterministic"));
  }
}

TEST_CASE("encoder layer matches straight-line reference") {
  std::mt19937_64 rng(31);
  ParameterStore store;
  EncoderStackParams stack = make_encoder_stack(store, "enc", 2, 12, 2, 48, rng);
  Tensor x = random_tensor({4, 12}, rng);
  std::vector<bool> valid = {true, true, true, false};

  NodePtr out = encoder_forward(constant(x), stack, valid);
  Tensor ref = x;
  for (const auto& layer : stack.layers)
    ref = oracles::encoder_layer_ref(ref, layer, valid);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(out->value[i] - ref[i]) < 1e-9);
}

TEST_CASE("encoder forward is bit-deterministic") {
  std::mt19937_64 rng(37);
  ParameterStore store;
  EncoderStackParams stack = make_encoder_stack(store, "enc", 1, 6, 2, 24, rng);
  Tensor x = random_tensor({3, 6}, rng);
  NodePtr a = encoder_forward(constant(x), stack, {true, true, true});
  NodePtr b = encoder_forward(constant(x), stack, {true, true, true});
  for (std::size_t i = 0; i < a->value.size(); ++i)
    CHECK(a->value[i] == b->value[i]);
}

TEST_CASE("checkpoint round-trip preserves values and extras") {
  std::mt19937_64 rng(41);
  ParameterStore store;
  store.create("layer.weight", random_tensor({3, 4}, rng));
  store.create("layer.bias", random_tensor({1, 4}, rng));
  nlohmann::json extra;
  extra["note"] = "unit";
  std::string prefix = "ckpt_roundtrip_test";
  save_parameters(store, prefix, extra);

  ParameterStore other;
  other.create("layer.weight", Tensor({3, 4}));
  other.create("layer.bias", Tensor({1, 4}));
  nlohmann::json loaded = load_parameters(other, prefix);
  CHECK(loaded.at("note") == "unit");
  for (const auto& p : store.all())
    for (std::size_t i = 0; i < p.value().size(); ++i)
      CHECK(other.find(p.name)->value()[i] == p.value()[i]);

  std::remove((prefix + ".json").c_str());
  std::remove((prefix + ".bin").c_str());
}
