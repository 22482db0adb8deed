// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "gsc/nn.hpp"
#include "support.hpp"

using namespace gsc;
using gsc::test::random_tensor;

TEST_CASE("LoRA adapters start with a zero product") {
  Rng rng(1);
  auto a = nn::LoraAdapter::create(6, 5, 3, rng);
  CHECK(a.B.shape() == Shape{6, 3});
  CHECK(a.A.shape() == Shape{3, 5});
  const Tensor delta = a.delta();
  for (double v : delta.data()) CHECK(v == 0.0);
  double sq = 0;
  for (double v : a.A.data()) sq += v * v;
  CHECK(sq > 0.0);
}

TEST_CASE("LoRA rank is clipped to the matrix size") {
  Rng rng(2);
  auto set = nn::LoraSet::create({{"a", 2, 10}, {"b", 10, 10}}, 4, rng);
  CHECK(set.find("a")->rank == 2);
  CHECK(set.find("b")->rank == 4);
  CHECK(set.parameter_count() == 2 * 2 + 2 * 10 + 10 * 4 + 4 * 10);
  CHECK(set.find("c") == nullptr);
}

TEST_CASE("zero-product LoRA leaves dense and conv outputs bit-identical") {
  Rng rng(3);
  nn::Dense dense("d", 7, 5, rng);
  nn::Conv2d conv("c", 3, 4, 3, 1, 1, rng);
  nn::ConvTranspose2d up("u", 4, 2, 4, 2, 1, rng);
  auto lora = nn::LoraSet::create({dense.lora_target(), conv.lora_target(), up.lora_target()}, 4, rng);
  const Tensor x = random_tensor({3, 7}, 4), img = random_tensor({2, 3, 6, 6}, 5), feat = random_tensor({2, 4, 3, 3}, 6);
  CHECK(test::bit_equal(dense.forward(x), dense.forward(x, &lora)));
  CHECK(test::bit_equal(conv.forward(img), conv.forward(img, &lora)));
  CHECK(test::bit_equal(up.forward(feat), up.forward(feat, &lora)));
}

TEST_CASE("LoRA forward equals the explicit W + BA product") {
  Rng rng(7);
  nn::Dense dense("d", 4, 3, rng);
  auto adapter = nn::LoraAdapter::create(3, 4, 2, rng);
  adapter.B = random_tensor({3, 2}, 8);
  const Tensor x = random_tensor({5, 4}, 9);
  Tensor expect = Tensor::zeros({5, 3});
  auto e = expect.mutable_data();
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = dense.bias.data()[o];
      for (std::size_t i = 0; i < 4; ++i) {
        double w = dense.weight.at({o, i});
        for (std::size_t r = 0; r < 2; ++r) w += adapter.B.at({o, r}) * adapter.A.at({r, i});
        acc += w * x.at({n, i});
      }
      e[n * 3 + o] = acc;
    }
  CHECK(test::max_abs_diff(nn::lora_apply(dense, adapter, x), expect) < 1e-12);
  nn::LoraSet set;
  set.add("d", adapter);
  CHECK(test::max_abs_diff(dense.forward(x, &set), expect) < 1e-12);
}

TEST_CASE("layer gradients pass finite differences") {
  Rng rng(10);
  nn::Dense dense("d", 4, 3, rng);
  auto adapter = nn::LoraAdapter::create(3, 4, 2, rng);
  adapter.B = random_tensor({3, 2}, 11);
  nn::LoraSet set;
  set.add("d", adapter);
  const Tensor x = random_tensor({5, 4}, 12);
  auto loss = [&] { return sum(square(tanh(dense.forward(x, &set)))); };
  CHECK(finite_diff_check_leaf(loss, dense.weight, 1e-6) < 1e-4);
  CHECK(finite_diff_check_leaf(loss, dense.bias, 1e-6) < 1e-4);
  for (auto& p : set.parameters()) CHECK(finite_diff_check_leaf(loss, *p.tensor, 1e-6) < 1e-4);

  nn::Conv2d conv("c", 2, 3, 3, 2, 1, rng);
  auto conv_set = nn::LoraSet::create({conv.lora_target()}, 2, rng);
  for (auto& p : conv_set.parameters()) {
    if (p.name == "c.lora_B") *p.tensor = random_tensor(p.tensor->shape(), 13);
  }
  const Tensor img = random_tensor({2, 2, 6, 6}, 14);
  auto conv_loss = [&] { return sum(square(conv.forward(img, &conv_set))); };
  for (auto& p : conv_set.parameters()) CHECK(finite_diff_check_leaf(conv_loss, *p.tensor, 1e-6) < 1e-4);
  CHECK(finite_diff_check_leaf(conv_loss, conv.weight, 1e-6) < 1e-4);

  nn::CrossAttention attn("a", 6, 5, 4, rng);
  const Tensor q = random_tensor({2, 3, 6}, 15), ctx = random_tensor({2, 4, 5}, 16);
  auto attn_loss = [&] { return sum(square(attn.forward(q, ctx))); };
  nn::ParamRefs refs;
  attn.collect(refs);
  for (auto& p : refs) {
    if (p.name == "a.k.bias") continue;  // softmax is invariant to it; checked below
    CHECK(finite_diff_check_leaf(attn_loss, *p.tensor, 1e-6) < 1e-4);
  }
  backward(attn_loss());
  for (double g : attn.k.bias.grad()) CHECK(std::abs(g) < 1e-12);
  CHECK(finite_diff_check([&](const Tensor& t) { return sum(square(attn.forward(q, t))); }, ctx, 1e-6) < 1e-4);
}

TEST_CASE("identity cross-attention is softmax-weighted averaging of the context") {
  auto attn = nn::CrossAttention::identity("a", 3);
  const Tensor q = random_tensor({1, 2, 3}, 20), ctx = random_tensor({1, 4, 3}, 21);
  const Tensor out = attn.forward(q, ctx);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> w(4);
    double z = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0;
      for (std::size_t d = 0; d < 3; ++d) dot += q.at({0, i, d}) * ctx.at({0, j, d});
      w[j] = std::exp(dot / std::sqrt(3.0));
      z += w[j];
    }
    for (std::size_t d = 0; d < 3; ++d) {
      double acc = 0;
      for (std::size_t j = 0; j < 4; ++j) acc += w[j] / z * ctx.at({0, j, d});
      CHECK(out.at({0, i, d}) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("sinusoidal embedding follows the interleaved formula") {
  const std::size_t dim = 8;
  const Tensor e = nn::sinusoidal_embed(37, dim);
  REQUIRE(e.shape() == Shape{dim});
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    CHECK(e.data()[2 * i] == doctest::Approx(std::sin(37 * w)).epsilon(1e-12));
    CHECK(e.data()[2 * i + 1] == doctest::Approx(std::cos(37 * w)).epsilon(1e-12));
  }
  const Tensor batch = nn::sinusoidal_embed_batch({37, 0}, dim);
  CHECK(test::bit_equal(slice(batch, 0, 0, 1), reshape(e, {1, dim})));
}

TEST_CASE("tokenize and detokenize round trip") {
  nn::Vocab vocab({"red", "dog", "sky"});
  const auto ids = nn::tokenize("red dog sky dog", vocab);
  CHECK(ids == std::vector<std::size_t>{0, 1, 2, 1});
  CHECK(nn::detokenize(ids, vocab) == "red dog sky dog");
  CHECK_THROWS(nn::tokenize("red cat", vocab));
}

TEST_CASE("metaword is prepended as row zero") {
  Rng rng(30);
  const auto mw = nn::MetaWord::init(5, rng);
  CHECK(mw.embedding.shape() == Shape{5});
  const Tensor prompt = random_tensor({3, 5}, 31);
  const Tensor full = nn::prepend_metaword(mw, prompt);
  CHECK(full.shape() == Shape{4, 5});
  CHECK(test::bit_equal(reshape(slice(full, 0, 0, 1), {5}), mw.embedding));
  CHECK(test::bit_equal(slice(full, 0, 1, 3), prompt));
}

TEST_CASE("metaword init variance matches the configured value") {
  Rng rng(32);
  const auto mw = nn::MetaWord::init(20000, rng, 0.02);
  double sq = 0;
  for (double v : mw.embedding.data()) sq += v * v;
  CHECK(sq / 20000.0 == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("adam step matches the bias-corrected update by hand") {
  Tensor w({2}, {1.0, -2.0}, true);
  nn::ParamRefs refs{{"w", &w}};
  nn::AdamState state(refs, {0.1, 0.9, 0.999, 1e-8});
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    backward(sum(square(w)));
    nn::adam_step(state);
    for (int j = 0; j < 2; ++j) {
      const double g = 2 * ref[j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.999 * v[j] + 0.001 * g * g;
      const double mh = m[j] / (1 - std::pow(0.9, step)), vh = v[j] / (1 - std::pow(0.999, step));
      ref[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w.data()[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(w.data()[1] == doctest::Approx(ref[1]).epsilon(1e-12));
  }
}

TEST_CASE("frozen parameters receive no update") {
  Rng rng(40);
  nn::Dense a("a", 3, 3, rng), b("b", 3, 1, rng);
  nn::ParamRefs frozen, trained;
  a.collect(frozen);
  b.collect(trained);
  nn::set_trainable(frozen, false);
  const auto before = nn::snapshot(frozen);
  nn::AdamState state(trained, {});
  const Tensor x = random_tensor({4, 3}, 41);
  for (int i = 0; i < 3; ++i) {
    backward(sum(square(b.forward(tanh(a.forward(x))))));
    nn::adam_step(state);
  }
  CHECK(nn::snapshot(frozen) == before);
}

TEST_CASE("deep_copy detaches parameter storage") {
  Rng rng(50);
  nn::Dense a("a", 2, 2, rng);
  nn::Dense copy = a;
  nn::ParamRefs refs;
  copy.collect(refs);
  nn::deep_copy(refs);
  copy.weight.mutable_data()[0] += 1.0;
  CHECK(a.weight.data()[0] != copy.weight.data()[0]);
}
