#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "s2t/error.hpp"
#include "s2t/nn/checkpoint.hpp"
#include "s2t/nn/layers.hpp"

using namespace s2t;
using namespace s2t::nn;
using doctest::Approx;

namespace {

Mat<double> randn(Index r, Index c, Rng& rng, double s = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal(0, s);
  return m;
}

// fixed random projection so every output coordinate feeds the scalar loss
Tensor<double> project_sum(const Tensor<double>& y, const Mat<double>& w) {
  return sum(mul(y, Tensor<double>(w)));
}

std::vector<Tensor<double>> all_params(const ParamStore<double>& s) {
  std::vector<Tensor<double>> out;
  for (const auto& [name, t] : s.params()) out.push_back(t);
  return out;
}

EncoderConfig small_cfg(int dim = 8, int heads = 2) {
  EncoderConfig c;
  c.layers = 1;
  c.heads = heads;
  c.dim = dim;
  c.ff_mult = 2;
  c.max_frames = 4;
  c.max_cells = 4;
  return c;
}

}  // namespace

TEST_CASE("elementwise and matrix op gradients") {
  Rng rng(1);
  Tensor<double> a(randn(3, 4, rng), true), b(randn(4, 5, rng), true), c(randn(3, 4, rng), true);
  Tensor<double> row(randn(1, 4, rng), true), s(randn(1, 1, rng), true);
  const Mat<double> w35 = randn(3, 5, rng), w34 = randn(3, 4, rng), w33 = randn(3, 3, rng);
  CHECK(grad_check([&] { return project_sum(matmul(a, b), w35); }, {a, b}) < 1e-7);
  CHECK(grad_check([&] { return project_sum(matmul_nt(a, c), w33); }, {a, c}) < 1e-7);
  CHECK(grad_check([&] { return project_sum(add_row(sub(a, c), row), w34); }, {a, c, row}) < 1e-7);
  CHECK(grad_check([&] { return project_sum(mul(a, c), w34); }, {a, c}) < 1e-6);
  CHECK(grad_check([&] { return project_sum(scale_by(gelu(a), s), w34); }, {a, s}) < 1e-6);
  CHECK(grad_check([&] { return project_sum(sigmoid(a), w34); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return project_sum(softmax_rows(a), w34); }, {a}) < 1e-5);
  CHECK(grad_check([&] { return project_sum(softmax_rows(matmul_nt(a, c), true), w33); }, {a, c}) < 1e-5);
  Tensor<double> g(Mat<double>::Ones(1, 4), true), be(Mat<double>::Zero(1, 4), true);
  CHECK(grad_check([&] { return project_sum(layer_norm(a, g, be), w34); }, {a, g, be}) < 1e-5);
  CHECK(grad_check(
            [&] {
              std::vector<Tensor<double>> parts{a, c};
              auto cat = concat_rows<double>(parts);
              return sum(mul(slice_cols(slice_rows(cat, 1, 3), 1, 2), slice_cols(slice_rows(cat, 2, 3), 0, 2)));
            },
            {a, c}) < 1e-6);
  const std::vector<int> ids{2, 0, 2, 1};
  CHECK(grad_check([&] { return sum(mean_rows(gather_rows<double>(a, ids))); }, {a}) < 1e-7);
  CHECK_THROWS_AS(grad_check([&] { return sum(a); }, {a}, 1e-3), DomainError);
}

TEST_CASE("linear layer gradient is exact up to truncation") {
  Rng rng(2);
  ParamStore<double> store;
  Linear<double> lin(store, "lin", 6, 4, rng);
  Tensor<double> x(randn(5, 6, rng), true);
  const Mat<double> w = randn(5, 4, rng);
  auto inputs = all_params(store);
  inputs.push_back(x);
  CHECK(grad_check([&] { return project_sum(lin(x), w); }, inputs) < 1e-7);
}

TEST_CASE("attention gradients") {
  Rng rng(3);
  Tensor<double> q(randn(4, 8, rng), true), k(randn(6, 8, rng), true), v(randn(6, 8, rng), true);
  const Mat<double> w = randn(4, 8, rng);
  CHECK(grad_check([&] { return project_sum(attention(q, k, v, false), w); }, {q, k, v}) < 1e-5);
  Tensor<double> s(randn(6, 8, rng), true);
  const Mat<double> w6 = randn(6, 8, rng);
  CHECK(grad_check([&] { return project_sum(attention(s, s, s, true), w6); }, {s}) < 1e-5);
}

TEST_CASE("encoder block gradient, dim 8, seq 6") {
  Rng rng(4);
  ParamStore<double> store;
  EncoderBlock<double> block(store, "blk", small_cfg(), rng);
  Tensor<double> x(randn(6, 8, rng), true);
  const Mat<double> w = randn(6, 8, rng);
  auto inputs = all_params(store);
  inputs.push_back(x);
  CHECK(grad_check([&] { return project_sum(block(x), w); }, inputs, 1e-5, 32) < 1e-4);
}

TEST_CASE("attention pooling") {
  Rng rng(5);
  SUBCASE("single row is returned") {
    Tensor<double> x(randn(1, 6, rng)), q(randn(1, 6, rng));
    CHECK((attention_pool(x, q).value() - x.value()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("equal scores give the mean") {
    Tensor<double> x(randn(5, 6, rng)), q(Mat<double>::Zero(1, 6));
    CHECK((attention_pool(x, q).value() - x.value().colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("a dominant score selects its row") {
    Mat<double> m = randn(4, 6, rng, 0.1);
    m(2, 0) = 1e4;
    Mat<double> qv = Mat<double>::Zero(1, 6);
    qv(0, 0) = 1.0;
    const auto out = attention_pool(Tensor<double>(m), Tensor<double>(qv)).value();
    CHECK((out - m.row(2)).cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("convex combination") {
    Tensor<double> x(randn(7, 5, rng)), q(randn(1, 5, rng, 3.0));
    const auto out = attention_pool(x, q).value();
    for (Index j = 0; j < 5; ++j) {
      CHECK(out(0, j) <= x.value().col(j).maxCoeff() + 1e-12);
      CHECK(out(0, j) >= x.value().col(j).minCoeff() - 1e-12);
    }
  }
  SUBCASE("empty input") {
    Tensor<double> x(Mat<double>(0, 4)), q(randn(1, 4, rng));
    CHECK_THROWS_AS(attention_pool(x, q), EmptySequence);
  }
  SUBCASE("gradient") {
    ParamStore<double> store;
    AttentionPool<double> pool(store, "pool", 8, rng);
    Tensor<double> x(randn(6, 8, rng), true);
    const Mat<double> w = randn(1, 8, rng);
    auto inputs = all_params(store);
    inputs.push_back(x);
    CHECK(grad_check([&] { return project_sum(pool(x), w); }, inputs) < 1e-4);
  }
}

TEST_CASE("prompt cross-attention") {
  Rng rng(6);
  ParamStore<double> store;
  PromptCrossAttention<double> layer(store, "p", small_cfg(), rng);
  Tensor<double> x(randn(5, 8, rng), true), prompt(randn(3, 8, rng), true);
  SUBCASE("zero gate is the identity, bit for bit") {
    CHECK(layer.gate.value()(0, 0) == 0.0);
    const auto y = layer(x, prompt).value();
    CHECK((y.array() == x.value().array()).all());
  }
  SUBCASE("gradient with an open gate") {
    layer.gate.mutable_value()(0, 0) = 0.7;
    const Mat<double> w = randn(5, 8, rng);
    auto inputs = all_params(store);
    inputs.push_back(x);
    inputs.push_back(prompt);
    CHECK(grad_check([&] { return project_sum(layer(x, prompt), w); }, inputs, 1e-5, 32) < 1e-4);
  }
}

TEST_CASE("decoder block gradient and causality") {
  Rng rng(7);
  ParamStore<double> store;
  auto cfg = small_cfg();
  cfg.layers = 2;
  Decoder<double> dec(store, "dec", cfg, rng, true);
  dec.prompt_layer.gate.mutable_value()(0, 0) = 0.5;
  Tensor<double> tgt(randn(5, 8, rng), true), mem(randn(7, 8, rng), true), prompt(randn(3, 8, rng));
  const Mat<double> w = randn(5, 8, rng);
  auto inputs = all_params(store);
  inputs.push_back(tgt);
  inputs.push_back(mem);
  CHECK(grad_check([&] { return project_sum(dec(tgt, mem, prompt), w); }, inputs, 1e-5, 16) < 1e-4);

  // changing future positions leaves earlier outputs untouched
  const auto base = dec(tgt, mem, prompt).value();
  Mat<double> changed = tgt.value();
  changed.row(3) = randn(1, 8, rng);
  changed.row(4) = randn(1, 8, rng);
  const auto out = dec(Tensor<double>(changed), mem, prompt).value();
  CHECK((out.topRows(3) - base.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.row(3) - base.row(3)).cwiseAbs().maxCoeff() > 0.0);

  // precomputed context gives identical results
  const auto ctx = dec.context(mem, prompt);
  CHECK((dec(tgt, ctx).value().array() == base.array()).all());
}

TEST_CASE("cross-attention over a zero memory contributes nothing") {
  Rng rng(8);
  ParamStore<double> store;
  MultiHeadAttention<double> attn(store, "x", 8, 2, rng);
  Tensor<double> q(randn(4, 8, rng)), mem(Mat<double>::Zero(6, 8));
  CHECK(attn(q, mem).value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder shape, determinism and order sensitivity") {
  Rng rng(9);
  ParamStore<float> store;
  auto cfg = small_cfg(16, 4);
  cfg.layers = 2;
  Encoder<float> enc(store, "enc", cfg, rng);
  PositionalTables<float> pos(store, "pos", cfg, rng);
  Mat<float> x = randn(12, 16, rng).cast<float>();
  const auto y = enc(pos(Tensor<float>(x), 3, 4)).value();
  CHECK(y.rows() == 12);
  CHECK(y.cols() == 16);
  CHECK((enc(pos(Tensor<float>(x), 3, 4)).value().array() == y.array()).all());
  Mat<float> swapped = x;
  swapped.topRows(4) = x.middleRows(4, 4);
  swapped.middleRows(4, 4) = x.topRows(4);
  const auto z = enc(pos(Tensor<float>(swapped), 3, 4)).value();
  Mat<float> unswapped = z;
  unswapped.topRows(4) = z.middleRows(4, 4);
  unswapped.middleRows(4, 4) = z.topRows(4);
  CHECK((unswapped - y).cwiseAbs().maxCoeff() > 1e-4f);
  CHECK_THROWS_AS(enc(Tensor<float>(Mat<float>::Zero(3, 8))), ShapeError);
  CHECK_THROWS_AS(pos(Tensor<float>(x), 2, 4), ShapeError);
}

TEST_CASE("encoder block with silenced attention reduces to the feed-forward path") {
  Rng rng(10);
  ParamStore<double> store;
  EncoderBlock<double> block(store, "blk", small_cfg(), rng);
  block.attn.o.weight.mutable_value().setZero();
  Tensor<double> x(randn(6, 8, rng));
  const auto expect = (x + block.ff(block.ln2(x))).value();
  CHECK((block(x).value() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frame geometry") {
  RawFrames f{16, 224, 224, 3, std::vector<float>(16 * 224 * 224 * 3, 0.5f)};
  const auto g = patchify(f, 16);
  CHECK(g.frames == 16);
  CHECK(g.cells == 196);
  CHECK(g.token_count() == 3136);
  CHECK(g.dim == 16 * 16 * 3);
  RawFrames small{2, 32, 32, 1, std::vector<float>(2 * 32 * 32, 0.0f)};
  for (std::size_t i = 0; i < small.data.size(); ++i) small.data[i] = static_cast<float>(i);
  const auto s = patchify(small, 16);
  CHECK(s.cells == 4);
  CHECK(s.token_count() == 8);
  // first patch of frame 0, second row of pixels starts at pixel (1, 0)
  CHECK(s.at(0, 0, 16) == 32.0f);
  CHECK(s.at(0, 1, 0) == 16.0f);
  RawFrames odd{1, 30, 32, 1, std::vector<float>(30 * 32, 0.0f)};
  CHECK_THROWS_AS(patchify(odd, 16), ShapeError);

  Rng rng(11);
  ParamStore<float> store;
  auto cfg = small_cfg(8, 2);
  LinearPatchEmbedder<float> emb(store, "emb", 16 * 16, 8, rng);
  PositionalTables<float> pos(store, "pos", cfg, rng);
  const auto tokens = embed_frames<float>(s, emb, pos);
  CHECK(tokens.rows() == 8);
  CHECK(tokens.cols() == 8);
}

TEST_CASE("parameter store and checkpoints") {
  Rng rng(12);
  ParamStore<float> store;
  Linear<float> a(store, "a", 3, 4, rng);
  CHECK_THROWS_AS(store.add("a.weight", Mat<float>::Zero(1, 1)), ConfigError);
  CHECK_THROWS_AS(store.find("missing"), IndexError);
  CHECK(store.scalar_count() == 3 * 4 + 4);

  const auto path = std::filesystem::temp_directory_path() / "s2t_test_ckpt.bin";
  save_checkpoint(path, store, {{"k", 1}});
  Rng other(99);
  ParamStore<float> copy;
  Linear<float> b(copy, "a", 3, 4, other);
  CHECK_FALSE((b.weight.value().array() == a.weight.value().array()).all());
  const auto cfg = load_checkpoint(path, copy);
  CHECK(cfg["k"] == 1);
  CHECK((b.weight.value().array() == a.weight.value().array()).all());

  ParamStore<float> wrong;
  Linear<float> c(wrong, "a", 4, 4, other);
  CHECK_THROWS_AS(load_checkpoint(path, wrong), DataError);
  ParamStore<float> renamed;
  Linear<float> d(renamed, "z", 3, 4, other);
  CHECK_THROWS_AS(load_checkpoint(path, renamed), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("backward accumulates and no-grad stops taping") {
  Tensor<double> a(Mat<double>::Constant(2, 2, 3.0), true);
  auto l = sum(mul(a, a));
  backward(l);
  CHECK(a.grad()(0, 0) == 6.0);
  backward(sum(a));
  CHECK(a.grad()(0, 0) == 7.0);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    auto m = sum(a);
    CHECK(m.node()->parents.empty());
  }
  CHECK(grad_enabled());
}
