#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "blockdiff/attention_mask.hpp"
#include "blockdiff/error.hpp"
#include "blockdiff/ops.hpp"
#include "blockdiff/simd/kernels.hpp"
#include "blockdiff/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blockdiff;
namespace o = blockdiff::ops;

namespace {

Tensor rand_leaf(std::mt19937_64& g, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = d(g);
  }
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

/// Analytic vs central-difference gradients of f over `leaves`.
double max_grad_error(const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
  for (auto& l : leaves) {
    l.zero_grad();
  }
  backward(f());
  const auto numeric = oracle::finite_difference([&] { return f().item(); }, leaves);
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto g = leaves[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) {
      worst = std::max(worst, oracle::relative_error(g[j], numeric[i][j], 1e-7));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul examples") {
  const auto i2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const auto b = Tensor::from_values({2, 2}, {2, 3, 4, 5});
  const auto ib = o::matmul(i2, b);
  CHECK(std::vector<double>(ib.values().begin(), ib.values().end()) == std::vector<double>{2, 3, 4, 5});
  const auto r = o::matmul(Tensor::from_values({1, 2}, {1, 2}), Tensor::from_values({2, 1}, {3, 4}));
  CHECK(r.item() == 11.0);
  CHECK_THROWS_AS(o::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  try {
    o::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(A B) with respect to A") {
  auto a = Tensor::from_values({2, 2}, {1, 1, 1, 1}, true);
  auto b = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  backward(o::sum(o::matmul(a, b)));
  const std::vector<double> analytic(a.grad().begin(), a.grad().end());
  CHECK(analytic == std::vector<double>{3, 7, 3, 7});
  std::vector<Tensor> leaves{a};
  const auto fd = oracle::finite_difference([&] { return o::sum(o::matmul(a, b)).item(); }, leaves);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(fd[0][i] == doctest::Approx(analytic[i]).epsilon(1e-9));
  }
}

TEST_CASE("softmax cross entropy examples") {
  const std::vector<std::size_t> t0{0};
  const std::vector<double> w1{1.0};
  CHECK(o::softmax_cross_entropy(Tensor::from_values({1, 2}, {0, 0}), t0, w1).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double big = o::softmax_cross_entropy(Tensor::from_values({1, 2}, {1000, 0}), t0, w1).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(0.0).epsilon(1e-12));
  const std::vector<double> w0{0.0, 0.0};
  const std::vector<std::size_t> t2{1, 0};
  CHECK(o::softmax_cross_entropy(Tensor::from_values({2, 2}, {5, -3, 2, 9}), t2, w0).item() == 0.0);
  const std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(o::softmax_cross_entropy(Tensor::from_values({1, 2}, {0, 0}), bad, w1), IndexError);
  const std::vector<double> neg{-1.0};
  CHECK_THROWS_AS(o::softmax_cross_entropy(Tensor::from_values({1, 2}, {0, 0}), t0, neg), ContractError);
}

TEST_CASE("backward examples and contract") {
  auto x = Tensor::from_values({3}, {1, 2, 3}, true);
  backward(o::sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
  x.zero_grad();
  backward(o::sum(o::mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  backward(o::sum(o::mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, 8, 12});
  CHECK_THROWS_AS(backward(o::mul(x, x)), ContractError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("topological order lists inputs before consumers, once each") {
  auto a = Tensor::from_values({2}, {1, 2}, true);
  const auto b = o::mul(a, a);
  const auto c = o::add(b, a);
  const auto d = o::sum(o::add(c, b));
  const auto order = topological_order(d);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& p : order[i].parents()) {
      bool before = false;
      for (std::size_t j = 0; j < i; ++j) {
        before = before || order[j].same_node(p);
      }
      CHECK(before);
    }
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      CHECK_FALSE(order[i].same_node(order[j]));
    }
  }
}

TEST_CASE("elementwise and shape ops pass the finite-difference check") {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 5; ++rep) {
    auto a = rand_leaf(g, {3, 4});
    auto b = rand_leaf(g, {3, 4});
    auto w = rand_leaf(g, {4, 5});
    auto bias = rand_leaf(g, {5});
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::add(a, b), a)); }, {a, b}) < 1e-6);
    CHECK(max_grad_error([&] { return o::sum(o::gelu(o::add_row_bias(o::matmul(a, w), bias))); },
                         {a, w, bias}) < 1e-6);
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::scale(a, -0.7), b)); }, {a, b}) < 1e-6);
    CHECK(max_grad_error(
              [&] {
                const auto parts = std::vector<Tensor>{o::slice_rows(a, 1, 3), o::slice_rows(b, 0, 2)};
                const auto cat = o::concat_rows(parts);
                return o::sum(o::mul(cat, cat));
              },
              {a, b}) < 1e-6);
  }
}

TEST_CASE("layer norm, embedding, cross entropy and attention pass the finite-difference check") {
  std::mt19937_64 g(12);
  for (int rep = 0; rep < 4; ++rep) {
    auto x = rand_leaf(g, {5, 8});
    auto gamma = rand_leaf(g, {8});
    auto beta = rand_leaf(g, {8});
    auto proj = rand_leaf(g, {8, 8});
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::layer_norm(x, gamma, beta), o::matmul(x, proj))); },
                         {x, gamma, beta, proj}) < 1e-5);

    auto table = rand_leaf(g, {6, 3});
    const std::vector<std::size_t> ids{4, 1, 4, 0};
    auto probe = rand_leaf(g, {4, 3});
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::embedding(table, ids), probe)); }, {table}) < 1e-7);

    auto logits = rand_leaf(g, {4, 6}, 2.0);
    const std::vector<std::size_t> tg{0, 5, 2, 2};
    const std::vector<double> wt{1.0, 0.0, 0.5, 2.0};
    CHECK(max_grad_error([&] { return o::softmax_cross_entropy(logits, tg, wt); }, {logits}) < 1e-6);
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::token_nll(logits, tg), Tensor::from_values({4}, {1, -2, 0, 3}))); },
                         {logits}) < 1e-6);

    auto q = rand_leaf(g, {6, 8});
    auto k = rand_leaf(g, {6, 8});
    auto v = rand_leaf(g, {6, 8});
    auto out_probe = rand_leaf(g, {6, 8});
    const std::vector<std::size_t> sample_ids{0, 0, 0, 1, 1, 1};
    const auto mask = build_block_causal_mask(6, 2, std::vector<std::size_t>{3});
    CHECK(max_grad_error([&] { return o::sum(o::mul(o::masked_attention(q, k, v, mask, 2), out_probe)); },
                         {q, k, v}) < 1e-5);
  }
}

TEST_CASE("token_nll gives exactly zero gradient to rows with zero upstream gradient") {
  auto logits = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<std::size_t> tg{0, 2};
  backward(o::sum(o::mul(o::token_nll(logits, tg), Tensor::from_values({2}, {0.0, 1.0}))));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(logits.grad()[j] == 0.0);
  }
}

TEST_CASE("index and shape errors") {
  const std::vector<std::size_t> bad{7};
  CHECK_THROWS_AS(o::embedding(Tensor::zeros({3, 2}), bad), IndexError);
  CHECK_THROWS_AS(o::add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(o::slice_rows(Tensor::zeros({2, 2}), 1, 3), IndexError);
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const auto x = Tensor::from_values({2, 3}, {1, 5, 5, 2, 2, 2});
  CHECK(o::argmax_rows(x) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 g(13);
  auto x = rand_leaf(g, {4, 4});
  auto w = rand_leaf(g, {4, 4});
  auto f = [&] { return o::sum(o::gelu(o::matmul(x, w))); };
  auto h = [&] { return o::sum(o::mul(x, x)); };
  backward(f());
  const std::vector<double> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(h());
  const std::vector<double> gh(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(o::add(o::scale(f(), 2.0), o::scale(h(), -3.0)));
  for (std::size_t i = 0; i < gf.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * gf[i] - 3.0 * gh[i]).epsilon(1e-12));
  }
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 g(14);
    auto x = rand_leaf(g, {5, 6});
    auto w = rand_leaf(g, {6, 6});
    auto gam = rand_leaf(g, {6});
    auto bet = rand_leaf(g, {6});
    const auto loss = o::sum(o::gelu(o::layer_norm(o::matmul(x, w), gam, bet)));
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("row-split backward accumulates the same bits as one stacked graph") {
  std::mt19937_64 g(15);
  auto w = rand_leaf(g, {6, 6});
  auto gam = rand_leaf(g, {6});
  const auto x1 = Tensor::from_values({3, 6}, std::vector<double>(18, 0.3));
  auto x2 = rand_leaf(g, {4, 6});
  auto f = [&](const Tensor& x) {
    const auto h = o::gelu(o::matmul(o::layer_norm(x, gam, Tensor::zeros({6})), w));
    return o::sum(o::mul(h, h));
  };
  backward(f(o::concat_rows({x1, x2})));
  const std::vector<double> stacked(w.grad().begin(), w.grad().end());
  const std::vector<double> stacked_g(gam.grad().begin(), gam.grad().end());
  w.zero_grad();
  gam.zero_grad();
  backward(f(x1));
  backward(f(x2));
  CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == stacked);
  CHECK(std::vector<double>(gam.grad().begin(), gam.grad().end()) == stacked_g);
}

TEST_CASE("matmul agrees with an extended-precision reference") {
  std::mt19937_64 g(16);
  const auto a = rand_leaf(g, {7, 9});
  const auto b = rand_leaf(g, {9, 5});
  const auto c = o::matmul(a, b);
  const auto ref = oracle::matmul({a.values().begin(), a.values().end()},
                                  {b.values().begin(), b.values().end()}, 7, 9, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(c.values()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}
