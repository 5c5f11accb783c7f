#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"
#include "doctest.h"
#include "refnet.hpp"
#include "test_util.hpp"

using advlab::Graph;
using advlab::NormStats;
using advlab::Shape;
using advlab::Tensor;

namespace {

std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<float> narrow(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

Tensor make(Shape shape, const std::vector<double>& v) { return Tensor(std::move(shape), narrow(v)); }

refnet::DTensor dt(Shape shape, const std::vector<double>& v) {
  refnet::DTensor d;
  d.shape = std::move(shape);
  d.v = v;
  return d;
}

/// Central finite differences of a double-precision functional.
template <typename F>
std::vector<double> fd_grad(const std::vector<double>& x, F f, double h = 1e-4) {
  std::vector<double> g(x.size());
  std::vector<double> p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double up = f(p);
    p[i] = x[i] - h;
    const double dn = f(p);
    p[i] = x[i];
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

double max_rel_err(std::span<const float> got, const std::vector<double>& want,
                   double floor = 1e-4) {
  REQUIRE(got.size() == want.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const double denom = std::max({std::abs(static_cast<double>(got[i])), std::abs(want[i]), floor});
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

double wmean(const std::vector<double>& z, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * w[i];
  return s / static_cast<double>(z.size());
}

std::vector<double> unit_noise(std::size_t n, std::uint32_t seed, double lo = -1.0,
                               double hi = 1.0) {
  auto f = testutil::random_values(n, seed, static_cast<float>(lo), static_cast<float>(hi));
  return {f.begin(), f.end()};
}

}  // namespace

TEST_CASE("shape helpers and tensor basics") {
  CHECK(advlab::shape_numel({2, 3, 4}) == 24);
  CHECK(advlab::shape_numel({7}) == 7);
  CHECK_THROWS_AS(advlab::shape_numel({2, 0, 4}), std::invalid_argument);
  CHECK(advlab::shape_str({2, 3, 4}) == "[2, 3, 4]");
  CHECK(advlab::shape_str({}) == "[]");

  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);

  Tensor t = Tensor::full({2, 2}, 3.5f);
  for (float v : t.values()) CHECK(v == 3.5f);
  CHECK(Tensor::scalar(2.0f).item() == 2.0f);
  CHECK_THROWS_AS(t.item(), std::logic_error);

  Tensor a({2}, {1.0f, 2.0f});
  Tensor b({2}, {1.0f, 2.0f});
  Tensor c({2}, {1.0f, 2.5f});
  Tensor d({1, 2}, {1.0f, 2.0f});
  CHECK(a.same_values(b));
  CHECK_FALSE(a.same_values(c));
  CHECK_FALSE(a.same_values(d));

  CHECK_FALSE(a.requires_grad());
  a.mark_parameter();
  CHECK(a.requires_grad());
  CHECK(a.is_parameter());
  CHECK_FALSE(a.has_grad());
  CHECK_THROWS_AS(a.grad(), std::logic_error);
}

TEST_CASE("elementwise ops: forward oracle and FD gradients") {
  const Shape shp{2, 3};
  const auto xv = unit_noise(6, 11);
  const auto yv = unit_noise(6, 12);
  const auto wv = unit_noise(6, 13);

  Tensor x = make(shp, xv);
  Tensor y = make(shp, yv);
  Tensor w = make(shp, wv);
  x.set_requires_grad();
  y.set_requires_grad();

  Graph g;
  Tensor z = g.add(g.mul(x, y), g.scale(x, 0.5f));
  Tensor loss = g.mean_all(g.mul(z, w));

  for (int i = 0; i < 6; ++i)
    CHECK(z.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(xv[static_cast<std::size_t>(i)] * yv[static_cast<std::size_t>(i)] +
                          0.5 * xv[static_cast<std::size_t>(i)])
              .epsilon(1e-5));

  auto f_x = [&](const std::vector<double>& p) {
    std::vector<double> z2(6);
    for (int i = 0; i < 6; ++i)
      z2[static_cast<std::size_t>(i)] =
          p[static_cast<std::size_t>(i)] * yv[static_cast<std::size_t>(i)] +
          0.5 * p[static_cast<std::size_t>(i)];
    return wmean(z2, wv);
  };
  auto f_y = [&](const std::vector<double>& p) {
    std::vector<double> z2(6);
    for (int i = 0; i < 6; ++i)
      z2[static_cast<std::size_t>(i)] =
          xv[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)] +
          0.5 * xv[static_cast<std::size_t>(i)];
    return wmean(z2, wv);
  };

  g.backward(loss);
  CHECK(max_rel_err(x.grad(), fd_grad(xv, f_x)) < 1e-3);
  CHECK(max_rel_err(y.grad(), fd_grad(yv, f_y)) < 1e-3);
}

TEST_CASE("add and mul reject shape mismatches with both shapes named") {
  Graph g;
  Tensor a({2, 3});
  Tensor b({3, 2});
  CHECK_THROWS_WITH_AS(g.add(a, b), "add: shape mismatch [2, 3] vs [3, 2]",
                       std::invalid_argument);
  CHECK_THROWS_AS(g.mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(g.add(Tensor{}, b), std::invalid_argument);
}

TEST_CASE("matmul: forward vs naive triple loop, FD gradients for both sides") {
  const int m = 3, k = 4, n = 2;
  const auto av = unit_noise(static_cast<std::size_t>(m) * k, 21);
  const auto bv = unit_noise(static_cast<std::size_t>(k) * n, 22);
  const auto wv = unit_noise(static_cast<std::size_t>(m) * n, 23);

  Tensor a = make({m, k}, av);
  Tensor b = make({k, n}, bv);
  a.set_requires_grad();
  b.set_requires_grad();

  Graph g;
  Tensor c = g.matmul(a, b);

  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t)
        s += av[static_cast<std::size_t>(i * k + t)] * bv[static_cast<std::size_t>(t * n + j)];
      CHECK(c.values()[static_cast<std::size_t>(i * n + j)] == doctest::Approx(s).epsilon(1e-5));
    }

  Tensor loss = g.mean_all(g.mul(c, make({m, n}, wv)));
  g.backward(loss);

  auto matmul_d = [&](const std::vector<double>& pa, const std::vector<double>& pb) {
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int t = 0; t < k; ++t)
          out[static_cast<std::size_t>(i * n + j)] +=
              pa[static_cast<std::size_t>(i * k + t)] * pb[static_cast<std::size_t>(t * n + j)];
    return out;
  };
  CHECK(max_rel_err(a.grad(),
                    fd_grad(av, [&](const std::vector<double>& p) { return wmean(matmul_d(p, bv), wv); })) <
        1e-3);
  CHECK(max_rel_err(b.grad(),
                    fd_grad(bv, [&](const std::vector<double>& p) { return wmean(matmul_d(av, p), wv); })) <
        1e-3);

  CHECK_THROWS_AS(g.matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("bias_add over dim 1 for 2-d and 4-d inputs") {
  const auto xv = unit_noise(2 * 3 * 2 * 2, 31);
  const auto bvv = unit_noise(3, 32);
  const auto wv = unit_noise(2 * 3 * 2 * 2, 33);

  Tensor x = make({2, 3, 2, 2}, xv);
  Tensor bias = make({3}, bvv);
  x.set_requires_grad();
  bias.set_requires_grad();

  Graph g;
  Tensor out = g.bias_add(x, bias);
  std::size_t idx = 0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 4; ++k, ++idx)
        CHECK(out.values()[idx] ==
              doctest::Approx(xv[idx] + bvv[static_cast<std::size_t>(c)]).epsilon(1e-6));

  Tensor loss = g.mean_all(g.mul(out, make({2, 3, 2, 2}, wv)));
  g.backward(loss);

  auto apply = [&](const std::vector<double>& px, const std::vector<double>& pb) {
    std::vector<double> z(px.size());
    std::size_t i = 0;
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 4; ++k, ++i) z[i] = px[i] + pb[static_cast<std::size_t>(c)];
    return z;
  };
  CHECK(max_rel_err(x.grad(),
                    fd_grad(xv, [&](const std::vector<double>& p) { return wmean(apply(p, bvv), wv); })) <
        1e-3);
  CHECK(max_rel_err(bias.grad(),
                    fd_grad(bvv, [&](const std::vector<double>& p) { return wmean(apply(xv, p), wv); })) <
        1e-3);

  CHECK_THROWS_AS(g.bias_add(Tensor({4}), Tensor({4})), std::invalid_argument);
  CHECK_THROWS_AS(g.bias_add(Tensor({2, 3}), Tensor({4})), std::invalid_argument);
}

TEST_CASE("relu: forward clamp and masked gradient away from the kink") {
  // keep every input at least 0.1 from zero so finite differences are exact
  std::vector<double> xv = unit_noise(12, 41);
  for (auto& v : xv) v += (v >= 0.0 ? 0.15 : -0.15);
  const auto wv = unit_noise(12, 42);

  Tensor x = make({3, 4}, xv);
  x.set_requires_grad();
  Graph g;
  Tensor out = g.relu(x);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(out.values()[i] == doctest::Approx(std::max(xv[i], 0.0)).epsilon(1e-6));

  Tensor loss = g.mean_all(g.mul(out, make({3, 4}, wv)));
  g.backward(loss);
  auto f = [&](const std::vector<double>& p) {
    std::vector<double> z(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) z[i] = std::max(p[i], 0.0);
    return wmean(z, wv);
  };
  CHECK(max_rel_err(x.grad(), fd_grad(xv, f)) < 1e-3);
}

TEST_CASE("conv2d: forward vs direct six-loop convolution, FD gradients") {
  struct Cfg {
    Shape xs, ws;
    int stride, pad;
  };
  const std::vector<Cfg> cfgs = {
      {{2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1},
      {{1, 2, 6, 6}, {3, 2, 2, 2}, 2, 0},
      {{2, 1, 4, 5}, {2, 1, 3, 2}, 1, 2},
  };
  int seed = 50;
  for (const auto& cfg : cfgs) {
    CAPTURE(cfg.stride);
    CAPTURE(cfg.pad);
    const auto xv = unit_noise(static_cast<std::size_t>(advlab::shape_numel(cfg.xs)), seed++);
    const auto wv = unit_noise(static_cast<std::size_t>(advlab::shape_numel(cfg.ws)), seed++);

    Tensor x = make(cfg.xs, xv);
    Tensor w = make(cfg.ws, wv);
    x.set_requires_grad();
    w.set_requires_grad();

    Graph g;
    Tensor out = g.conv2d(x, w, cfg.stride, cfg.pad);
    refnet::DTensor ref = refnet::conv2d(dt(cfg.xs, xv), dt(cfg.ws, wv), cfg.stride, cfg.pad);
    REQUIRE(out.shape() == ref.shape);
    CHECK(max_rel_err(out.values(), ref.v) < 1e-4);

    const auto lv = unit_noise(ref.v.size(), seed++);
    Tensor loss = g.mean_all(g.mul(out, make(out.shape(), lv)));
    g.backward(loss);

    auto f_x = [&](const std::vector<double>& p) {
      return wmean(refnet::conv2d(dt(cfg.xs, p), dt(cfg.ws, wv), cfg.stride, cfg.pad).v, lv);
    };
    auto f_w = [&](const std::vector<double>& p) {
      return wmean(refnet::conv2d(dt(cfg.xs, xv), dt(cfg.ws, p), cfg.stride, cfg.pad).v, lv);
    };
    CHECK(max_rel_err(x.grad(), fd_grad(xv, f_x)) < 1e-3);
    CHECK(max_rel_err(w.grad(), fd_grad(wv, f_w)) < 1e-3);
  }

  Graph g;
  CHECK_THROWS_AS(g.conv2d(Tensor({1, 2, 4, 4}), Tensor({2, 3, 3, 3}), 1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(g.conv2d(Tensor({1, 2, 4, 4}), Tensor({2, 2, 3, 3}), 0, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(g.conv2d(Tensor({1, 2, 2, 2}), Tensor({2, 2, 3, 3}), 1, 0),
                  std::invalid_argument);
}

TEST_CASE("avg_pool2d: forward oracle, FD gradient, divisibility guard") {
  const Shape xs{2, 3, 4, 4};
  const auto xv = unit_noise(2 * 3 * 4 * 4, 61);
  Tensor x = make(xs, xv);
  x.set_requires_grad();

  Graph g;
  Tensor out = g.avg_pool2d(x, 2);
  refnet::DTensor ref = refnet::avg_pool(dt(xs, xv), 2);
  REQUIRE(out.shape() == ref.shape);
  CHECK(max_rel_err(out.values(), ref.v) < 1e-5);

  const auto lv = unit_noise(ref.v.size(), 62);
  Tensor loss = g.mean_all(g.mul(out, make(out.shape(), lv)));
  g.backward(loss);
  auto f = [&](const std::vector<double>& p) { return wmean(refnet::avg_pool(dt(xs, p), 2).v, lv); };
  CHECK(max_rel_err(x.grad(), fd_grad(xv, f)) < 1e-3);

  CHECK_THROWS_AS(g.avg_pool2d(Tensor({2, 3, 4, 4}), 3), std::invalid_argument);
  CHECK_THROWS_AS(g.avg_pool2d(Tensor({2, 3, 4}), 2), std::invalid_argument);
}

TEST_CASE("channel_norm eval mode: affine in x, FD gradients for x/gamma/beta") {
  const Shape xs{2, 3, 2, 2};
  const auto xv = unit_noise(2 * 3 * 2 * 2, 71);
  const auto gv = unit_noise(3, 72, 0.5, 1.5);
  const auto bv = unit_noise(3, 73);
  NormStats stats(3);
  stats.mean = {0.1f, -0.2f, 0.3f};
  stats.var = {0.5f, 1.2f, 0.9f};

  Tensor x = make(xs, xv);
  Tensor gamma = make({3}, gv);
  Tensor beta = make({3}, bv);
  x.set_requires_grad();
  gamma.set_requires_grad();
  beta.set_requires_grad();

  Graph g;
  Tensor out = g.channel_norm(x, gamma, beta, stats, /*training=*/false);
  refnet::DTensor ref =
      refnet::channel_norm(dt(xs, xv), dt({3}, gv), dt({3}, bv), stats.mean, stats.var, false);
  CHECK(max_rel_err(out.values(), ref.v) < 1e-4);
  CHECK(stats.mean == std::vector<float>{0.1f, -0.2f, 0.3f});  // eval never writes

  const auto lv = unit_noise(ref.v.size(), 74);
  Tensor loss = g.mean_all(g.mul(out, make(xs, lv)));
  g.backward(loss);

  auto f_x = [&](const std::vector<double>& p) {
    return wmean(
        refnet::channel_norm(dt(xs, p), dt({3}, gv), dt({3}, bv), stats.mean, stats.var, false).v,
        lv);
  };
  auto f_g = [&](const std::vector<double>& p) {
    return wmean(
        refnet::channel_norm(dt(xs, xv), dt({3}, p), dt({3}, bv), stats.mean, stats.var, false).v,
        lv);
  };
  auto f_b = [&](const std::vector<double>& p) {
    return wmean(
        refnet::channel_norm(dt(xs, xv), dt({3}, gv), dt({3}, p), stats.mean, stats.var, false).v,
        lv);
  };
  CHECK(max_rel_err(x.grad(), fd_grad(xv, f_x)) < 1e-3);
  CHECK(max_rel_err(gamma.grad(), fd_grad(gv, f_g)) < 1e-3);
  CHECK(max_rel_err(beta.grad(), fd_grad(bv, f_b)) < 1e-3);

  // eval mode is exactly affine: gradient of x must not depend on x itself
  Tensor x2 = make(xs, unit_noise(xv.size(), 75));
  x2.set_requires_grad();
  Graph g2;
  Tensor out2 = g2.channel_norm(x2, gamma, beta, stats, false);
  g2.backward(g2.mean_all(g2.mul(out2, make(xs, lv))));
  for (std::size_t i = 0; i < xv.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-6));
}

TEST_CASE("channel_norm training mode: batch statistics and running update") {
  const Shape xs{4, 2, 3, 3};
  const auto xv = unit_noise(4 * 2 * 3 * 3, 81, -2.0, 2.0);
  const auto gv = unit_noise(2, 82, 0.5, 1.5);
  const auto bv = unit_noise(2, 83);

  Tensor x = make(xs, xv);
  Tensor gamma = make({2}, gv);
  Tensor beta = make({2}, bv);

  SUBCASE("forward uses float-rounded batch stats") {
    NormStats stats(2);
    Graph g(Graph::Scope::All, /*grad_enabled=*/false);
    Tensor out = g.channel_norm(x, gamma, beta, stats, /*training=*/true);
    refnet::DTensor ref =
        refnet::channel_norm(dt(xs, xv), dt({2}, gv), dt({2}, bv), {}, {}, true);
    CHECK(max_rel_err(out.values(), ref.v) < 1e-4);
  }

  SUBCASE("update_running applies the EMA once, with momentum") {
    NormStats stats(2);
    Graph g(Graph::Scope::All, false);
    g.channel_norm(x, gamma, beta, stats, true, /*update_running=*/true, 0.1f);

    const std::size_t inner = 9;
    for (int ch = 0; ch < 2; ++ch) {
      double s = 0.0;
      for (int n = 0; n < 4; ++n)
        for (std::size_t k = 0; k < inner; ++k)
          s += xv[(static_cast<std::size_t>(n) * 2 + ch) * inner + k];
      const double m = s / 36.0;
      double sq = 0.0;
      for (int n = 0; n < 4; ++n)
        for (std::size_t k = 0; k < inner; ++k) {
          const double d = xv[(static_cast<std::size_t>(n) * 2 + ch) * inner + k] - m;
          sq += d * d;
        }
      const float bm = static_cast<float>(m);
      const float bvr = static_cast<float>(sq / 36.0);
      CHECK(stats.mean[static_cast<std::size_t>(ch)] ==
            doctest::Approx(0.9f * 0.0f + 0.1f * bm).epsilon(1e-5));
      CHECK(stats.var[static_cast<std::size_t>(ch)] ==
            doctest::Approx(0.9f * 1.0f + 0.1f * bvr).epsilon(1e-5));
    }
  }

  SUBCASE("update_running=false computes from batch but leaves buffers alone") {
    NormStats stats(2);
    stats.mean = {0.25f, -0.5f};
    stats.var = {2.0f, 3.0f};
    Graph g(Graph::Scope::All, false);
    Tensor out = g.channel_norm(x, gamma, beta, stats, true, /*update_running=*/false);
    CHECK(stats.mean == std::vector<float>{0.25f, -0.5f});
    CHECK(stats.var == std::vector<float>{2.0f, 3.0f});
    // output still normalized by batch stats, not the stale buffers
    refnet::DTensor ref =
        refnet::channel_norm(dt(xs, xv), dt({2}, gv), dt({2}, bv), {}, {}, true);
    CHECK(max_rel_err(out.values(), ref.v) < 1e-4);
  }

  SUBCASE("stats size mismatch throws") {
    NormStats bad(3);
    Graph g;
    CHECK_THROWS_AS(g.channel_norm(x, gamma, beta, bad, true), std::invalid_argument);
  }
}

TEST_CASE("reshape and mean_all") {
  const auto xv = unit_noise(12, 91);
  Tensor x = make({3, 4}, xv);
  x.set_requires_grad();
  Graph g;
  Tensor r = g.reshape(x, {2, 6});
  CHECK(r.shape() == Shape{2, 6});
  CHECK(std::equal(r.values().begin(), r.values().end(), x.values().begin()));
  CHECK_THROWS_AS(g.reshape(x, {5, 2}), std::invalid_argument);

  Tensor m = g.mean_all(r);
  double s = 0.0;
  for (double v : xv) s += v;
  CHECK(m.item() == doctest::Approx(s / 12.0).epsilon(1e-6));

  g.backward(m);
  for (float gv : x.grad()) CHECK(gv == doctest::Approx(1.0 / 12.0).epsilon(1e-6));
}

TEST_CASE("cross_entropy_mean: forward vs double softmax, FD gradient, label guards") {
  const int batch = 5, classes = 4;
  const auto lv = unit_noise(static_cast<std::size_t>(batch) * classes, 95, -3.0, 3.0);
  const std::vector<int> y = {0, 3, 2, 1, 3};

  Tensor logits = make({batch, classes}, lv);
  logits.set_requires_grad();
  Graph g;
  Tensor loss = g.cross_entropy_mean(logits, y);
  CHECK(loss.item() == doctest::Approx(refnet::cross_entropy_mean(dt({batch, classes}, lv), y))
                           .epsilon(1e-5));

  g.backward(loss);
  auto f = [&](const std::vector<double>& p) {
    return refnet::cross_entropy_mean(dt({batch, classes}, p), y);
  };
  CHECK(max_rel_err(logits.grad(), fd_grad(lv, f)) < 1e-3);

  // softmax-minus-onehot rows each sum to zero
  for (int i = 0; i < batch; ++i) {
    double row = 0.0;
    for (int c = 0; c < classes; ++c)
      row += logits.grad()[static_cast<std::size_t>(i * classes + c)];
    CHECK(row == doctest::Approx(0.0).epsilon(1e-6));
  }

  CHECK_THROWS_AS(g.cross_entropy_mean(logits, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(g.cross_entropy_mean(logits, {0, 1, 2, 3, 4}), std::out_of_range);
  CHECK_THROWS_AS(g.cross_entropy_mean(logits, {0, 1, 2, 3, -1}), std::out_of_range);
  CHECK_THROWS_AS(g.cross_entropy_mean(Tensor({2, 2, 2}), {0, 1}), std::invalid_argument);
}

TEST_CASE("backward mechanics") {
  const auto xv = unit_noise(6, 101);
  const auto yv = unit_noise(6, 102);

  SUBCASE("visits every node exactly once") {
    Tensor x = make({2, 3}, xv);
    x.set_requires_grad();
    Graph g;
    Tensor t = x;
    for (int i = 0; i < 7; ++i) t = g.scale(g.relu(t), 1.1f);
    Tensor loss = g.mean_all(t);
    g.backward(loss);
    CHECK(g.node_count() == 15);
    CHECK(g.last_backward_visits() == g.node_count());
  }

  SUBCASE("dead branches are recorded but contribute no gradient") {
    Tensor x = make({2, 3}, xv);
    Tensor q = make({2, 3}, yv);
    x.set_requires_grad();
    q.set_requires_grad();
    Graph g;
    Tensor used = g.scale(x, 2.0f);
    Tensor dead = g.scale(q, 3.0f);
    (void)dead;
    Tensor loss = g.mean_all(used);
    g.backward(loss);
    CHECK(x.has_grad());
    CHECK_FALSE(q.has_grad());
    CHECK(g.last_backward_visits() == g.node_count());
  }

  SUBCASE("repeated backward keeps accumulating into leaves") {
    Tensor x = make({2, 3}, xv);
    x.set_requires_grad();
    Graph g;
    Tensor loss = g.mean_all(g.scale(x, 6.0f));
    g.backward(loss);
    const float once = x.grad()[0];
    g.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0f * once).epsilon(1e-6));
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
    g.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(once).epsilon(1e-6));
  }

  SUBCASE("non-scalar loss is rejected") {
    Tensor x = make({2, 3}, xv);
    x.set_requires_grad();
    Graph g;
    Tensor t = g.scale(x, 2.0f);
    CHECK_THROWS_WITH_AS(g.backward(t), "backward on non-scalar tensor of shape [2, 3]",
                         std::invalid_argument);
  }

  SUBCASE("foreign or leaf losses are rejected") {
    Tensor x = make({1}, {0.5});
    x.set_requires_grad();
    Graph g1, g2;
    Tensor loss = g1.mean_all(x);
    CHECK_THROWS_AS(g2.backward(loss), std::logic_error);
    CHECK_THROWS_AS(g1.backward(x), std::logic_error);
    CHECK_NOTHROW(g1.backward(loss));
  }

  SUBCASE("second-order chains through shared leaves accumulate both paths") {
    // loss = mean(x*x): gradient 2x/n per element
    Tensor x = make({2, 2}, {0.5, -1.0, 2.0, 3.0});
    x.set_requires_grad();
    Graph g;
    g.backward(g.mean_all(g.mul(x, x)));
    const float want[] = {2 * 0.5f / 4, 2 * -1.0f / 4, 2 * 2.0f / 4, 2 * 3.0f / 4};
    for (int i = 0; i < 4; ++i)
      CHECK(x.grad()[static_cast<std::size_t>(i)] == doctest::Approx(want[i]).epsilon(1e-6));
  }
}

TEST_CASE("scope InputsOnly skips parameter leaves") {
  const auto xv = unit_noise(2 * 2 * 4 * 4, 111);
  const auto wv = unit_noise(3 * 2 * 3 * 3, 112);

  Tensor x = make({2, 2, 4, 4}, xv);
  Tensor w = make({3, 2, 3, 3}, wv);
  x.set_requires_grad();
  w.mark_parameter();

  SUBCASE("Scope::All reaches both") {
    Graph g(Graph::Scope::All);
    g.backward(g.mean_all(g.conv2d(x, w, 1, 1)));
    CHECK(x.has_grad());
    CHECK(w.has_grad());
  }

  SUBCASE("Scope::InputsOnly reaches only the input") {
    Graph g(Graph::Scope::InputsOnly);
    g.backward(g.mean_all(g.conv2d(x, w, 1, 1)));
    CHECK(x.has_grad());
    CHECK_FALSE(w.has_grad());
  }

  SUBCASE("input gradient agrees between scopes") {
    Graph ga(Graph::Scope::All);
    ga.backward(ga.mean_all(ga.conv2d(x, w, 1, 1)));
    const std::vector<float> g_all(x.grad().begin(), x.grad().end());
    x.zero_grad();
    w.zero_grad();
    Graph gi(Graph::Scope::InputsOnly);
    gi.backward(gi.mean_all(gi.conv2d(x, w, 1, 1)));
    for (std::size_t i = 0; i < g_all.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(g_all[i]).epsilon(1e-6));
  }
}

TEST_CASE("grad_enabled=false records nothing but computes the same values") {
  const auto xv = unit_noise(8, 121);
  Tensor x1 = make({2, 4}, xv);
  Tensor x2 = make({2, 4}, xv);
  x1.set_requires_grad();
  x2.set_requires_grad();

  Graph gt(Graph::Scope::All, true);
  Graph ge(Graph::Scope::All, false);
  Tensor a = gt.relu(gt.scale(x1, 2.0f));
  Tensor b = ge.relu(ge.scale(x2, 2.0f));
  CHECK(a.same_values(b));
  CHECK(gt.node_count() == 2);
  CHECK(ge.node_count() == 0);
  CHECK_FALSE(b.requires_grad());
  CHECK_THROWS_AS(ge.backward(ge.mean_all(b)), std::logic_error);
}

TEST_CASE("check_finite rejects non-finite inputs when enabled") {
  Tensor bad({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  Tensor inf({2}, {std::numeric_limits<float>::infinity(), 0.0f});
  Tensor ok({2}, {1.0f, 2.0f});

  Graph g;
  CHECK_NOTHROW(g.scale(bad, 1.0f));  // off by default

  Graph strict;
  strict.set_check_finite(true);
  CHECK_THROWS_AS(strict.scale(bad, 1.0f), std::domain_error);
  CHECK_THROWS_AS(strict.add(ok, inf), std::domain_error);
  CHECK_NOTHROW(strict.scale(ok, 1.0f));
}
