#include "advlab/graph.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "advlab/kernels.hpp"

namespace advlab {

namespace {

std::atomic<std::uint64_t> next_graph_id{1};

void throw_shape(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

}  // namespace

Graph::Graph(Scope scope, bool grad_enabled)
    : scope_(scope), grad_enabled_(grad_enabled), id_(next_graph_id.fetch_add(1)) {}

bool Graph::tracks(const Tensor& t) const {
  if (!t.requires_grad()) return false;
  if (t.storage()->owner_id == id_) return true;
  if (scope_ == Scope::InputsOnly && t.is_parameter()) return false;
  return true;
}

int Graph::sink_of(const Tensor& t) const {
  const auto& s = *t.storage();
  if (s.owner_id == id_ && s.node >= 0) return s.node;
  return tracks(t) ? kLeaf : kNone;
}

Tensor Graph::make_out(Shape shape, std::vector<float> values, bool tracked) {
  Tensor out(std::move(shape), std::move(values));
  out.s_->requires_grad = tracked;
  return out;
}

void Graph::push(Tensor& out, std::function<void(Graph&, const float*)> back) {
  out.s_->node = static_cast<int>(recs_.size());
  out.s_->owner_id = id_;
  recs_.push_back({out.s_, std::move(back)});
}

void Graph::accum(int sink, detail::Storage* leaf, const float* g, std::size_t n) {
  if (sink == kNone) return;
  if (sink == kLeaf) {
    leaf->accumulate_grad(g, n);
    return;
  }
  auto& gb = gbuf_[static_cast<std::size_t>(sink)];
  if (gb.empty()) gb.assign(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
}

void Graph::check_input(const Tensor& t, const char* op) const {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor input");
  if (!check_finite_) return;
  for (float v : t.values())
    if (!std::isfinite(v))
      throw std::domain_error(std::string(op) + ": non-finite input value " + std::to_string(v));
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.storage()->owner_id != id_ || loss.storage()->node < 0)
    throw std::logic_error("backward: loss was not produced by this graph");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward on non-scalar tensor of shape " +
                                shape_str(loss.shape()));
  gbuf_.assign(recs_.size(), {});
  gbuf_[static_cast<std::size_t>(loss.storage()->node)].assign(1, 1.0f);
  visits_ = 0;
  for (int i = static_cast<int>(recs_.size()) - 1; i >= 0; --i) {
    ++visits_;
    auto& gb = gbuf_[static_cast<std::size_t>(i)];
    if (gb.empty()) continue;  // not an ancestor of the loss
    recs_[static_cast<std::size_t>(i)].back(*this, gb.data());
    gb = {};
  }
  gbuf_ = {};
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  check_input(a, "add");
  check_input(b, "add");
  if (!shape_eq(a.shape(), b.shape())) throw_shape("add", a.shape(), b.shape());
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<float> v(n);
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] + pb[i];
  const bool rec = grad_enabled_ && (tracks(a) || tracks(b));
  Tensor out = make_out(a.shape(), std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a), sb = sink_of(b);
    push(out, [sa, sb, sta = a.storage(), stb = b.storage(), n](Graph& g, const float* go) {
      g.accum(sa, sta.get(), go, n);
      g.accum(sb, stb.get(), go, n);
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  check_input(a, "mul");
  check_input(b, "mul");
  if (!shape_eq(a.shape(), b.shape())) throw_shape("mul", a.shape(), b.shape());
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<float> v(n);
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * pb[i];
  const bool rec = grad_enabled_ && (tracks(a) || tracks(b));
  Tensor out = make_out(a.shape(), std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a), sb = sink_of(b);
    push(out, [sa, sb, sta = a.storage(), stb = b.storage(), n](Graph& g, const float* go) {
      std::vector<float> tmp(n);
      if (sa != kNone) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = go[i] * stb->data[i];
        g.accum(sa, sta.get(), tmp.data(), n);
      }
      if (sb != kNone) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = go[i] * sta->data[i];
        g.accum(sb, stb.get(), tmp.data(), n);
      }
    });
  }
  return out;
}

Tensor Graph::scale(const Tensor& a, float s) {
  check_input(a, "scale");
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<float> v(n);
  const float* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * s;
  const bool rec = grad_enabled_ && tracks(a);
  Tensor out = make_out(a.shape(), std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a);
    push(out, [sa, s, sta = a.storage(), n](Graph& g, const float* go) {
      std::vector<float> tmp(n);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = go[i] * s;
      g.accum(sa, sta.get(), tmp.data(), n);
    });
  }
  return out;
}

Tensor Graph::bias_add(const Tensor& a, const Tensor& bias) {
  check_input(a, "bias_add");
  check_input(bias, "bias_add");
  if (a.shape().size() < 2 || bias.shape().size() != 1 || a.dim(1) != bias.dim(0))
    throw_shape("bias_add", a.shape(), bias.shape());
  const int batch = a.dim(0);
  const int c = a.dim(1);
  const auto inner = static_cast<std::size_t>(a.numel() / (static_cast<std::int64_t>(batch) * c));
  std::vector<float> v(static_cast<std::size_t>(a.numel()));
  const float* pa = a.data();
  const float* pb = bias.data();
  std::size_t idx = 0;
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const float bv = pb[ch];
      for (std::size_t k = 0; k < inner; ++k, ++idx) v[idx] = pa[idx] + bv;
    }
  const bool rec = grad_enabled_ && (tracks(a) || tracks(bias));
  Tensor out = make_out(a.shape(), std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a), sb = sink_of(bias);
    const auto n_all = static_cast<std::size_t>(a.numel());
    push(out, [sa, sb, sta = a.storage(), stb = bias.storage(), batch, c, inner,
               n_all](Graph& g, const float* go) {
      g.accum(sa, sta.get(), go, n_all);
      if (sb != kNone) {
        std::vector<float> gb(static_cast<std::size_t>(c), 0.0f);
        std::size_t idx = 0;
        for (int n = 0; n < batch; ++n)
          for (int ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < inner; ++k, ++idx) gb[static_cast<std::size_t>(ch)] += go[idx];
        g.accum(sb, stb.get(), gb.data(), gb.size());
      }
    });
  }
  return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  check_input(a, "matmul");
  check_input(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw_shape("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> v(static_cast<std::size_t>(m) * n);
  kernels::matmul_f32(a.data(), b.data(), v.data(), m, k, n);
  const bool rec = grad_enabled_ && (tracks(a) || tracks(b));
  Tensor out = make_out({m, n}, std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a), sb = sink_of(b);
    push(out, [sa, sb, sta = a.storage(), stb = b.storage(), m, k, n](Graph& g, const float* go) {
      if (sa != kNone) {
        std::vector<float> bt(static_cast<std::size_t>(k) * n);
        kernels::transpose_f32(stb->data.data(), bt.data(), k, n);
        std::vector<float> ga(static_cast<std::size_t>(m) * k);
        kernels::matmul_f32(go, bt.data(), ga.data(), m, n, k);
        g.accum(sa, sta.get(), ga.data(), ga.size());
      }
      if (sb != kNone) {
        std::vector<float> at(static_cast<std::size_t>(m) * k);
        kernels::transpose_f32(sta->data.data(), at.data(), m, k);
        std::vector<float> gb(static_cast<std::size_t>(k) * n);
        kernels::matmul_f32(at.data(), go, gb.data(), k, m, n);
        g.accum(sb, stb.get(), gb.data(), gb.size());
      }
    });
  }
  return out;
}

Tensor Graph::relu(const Tensor& a) {
  check_input(a, "relu");
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<float> v(n);
  const float* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  const bool rec = grad_enabled_ && tracks(a);
  Tensor out = make_out(a.shape(), std::move(v), rec);
  if (rec) {
    const int sa = sink_of(a);
    push(out, [sa, sta = a.storage(), n](Graph& g, const float* go) {
      std::vector<float> ga(n);
      for (std::size_t i = 0; i < n; ++i) ga[i] = sta->data[i] > 0.0f ? go[i] : 0.0f;
      g.accum(sa, sta.get(), ga.data(), n);
    });
  }
  return out;
}

Tensor Graph::conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  check_input(x, "conv2d");
  check_input(w, "conv2d");
  if (x.shape().size() != 4 || w.shape().size() != 4 || x.dim(1) != w.dim(1))
    throw_shape("conv2d", x.shape(), w.shape());
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: stride " + std::to_string(stride) + ", pad " +
                                std::to_string(pad) + " invalid");
  const int batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = kernels::conv_out_extent(h, kh, stride, pad);
  const int wo = kernels::conv_out_extent(wd, kw, stride, pad);
  if (ho < 1 || wo < 1) throw_shape("conv2d", x.shape(), w.shape());
  const int ck = ci * kh * kw;
  const int l = ho * wo;
  std::vector<float> v(static_cast<std::size_t>(batch) * co * l);
  std::vector<float> col(static_cast<std::size_t>(ck) * l);
  const std::size_t img_in = static_cast<std::size_t>(ci) * h * wd;
  const std::size_t img_out = static_cast<std::size_t>(co) * l;
  for (int n = 0; n < batch; ++n) {
    kernels::im2col_f32(x.data() + n * img_in, ci, h, wd, kh, kw, stride, pad, col.data());
    kernels::matmul_f32(w.data(), col.data(), v.data() + n * img_out, co, ck, l);
  }
  const bool rec = grad_enabled_ && (tracks(x) || tracks(w));
  Tensor out = make_out({batch, co, ho, wo}, std::move(v), rec);
  if (rec) {
    const int sx = sink_of(x), sw = sink_of(w);
    push(out, [sx, sw, stx = x.storage(), stw = w.storage(), batch, ci, h, wd, co, kh, kw, stride,
               pad, ck, l, img_in, img_out](Graph& g, const float* go) {
      std::vector<float> col(static_cast<std::size_t>(ck) * l);
      std::vector<float> gw;
      std::vector<float> wt;
      std::vector<float> colt;
      std::vector<float> gx;
      std::vector<float> gcol;
      if (sw != kNone) {
        gw.assign(stw->data.size(), 0.0f);
        colt.resize(static_cast<std::size_t>(l) * ck);
      }
      if (sx != kNone) {
        wt.resize(static_cast<std::size_t>(ck) * co);
        kernels::transpose_f32(stw->data.data(), wt.data(), co, ck);
        gx.assign(stx->data.size(), 0.0f);
        gcol.resize(static_cast<std::size_t>(ck) * l);
      }
      for (int n = 0; n < batch; ++n) {
        const float* gon = go + n * img_out;
        if (sw != kNone) {
          kernels::im2col_f32(stx->data.data() + n * img_in, ci, h, wd, kh, kw, stride, pad,
                              col.data());
          kernels::transpose_f32(col.data(), colt.data(), ck, l);
          kernels::matmul_f32(gon, colt.data(), gw.data(), co, l, ck, /*accumulate=*/true);
        }
        if (sx != kNone) {
          kernels::matmul_f32(wt.data(), gon, gcol.data(), ck, co, l);
          kernels::col2im_f32(gcol.data(), ci, h, wd, kh, kw, stride, pad, gx.data() + n * img_in);
        }
      }
      if (sw != kNone) g.accum(sw, stw.get(), gw.data(), gw.size());
      if (sx != kNone) g.accum(sx, stx.get(), gx.data(), gx.size());
    });
  }
  return out;
}

Tensor Graph::avg_pool2d(const Tensor& x, int window) {
  check_input(x, "avg_pool2d");
  if (x.shape().size() != 4)
    throw std::invalid_argument("avg_pool2d: want 4-d input, got " + shape_str(x.shape()));
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window < 1 || h % window != 0 || w % window != 0)
    throw std::invalid_argument("avg_pool2d: window " + std::to_string(window) +
                                " does not divide " + shape_str(x.shape()));
  const int ho = h / window, wo = w / window;
  const float inv = 1.0f / (static_cast<float>(window) * window);
  std::vector<float> v(static_cast<std::size_t>(batch) * c * ho * wo, 0.0f);
  const float* px = x.data();
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = px + (static_cast<std::size_t>(n) * c + ch) * h * w;
      float* oplane = v.data() + (static_cast<std::size_t>(n) * c + ch) * ho * wo;
      for (int oi = 0; oi < ho; ++oi)
        for (int oj = 0; oj < wo; ++oj) {
          float s = 0.0f;
          for (int ki = 0; ki < window; ++ki)
            for (int kj = 0; kj < window; ++kj)
              s += plane[(oi * window + ki) * w + oj * window + kj];
          oplane[oi * wo + oj] = s * inv;
        }
    }
  const bool rec = grad_enabled_ && tracks(x);
  Tensor out = make_out({batch, c, ho, wo}, std::move(v), rec);
  if (rec) {
    const int sx = sink_of(x);
    push(out, [sx, stx = x.storage(), batch, c, h, w, window, ho, wo, inv](Graph& g,
                                                                           const float* go) {
      std::vector<float> gx(stx->data.size(), 0.0f);
      for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
          float* plane = gx.data() + (static_cast<std::size_t>(n) * c + ch) * h * w;
          const float* oplane = go + (static_cast<std::size_t>(n) * c + ch) * ho * wo;
          for (int oi = 0; oi < ho; ++oi)
            for (int oj = 0; oj < wo; ++oj) {
              const float gv = oplane[oi * wo + oj] * inv;
              for (int ki = 0; ki < window; ++ki)
                for (int kj = 0; kj < window; ++kj)
                  plane[(oi * window + ki) * w + oj * window + kj] += gv;
            }
        }
      g.accum(sx, stx.get(), gx.data(), gx.size());
    });
  }
  return out;
}

Tensor Graph::channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           NormStats& stats, bool training, bool update_running,
                           float momentum, float eps) {
  check_input(x, "channel_norm");
  check_input(gamma, "channel_norm");
  check_input(beta, "channel_norm");
  if (x.shape().size() < 2) throw_shape("channel_norm", x.shape(), gamma.shape());
  const int c = x.dim(1);
  if (gamma.shape() != Shape{c}) throw_shape("channel_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{c}) throw_shape("channel_norm", x.shape(), beta.shape());
  if (static_cast<int>(stats.mean.size()) != c || static_cast<int>(stats.var.size()) != c)
    throw std::invalid_argument("channel_norm: stats sized " +
                                std::to_string(stats.mean.size()) + " for " +
                                std::to_string(c) + " channels");
  const int batch = x.dim(0);
  const auto inner = static_cast<std::size_t>(x.numel() / (static_cast<std::int64_t>(batch) * c));
  const float* px = x.data();

  std::vector<float> mu(static_cast<std::size_t>(c));
  std::vector<float> var(static_cast<std::size_t>(c));
  if (training) {
    const double count = static_cast<double>(batch) * static_cast<double>(inner);
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int n = 0; n < batch; ++n) {
        const float* base = px + (static_cast<std::size_t>(n) * c + ch) * inner;
        for (std::size_t k = 0; k < inner; ++k) s += base[k];
      }
      const double m = s / count;
      double sq = 0.0;
      for (int n = 0; n < batch; ++n) {
        const float* base = px + (static_cast<std::size_t>(n) * c + ch) * inner;
        for (std::size_t k = 0; k < inner; ++k) {
          const double d = base[k] - m;
          sq += d * d;
        }
      }
      mu[static_cast<std::size_t>(ch)] = static_cast<float>(m);
      var[static_cast<std::size_t>(ch)] = static_cast<float>(sq / count);
      if (update_running) {
        stats.mean[static_cast<std::size_t>(ch)] =
            (1.0f - momentum) * stats.mean[static_cast<std::size_t>(ch)] +
            momentum * mu[static_cast<std::size_t>(ch)];
        stats.var[static_cast<std::size_t>(ch)] =
            (1.0f - momentum) * stats.var[static_cast<std::size_t>(ch)] +
            momentum * var[static_cast<std::size_t>(ch)];
      }
    }
  } else {
    mu = stats.mean;
    var = stats.var;
  }

  std::vector<float> inv_std(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    inv_std[static_cast<std::size_t>(ch)] =
        1.0f / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);

  const auto n_all = static_cast<std::size_t>(x.numel());
  std::vector<float> xhat(n_all);
  std::vector<float> v(n_all);
  const float* pg = gamma.data();
  const float* pb = beta.data();
  std::size_t idx = 0;
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const float m = mu[static_cast<std::size_t>(ch)];
      const float is = inv_std[static_cast<std::size_t>(ch)];
      const float gm = pg[ch];
      const float bt = pb[ch];
      for (std::size_t k = 0; k < inner; ++k, ++idx) {
        xhat[idx] = (px[idx] - m) * is;
        v[idx] = gm * xhat[idx] + bt;
      }
    }

  const bool rec = grad_enabled_ && (tracks(x) || tracks(gamma) || tracks(beta));
  Tensor out = make_out(x.shape(), std::move(v), rec);
  if (rec) {
    const int sx = sink_of(x), sg = sink_of(gamma), sb = sink_of(beta);
    // Normalization statistics are treated as constants in backward: the op
    // is affine in x given (mu, var), which keeps the attack objective
    // deterministic and the gradient exact in eval mode.
    push(out, [sx, sg, sb, stx = x.storage(), stg = gamma.storage(), stb = beta.storage(),
               xh = std::move(xhat), is = std::move(inv_std), batch, c,
               inner](Graph& g, const float* go) {
      if (sx != kNone) {
        std::vector<float> gx(xh.size());
        std::size_t idx = 0;
        for (int n = 0; n < batch; ++n)
          for (int ch = 0; ch < c; ++ch) {
            const float k = stg->data[static_cast<std::size_t>(ch)] *
                            is[static_cast<std::size_t>(ch)];
            for (std::size_t j = 0; j < inner; ++j, ++idx) gx[idx] = go[idx] * k;
          }
        g.accum(sx, stx.get(), gx.data(), gx.size());
      }
      if (sg != kNone || sb != kNone) {
        std::vector<float> gg(static_cast<std::size_t>(c), 0.0f);
        std::vector<float> gb(static_cast<std::size_t>(c), 0.0f);
        std::size_t idx = 0;
        for (int n = 0; n < batch; ++n)
          for (int ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < inner; ++j, ++idx) {
              gg[static_cast<std::size_t>(ch)] += go[idx] * xh[idx];
              gb[static_cast<std::size_t>(ch)] += go[idx];
            }
        g.accum(sg, stg.get(), gg.data(), gg.size());
        g.accum(sb, stb.get(), gb.data(), gb.size());
      }
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  check_input(x, "reshape");
  if (shape_numel(shape) != x.numel()) throw_shape("reshape", x.shape(), shape);
  std::vector<float> v(x.values().begin(), x.values().end());
  const bool rec = grad_enabled_ && tracks(x);
  Tensor out = make_out(std::move(shape), std::move(v), rec);
  if (rec) {
    const int sx = sink_of(x);
    const auto n = static_cast<std::size_t>(x.numel());
    push(out, [sx, stx = x.storage(), n](Graph& g, const float* go) {
      g.accum(sx, stx.get(), go, n);
    });
  }
  return out;
}

Tensor Graph::mean_all(const Tensor& x) {
  check_input(x, "mean_all");
  const auto n = static_cast<std::size_t>(x.numel());
  double s = 0.0;
  for (float v : x.values()) s += v;
  const bool rec = grad_enabled_ && tracks(x);
  Tensor out = make_out({1}, {static_cast<float>(s / static_cast<double>(n))}, rec);
  if (rec) {
    const int sx = sink_of(x);
    push(out, [sx, stx = x.storage(), n](Graph& g, const float* go) {
      std::vector<float> gx(n, go[0] / static_cast<float>(n));
      g.accum(sx, stx.get(), gx.data(), n);
    });
  }
  return out;
}

Tensor Graph::cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  check_input(logits, "cross_entropy_mean");
  if (logits.shape().size() != 2)
    throw std::invalid_argument("cross_entropy_mean: want 2-d logits, got " +
                                shape_str(logits.shape()));
  const int batch = logits.dim(0);
  const int classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    throw std::invalid_argument("cross_entropy_mean: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(batch));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::out_of_range("cross_entropy_mean: label " + std::to_string(y) +
                              " out of range [0, " + std::to_string(classes) + ")");
  const float* pl = logits.data();
  std::vector<float> soft(static_cast<std::size_t>(batch) * classes);
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    const float* row = pl + static_cast<std::size_t>(i) * classes;
    float mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = static_cast<double>(mx) + std::log(denom);
    total += lse - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
    float* srow = soft.data() + static_cast<std::size_t>(i) * classes;
    for (int c = 0; c < classes; ++c)
      srow[c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - lse));
  }
  const bool rec = grad_enabled_ && tracks(logits);
  Tensor out = make_out({1}, {static_cast<float>(total / batch)}, rec);
  if (rec) {
    const int sl = sink_of(logits);
    push(out, [sl, stl = logits.storage(), soft = std::move(soft), labels, batch,
               classes](Graph& g, const float* go) {
      std::vector<float> gl(soft.size());
      const float scale = go[0] / static_cast<float>(batch);
      for (int i = 0; i < batch; ++i)
        for (int c = 0; c < classes; ++c) {
          const std::size_t idx = static_cast<std::size_t>(i) * classes + c;
          const float onehot = (c == labels[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
          gl[idx] = (soft[idx] - onehot) * scale;
        }
      g.accum(sl, stl.get(), gl.data(), gl.size());
    });
  }
  return out;
}

}  // namespace advlab
