#include "advlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "advlab/rng.hpp"

namespace advlab {

namespace {

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void check_batched(const Tensor& x, const char* who) {
  if (x.shape().empty() || x.dim(0) < 1)
    throw std::invalid_argument(std::string(who) + ": want batched tensor, got " +
                                shape_str(x.shape()));
}

}  // namespace

Norm parse_norm(const std::string& s) {
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::Linf;
  throw std::invalid_argument("norm: unknown '" + s + "' (want l2 or linf)");
}

std::string norm_name(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

float parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return static_cast<float>(std::stod(s));
    const double num = std::stod(s.substr(0, slash));
    const double den = std::stod(s.substr(slash + 1));
    if (den == 0.0) throw std::invalid_argument("zero denominator");
    return static_cast<float>(num / den);
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse number '" + s + "'");
  }
}

void AttackConfig::validate() const {
  if (epsilon < 0.0f)
    throw std::invalid_argument("attack: epsilon " + std::to_string(epsilon) + " < 0");
  if (steps < 0) throw std::invalid_argument("attack: steps " + std::to_string(steps) + " < 0");
  if (restarts < 1)
    throw std::invalid_argument("attack: restarts " + std::to_string(restarts) + " < 1");
  if (steps > 0 && alpha <= 0.0f)
    throw std::invalid_argument("attack: alpha " + std::to_string(alpha) +
                                " must be > 0 when steps > 0");
  if (lambda2 < 0.0f)
    throw std::invalid_argument("attack: lambda2 " + std::to_string(lambda2) + " < 0");
}

Tensor random_init(const Tensor& x, float epsilon, Norm norm, std::mt19937& rng) {
  check_batched(x, "random_init");
  std::vector<float> v(x.values().begin(), x.values().end());
  if (epsilon == 0.0f) return Tensor(x.shape(), std::move(v));
  const int batch = x.dim(0);
  const auto d = static_cast<std::size_t>(x.numel() / batch);
  if (norm == Norm::Linf) {
    for (auto& p : v) p = clamp01(p + uniform_range(rng, -epsilon, epsilon));
  } else {
    std::vector<float> dir(d);
    for (int i = 0; i < batch; ++i) {
      double norm2 = 0.0;
      for (auto& dv : dir) {
        dv = normal_unit(rng);
        norm2 += static_cast<double>(dv) * dv;
      }
      const double len = std::sqrt(norm2);
      // radius law u^(1/d) makes the draw uniform over the ball's volume
      const double radius =
          epsilon * std::pow(static_cast<double>(uniform_unit(rng)), 1.0 / static_cast<double>(d));
      const float scale = len > 0.0 ? static_cast<float>(radius / len) : 0.0f;
      float* px = v.data() + static_cast<std::size_t>(i) * d;
      for (std::size_t j = 0; j < d; ++j) px[j] = clamp01(px[j] + scale * dir[j]);
    }
  }
  return Tensor(x.shape(), std::move(v));
}

Tensor attack_loss(TwoHeadModel& model, Graph& g, const Tensor& x, const std::vector<int>& y,
                   const Tensor* x_ss, const std::vector<int>* y_ss, float lambda2, bool use_ss,
                   AttackHead head) {
  Tensor logits = head == AttackHead::Sup ? model.predict_sup(g, x) : model.predict_ss(g, x);
  Tensor loss = g.cross_entropy_mean(logits, y);
  if (!use_ss) return loss;
  if (!x_ss || !y_ss)
    throw std::invalid_argument("attack_loss: use_ss set but no SS batch supplied");
  Tensor ss = g.cross_entropy_mean(model.predict_ss(g, *x_ss), *y_ss);
  return g.add(loss, g.scale(ss, lambda2));
}

void project_linf(float* delta, std::size_t n, float epsilon) {
  for (std::size_t i = 0; i < n; ++i)
    delta[i] = delta[i] > epsilon ? epsilon : (delta[i] < -epsilon ? -epsilon : delta[i]);
}

void project_l2(float* delta, std::size_t n, float epsilon) {
  double norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) norm2 += static_cast<double>(delta[i]) * delta[i];
  const double len = std::sqrt(norm2);
  if (len <= static_cast<double>(epsilon)) return;
  const auto scale = static_cast<float>(static_cast<double>(epsilon) / len);
  for (std::size_t i = 0; i < n; ++i) delta[i] *= scale;
}

Tensor pgd_step(const Tensor& x, std::span<const float> grad, float alpha, Norm norm,
                const Tensor& x_orig, float epsilon) {
  check_batched(x, "pgd_step");
  if (grad.size() != static_cast<std::size_t>(x.numel()))
    throw std::invalid_argument("pgd_step: grad size " + std::to_string(grad.size()) +
                                " for tensor " + shape_str(x.shape()));
  if (!shape_eq(x.shape(), x_orig.shape())) {
    throw std::invalid_argument("pgd_step: iterate " + shape_str(x.shape()) +
                                " vs original " + shape_str(x_orig.shape()));
  }
  const int batch = x.dim(0);
  const auto d = static_cast<std::size_t>(x.numel() / batch);
  std::vector<float> v(x.values().begin(), x.values().end());
  const float* orig = x_orig.data();
  std::vector<float> delta(d);
  for (int i = 0; i < batch; ++i) {
    float* px = v.data() + static_cast<std::size_t>(i) * d;
    const float* pg = grad.data() + static_cast<std::size_t>(i) * d;
    const float* po = orig + static_cast<std::size_t>(i) * d;
    if (norm == Norm::Linf) {
      for (std::size_t j = 0; j < d; ++j) delta[j] = px[j] + alpha * sign(pg[j]) - po[j];
      project_linf(delta.data(), d, epsilon);
    } else {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm2 += static_cast<double>(pg[j]) * pg[j];
      const double glen = std::sqrt(norm2);
      const float step = glen > 0.0 ? static_cast<float>(alpha / glen) : 0.0f;  // zero grad: skip
      for (std::size_t j = 0; j < d; ++j) delta[j] = px[j] + step * pg[j] - po[j];
      project_l2(delta.data(), d, epsilon);
    }
    for (std::size_t j = 0; j < d; ++j) px[j] = clamp01(po[j] + delta[j]);
  }
  return Tensor(x.shape(), std::move(v));
}

namespace {

void assert_feasible(const Tensor& adv, const Tensor& orig, Norm norm, float epsilon,
                     const char* who) {
  const int batch = adv.dim(0);
  const auto d = static_cast<std::size_t>(adv.numel() / batch);
  const float tol = epsilon * (1.0f + 1e-5f);
  const float* pa = adv.data();
  const float* po = orig.data();
  for (int i = 0; i < batch; ++i) {
    double norm2 = 0.0;
    float maxabs = 0.0f;
    for (std::size_t j = 0; j < d; ++j) {
      const float v = pa[static_cast<std::size_t>(i) * d + j];
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::logic_error(std::string(who) + ": pixel " + std::to_string(v) +
                               " outside [0,1] in sample " + std::to_string(i));
      const float dv = v - po[static_cast<std::size_t>(i) * d + j];
      maxabs = std::max(maxabs, std::fabs(dv));
      norm2 += static_cast<double>(dv) * dv;
    }
    const float dist = norm == Norm::Linf ? maxabs : static_cast<float>(std::sqrt(norm2));
    if (dist > tol)
      throw std::logic_error(std::string(who) + ": sample " + std::to_string(i) +
                             " escapes the ball: " + std::to_string(dist) + " > " +
                             std::to_string(epsilon));
  }
}

}  // namespace

AdvBatch pgd_attack(TwoHeadModel& model, const Tensor& x, const std::vector<int>& y,
                    const Tensor* x_ss, const std::vector<int>* y_ss, const AttackConfig& cfg,
                    std::mt19937& rng, AttackHead head) {
  cfg.validate();
  if (model.training())
    throw std::logic_error("pgd_attack: model must be in eval mode (frozen statistics)");
  check_batched(x, "pgd_attack");
  if (static_cast<std::size_t>(x.dim(0)) != y.size())
    throw std::invalid_argument("pgd_attack: " + std::to_string(y.size()) + " labels for batch " +
                                std::to_string(x.dim(0)));
  const bool attack_ss = cfg.use_ss_loss;
  if (attack_ss && (!x_ss || !y_ss))
    throw std::invalid_argument("pgd_attack: use_ss_loss set but no SS batch supplied");

  auto run_once = [&]() {
    Tensor cur = cfg.random_start
                     ? random_init(x, cfg.epsilon, cfg.norm, rng)
                     : Tensor(x.shape(), std::vector<float>(x.values().begin(), x.values().end()));
    Tensor cur_ss;
    if (attack_ss)
      cur_ss = cfg.random_start
                   ? random_init(*x_ss, cfg.epsilon, cfg.norm, rng)
                   : Tensor(x_ss->shape(),
                            std::vector<float>(x_ss->values().begin(), x_ss->values().end()));

    for (int k = 0; k < cfg.steps; ++k) {
      Graph g(Graph::Scope::InputsOnly);
      cur.set_requires_grad();
      if (attack_ss) cur_ss.set_requires_grad();
      Tensor loss = attack_loss(model, g, cur, y, attack_ss ? &cur_ss : nullptr, y_ss, cfg.lambda2,
                                cfg.use_ss_loss, head);
      g.backward(loss);
      Tensor next = pgd_step(cur, cur.grad(), cfg.alpha, cfg.norm, x, cfg.epsilon);
      if (attack_ss)
        cur_ss = pgd_step(cur_ss, cur_ss.grad(), cfg.alpha, cfg.norm, *x_ss, cfg.epsilon);
      cur = std::move(next);
    }

    assert_feasible(cur, x, cfg.norm, cfg.epsilon, "pgd_attack");
    if (attack_ss) assert_feasible(cur_ss, *x_ss, cfg.norm, cfg.epsilon, "pgd_attack[ss]");

    AdvBatch cand;
    cand.x_adv = cur;
    if (attack_ss) cand.x_ss_adv = cur_ss;
    Graph g(Graph::Scope::All, /*grad_enabled=*/false);
    Tensor logits = head == AttackHead::Sup ? model.predict_sup(g, cur) : model.predict_ss(g, cur);
    cand.final_losses = per_sample_ce(logits, y);
    if (attack_ss) {
      const auto ss_losses = per_sample_ce(model.predict_ss(g, cur_ss), *y_ss);
      for (std::size_t i = 0; i < cand.final_losses.size() && i < ss_losses.size(); ++i)
        cand.final_losses[i] += cfg.lambda2 * ss_losses[i];
    }
    return cand;
  };

  AdvBatch out = run_once();
  if (cfg.restarts <= 1) return out;

  const int batch = x.dim(0);
  const auto d = static_cast<std::size_t>(x.numel() / batch);
  const auto d_ss = attack_ss ? static_cast<std::size_t>(x_ss->numel() / batch) : 0;
  std::vector<float> best_x(out.x_adv.values().begin(), out.x_adv.values().end());
  std::vector<float> best_ss;
  if (attack_ss) best_ss.assign(out.x_ss_adv.values().begin(), out.x_ss_adv.values().end());
  for (int r = 1; r < cfg.restarts; ++r) {
    AdvBatch cand = run_once();
    for (int i = 0; i < batch; ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (cand.final_losses[si] <= out.final_losses[si]) continue;
      out.final_losses[si] = cand.final_losses[si];
      std::copy_n(cand.x_adv.data() + si * d, d, best_x.begin() + static_cast<std::ptrdiff_t>(si * d));
      if (attack_ss)
        std::copy_n(cand.x_ss_adv.data() + si * d_ss, d_ss,
                    best_ss.begin() + static_cast<std::ptrdiff_t>(si * d_ss));
    }
  }
  out.x_adv = Tensor(x.shape(), std::move(best_x));
  if (attack_ss) out.x_ss_adv = Tensor(x_ss->shape(), std::move(best_ss));
  return out;
}

std::vector<float> per_sample_ce(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
    throw std::invalid_argument("per_sample_ce: logits " + shape_str(logits.shape()) + " for " +
                                std::to_string(labels.size()) + " labels");
  const int batch = logits.dim(0), classes = logits.dim(1);
  std::vector<float> out(static_cast<std::size_t>(batch));
  const float* pl = logits.data();
  for (int i = 0; i < batch; ++i) {
    const float* row = pl + static_cast<std::size_t>(i) * classes;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes)
      throw std::out_of_range("per_sample_ce: label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(classes) + ")");
    float mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    out[static_cast<std::size_t>(i)] =
        static_cast<float>(static_cast<double>(mx) + std::log(denom) - static_cast<double>(row[y]));
  }
  return out;
}

}  // namespace advlab
