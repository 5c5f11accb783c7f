#pragma once

#include <random>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/model.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

enum class Norm { L2, Linf };

Norm parse_norm(const std::string& s);
std::string norm_name(Norm n);
/// Accepts decimals ("0.031") or exact fractions ("8/255").
float parse_fraction(const std::string& s);

struct AttackConfig {
  Norm norm = Norm::Linf;
  float epsilon = 8.0f / 255.0f;
  float alpha = 2.0f / 255.0f;
  int steps = 10;
  int restarts = 1;  // best-of-N random restarts (per-sample max attack loss)
  bool random_start = true;
  bool use_ss_loss = false;  // adds lambda2 * L_SS to the attack objective
  float lambda2 = 0.0f;

  void validate() const;
};

struct AdvBatch {
  Tensor x_adv;
  Tensor x_ss_adv;                  // undefined when no SS batch was attacked
  std::vector<float> final_losses;  // per-sample attack objective at the last iterate
};

/// Uniform start in the epsilon ball (per-pixel U(-eps,eps) for linf;
/// uniform-in-ball via direction * eps * u^(1/d) for l2), clamped to [0,1].
/// eps = 0 returns x unchanged without consuming draws.
Tensor random_init(const Tensor& x, float epsilon, Norm norm, std::mt19937& rng);

/// Which head scores the primary attacked batch. Sup is the Algorithm-1
/// default; Ss drives self-supervised adversarial pre-training, where the
/// "supervised" batch is (X_SS, y_SS) on the SS head.
enum class AttackHead { Sup, Ss };

/// Primary-head CE plus, when use_ss, lambda2 * SS-head CE on the SS batch.
Tensor attack_loss(TwoHeadModel& model, Graph& g, const Tensor& x, const std::vector<int>& y,
                   const Tensor* x_ss, const std::vector<int>* y_ss, float lambda2, bool use_ss,
                   AttackHead head = AttackHead::Sup);

/// In-place projection of a single perturbation onto the closed eps ball.
void project_linf(float* delta, std::size_t n, float epsilon);
void project_l2(float* delta, std::size_t n, float epsilon);

/// One ascent step (linf: alpha*sign(g); l2: alpha*g/||g|| per sample, zero
/// gradient skips the sample), then ball projection around x_orig and pixel
/// clamp to [0,1].
Tensor pgd_step(const Tensor& x, std::span<const float> grad, float alpha, Norm norm,
                const Tensor& x_orig, float epsilon);

/// Algorithm: random start (optional), then steps x [attack_loss -> input
/// gradient -> pgd_step], repeated cfg.restarts times keeping the
/// per-sample iterate with the highest final loss. The SS batch is
/// perturbed iff cfg.use_ss_loss. Model must be in eval mode; parameters
/// are never touched. Ball containment and pixel range are asserted on the
/// result.
AdvBatch pgd_attack(TwoHeadModel& model, const Tensor& x, const std::vector<int>& y,
                    const Tensor* x_ss, const std::vector<int>* y_ss, const AttackConfig& cfg,
                    std::mt19937& rng, AttackHead head = AttackHead::Sup);

/// Per-sample mean-free cross entropy, used for AdvBatch::final_losses and
/// accuracy bookkeeping.
std::vector<float> per_sample_ce(const Tensor& logits, const std::vector<int>& labels);

}  // namespace advlab
