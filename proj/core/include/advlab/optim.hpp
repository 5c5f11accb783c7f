#pragma once

#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Trainable tensor plus its weight-decay eligibility (conv/linear weights
/// decay; biases and normalization affine terms do not).
struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = false;
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v
void sgd_momentum_update(float* param, const float* grad, float* vel, std::size_t n, float lr,
                         float momentum, float weight_decay);

class SgdMomentum {
 public:
  SgdMomentum(std::vector<NamedParam> params, float lr, float momentum, float weight_decay);

  /// Applies one update from the grads currently on the parameters.
  /// Parameters without a grad buffer are treated as zero-grad (weight decay
  /// still applies when eligible).
  void step();
  void zero_grad();

  void set_lr(float lr);
  float lr() const { return lr_; }
  float momentum() const { return momentum_; }
  float weight_decay() const { return weight_decay_; }

  const std::vector<NamedParam>& params() const { return params_; }
  const std::vector<std::vector<float>>& velocities() const { return vel_; }
  void set_velocities(const std::vector<std::vector<float>>& vel);

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<float>> vel_;
  float lr_;
  float momentum_;
  float weight_decay_;
};

}  // namespace advlab
