#include "advlab/optim.hpp"

#include <stdexcept>

namespace advlab {

void sgd_momentum_update(float* param, const float* grad, float* vel, std::size_t n, float lr,
                         float momentum, float weight_decay) {
  if (lr <= 0.0f) throw std::invalid_argument("sgd: lr " + std::to_string(lr) + " must be > 0");
  for (std::size_t i = 0; i < n; ++i) {
    vel[i] = momentum * vel[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * vel[i];
  }
}

SgdMomentum::SgdMomentum(std::vector<NamedParam> params, float lr, float momentum,
                         float weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  if (lr_ <= 0.0f) throw std::invalid_argument("sgd: lr " + std::to_string(lr_) + " must be > 0");
  vel_.reserve(params_.size());
  for (const auto& p : params_) vel_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
}

void SgdMomentum::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto st = p.tensor.storage();
    const float wd = p.decay ? weight_decay_ : 0.0f;
    if (st->grad.empty()) {
      std::vector<float> zeros(st->data.size(), 0.0f);
      sgd_momentum_update(st->data.data(), zeros.data(), vel_[i].data(), st->data.size(), lr_,
                          momentum_, wd);
    } else {
      sgd_momentum_update(st->data.data(), st->grad.data(), vel_[i].data(), st->data.size(), lr_,
                          momentum_, wd);
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void SgdMomentum::set_lr(float lr) {
  if (lr <= 0.0f) throw std::invalid_argument("sgd: lr " + std::to_string(lr) + " must be > 0");
  lr_ = lr;
}

void SgdMomentum::set_velocities(const std::vector<std::vector<float>>& vel) {
  if (vel.size() != vel_.size())
    throw std::invalid_argument("sgd: velocity count " + std::to_string(vel.size()) +
                                " does not match parameter count " + std::to_string(vel_.size()));
  for (std::size_t i = 0; i < vel.size(); ++i) {
    if (vel[i].size() != vel_[i].size())
      throw std::invalid_argument("sgd: velocity " + std::to_string(i) + " has size " +
                                  std::to_string(vel[i].size()) + ", want " +
                                  std::to_string(vel_[i].size()));
    vel_[i] = vel[i];
  }
}

}  // namespace advlab
