#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

/// Momentum SGD with L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
/// Gradients are cleared after the update. Velocities are keyed by
/// parameter name, so one optimizer can drive several disjoint sets.
template <std::floating_point T>
class MomentumSgd {
 public:
  MomentumSgd(T lr, T momentum, T weight_decay = T(0))
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(lr >= T(0))) throw ConfigError("sgd: learning rate must be nonnegative");
    if (!(momentum >= T(0) && momentum < T(1))) throw ConfigError("sgd: momentum must lie in [0, 1)");
    if (!(weight_decay >= T(0))) throw ConfigError("sgd: weight decay must be nonnegative");
  }

  void step(ParamSet<T>& params) {
    for (auto& p : params) {
      if (!p.tensor.has_grad()) throw ContractError("sgd: parameter '" + p.name + "' has no gradient");
    }
    for (auto& p : params) {
      auto& v = velocity_[p.name];
      auto x = p.tensor.mutable_data();
      auto g = p.tensor.grad();
      if (v.size() != x.size()) v.assign(x.size(), T(0));
      for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * x[i]);
        x[i] -= lr_ * v[i];
      }
      p.tensor.zero_grad();
    }
  }

  /// Velocity of a parameter after the last step (empty if never stepped).
  [[nodiscard]] const std::vector<T>& velocity(const std::string& name) const {
    static const std::vector<T> empty;
    auto it = velocity_.find(name);
    return it == velocity_.end() ? empty : it->second;
  }
  void reset_velocity(const std::string& name) { velocity_.erase(name); }
  void reset() { velocity_.clear(); }

  [[nodiscard]] T lr() const { return lr_; }
  [[nodiscard]] T momentum() const { return momentum_; }
  [[nodiscard]] T weight_decay() const { return weight_decay_; }
  void set_lr(T lr) { lr_ = lr; }

 private:
  T lr_;
  T momentum_;
  T weight_decay_;
  std::map<std::string, std::vector<T>> velocity_;
};

/// Maximum over coordinates of |analytic - central difference| /
/// max(1, |central difference|). `x` must be a leaf that `f` reads.
template <std::floating_point T>
T grad_check(const std::function<Tensor<T>()>& f, Tensor<T> x, T h = T(1e-4)) {
  if (!x.is_leaf() || !x.requires_grad()) throw ContractError("grad_check: x must be a trainable leaf");
  x.zero_grad();
  backward(f());
  std::vector<T> analytic(x.grad().begin(), x.grad().end());
  if (analytic.empty()) analytic.assign(x.numel(), T(0));
  x.zero_grad();

  auto data = x.mutable_data();
  T worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const T keep = data[i];
    data[i] = keep + h;
    const T fp = f().item();
    data[i] = keep - h;
    const T fm = f().item();
    data[i] = keep;
    const T fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(T(1), std::abs(fd)));
  }
  return worst;
}

}  // namespace ruas
