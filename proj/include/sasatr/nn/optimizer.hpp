#pragma once

#include <cmath>
#include <vector>

#include "sasatr/error.hpp"
#include "sasatr/nn/model.hpp"

namespace sasatr::nn {

/// RMSProp: E <- rho*E + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(E) + eps).
template <class T>
class RmsProp {
 public:
  static constexpr double kDecay = 0.9;
  static constexpr double kEpsilon = 1e-8;

  explicit RmsProp(double learning_rate) : lr_(learning_rate) {
    if (!(learning_rate > 0.0)) throw InvalidParameter("learning rate must be positive");
  }

  double learning_rate() const noexcept { return lr_; }
  const std::vector<Tensor<T>>& mean_square() const noexcept { return ms_; }

  void step(std::vector<Param<T>>& params) {
    if (ms_.empty())
      for (const auto& p : params) ms_.emplace_back(p.value.shape());
    if (ms_.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    const T decay = static_cast<T>(kDecay);
    const T keep = static_cast<T>(1.0 - kDecay);
    const T lr = static_cast<T>(lr_);
    const T eps = static_cast<T>(kEpsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& value = params[i].value;
      const auto& grad = params[i].grad;
      auto& ms = ms_[i];
      require_shape(grad, value.shape(), "gradient of " + params[i].name);
      for (std::size_t k = 0; k < value.size(); ++k) {
        const T g = grad[k];
        ms[k] = decay * ms[k] + keep * g * g;
        value[k] -= lr * g / (std::sqrt(ms[k]) + eps);
      }
    }
  }

 private:
  double lr_;
  std::vector<Tensor<T>> ms_;
};

}  // namespace sasatr::nn
