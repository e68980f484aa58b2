#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ssmg/tensor.hpp"

namespace ssmg {

// Decoupled-weight-decay Adam. Decay is applied directly to the weights, never
// through the moment estimates.
template <typename T>
class AdamWT {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamWT(std::vector<std::pair<std::string, TensorT<T>>> params) {
    for (auto& [name, p] : params) {
      Slot s;
      s.name = name;
      s.param = p;
      s.m.assign(p.numel(), 0.0);
      s.v.assign(p.numel(), 0.0);
      slots_.push_back(std::move(s));
    }
  }

  std::int64_t step_count() const { return t_; }

  void step(double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      auto& data = s.param.data();
      const auto& grad = s.param.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        if (!std::isfinite(g))
          throw ValueError("adamw: non-finite gradient in " + s.name);
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        data[i] = static_cast<T>(
            static_cast<double>(data[i]) -
            lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * static_cast<double>(data[i])));
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    TensorT<T> param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

// Global-norm gradient clipping; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<std::pair<std::string, TensorT<T>>>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& [name, p] : params) {
      auto& grad = const_cast<TensorT<T>&>(p).grad();
      for (auto& g : grad) g = static_cast<T>(static_cast<double>(g) * scale);
    }
  }
  return norm;
}

}  // namespace ssmg
