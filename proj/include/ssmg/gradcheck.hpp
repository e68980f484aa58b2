#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ssmg/ops.hpp"

namespace ssmg {

// Central-difference validation of tape gradients. `f` must be a deterministic
// scalar-valued function of the current contents of `leaves`; it is re-run
// 2 x numel times with perturbed leaf entries. Returns the max over all leaf
// elements of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
template <typename T>
double finite_diff_check(const std::function<TensorT<T>()>& f, std::vector<TensorT<T>> leaves,
                         double step = 1e-5) {
  if (step <= 0) throw ValueError("finite_diff_check: step must be positive");

  std::vector<std::vector<T>> ad_grads;
  {
    TapeT<T> tape;
    TapeScope<T> scope(tape);
    for (auto& leaf : leaves) leaf.zero_grad();
    TensorT<T> loss = f();
    loss.check_finite("finite_diff_check forward");
    tape.backward(loss);
    for (auto& leaf : leaves) ad_grads.push_back(leaf.grad());
  }

  auto eval = [&]() -> double {
    TensorT<T> loss = f();  // no active tape: plain forward
    loss.check_finite("finite_diff_check probe");
    return static_cast<double>(loss.item());
  };

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = leaves[li].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = saved + static_cast<T>(step);
      const double up = eval();
      data[i] = saved - static_cast<T>(step);
      const double dn = eval();
      data[i] = saved;
      const double g_fd = (up - dn) / (2.0 * step);
      const double g_ad = static_cast<double>(ad_grads[li][i]);
      const double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      worst = std::max(worst, std::abs(g_ad - g_fd) / denom);
    }
  }
  return worst;
}

}  // namespace ssmg
