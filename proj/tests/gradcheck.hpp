#pragma once

// Central finite-difference oracle for checking analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "roads/autograd.hpp"
#include "roads/ops.hpp"
#include "roads/rng.hpp"

namespace roads::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.normal() * scale;
  return t;
}

// Norm-wise relative error || analytic - numeric || / max(||analytic||, ||numeric||, floor)
// across all entries of every checked input.
inline double gradcheck(const std::function<Var()>& loss_fn, const std::vector<Var*>& wrt, double step = 1e-6) {
  for (Var* v : wrt) v->zero_grad();
  Var loss = loss_fn();
  backward(loss);
  std::vector<double> analytic, numeric;
  for (Var* v : wrt) {
    const Tensor g = v->grad();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      analytic.push_back(g[i]);
      double& x = v->mutable_value()[i];
      const double orig = x;
      x = orig + step;
      const double up = loss_fn().value()[0];
      x = orig - step;
      const double down = loss_fn().value()[0];
      x = orig;
      numeric.push_back((up - down) / (2.0 * step));
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

// Weighted sum with fixed random weights, turning any output into a scalar
// whose gradient exercises every output element.
inline std::function<Var(const Var&)> random_projection(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  auto w = std::make_shared<Var>(random_tensor(std::move(shape), rng));
  return [w](const Var& y) { return ops::sum(ops::mul(y, *w)); };
}

}  // namespace roads::testing
