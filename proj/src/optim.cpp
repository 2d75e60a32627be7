#include "roads/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace roads {

AdamW::AdamW(std::vector<ParamGroup> groups, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (ParamGroup& g : groups) {
    Group out{{}, g.lr_scale, g.weight_decay, g.row_sparse};
    for (Var* p : g.params) {
      if (!p->requires_grad()) continue;
      out.slots.push_back(Slot{p, Tensor(p->shape()), Tensor(p->shape())});
    }
    groups_.push_back(std::move(out));
  }
}

void AdamW::zero_grad() {
  for (Group& g : groups_) {
    for (Slot& s : g.slots) s.param->zero_grad();
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Group& g : groups_) {
    const double lr = lr_ * g.lr_scale;
    for (Slot& s : g.slots) {
      if (!s.param->node()->has_grad()) continue;
      const Tensor& grad = s.param->node()->grad;
      Tensor& w = s.param->mutable_value();
      const std::size_t n = w.numel();
      const std::size_t rows = w.rank() > 0 ? static_cast<std::size_t>(w.dim(0)) : 1;
      const std::size_t row_len = rows ? n / rows : 0;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t lo = r * row_len, hi = lo + row_len;
        if (g.row_sparse) {
          bool any = false;
          for (std::size_t i = lo; i < hi && !any; ++i) any = grad[i] != 0.0;
          if (!any) continue;
        }
        for (std::size_t i = lo; i < hi; ++i) {
          const double gi = grad[i];
          s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
          s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
          const double mhat = s.m[i] / bc1, vhat = s.v[i] / bc2;
          w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + g.weight_decay * w[i]);
        }
      }
    }
  }
}

double cosine_lr(double base_lr, double min_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

}  // namespace roads
