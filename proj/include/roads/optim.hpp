#pragma once

#include <vector>

#include "roads/autograd.hpp"

namespace roads {

struct ParamGroup {
  std::vector<Var*> params;
  double lr_scale = 1.0;
  double weight_decay = 0.0;
  // Rows (first-axis slices) whose gradient is entirely zero are left untouched,
  // moments included.
  bool row_sparse = false;
};

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();
  long steps() const { return t_; }

 private:
  struct Slot {
    Var* param;
    Tensor m, v;
  };
  struct Group {
    std::vector<Slot> slots;
    double lr_scale, weight_decay;
    bool row_sparse;
  };
  std::vector<Group> groups_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Cosine decay from base_lr at step 0 to min_lr at total_steps.
double cosine_lr(double base_lr, double min_lr, long step, long total_steps);

}  // namespace roads
