#pragma once

#include <vector>

#include "s2t/nn/layers.hpp"

namespace s2t {

// Linear warm-up from 0 over ceil(warmup_fraction * total) steps, then linear
// decay to 0 at `total` (or flat at `peak` with constant_after_warmup).
double lr_at_step(double peak, double warmup_fraction, long step, long total, bool constant_after_warmup = false);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
class AdamW {
 public:
  AdamW(nn::ParamStore<T>& store, AdamWConfig cfg);
  // One update with the gradients currently held by the parameters. Throws
  // NonFiniteGradient before touching any weight.
  void step(double lr);
  long steps() const { return t_; }

 private:
  nn::ParamStore<T>& store_;
  AdamWConfig cfg_;
  std::vector<nn::Mat<T>> m_, v_;
  long t_ = 0;
};

}  // namespace s2t
