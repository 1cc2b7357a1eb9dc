#include "s2t/optim.hpp"

#include <cmath>

#include "s2t/error.hpp"

namespace s2t {

double lr_at_step(double peak, double warmup_fraction, long step, long total, bool constant_after_warmup) {
  if (total <= 0 || step <= 0) return 0.0;
  if (step >= total) return constant_after_warmup ? peak : 0.0;
  const long warm = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total)));
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (constant_after_warmup) return peak;
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

template <typename T>
AdamW<T>::AdamW(nn::ParamStore<T>& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  for (const auto& [_, p] : store_.params()) {
    m_.push_back(nn::Mat<T>::Zero(p.rows(), p.cols()));
    v_.push_back(nn::Mat<T>::Zero(p.rows(), p.cols()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  auto& params = store_.params();
  if (params.size() != m_.size()) throw ShapeError("parameter store changed after optimizer creation");
  std::vector<nn::Mat<T>> grads;
  grads.reserve(params.size());
  for (const auto& [name, p] : params) {
    grads.push_back(p.grad());
    if (!grads.back().allFinite()) throw NonFiniteGradient("non-finite gradient in " + name);
  }
  ++t_;
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
  const T step = static_cast<T>(lr);
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].second.mutable_value();
    const auto& g = grads[i];
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
    if (cfg_.weight_decay != 0.0) w *= decay;
    w.array() -= step * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace s2t
