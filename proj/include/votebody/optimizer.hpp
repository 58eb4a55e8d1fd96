#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "votebody/tensor.hpp"

namespace votebody {

// Named parameter tensors with stable insertion order (checkpoints and
// optimizer state walk parameters in this order).
template <typename S>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<S> t) {
    if (items_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    order_.push_back(name);
    items_.emplace(name, std::move(t));
  }

  bool has(const std::string& name) const { return items_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& name : order_) n += items_.at(name).numel();
    return n;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& name : order_) out.add(name, items_.at(name).template cast<T>());
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<S>> items_;
};

// Adam with bias correction. Moment buffers are created lazily per parameter
// and live in float regardless of the compute scalar, matching what the
// checkpoint format stores.
template <typename S>
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<S>& params, const std::unordered_map<std::string, const Tensor<S>*>& grads) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (const auto& name : params.names()) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      Tensor<S>& p = params.at(name);
      const Tensor<S>& g = *git->second;
      if (g.shape != p.shape)
        throw std::invalid_argument("gradient shape " + shape_str(g.shape) + " does not match parameter " +
                                    name + " " + shape_str(p.shape));
      Tensor<float>& m = moment(m_, name, p.shape);
      Tensor<float>& v = moment(v_, name, p.shape);
      for (size_t i = 0; i < p.data.size(); ++i) {
        const double gi = static_cast<double>(g.data[i]);
        const double mi = beta1_ * static_cast<double>(m.data[i]) + (1.0 - beta1_) * gi;
        const double vi = beta2_ * static_cast<double>(v.data[i]) + (1.0 - beta2_) * gi * gi;
        m.data[i] = static_cast<float>(mi);
        v.data[i] = static_cast<float>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p.data[i] = static_cast<S>(static_cast<double>(p.data[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  bool has_moments(const std::string& name) const { return m_.count(name) != 0; }
  const Tensor<float>& m(const std::string& name) const { return m_.at(name); }
  const Tensor<float>& v(const std::string& name) const { return v_.at(name); }
  void set_moments(const std::string& name, Tensor<float> m, Tensor<float> v) {
    m_[name] = std::move(m);
    v_[name] = std::move(v);
  }

 private:
  static Tensor<float>& moment(std::unordered_map<std::string, Tensor<float>>& table,
                               const std::string& name, const Shape& shape) {
    auto it = table.find(name);
    if (it == table.end()) it = table.emplace(name, Tensor<float>(shape)).first;
    if (it->second.shape != shape)
      throw std::invalid_argument("optimizer moment shape mismatch for " + name);
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
  std::unordered_map<std::string, Tensor<float>> m_;
  std::unordered_map<std::string, Tensor<float>> v_;
};

}  // namespace votebody
