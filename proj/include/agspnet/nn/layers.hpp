#pragma once

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "agspnet/nn/ops.hpp"
#include "agspnet/rng.hpp"

namespace agspnet::nn {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  std::vector<T> momentum;  // SGD velocity, starts at zero

  Tensor<T>& value() { return var->value; }
  const Tensor<T>& value() const { return var->value; }
};

template <typename T>
struct Buffer {
  std::string name;
  std::vector<T> data;
};

/// Owns every parameter and non-trainable buffer of a model at stable
/// addresses, in registration order. Layers keep pointers into it, so a
/// registry is neither copied nor moved once layers exist.
template <typename T>
class Registry {
 public:
  explicit Registry(std::uint64_t seed) : rng_(Rng::stream(seed, "init")) {}
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  /// Kaiming-uniform tensor: U(-b, b) with b = sqrt(6 / fan_in).
  Parameter<T>* kaiming(const std::string& name, Shape s, int fan_in) {
    Tensor<T> t(s);
    const double b = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = static_cast<T>(rng_.uniform(-b, b));
    return add(name, std::move(t));
  }

  Parameter<T>* constant(const std::string& name, Shape s, T value) { return add(name, Tensor<T>(s, value)); }

  std::vector<T>* buffer(const std::string& name, std::size_t n, T fill) {
    check_unique(name);
    buffers_.push_back({name, std::vector<T>(n, fill)});
    return &buffers_.back().data;
  }

  std::deque<Parameter<T>>& params() { return params_; }
  const std::deque<Parameter<T>>& params() const { return params_; }
  std::deque<Buffer<T>>& buffers() { return buffers_; }
  const std::deque<Buffer<T>>& buffers() const { return buffers_; }

  bool training = true;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

 private:
  Parameter<T>* add(const std::string& name, Tensor<T> t) {
    check_unique(name);
    const std::size_t n = t.size();
    params_.push_back({name, leaf(std::move(t), true), std::vector<T>(n, T(0))});
    return &params_.back();
  }
  void check_unique(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) throw std::logic_error("duplicate tensor name " + name);
    for (const auto& b : buffers_)
      if (b.name == name) throw std::logic_error("duplicate tensor name " + name);
  }

  Rng rng_;
  std::deque<Parameter<T>> params_;
  std::deque<Buffer<T>> buffers_;
};

template <typename T>
struct Conv2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  int stride = 1, pad = 0, dil = 1;

  Conv2d() = default;
  Conv2d(Registry<T>& reg, const std::string& name, int cin, int cout, int k, int stride_ = 1, int pad_ = -1,
         int dil_ = 1, bool with_bias = true)
      : stride(stride_), pad(pad_ < 0 ? dil_ * (k - 1) / 2 : pad_), dil(dil_) {
    weight = reg.kaiming(name + ".weight", Shape{cout, cin, k, k}, cin * k * k);
    if (with_bias) bias = reg.constant(name + ".bias", Shape{1, cout, 1, 1}, T(0));
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv2d(x, weight->var, bias ? bias->var : Var<T>{}, stride, pad, dil);
  }
};

template <typename T>
struct BatchNorm2d {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  std::vector<T>* running_mean = nullptr;
  std::vector<T>* running_var = nullptr;
  const bool* training = nullptr;

  BatchNorm2d() = default;
  BatchNorm2d(Registry<T>& reg, const std::string& name, int channels)
      : gamma(reg.constant(name + ".gamma", Shape{1, channels, 1, 1}, T(1))),
        beta(reg.constant(name + ".beta", Shape{1, channels, 1, 1}, T(0))),
        running_mean(reg.buffer(name + ".running_mean", channels, T(0))),
        running_var(reg.buffer(name + ".running_var", channels, T(1))),
        training(&reg.training) {}

  Var<T> operator()(const Var<T>& x) const {
    return batchnorm2d(x, gamma->var, beta->var, *running_mean, *running_var, *training);
  }
};

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
};

/// v <- m*v + (g + wd*w); w <- w - lr*v; then clears the gradient. Throws
/// if a parameter received no gradient since the last step.
template <typename T>
void sgd_step(std::deque<Parameter<T>>& params, const SgdConfig& cfg = {}) {
  for (auto& p : params) {
    if (!p.var->has_grad()) throw std::logic_error("sgd_step: parameter " + p.name + " has no gradient");
  }
  const T lr = static_cast<T>(cfg.lr), mom = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
  for (auto& p : params) {
    auto& w = p.var->value.data;
    auto& g = p.var->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.momentum[i] = mom * p.momentum[i] + (g[i] + wd * w[i]);
      w[i] -= lr * p.momentum[i];
    }
    check_finite(p.var->value, "sgd_step");
    g.clear();
  }
}

template <typename T>
void zero_grad(std::deque<Parameter<T>>& params) {
  for (auto& p : params) p.var->grad.clear();
}

}  // namespace agspnet::nn
