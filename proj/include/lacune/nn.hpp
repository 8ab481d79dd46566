#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lacune/kernels.hpp"

// Minimal CPU building blocks for the two learned stages. Layers cache
// what backward() needs from the latest forward(); call them in
// forward/backward pairs per sample.

namespace lacune::nn {

/// Channels x height x width, one sample.
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t h_, std::size_t w_, float fill = 0.0f) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, fill) {}

  float& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  float at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
  std::size_t plane() const { return h * w; }
};

struct Param {
  std::vector<float> value, grad, m, v;

  explicit Param(std::size_t n = 0) : value(n, 0.0f), grad(n, 0.0f), m(n, 0.0f), v(n, 0.0f) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

  std::vector<Param*> parameters() { return {&weight_, &bias_}; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0, k_ = 1;
  Param weight_, bias_;
  Tensor input_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  std::vector<std::uint8_t> active_;
};

/// 2x2 max pooling, stride 2 (odd trailing rows/cols dropped).
class MaxPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  std::vector<std::size_t> argmax_;
  std::size_t in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample(const Tensor& x, std::size_t factor);
Tensor upsample_backward(const Tensor& grad_out, std::size_t factor);

/// Mean over factor x factor blocks.
Tensor avg_pool(const Tensor& x, std::size_t factor);

Tensor concat(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split(const Tensor& g, std::size_t channels_a);

void add_inplace(Tensor& a, const Tensor& b);

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f, beta2 = 0.999f, epsilon = 1e-8f;
};

class Adam {
 public:
  explicit Adam(AdamOptions o = {}) : o_(o) {}
  /// Applies one update using grad / grad_scale, then zeroes the grads.
  void step(const std::vector<Param*>& params, float grad_scale);
  std::size_t steps() const { return t_; }

 private:
  AdamOptions o_;
  std::size_t t_ = 0;
};

float sigmoid(float z);

/// Mean binary cross-entropy on logits; adds dL/dz into grad (same size).
/// `positive_weight` scales the terms of positive targets.
double bce_with_logits(std::span<const float> logits, std::span<const float> targets, std::span<float> grad,
                       float positive_weight = 1.0f);

/// 1 - (2 sum(p y) + s) / (sum p + sum y + s) on sigmoid(logits); adds
/// dL/dz into grad.
double soft_dice_with_logits(std::span<const float> logits, std::span<const float> targets, std::span<float> grad,
                             double smooth = 1.0);

/// Flat copy of all parameter values in order, and the inverse.
std::vector<float> flatten(const std::vector<Param*>& params);
void unflatten(const std::vector<Param*>& params, std::span<const float> values);

}  // namespace lacune::nn
