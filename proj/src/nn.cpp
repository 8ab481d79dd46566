#include "lacune/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lacune/error.hpp"

namespace lacune::nn {

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), k_(kernel),
      weight_(out_channels * in_channels * kernel * kernel), bias_(out_channels) {
  require(kernel % 2 == 1, ErrorCode::invalid_argument, "convolution kernel must be odd");
  // He initialisation.
  const float stddev = std::sqrt(2.0f / static_cast<float>(in_channels * kernel * kernel));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& w : weight_.value) w = dist(rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  require(x.c == in_, ErrorCode::shape_mismatch, "conv input channel mismatch");
  input_ = x;
  Tensor out(out_, x.h, x.w);
  kernels::parallel::conv2d_forward({in_, out_, x.h, x.w, k_}, x.v, weight_.value, bias_.value, out.v);
  return out;
}

Tensor Conv2d::backward(const Tensor& g) {
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const long K = static_cast<long>(k_), pad = K / 2;
  const long IC = static_cast<long>(in_), OC = static_cast<long>(out_);
  const float* in = input_.v.data();
  const float* go = g.v.data();
  float* gw = weight_.grad.data();
  float* gb = bias_.grad.data();
  const float* wv = weight_.value.data();

#pragma omp parallel for schedule(static)
  for (long oc = 0; oc < OC; ++oc) {
    const float* gplane = go + oc * H * W;
    double bsum = 0.0;
    for (long i = 0; i < H * W; ++i) bsum += gplane[i];
    gb[oc] += static_cast<float>(bsum);
    for (long ic = 0; ic < IC; ++ic) {
      const float* iplane = in + ic * H * W;
      for (long ky = 0; ky < K; ++ky)
        for (long kx = 0; kx < K; ++kx) {
          const long dy = ky - pad, dx = kx - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
          float acc = 0.0f;
          for (long y = y0; y < y1; ++y) {
            const float* grow = gplane + y * W;
            const float* irow = iplane + (y + dy) * W + dx;
            for (long x = x0; x < x1; ++x) acc += grow[x] * irow[x];
          }
          gw[((oc * IC + ic) * K + ky) * K + kx] += acc;
        }
    }
  }

  Tensor gin(in_, g.h, g.w);
  float* gi = gin.v.data();
#pragma omp parallel for schedule(static)
  for (long ic = 0; ic < IC; ++ic) {
    float* iplane = gi + ic * H * W;
    for (long oc = 0; oc < OC; ++oc) {
      const float* gplane = go + oc * H * W;
      for (long ky = 0; ky < K; ++ky)
        for (long kx = 0; kx < K; ++kx) {
          const float w = wv[((oc * IC + ic) * K + ky) * K + kx];
          const long dy = ky - pad, dx = kx - pad;
          // out(y, x) used in(y + dy, x + dx)
          const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
          for (long y = y0; y < y1; ++y) {
            const float* grow = gplane + y * W;
            float* irow = iplane + (y + dy) * W + dx;
            for (long x = x0; x < x1; ++x) irow[x] += w * grow[x];
          }
        }
    }
  }
  return gin;
}

Tensor ReLU::forward(const Tensor& x) {
  Tensor out = x;
  active_.assign(x.v.size(), 0);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    if (out.v[i] > 0.0f) active_[i] = 1;
    else out.v[i] = 0.0f;
  }
  return out;
}

Tensor ReLU::backward(const Tensor& g) const {
  Tensor out = g;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    if (!active_[i]) out.v[i] = 0.0f;
  return out;
}

Tensor MaxPool2::forward(const Tensor& x) {
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  Tensor out(x.c, x.h / 2, x.w / 2);
  argmax_.assign(out.v.size(), 0);
  for (std::size_t c = 0; c < out.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t xx = 0; xx < out.w; ++xx) {
        std::size_t best = (c * x.h + 2 * y) * x.w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (c * x.h + 2 * y + dy) * x.w + 2 * xx + dx;
            if (x.v[i] > x.v[best]) best = i;
          }
        const std::size_t o = (c * out.h + y) * out.w + xx;
        out.v[o] = x.v[best];
        argmax_[o] = best;
      }
  return out;
}

Tensor MaxPool2::backward(const Tensor& g) const {
  Tensor out(in_c_, in_h_, in_w_);
  for (std::size_t i = 0; i < g.v.size(); ++i) out.v[argmax_[i]] += g.v[i];
  return out;
}

Tensor upsample(const Tensor& x, std::size_t f) {
  Tensor out(x.c, x.h * f, x.w * f);
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t xx = 0; xx < out.w; ++xx) out.at(c, y, xx) = x.at(c, y / f, xx / f);
  return out;
}

Tensor upsample_backward(const Tensor& g, std::size_t f) {
  Tensor out(g.c, g.h / f, g.w / f);
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t xx = 0; xx < g.w; ++xx) out.at(c, y / f, xx / f) += g.at(c, y, xx);
  return out;
}

Tensor avg_pool(const Tensor& x, std::size_t f) {
  Tensor out(x.c, x.h / f, x.w / f);
  const float inv = 1.0f / static_cast<float>(f * f);
  for (std::size_t c = 0; c < out.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t xx = 0; xx < out.w; ++xx) {
        float s = 0.0f;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) s += x.at(c, y * f + dy, xx * f + dx);
        out.at(c, y, xx) = s * inv;
      }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require(a.h == b.h && a.w == b.w, ErrorCode::shape_mismatch, "concat spatial mismatch");
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<long>(a.v.size()));
  return out;
}

std::pair<Tensor, Tensor> split(const Tensor& g, std::size_t ca) {
  Tensor a(ca, g.h, g.w), b(g.c - ca, g.h, g.w);
  std::copy(g.v.begin(), g.v.begin() + static_cast<long>(a.v.size()), a.v.begin());
  std::copy(g.v.begin() + static_cast<long>(a.v.size()), g.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

void add_inplace(Tensor& a, const Tensor& b) {
  require(a.v.size() == b.v.size(), ErrorCode::shape_mismatch, "tensor add size mismatch");
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

void Adam::step(const std::vector<Param*>& params, float grad_scale) {
  ++t_;
  const float c1 = 1.0f - std::pow(o_.beta1, static_cast<float>(t_));
  const float c2 = 1.0f - std::pow(o_.beta2, static_cast<float>(t_));
  const float inv = 1.0f / grad_scale;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const float g = p->grad[i] * inv;
      p->m[i] = o_.beta1 * p->m[i] + (1.0f - o_.beta1) * g;
      p->v[i] = o_.beta2 * p->v[i] + (1.0f - o_.beta2) * g * g;
      const float mh = p->m[i] / c1, vh = p->v[i] / c2;
      p->value[i] -= o_.learning_rate * mh / (std::sqrt(vh) + o_.epsilon);
    }
    p->zero_grad();
  }
}

float sigmoid(float z) {
  if (z >= 0) return 1.0f / (1.0f + std::exp(-z));
  const float e = std::exp(z);
  return e / (1.0f + e);
}

double bce_with_logits(std::span<const float> logits, std::span<const float> targets, std::span<float> grad,
                       float positive_weight) {
  double loss = 0.0;
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const float z = logits[i], y = targets[i];
    const float w = y > 0.5f ? positive_weight : 1.0f;
    loss += w * (std::max(z, 0.0f) - z * y + std::log1p(std::exp(-std::abs(z))));
    grad[i] += static_cast<float>(w * (sigmoid(z) - y) / n);
  }
  return loss / n;
}

double soft_dice_with_logits(std::span<const float> logits, std::span<const float> targets, std::span<float> grad,
                             double smooth) {
  std::vector<double> p(logits.size());
  double sp = 0.0, sy = 0.0, spy = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = sigmoid(logits[i]);
    sp += p[i];
    sy += targets[i];
    spy += p[i] * targets[i];
  }
  const double num = 2.0 * spy + smooth, den = sp + sy + smooth;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double dl_dp = -(2.0 * targets[i] * den - num) / (den * den);
    grad[i] += static_cast<float>(dl_dp * p[i] * (1.0 - p[i]));
  }
  return 1.0 - num / den;
}

std::vector<float> flatten(const std::vector<Param*>& params) {
  std::vector<float> out;
  for (const Param* p : params) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void unflatten(const std::vector<Param*>& params, std::span<const float> values) {
  std::size_t total = 0;
  for (const Param* p : params) total += p->size();
  require(total == values.size(), ErrorCode::parse,
          "checkpoint holds " + std::to_string(values.size()) + " weights, model expects " + std::to_string(total));
  std::size_t off = 0;
  for (Param* p : params) {
    std::copy_n(values.begin() + static_cast<long>(off), p->size(), p->value.begin());
    off += p->size();
  }
}

}  // namespace lacune::nn
