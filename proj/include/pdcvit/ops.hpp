#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pdcvit/tensor.hpp"

namespace pdcvit {

using Rng = std::mt19937_64;

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// a[..., n] + bias[n], broadcasting over every leading index.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[T x in] * w[in x out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; backward scatters.
Tensor gather(const Tensor& a, Shape shape, std::vector<std::size_t> index);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
// Concatenation along axis 0; trailing dimensions must agree.
Tensor concat0(std::span<const Tensor> parts);
Tensor row(const Tensor& a, std::size_t i);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

enum class PadMode { Zeros, Replicate };

// Spatial padding of a C x H x W tensor on all four sides.
Tensor pad2d(const Tensor& input, std::size_t padding, PadMode mode);

// Cross-correlation, input C_in x H x W, kernel C_out x C_in x k x k.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              PadMode mode = PadMode::Zeros);

std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding);

// Per-channel standardization of C x H x W over the spatial dims, then
// gain[c] * z + bias[c].
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

struct AdamOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamState like(std::span<const Tensor> params);
};

// One Adam update with bias correction. A parameter without a gradient is
// treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opts);

// Truncated normal (cut at two standard deviations).
void init_trunc_normal(Tensor& t, double stddev, Rng& rng);
void init_normal(Tensor& t, double stddev, Rng& rng);

}  // namespace pdcvit
