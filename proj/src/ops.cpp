#include "pdcvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pdcvit/errors.hpp"

namespace pdcvit {

namespace {

constexpr std::size_t kNoSource = std::numeric_limits<std::size_t>::max();

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

void record(const Tensor& out, GradTape::BackwardFn fn) {
  if (should_record(out)) active_tape()->record(out, std::move(fn));
}

// Gather with kNoSource entries producing zeros.
Tensor gather_impl(const Tensor& a, Shape shape, std::vector<std::size_t> index) {
  if (shape_numel(shape) != index.size()) throw DimensionError("gather: index count does not match shape");
  const auto src = a.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] == kNoSource) {
      out[i] = 0.0;
    } else {
      if (index[i] >= src.size()) throw DimensionError("gather: index out of range");
      out[i] = src[index[i]];
    }
  }
  Tensor result = make_output(std::move(shape), std::move(out), {a});
  record(result, [a, index = std::move(index)](std::span<const double> g) {
    std::vector<double> ga(a.numel(), 0.0);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] != kNoSource) ga[index[i]] += g[i];
    }
    accumulate_grad(a, ga);
  });
  return result;
}

// Plain row-major product, C[m x n] (+)= A[m x k] * B[k x n].
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result = make_output(a.shape(), std::move(out), {a, b});
  record(result, [a, b](std::span<const double> g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor result = make_output(a.shape(), std::move(out), {a, b});
  record(result, [a, b](std::span<const double> g) {
    accumulate_grad(a, g);
    if (b.requires_grad()) {
      std::vector<double> gb(g.begin(), g.end());
      for (double& v : gb) v = -v;
      accumulate_grad(b, gb);
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor result = make_output(a.shape(), std::move(out), {a, b});
  record(result, [a, b](std::span<const double> g) {
    const auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[i];
      accumulate_grad(b, gb);
    }
  });
  return result;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  Tensor result = make_output(a.shape(), std::move(out), {a});
  record(result, [a, s](std::span<const double> g) {
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= s;
    accumulate_grad(a, ga);
  });
  return result;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (a.rank() == 0 || a.shape().back() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  Tensor result = make_output(a.shape(), std::move(out), {a, bias});
  record(result, [a, bias, n](std::span<const double> g) {
    accumulate_grad(a, g);
    if (bias.requires_grad()) {
      std::vector<double> gb(n, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      accumulate_grad(bias, gb);
    }
  });
  return result;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = make_output({}, {s}, {a});
  record(result, [a](std::span<const double> g) {
    std::vector<double> ga(a.numel(), g[0]);
    accumulate_grad(a, ga);
  });
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm(a.data(), b.data(), out, m, k, n);
  Tensor result = make_output({m, n}, std::move(out), {a, b});
  record(result, [a, b, m, k, n](std::span<const double> g) {
    const auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      // dA = G * B^T
      std::vector<double> ga(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
          ga[i * k + p] = s;
        }
      }
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      // dB = A^T * G
      std::vector<double> gb(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = x[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
      accumulate_grad(b, gb);
    }
  });
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> index(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) index[i * r + j] = j * c + i;
  }
  return gather_impl(a, {c, r}, std::move(index));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor result = make_output(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), {a});
  record(result, [a](std::span<const double> g) { accumulate_grad(a, g); });
  return result;
}

Tensor gather(const Tensor& a, Shape shape, std::vector<std::size_t> index) {
  for (std::size_t i : index) {
    if (i >= a.numel()) throw DimensionError("gather: index out of range");
  }
  return gather_impl(a, std::move(shape), std::move(index));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (begin > end || end > c) throw DimensionError("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<std::size_t> index(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) index[i * w + j] = i * c + begin + j;
  }
  return gather_impl(a, {r, w}, std::move(index));
}

Tensor row(const Tensor& a, std::size_t i) {
  require_rank(a, 2, "row");
  if (i >= a.dim(0)) throw DimensionError("row: index out of range");
  const std::size_t c = a.dim(1);
  std::vector<std::size_t> index(c);
  for (std::size_t j = 0; j < c; ++j) index[j] = i * c + j;
  return gather_impl(a, {1, c}, std::move(index));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: row counts differ");
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    const auto d = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(d.begin() + i * w, w, out.begin() + i * total + offset);
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  Tensor result = make_output({r, total}, std::move(out), inputs);
  record(result, [inputs, r, total](std::span<const double> g) {
    std::size_t offset = 0;
    for (const Tensor& p : inputs) {
      const std::size_t w = p.dim(1);
      if (p.requires_grad()) {
        std::vector<double> gp(r * w);
        for (std::size_t i = 0; i < r; ++i) std::copy_n(g.begin() + i * total + offset, w, gp.begin() + i * w);
        accumulate_grad(p, gp);
      }
      offset += w;
    }
  });
  return result;
}

Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + (parts[0].rank() ? 1 : 0), parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat0: trailing dimensions differ");
    }
    lead += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  Tensor result = make_output(std::move(shape), std::move(out), inputs);
  record(result, [inputs](std::span<const double> g) {
    std::size_t offset = 0;
    for (const Tensor& p : inputs) {
      accumulate_grad(p, g.subspan(offset, p.numel()));
      offset += p.numel();
    }
  });
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  Tensor result = make_output(s, std::move(out), {x});
  record(result, [x, result_impl = std::weak_ptr(result.impl()), outer, inner, n](std::span<const double> g) {
    const auto y = result_impl.lock()->data;
    std::vector<double> gx(y.size());
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] = y[k] * (g[k] - dot);
        }
      }
    }
    accumulate_grad(x, gx);
  });
  return result;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  if (x.rank() == 0) throw DimensionError("layernorm: scalar input");
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layernorm: gain/bias must have shape [" + std::to_string(n) + "]");
  }
  const std::size_t rows = x.numel() / n;
  const auto in = x.data(), gw = gain.data(), bw = bias.data();
  std::vector<double> xhat(in.size()), inv_std(rows), out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[r * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = r * n + j;
      xhat[k] = (in[k] - mu) * inv_std[r];
      out[k] = gw[j] * xhat[k] + bw[j];
    }
  }
  Tensor result = make_output(x.shape(), std::move(out), {x, gain, bias});
  record(result, [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](
                     std::span<const double> g) {
    const auto gw = gain.data();
    if (x.requires_grad()) {
      std::vector<double> gx(rows * n);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = g[r * n + j] * gw[j];
          s1 += d;
          s2 += d * xhat[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = r * n + j;
          const double d = g[k] * gw[j];
          gx[k] = inv_std[r] * (d - s1 / static_cast<double>(n) - xhat[k] * s2 / static_cast<double>(n));
        }
      }
      accumulate_grad(x, gx);
    }
    if (gain.requires_grad() || bias.requires_grad()) {
      std::vector<double> gg(n, 0.0), gb(n, 0.0);
      for (std::size_t k = 0; k < rows * n; ++k) {
        gg[k % n] += g[k] * xhat[k];
        gb[k % n] += g[k];
      }
      accumulate_grad(gain, gg);
      accumulate_grad(bias, gb);
    }
  });
  return result;
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
  }
  Tensor result = make_output(x.shape(), std::move(out), {x});
  record(result, [x](std::span<const double> g) {
    const auto in = x.data();
    std::vector<double> gx(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      const double t = std::tanh(c * (v + a * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      gx[i] = g[i] * d;
    }
    accumulate_grad(x, gx);
  });
  return result;
}

Tensor relu(const Tensor& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  Tensor result = make_output(x.shape(), std::move(out), {x});
  record(result, [x](std::span<const double> g) {
    const auto in = x.data();
    std::vector<double> gx(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] = in[i] > 0.0 ? g[i] : 0.0;
    accumulate_grad(x, gx);
  });
  return result;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = u(rng) < p ? 0.0 : keep_scale;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
  Tensor result = make_output(x.shape(), std::move(out), {x});
  record(result, [x, mask = std::move(mask)](std::span<const double> g) {
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * mask[i];
    accumulate_grad(x, gx);
  });
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw DimensionError("cross_entropy: label count differs from batch size");
  for (std::size_t lbl : labels) {
    if (lbl >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(lbl) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* zr = z.data() + b * classes;
    const double mx = *std::max_element(zr, zr + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(zr[c] - mx);
    const double lse = mx + std::log(s);
    loss += lse - zr[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(zr[c] - lse);
  }
  loss /= static_cast<double>(batch);
  Tensor result = make_output({}, {loss}, {logits});
  std::vector<std::size_t> lbls(labels.begin(), labels.end());
  record(result, [logits, probs = std::move(probs), lbls = std::move(lbls), batch, classes](std::span<const double> g) {
    std::vector<double> gz(probs);
    for (std::size_t b = 0; b < batch; ++b) gz[b * classes + lbls[b]] -= 1.0;
    const double f = g[0] / static_cast<double>(batch);
    for (double& v : gz) v *= f;
    accumulate_grad(logits, gz);
  });
  return result;
}

Tensor pad2d(const Tensor& input, std::size_t padding, PadMode mode) {
  require_rank(input, 3, "pad2d");
  if (padding == 0) return input;
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
  std::vector<std::size_t> index(c * hp * wp);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < hp; ++y) {
      for (std::size_t x = 0; x < wp; ++x) {
        const auto sy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(padding);
        const auto sx = static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(padding);
        std::size_t src = kNoSource;
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                            sx < static_cast<std::ptrdiff_t>(w);
        if (inside) {
          src = (ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx);
        } else if (mode == PadMode::Replicate) {
          const auto cy = std::clamp<std::ptrdiff_t>(sy, 0, static_cast<std::ptrdiff_t>(h) - 1);
          const auto cx = std::clamp<std::ptrdiff_t>(sx, 0, static_cast<std::ptrdiff_t>(w) - 1);
          src = (ch * h + static_cast<std::size_t>(cy)) * w + static_cast<std::size_t>(cx);
        }
        index[(ch * hp + y) * wp + x] = src;
      }
    }
  }
  return gather_impl(input, {c, hp, wp}, std::move(index));
}

std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ParameterError("stride must be positive");
  if (k > in + 2 * padding) {
    throw DimensionError("kernel size " + std::to_string(k) + " exceeds padded input " +
                         std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - k) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding, PadMode mode) {
  require_rank(input, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const std::size_t cin = input.dim(0);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin || kernel.dim(3) != k) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  const std::size_t ho = conv_output_size(input.dim(1), k, stride, padding);
  const std::size_t wo = conv_output_size(input.dim(2), k, stride, padding);
  const Tensor padded = pad2d(input, padding, mode);
  const std::size_t hp = padded.dim(1), wp = padded.dim(2);

  const auto x = padded.data(), kw = kernel.data();
  std::vector<double> out(cout * ho * wo, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    double* orow = out.data() + o * ho * wo;
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double wv = kw[((o * cin + c) * k + i) * k + j];
          if (wv == 0.0) continue;
          for (std::size_t y = 0; y < ho; ++y) {
            const double* xrow = x.data() + (c * hp + y * stride + i) * wp + j;
            double* op = orow + y * wo;
            for (std::size_t xx = 0; xx < wo; ++xx) op[xx] += wv * xrow[xx * stride];
          }
        }
      }
    }
  }
  Tensor result = make_output({cout, ho, wo}, std::move(out), {padded, kernel});
  record(result, [padded, kernel, cin, cout, k, ho, wo, hp, wp, stride](std::span<const double> g) {
    const auto x = padded.data(), kw = kernel.data();
    if (padded.requires_grad()) {
      std::vector<double> gx(x.size(), 0.0);
      for (std::size_t o = 0; o < cout; ++o) {
        const double* grow = g.data() + o * ho * wo;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              const double wv = kw[((o * cin + c) * k + i) * k + j];
              if (wv == 0.0) continue;
              for (std::size_t y = 0; y < ho; ++y) {
                double* xrow = gx.data() + (c * hp + y * stride + i) * wp + j;
                const double* gp = grow + y * wo;
                for (std::size_t xx = 0; xx < wo; ++xx) xrow[xx * stride] += wv * gp[xx];
              }
            }
          }
        }
      }
      accumulate_grad(padded, gx);
    }
    if (kernel.requires_grad()) {
      std::vector<double> gk(kw.size(), 0.0);
      for (std::size_t o = 0; o < cout; ++o) {
        const double* grow = g.data() + o * ho * wo;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              double s = 0.0;
              for (std::size_t y = 0; y < ho; ++y) {
                const double* xrow = x.data() + (c * hp + y * stride + i) * wp + j;
                const double* gp = grow + y * wo;
                for (std::size_t xx = 0; xx < wo; ++xx) s += xrow[xx * stride] * gp[xx];
              }
              gk[((o * cin + c) * k + i) * k + j] = s;
            }
          }
        }
      }
      accumulate_grad(kernel, gk);
    }
  });
  return result;
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  require_rank(x, 3, "channel_norm");
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("channel_norm: gain/bias must have shape [" + std::to_string(c) + "]");
  }
  const auto in = x.data(), gw = gain.data(), bw = bias.data();
  std::vector<double> xhat(in.size()), inv_std(c), out(in.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[ch * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[ch * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = ch * n + j;
      xhat[k] = (in[k] - mu) * inv_std[ch];
      out[k] = gw[ch] * xhat[k] + bw[ch];
    }
  }
  Tensor result = make_output(x.shape(), std::move(out), {x, gain, bias});
  record(result,
         [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), c, n](std::span<const double> g) {
           const auto gw = gain.data();
           const double nn = static_cast<double>(n);
           if (x.requires_grad()) {
             std::vector<double> gx(c * n);
             for (std::size_t ch = 0; ch < c; ++ch) {
               double s1 = 0.0, s2 = 0.0;
               for (std::size_t j = 0; j < n; ++j) {
                 s1 += g[ch * n + j];
                 s2 += g[ch * n + j] * xhat[ch * n + j];
               }
               for (std::size_t j = 0; j < n; ++j) {
                 const std::size_t k = ch * n + j;
                 gx[k] = gw[ch] * inv_std[ch] * (g[k] - s1 / nn - xhat[k] * s2 / nn);
               }
             }
             accumulate_grad(x, gx);
           }
           if (gain.requires_grad() || bias.requires_grad()) {
             std::vector<double> gg(c, 0.0), gb(c, 0.0);
             for (std::size_t k = 0; k < c * n; ++k) {
               gg[k / n] += g[k] * xhat[k];
               gb[k / n] += g[k];
             }
             accumulate_grad(gain, gg);
             accumulate_grad(bias, gb);
           }
         });
  return result;
}

AdamState AdamState::like(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opts) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].shape() || state.v[i].shape() != params[i].shape()) {
      throw DimensionError("adam_step: state shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const bool has = params[i].has_grad();
    const std::span<const double> g = has ? params[i].grad() : std::span<const double>{};
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * gj;
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
  }
}

void init_trunc_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : t.mutable_data()) {
    double z = nd(rng);
    while (std::abs(z) > 2.0) z = nd(rng);
    v = z * stddev;
  }
}

void init_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (double& v : t.mutable_data()) v = nd(rng);
}

}  // namespace pdcvit
