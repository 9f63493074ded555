#include "can/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "can/errors.hpp"

namespace can {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Elementwise unary op where the backward rule only needs input x and output y.
template <typename Forward, typename Derivative>
Var unary(Var x, Forward forward, Derivative derivative) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return x.graph->record(std::move(out), {x}, [x, derivative](Graph& g, int self) {
    const Tensor& in = g.value(x);
    const Tensor& y = g.value(self);
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * derivative(in[i], y[i]);
  });
}

// Per-axis taps for corner-aligned bilinear sampling.
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t source, std::size_t target) {
  std::vector<Tap> taps(target);
  for (std::size_t t = 0; t < target; ++t) {
    const double coord =
        target == 1 ? 0.0
                    : static_cast<double>(t) * static_cast<double>(source - 1) /
                          static_cast<double>(target - 1);
    auto lo = static_cast<std::size_t>(std::floor(coord));
    lo = std::min(lo, source - 1);
    const std::size_t hi = std::min(lo + 1, source - 1);
    taps[t] = {lo, hi, coord - static_cast<double>(lo)};
  }
  return taps;
}

void bilinear_forward(std::span<const double> src, std::size_t planes, std::size_t sh,
                      std::size_t sw, std::span<double> dst, const std::vector<Tap>& ty,
                      const std::vector<Tap>& tx) {
  const std::size_t th = ty.size(), tw = tx.size();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* s = src.data() + p * sh * sw;
    double* d = dst.data() + p * th * tw;
    for (std::size_t y = 0; y < th; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < tw; ++x) {
        const Tap& b = tx[x];
        const double top = (1 - b.frac) * s[a.lo * sw + b.lo] + b.frac * s[a.lo * sw + b.hi];
        const double bottom = (1 - b.frac) * s[a.hi * sw + b.lo] + b.frac * s[a.hi * sw + b.hi];
        d[y * tw + x] = (1 - a.frac) * top + a.frac * bottom;
      }
    }
  }
}

}  // namespace

ConvLayer make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                    std::size_t stride, std::size_t padding, Rng& rng) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
    throw ConfigError("conv layer extents and stride must be positive");
  }
  ConvLayer layer;
  layer.kernel = Tensor({out_channels, in_channels, kernel, kernel});
  layer.bias = Tensor({out_channels});
  layer.stride = stride;
  layer.padding = padding;
  const double bound = std::sqrt(6.0 / static_cast<double>(in_channels * kernel * kernel));
  for (double& w : layer.kernel.values()) w = rng.uniform(-bound, bound);
  layer.kernel.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("dense layer extents must be positive");
  DenseLayer layer;
  layer.weight = Tensor({out_dim, in_dim});
  layer.bias = Tensor({out_dim});
  const double bound = std::sqrt(3.0 / static_cast<double>(in_dim));
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel || (padded - kernel) % stride != 0) {
    throw ConfigError("window arithmetic not integral: extent " + std::to_string(in) +
                      ", kernel " + std::to_string(kernel) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  return (padded - kernel) / stride + 1;
}

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d kernel");
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) +
                     " channels, kernel expects " + std::to_string(w.dim(1)));
  }
  if (b.size() != w.dim(0)) throw ShapeError("conv2d: bias length must equal C_out");

  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  const std::size_t ho = window_extent(h, k, stride, padding);
  const std::size_t wo = window_extent(wd, k, stride, padding);
  const std::size_t rows = c_in * k * k, cols = ho * wo;

  // Batched im2col: row r = (c, i, j) tap, column n * cols + p.
  const std::size_t wide = n_batch * cols;
  auto columns = std::make_shared<std::vector<double>>(rows * wide, 0.0);
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        double* row = columns->data() + ((c * k + i) * k + j) * wide;
        for (std::size_t n = 0; n < n_batch; ++n) {
          double* dst = row + n * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* src = x.values().data() + ((n * c_in + c) * h + static_cast<std::size_t>(iy)) * wd;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              dst[oy * wo + ox] = src[ix];
            }
          }
        }
      }
    }
  }

  Tensor out({n_batch, c_out, ho, wo});
  {
    ConstMatrixMap weights(w.values().data(), c_out, rows);
    ConstMatrixMap col(columns->data(), rows, wide);
    const RowMatrix y = weights * col;
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t c = 0; c < c_out; ++c) {
        const double* src = y.data() + c * wide + n * cols;
        double* dst = out.values().data() + (n * c_out + c) * cols;
        for (std::size_t p = 0; p < cols; ++p) dst[p] = src[p] + b[c];
      }
    }
  }

  Graph& graph = *input.graph;
  return graph.record(
      std::move(out), {input, kernel, bias},
      [=](Graph& g, int self) {
        auto gy = g.grad(self);
        // Output gradient in (C_out, N * cols) layout.
        RowMatrix dy(c_out, wide);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t c = 0; c < c_out; ++c) {
            std::copy_n(gy.data() + (n * c_out + c) * cols, cols, dy.data() + c * wide + n * cols);
          }
        }
        if (g.requires_grad(kernel)) {
          MatrixMap gw(g.grad(kernel).data(), c_out, rows);
          ConstMatrixMap col(columns->data(), rows, wide);
          gw.noalias() += dy * col.transpose();
        }
        if (g.requires_grad(bias)) {
          auto gb = g.grad(bias);
          for (std::size_t c = 0; c < c_out; ++c) gb[c] += dy.row(c).sum();
        }
        if (g.requires_grad(input)) {
          const Tensor& wv = g.value(kernel);
          ConstMatrixMap weights(wv.values().data(), c_out, rows);
          const RowMatrix dcol = weights.transpose() * dy;
          auto gx = g.grad(input);
          for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t i = 0; i < k; ++i) {
              for (std::size_t j = 0; j < k; ++j) {
                const double* row = dcol.data() + ((c * k + i) * k + j) * wide;
                for (std::size_t n = 0; n < n_batch; ++n) {
                  const double* src = row + n * cols;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* dst = gx.data() + ((n * c_in + c) * h + static_cast<std::size_t>(iy)) * wd;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                                static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                      dst[ix] += src[oy * wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var conv2d(Var input, ConvLayer& layer) {
  Graph& g = *input.graph;
  return conv2d(input, g.param(layer.kernel), g.param(layer.bias), layer.stride, layer.padding);
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return unary(
      x,
      [lo, hi](double v) {
        double y;
        if (v >= 0.0) {
          y = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          y = e / (1.0 + e);
        }
        return std::clamp(y, lo, hi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var max_pool2d(Var x, std::size_t kernel, std::size_t stride) {
  const Tensor& in = x.value();
  require_rank(in, 4, "max_pool2d");
  if (kernel == 0) throw ConfigError("max_pool2d: kernel must be >= 1");
  const std::size_t n_batch = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t ho = window_extent(h, kernel, stride, 0);
  const std::size_t wo = window_extent(w, kernel, stride, 0);
  Tensor out({n_batch, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n_batch * c; ++plane) {
    const double* src = in.values().data() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
            if (src[idx] > src[best]) best = idx;
          }
        }
        out[o] = src[best];
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  return x.graph->record(std::move(out), {x}, [x, argmax](Graph& g, int self) {
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
  });
}

Var global_avg_pool(Var x) {
  const Tensor& in = x.value();
  require_rank(in, 4, "global_avg_pool");
  const std::size_t n_batch = in.dim(0), c = in.dim(1), area = in.dim(2) * in.dim(3);
  Tensor out({n_batch, c});
  for (std::size_t p = 0; p < n_batch * c; ++p) {
    const double* src = in.values().data() + p * area;
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += src[i];
    out[p] = s / static_cast<double>(area);
  }
  return x.graph->record(std::move(out), {x}, [x, area](Graph& g, int self) {
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < gy.size(); ++p) {
      for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += gy[p] * inv;
    }
  });
}

Var dense(Var x, Var weight, Var bias) {
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(in, 2, "dense");
  require_rank(w, 2, "dense weight");
  if (in.dim(1) != w.dim(1)) {
    throw ShapeError("dense: input dim " + std::to_string(in.dim(1)) +
                     " does not match weight in_dim " + std::to_string(w.dim(1)));
  }
  if (b.size() != w.dim(0)) throw ShapeError("dense: bias length must equal out_dim");
  const std::size_t n_batch = in.dim(0), d = in.dim(1), k = w.dim(0);
  Tensor out({n_batch, k});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < k; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < d; ++i) s += w[o * d + i] * in[n * d + i];
      out[n * k + o] = s;
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias}, [=](Graph& g, int self) {
    auto gy = g.grad(self);
    const Tensor& in = g.value(x);
    const Tensor& w = g.value(weight);
    if (g.requires_grad(x)) {
      auto gx = g.grad(x);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t o = 0; o < k; ++o)
          for (std::size_t i = 0; i < d; ++i) gx[n * d + i] += gy[n * k + o] * w[o * d + i];
    }
    if (g.requires_grad(weight)) {
      auto gw = g.grad(weight);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t o = 0; o < k; ++o)
          for (std::size_t i = 0; i < d; ++i) gw[o * d + i] += gy[n * k + o] * in[n * d + i];
    }
    if (g.requires_grad(bias)) {
      auto gb = g.grad(bias);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t o = 0; o < k; ++o) gb[o] += gy[n * k + o];
    }
  });
}

Var dense(Var x, DenseLayer& layer) {
  Graph& g = *x.graph;
  return dense(x, g.param(layer.weight), g.param(layer.bias));
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Tensor& in = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(in.size());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = in[i] * (*mask)[i];
  }
  return x.graph->record(std::move(out), {x}, [x, mask](Graph& g, int self) {
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    auto gy = g.grad(self);
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto gv = g.grad(v);
      for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    auto gy = g.grad(self);
    if (g.requires_grad(a)) {
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    auto gy = g.grad(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var maximum(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "maximum");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.value()[i], b.value()[i]);
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    auto gy = g.grad(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const bool need_a = g.requires_grad(a), need_b = g.requires_grad(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (need_a) g.grad(a)[i] += gy[i];
      } else if (need_b) {
        g.grad(b)[i] += gy[i];
      }
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return x.graph->record(std::move(out), {x}, [x, factor](Graph& g, int self) {
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no operands");
  const Tensor& first = parts.front().value();
  require_rank(first, 4, "concat_channels");
  const std::size_t n_batch = first.dim(0), area = first.dim(2) * first.dim(3);
  std::size_t channels = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    require_rank(t, 4, "concat_channels");
    if (t.dim(0) != n_batch || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw ShapeError("concat_channels: incompatible operand " + shape_str(t.shape()) +
                       " vs " + shape_str(first.shape()));
    }
    widths.push_back(t.dim(1));
    channels += t.dim(1);
  }
  Tensor out({n_batch, channels, first.dim(2), first.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor& t = parts[k].value();
      std::copy_n(t.values().data() + n * widths[k] * area, widths[k] * area,
                  out.values().data() + (n * channels + c0) * area);
      c0 += widths[k];
    }
  }
  return parts.front().graph->record(
      std::move(out), parts, [parts, widths, n_batch, channels, area](Graph& g, int self) {
        auto gy = g.grad(self);
        for (std::size_t n = 0; n < n_batch; ++n) {
          std::size_t c0 = 0;
          for (std::size_t k = 0; k < parts.size(); ++k) {
            if (g.requires_grad(parts[k])) {
              auto gp = g.grad(parts[k]);
              const double* src = gy.data() + (n * channels + c0) * area;
              double* dst = gp.data() + n * widths[k] * area;
              for (std::size_t i = 0; i < widths[k] * area; ++i) dst[i] += src[i];
            }
            c0 += widths[k];
          }
        }
      });
}

Var sum_channels(Var x) {
  const Tensor& in = x.value();
  require_rank(in, 4, "sum_channels");
  const std::size_t n_batch = in.dim(0), c = in.dim(1), area = in.dim(2) * in.dim(3);
  Tensor out({n_batch, 1, in.dim(2), in.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < area; ++i) out[n * area + i] += in[(n * c + ch) * area + i];
  return x.graph->record(std::move(out), {x}, [x, n_batch, c, area](Graph& g, int self) {
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < area; ++i) gx[(n * c + ch) * area + i] += gy[n * area + i];
  });
}

Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() < 2) throw ShapeError("resize_bilinear: need at least 2 axes");
  if (height == 0 || width == 0) throw ConfigError("resize_bilinear: target must be positive");
  const std::size_t sh = x.dim(x.rank() - 2), sw = x.dim(x.rank() - 1);
  const std::size_t planes = x.size() / (sh * sw);
  Shape shape = x.shape();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  Tensor out(shape);
  bilinear_forward(x.values(), planes, sh, sw, out.values(), bilinear_taps(sh, height),
                   bilinear_taps(sw, width));
  return out;
}

Var resize_bilinear(Var x, std::size_t height, std::size_t width) {
  const Tensor& in = x.value();
  if (in.rank() < 2) throw ShapeError("resize_bilinear: need at least 2 axes");
  const std::size_t sh = in.dim(in.rank() - 2), sw = in.dim(in.rank() - 1);
  if (sh == height && sw == width) return x;
  Tensor out = resize_bilinear(in, height, width);
  const std::size_t planes = in.size() / (sh * sw);
  return x.graph->record(std::move(out), {x}, [=](Graph& g, int self) {
    const auto ty = bilinear_taps(sh, height);
    const auto tx = bilinear_taps(sw, width);
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* d = gy.data() + p * height * width;
      double* s = gx.data() + p * sh * sw;
      for (std::size_t y = 0; y < height; ++y) {
        const Tap& a = ty[y];
        for (std::size_t xx = 0; xx < width; ++xx) {
          const Tap& b = tx[xx];
          const double v = d[y * width + xx];
          s[a.lo * sw + b.lo] += (1 - a.frac) * (1 - b.frac) * v;
          s[a.lo * sw + b.hi] += (1 - a.frac) * b.frac * v;
          s[a.hi * sw + b.lo] += a.frac * (1 - b.frac) * v;
          s[a.hi * sw + b.hi] += a.frac * b.frac * v;
        }
      }
    }
  });
}

Var normalize_by_max(Var x) {
  const Tensor& in = x.value();
  const std::size_t n_batch = in.dim(0), per = in.size() / n_batch;
  Tensor out(in.shape());
  auto arg = std::make_shared<std::vector<std::size_t>>(n_batch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* src = in.values().data() + n * per;
    std::size_t best = 0;
    for (std::size_t i = 1; i < per; ++i)
      if (src[i] > src[best]) best = i;
    (*arg)[n] = best;
    const double m = src[best];
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = m > 0.0 ? src[i] / m : src[i];
  }
  return x.graph->record(std::move(out), {x}, [x, arg, n_batch, per](Graph& g, int self) {
    const Tensor& in = g.value(x);
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t n = 0; n < n_batch; ++n) {
      const double* src = in.values().data() + n * per;
      const double m = src[(*arg)[n]];
      if (m > 0.0) {
        double dot = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
          gx[n * per + i] += gy[n * per + i] / m;
          dot += gy[n * per + i] * src[i];
        }
        gx[n * per + (*arg)[n]] -= dot / (m * m);
      } else {
        for (std::size_t i = 0; i < per; ++i) gx[n * per + i] += gy[n * per + i];
      }
    }
  });
}

Var l2_norm_per_sample(Var x) {
  const Tensor& in = x.value();
  const std::size_t n_batch = in.dim(0), per = in.size() / n_batch;
  Tensor out({n_batch});
  for (std::size_t n = 0; n < n_batch; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += in[n * per + i] * in[n * per + i];
    out[n] = std::sqrt(s);
  }
  return x.graph->record(std::move(out), {x}, [x, n_batch, per](Graph& g, int self) {
    const Tensor& in = g.value(x);
    const Tensor& norms = g.value(self);
    auto gy = g.grad(self);
    auto gx = g.grad(x);
    for (std::size_t n = 0; n < n_batch; ++n) {
      if (norms[n] == 0.0) continue;
      const double f = gy[n] / norms[n];
      for (std::size_t i = 0; i < per; ++i) gx[n * per + i] += f * in[n * per + i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->record(Tensor::scalar(s), {x}, [x](Graph& g, int self) {
    const double gy = g.grad(self)[0];
    for (double& v : g.grad(x)) v += gy;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

}  // namespace can
