#pragma once

// Straight nested-loop reference implementations used as test oracles.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "can/rng.hpp"
#include "can/tensor.hpp"

namespace can::oracle {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                     std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y({n, co, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd))
                  continue;
                acc += x.at(s, c, r, q) * w.at(o, c, u, v);
              }
          y.at(s, o, i, j) = acc;
        }
  return y;
}

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  Tensor y({n, k});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < k; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < d; ++i) acc += w[o * d + i] * x[s * d + i];
      y[s * k + o] = acc;
    }
  return y;
}

inline Tensor max_pool(const Tensor& x, std::size_t k, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t oh = (x.dim(2) - k) / stride + 1, ow = (x.dim(3) - k) / stride + 1;
  Tensor y({n, c, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double m = -INFINITY;
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              m = std::max(m, x.at(s, ch, i * stride + u, j * stride + v));
          y.at(s, ch, i, j) = m;
        }
  return y;
}

// Corner-aligned bilinear sampling of an (N, C, H, W) tensor.
inline Tensor resize_bilinear(const Tensor& x, std::size_t oh, std::size_t ow) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double fy = oh == 1 ? 0.0 : double(i) * double(h - 1) / double(oh - 1);
          const double fx = ow == 1 ? 0.0 : double(j) * double(w - 1) / double(ow - 1);
          const std::size_t y0 = std::min<std::size_t>(std::floor(fy), h - 1);
          const std::size_t x0 = std::min<std::size_t>(std::floor(fx), w - 1);
          const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double dy = fy - double(y0), dx = fx - double(x0);
          y.at(s, ch, i, j) = (1 - dy) * (1 - dx) * x.at(s, ch, y0, x0) +
                              (1 - dy) * dx * x.at(s, ch, y0, x1) +
                              dy * (1 - dx) * x.at(s, ch, y1, x0) + dy * dx * x.at(s, ch, y1, x1);
        }
  return y;
}

// All-pairs AUROC with ties worth one half, in exact integer halves.
inline double auroc_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg)++;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return double(twice) / (2.0 * double(pos) * double(neg));
}

}  // namespace can::oracle
