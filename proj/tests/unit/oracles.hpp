#pragma once

// Independent loop-based reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <vector>

#include "stvod/attention.hpp"
#include "test_util.hpp"

namespace stvod::testing {

// Independent bilinear read of a token map [H*W, C] at pixel point (x, y),
// zero outside.
inline std::vector<double> oracle_sample(const Tensor& tokens, std::size_t h, std::size_t w, double x,
                                  double y) {
  const std::size_t c = tokens.dim(1);
  std::vector<double> out(c, 0.0);
  const double fx = std::floor(x), fy = std::floor(y);
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const double cx = fx + dx, cy = fy + dy;
      if (cx < 0 || cy < 0 || cx >= static_cast<double>(w) || cy >= static_cast<double>(h)) continue;
      const double wgt = (1.0 - std::abs(x - cx)) * (1.0 - std::abs(y - cy));
      const std::size_t row = static_cast<std::size_t>(cy) * w + static_cast<std::size_t>(cx);
      for (std::size_t j = 0; j < c; ++j) out[j] += wgt * tokens.at(row, j);
    }
  }
  return out;
}

inline Tensor project(const Tensor& x, const Tensor& w) {
  Tensor out(Shape{x.dim(0), w.dim(1)}, 0.0);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t k = 0; k < x.dim(1); ++k)
      for (std::size_t j = 0; j < w.dim(1); ++j) out.at(i, j) += x.at(i, k) * w.at(k, j);
  return out;
}

// Direct summation over heads, frames and points.
inline Tensor oracle_deformable(const Tensor& queries, const Tensor& refs, const std::vector<Tensor>& maps,
                         std::size_t h, std::size_t w, const DeformableAttention& p) {
  const std::size_t nq = queries.dim(0), c = p.dim, cv = c / p.heads;
  const std::size_t frames = maps.size(), pts = p.points, mlk = p.heads * frames * pts;
  const Tensor& sp = p.sampling_proj.value();
  const Tensor& sb = p.sampling_bias.value();
  std::vector<Tensor> values;
  for (const auto& m : maps) values.push_back(project(m, p.value_proj.value()));
  Tensor merged(Shape{nq, c}, 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<double> proj(3 * mlk);
    for (std::size_t j = 0; j < 3 * mlk; ++j) {
      double s = sb[j];
      for (std::size_t k = 0; k < c; ++k) s += queries.at(q, k) * sp.at(k, j);
      proj[j] = s;
    }
    for (std::size_t m = 0; m < p.heads; ++m) {
      double mx = -1e300;
      for (std::size_t s = 0; s < frames * pts; ++s) mx = std::max(mx, proj[2 * mlk + m * frames * pts + s]);
      double z = 0.0;
      for (std::size_t s = 0; s < frames * pts; ++s) z += std::exp(proj[2 * mlk + m * frames * pts + s] - mx);
      for (std::size_t l = 0; l < frames; ++l) {
        for (std::size_t k = 0; k < pts; ++k) {
          const std::size_t s = (m * frames + l) * pts + k;
          const double a = std::exp(proj[2 * mlk + s] - mx) / z;
          const double x = refs.at(q, 0) * static_cast<double>(w) - 0.5 + proj[2 * s];
          const double y = refs.at(q, 1) * static_cast<double>(h) - 0.5 + proj[2 * s + 1];
          auto v = oracle_sample(values[l], h, w, x, y);
          for (std::size_t j = 0; j < cv; ++j) merged.at(q, m * cv + j) += a * v[m * cv + j];
        }
      }
    }
  }
  return project(merged, p.out_proj.value());
}

inline DeformableAttention random_deformable(ParameterStore& store, std::size_t dim, std::size_t heads,
                                      std::size_t points, std::size_t frames, std::mt19937_64& rng,
                                      double offset_scale = 0.3) {
  auto p = DeformableAttention::create(store, "attn", dim, heads, points, frames, rng);
  p.sampling_proj.mutable_value() = random_tensor(p.sampling_proj.shape(), rng, -offset_scale, offset_scale);
  p.sampling_bias.mutable_value() = random_tensor(p.sampling_bias.shape(), rng, -1.0, 1.0);
  return p;
}

inline FeatureTokens tokens_of(const Tensor& t, std::size_t h, std::size_t w) {
  return FeatureTokens{Var::constant(t), h, w};
}


inline Tensor oracle_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                                double eps = 1e-5) {
  Tensor out(x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.at(r, j);
    mean /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) var += (x.at(r, j) - mean) * (x.at(r, j) - mean);
    var /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) {
      out.at(r, j) = (x.at(r, j) - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
    }
  }
  return out;
}

inline Tensor oracle_add(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Tensor oracle_ffn(const Tensor& x, const FeedForward& f) {
  Tensor h = project(x, f.w1.value());
  for (std::size_t r = 0; r < h.dim(0); ++r)
    for (std::size_t j = 0; j < h.dim(1); ++j) h.at(r, j) = std::max(0.0, h.at(r, j) + f.b1.value()[j]);
  Tensor y = project(h, f.w2.value());
  for (std::size_t r = 0; r < y.dim(0); ++r)
    for (std::size_t j = 0; j < y.dim(1); ++j) y.at(r, j) += f.b2.value()[j] + x.at(r, j);
  return oracle_layer_norm(y, f.norm.gain.value(), f.norm.bias.value());
}

/// Multi-head attention by direct summation over heads and keys.
inline Tensor oracle_mha(const Tensor& z, const Tensor& keys, const Tensor& values,
                         const MultiHeadAttention& p) {
  const std::size_t c = p.dim, cv = c / p.heads, nq = z.dim(0), nk = keys.dim(0);
  Tensor qp = project(z, p.query_proj.value()), kp = project(keys, p.key_proj.value());
  Tensor vp = project(values, p.value_proj.value());
  Tensor merged(Shape{nq, c}, 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t m = 0; m < p.heads; ++m) {
      std::vector<double> logit(nk);
      for (std::size_t k = 0; k < nk; ++k) {
        double s = 0.0;
        for (std::size_t j = m * cv; j < (m + 1) * cv; ++j) s += qp.at(q, j) * kp.at(k, j);
        logit[k] = s / std::sqrt(static_cast<double>(cv));
      }
      const double mx = *std::max_element(logit.begin(), logit.end());
      double zsum = 0.0;
      for (auto& l : logit) zsum += (l = std::exp(l - mx));
      for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t j = m * cv; j < (m + 1) * cv; ++j) merged.at(q, j) += logit[k] / zsum * vp.at(k, j);
    }
  }
  return project(merged, p.out_proj.value());
}

}  // namespace stvod::testing
