#include "stvod/attention.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stvod {
namespace {

// Four-neighbor bilinear stencil around a pixel-space point. Corner order is
// (x0,y0), (x1,y0), (x0,y1), (x1,y1); invalid corners lie outside the map.
struct Stencil {
  long index[4];
  bool valid[4];
  double fx, fy;

  Stencil(double px, double py, std::size_t height, std::size_t width) {
    const double x0f = std::floor(px);
    const double y0f = std::floor(py);
    fx = px - x0f;
    fy = py - y0f;
    const long x0 = static_cast<long>(x0f);
    const long y0 = static_cast<long>(y0f);
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int i = 0; i < 4; ++i) {
      valid[i] = xs[i] >= 0 && ys[i] >= 0 && xs[i] < static_cast<long>(width) &&
                 ys[i] < static_cast<long>(height);
      index[i] = valid[i] ? ys[i] * static_cast<long>(width) + xs[i] : -1;
    }
  }

  double coef(int i) const {
    switch (i) {
      case 0: return (1 - fx) * (1 - fy);
      case 1: return fx * (1 - fy);
      case 2: return (1 - fx) * fy;
      default: return fx * fy;
    }
  }
};

bool far_outside(double px, double py, std::size_t height, std::size_t width) {
  return !(px > -1.0 && py > -1.0 && px < static_cast<double>(width) &&
           py < static_cast<double>(height)) ||
         !std::isfinite(px) || !std::isfinite(py);
}

}  // namespace

ReferencePoint ReferencePoint::checked(double x, double y) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw std::invalid_argument("reference point outside [0,1]^2");
  }
  return ReferencePoint{x, y};
}

Tensor sine_positional_embedding(std::size_t height, std::size_t width, std::size_t channels,
                                 double temperature) {
  if (channels == 0 || channels % 4 != 0) {
    throw ShapeError("positional embedding needs channels divisible by 4, got " +
                     std::to_string(channels));
  }
  const std::size_t half = channels / 2;
  Tensor pos(Shape{channels, height, width});
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::pow(temperature, static_cast<double>(2 * (j / 2)) /
                                                  static_cast<double>(half));
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double ay = static_cast<double>(y) / static_cast<double>(height) * two_pi / freq;
        const double ax = static_cast<double>(x) / static_cast<double>(width) * two_pi / freq;
        pos.at(j, y, x) = (j % 2 == 0) ? std::sin(ay) : std::cos(ay);
        pos.at(half + j, y, x) = (j % 2 == 0) ? std::sin(ax) : std::cos(ax);
      }
    }
  }
  return pos;
}

Var to_tokens(const Var& map) {
  if (map.value().rank() != 3) throw ShapeError("to_tokens expects [C,H,W], got " +
                                                shape_to_string(map.shape()));
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  return transpose(reshape(map, Shape{c, hw}));
}

Var from_tokens(const Var& tokens, std::size_t height, std::size_t width) {
  if (tokens.value().rank() != 2 || tokens.dim(0) != height * width) {
    throw ShapeError("from_tokens: " + shape_to_string(tokens.shape()) + " is not [" +
                     std::to_string(height * width) + ",C]");
  }
  const std::size_t c = tokens.dim(1);
  return reshape(transpose(tokens), Shape{c, height, width});
}

Var bilinear_sample(const Var& map, const Var& point) {
  if (map.value().rank() != 3) {
    throw ShapeError("bilinear_sample expects [C,H,W], got " + shape_to_string(map.shape()));
  }
  if (point.value().size() != 2) {
    throw ShapeError("bilinear_sample expects a 2-vector point, got " +
                     shape_to_string(point.shape()));
  }
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2), hw = h * w;
  const double px = point.value()[0], py = point.value()[1];
  Tensor out(Shape{c});
  if (!far_outside(px, py, h, w)) {
    Stencil st(px, py, h, w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double v = 0.0;
      for (int i = 0; i < 4; ++i) {
        if (st.valid[i]) v += st.coef(i) * map.value()[ch * hw + st.index[i]];
      }
      out[ch] = v;
    }
  }
  return make_op("bilinear_sample", std::move(out), {map, point}, [c, h, w, hw](Node& self) {
    Node& m = *self.parents[0];
    Node& p = *self.parents[1];
    const double px = p.value[0], py = p.value[1];
    if (far_outside(px, py, h, w)) return;
    Stencil st(px, py, h, w);
    if (m.requires_grad) {
      Tensor& g = m.grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (int i = 0; i < 4; ++i) {
          if (st.valid[i]) g[ch * hw + st.index[i]] += st.coef(i) * self.grad[ch];
        }
      }
    }
    if (p.requires_grad) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v[4];
        for (int i = 0; i < 4; ++i) v[i] = st.valid[i] ? m.value[ch * hw + st.index[i]] : 0.0;
        gx += self.grad[ch] * ((1 - st.fy) * (v[1] - v[0]) + st.fy * (v[3] - v[2]));
        gy += self.grad[ch] * ((1 - st.fx) * (v[2] - v[0]) + st.fx * (v[3] - v[1]));
      }
      Tensor& g = p.grad_buffer();
      g[0] += gx;
      g[1] += gy;
    }
  });
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& prefix,
                                              std::size_t dim, std::size_t heads,
                                              std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " not divisible by head count " + std::to_string(heads));
  }
  MultiHeadAttention a;
  a.heads = heads;
  a.dim = dim;
  a.query_proj = store.add(prefix + ".query_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  a.key_proj = store.add(prefix + ".key_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  a.value_proj = store.add(prefix + ".value_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  a.out_proj = store.add(prefix + ".out_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  return a;
}

namespace {

void check_mha_inputs(const Var& queries, const Var& keys, const Var& values,
                      const MultiHeadAttention& p) {
  auto bad = [&](const Var& v) { return v.value().rank() != 2 || v.dim(1) != p.dim; };
  if (bad(queries) || bad(keys) || bad(values) || keys.dim(0) != values.dim(0)) {
    throw ShapeError("multi_head_attention: queries " + shape_to_string(queries.shape()) +
                     ", keys " + shape_to_string(keys.shape()) + ", values " +
                     shape_to_string(values.shape()) + " for dim " + std::to_string(p.dim));
  }
}

std::vector<Var> head_scores(const Var& queries, const Var& keys, const MultiHeadAttention& p) {
  const std::size_t cv = p.dim / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cv));
  Var qp = matmul(queries, p.query_proj);
  Var kp = matmul(keys, p.key_proj);
  std::vector<Var> out;
  for (std::size_t m = 0; m < p.heads; ++m) {
    Var qh = slice(qp, 1, m * cv, cv);
    Var kh = slice(kp, 1, m * cv, cv);
    out.push_back(softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1));
  }
  return out;
}

}  // namespace

Tensor MultiHeadAttention::weights(const Var& queries, const Var& keys) const {
  check_mha_inputs(queries, keys, keys, *this);
  NoGradGuard guard;
  auto per_head = head_scores(queries, keys, *this);
  const std::size_t nq = queries.dim(0), nk = keys.dim(0);
  Tensor out(Shape{heads, nq, nk});
  for (std::size_t m = 0; m < heads; ++m) {
    std::copy_n(per_head[m].value().ptr(), nq * nk, out.ptr() + m * nq * nk);
  }
  return out;
}

Var multi_head_attention(const Var& queries, const Var& keys, const Var& values,
                         const MultiHeadAttention& p) {
  check_mha_inputs(queries, keys, values, p);
  const std::size_t cv = p.dim / p.heads;
  auto weights = head_scores(queries, keys, p);
  Var vp = matmul(values, p.value_proj);
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t m = 0; m < p.heads; ++m) {
    heads.push_back(matmul(weights[m], slice(vp, 1, m * cv, cv)));
  }
  Var merged = p.heads == 1 ? heads[0] : concat(heads, 1);
  return matmul(merged, p.out_proj);
}

DeformableAttention DeformableAttention::create(ParameterStore& store, const std::string& prefix,
                                                std::size_t dim, std::size_t heads,
                                                std::size_t points, std::size_t frames,
                                                std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("deformable attention dim " + std::to_string(dim) +
                                " not divisible by head count " + std::to_string(heads));
  }
  if (points == 0 || frames == 0) {
    throw std::invalid_argument("deformable attention needs at least one point and one frame");
  }
  DeformableAttention a;
  a.heads = heads;
  a.points = points;
  a.frames = frames;
  a.dim = dim;
  const std::size_t total = 3 * heads * frames * points;
  a.value_proj = store.add(prefix + ".value_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  a.sampling_proj = store.add(prefix + ".sampling_proj", Tensor(Shape{dim, total}, 0.0));

  // Head m starts on a ring: direction theta_m, radius k+1 pixels for point k.
  Tensor bias(Shape{total}, 0.0);
  for (std::size_t m = 0; m < heads; ++m) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(m) /
                         static_cast<double>(heads);
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (std::size_t l = 0; l < frames; ++l) {
      for (std::size_t k = 0; k < points; ++k) {
        const std::size_t s = (m * frames + l) * points + k;
        bias[2 * s] = dx * static_cast<double>(k + 1);
        bias[2 * s + 1] = dy * static_cast<double>(k + 1);
      }
    }
  }
  a.sampling_bias = store.add(prefix + ".sampling_bias", std::move(bias));
  a.out_proj = store.add(prefix + ".out_proj", xavier_uniform({dim, dim}, dim, dim, rng));
  return a;
}

Var reference_grid(const Var& references, std::size_t heads, std::size_t points,
                   std::span<const std::pair<std::size_t, std::size_t>> sizes) {
  if (references.value().rank() != 2 || references.dim(1) != 2) {
    throw ShapeError("reference_grid expects [N,2], got " + shape_to_string(references.shape()));
  }
  const std::size_t nq = references.dim(0), frames = sizes.size();
  const std::size_t per_query = heads * frames * points * 2;
  Tensor out(Shape{nq, per_query});
  std::vector<std::pair<double, double>> scale_xy;
  for (auto [h, w] : sizes) scale_xy.emplace_back(static_cast<double>(w), static_cast<double>(h));
  for (std::size_t q = 0; q < nq; ++q) {
    const double rx = references.value()[q * 2], ry = references.value()[q * 2 + 1];
    for (std::size_t m = 0; m < heads; ++m) {
      for (std::size_t l = 0; l < frames; ++l) {
        for (std::size_t k = 0; k < points; ++k) {
          const std::size_t s = (m * frames + l) * points + k;
          out[q * per_query + 2 * s] = rx * scale_xy[l].first - 0.5;
          out[q * per_query + 2 * s + 1] = ry * scale_xy[l].second - 0.5;
        }
      }
    }
  }
  return make_op("reference_grid", std::move(out), {references},
                 [nq, heads, frames, points, per_query, scale_xy](Node& self) {
                   Node& r = *self.parents[0];
                   if (!r.requires_grad) return;
                   Tensor& g = r.grad_buffer();
                   for (std::size_t q = 0; q < nq; ++q) {
                     for (std::size_t m = 0; m < heads; ++m) {
                       for (std::size_t l = 0; l < frames; ++l) {
                         for (std::size_t k = 0; k < points; ++k) {
                           const std::size_t s = (m * frames + l) * points + k;
                           g[q * 2] += self.grad[q * per_query + 2 * s] * scale_xy[l].first;
                           g[q * 2 + 1] +=
                               self.grad[q * per_query + 2 * s + 1] * scale_xy[l].second;
                         }
                       }
                     }
                   }
                 });
}

Var deformable_gather(std::span<const FeatureTokens> values, const Var& locations,
                      const Var& weights, std::size_t heads, std::size_t points) {
  const std::size_t frames = values.size();
  if (frames == 0) throw ShapeError("deformable_gather: no feature maps");
  const std::size_t c = values[0].tokens.dim(1);
  if (c % heads != 0) throw ShapeError("deformable_gather: channels not divisible by heads");
  const std::size_t cv = c / heads;
  const std::size_t nq = weights.dim(0);
  const std::size_t samples = heads * frames * points;
  if (weights.shape() != Shape{nq, samples} || locations.shape() != Shape{nq, 2 * samples}) {
    throw ShapeError("deformable_gather: weights " + shape_to_string(weights.shape()) +
                     ", locations " + shape_to_string(locations.shape()) + " for " +
                     std::to_string(samples) + " samples per query");
  }
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& v : values) {
    if (v.tokens.value().rank() != 2 || v.tokens.dim(1) != c ||
        v.tokens.dim(0) != v.height * v.width) {
      throw ShapeError("deformable_gather: feature map " + shape_to_string(v.tokens.shape()) +
                       " inconsistent with " + std::to_string(v.height) + "x" +
                       std::to_string(v.width) + "x" + std::to_string(c));
    }
    sizes.emplace_back(v.height, v.width);
  }

  Tensor out(Shape{nq, c}, 0.0);
  const auto& loc = locations.value();
  const auto& wt = weights.value();
  for (std::size_t q = 0; q < nq; ++q) {
    double* o = out.ptr() + q * c;
    for (std::size_t m = 0; m < heads; ++m) {
      for (std::size_t l = 0; l < frames; ++l) {
        const auto [h, w] = sizes[l];
        const double* v = values[l].tokens.value().ptr();
        for (std::size_t k = 0; k < points; ++k) {
          const std::size_t s = (m * frames + l) * points + k;
          const double px = loc[q * 2 * samples + 2 * s];
          const double py = loc[q * 2 * samples + 2 * s + 1];
          if (far_outside(px, py, h, w)) continue;
          const double a = wt[q * samples + s];
          Stencil st(px, py, h, w);
          for (int i = 0; i < 4; ++i) {
            if (!st.valid[i]) continue;
            const double coef = a * st.coef(i);
            const double* row = v + st.index[i] * static_cast<long>(c) + m * cv;
            for (std::size_t j = 0; j < cv; ++j) o[m * cv + j] += coef * row[j];
          }
        }
      }
    }
  }

  std::vector<Var> parents;
  for (const auto& v : values) parents.push_back(v.tokens);
  parents.push_back(locations);
  parents.push_back(weights);
  return make_op(
      "deformable_gather", std::move(out), std::move(parents),
      [sizes, heads, points, frames, c, cv, nq, samples](Node& self) {
        Node& locn = *self.parents[frames];
        Node& wtn = *self.parents[frames + 1];
        const auto& loc = locn.value;
        const auto& wt = wtn.value;
        Tensor* dloc = locn.requires_grad ? &locn.grad_buffer() : nullptr;
        Tensor* dwt = wtn.requires_grad ? &wtn.grad_buffer() : nullptr;
        for (std::size_t q = 0; q < nq; ++q) {
          const double* go = self.grad.ptr() + q * c;
          for (std::size_t m = 0; m < heads; ++m) {
            for (std::size_t l = 0; l < frames; ++l) {
              const auto [h, w] = sizes[l];
              Node& vn = *self.parents[l];
              const double* v = vn.value.ptr();
              double* dv = vn.requires_grad ? vn.grad_buffer().ptr() : nullptr;
              for (std::size_t k = 0; k < points; ++k) {
                const std::size_t s = (m * frames + l) * points + k;
                const double px = loc[q * 2 * samples + 2 * s];
                const double py = loc[q * 2 * samples + 2 * s + 1];
                if (far_outside(px, py, h, w)) continue;
                const double a = wt[q * samples + s];
                Stencil st(px, py, h, w);
                double dot[4] = {0, 0, 0, 0};
                for (int i = 0; i < 4; ++i) {
                  if (!st.valid[i]) continue;
                  const long off = st.index[i] * static_cast<long>(c) + static_cast<long>(m * cv);
                  const double* row = v + off;
                  double acc = 0.0;
                  for (std::size_t j = 0; j < cv; ++j) acc += go[m * cv + j] * row[j];
                  dot[i] = acc;
                  if (dv) {
                    const double coef = a * st.coef(i);
                    double* drow = dv + off;
                    for (std::size_t j = 0; j < cv; ++j) drow[j] += coef * go[m * cv + j];
                  }
                }
                if (dwt) {
                  double sampled = 0.0;
                  for (int i = 0; i < 4; ++i) sampled += st.coef(i) * dot[i];
                  (*dwt)[q * samples + s] += sampled;
                }
                if (dloc) {
                  const double gx = (1 - st.fy) * (dot[1] - dot[0]) + st.fy * (dot[3] - dot[2]);
                  const double gy = (1 - st.fx) * (dot[2] - dot[0]) + st.fx * (dot[3] - dot[1]);
                  (*dloc)[q * 2 * samples + 2 * s] += a * gx;
                  (*dloc)[q * 2 * samples + 2 * s + 1] += a * gy;
                }
              }
            }
          }
        }
      });
}

SamplingPlan deformable_sampling_plan(const Var& queries, const Var& references,
                                      std::span<const FeatureTokens> maps,
                                      const DeformableAttention& p) {
  if (maps.size() != p.frames) {
    throw ShapeError("deformable attention configured for " + std::to_string(p.frames) +
                     " maps, got " + std::to_string(maps.size()));
  }
  if (queries.value().rank() != 2 || queries.dim(1) != p.dim) {
    throw ShapeError("deformable attention queries " + shape_to_string(queries.shape()) +
                     " do not match dim " + std::to_string(p.dim));
  }
  if (references.value().rank() != 2 || references.dim(0) != queries.dim(0) ||
      references.dim(1) != 2) {
    throw ShapeError("deformable attention references " + shape_to_string(references.shape()) +
                     " do not match queries " + shape_to_string(queries.shape()));
  }
  const std::size_t nq = queries.dim(0);
  Var proj = linear(queries, p.sampling_proj, p.sampling_bias);
  Var offsets = slice(proj, 1, 0, p.offset_channels());
  Var logits = slice(proj, 1, p.offset_channels(), p.logit_channels());
  Var weights = reshape(
      softmax(reshape(logits, Shape{nq * p.heads, p.samples_per_head()}), 1),
      Shape{nq, p.logit_channels()});
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& m : maps) sizes.emplace_back(m.height, m.width);
  Var grid = reference_grid(references, p.heads, p.points, sizes);
  return SamplingPlan{add(grid, offsets), weights};
}

Var temporal_deformable_attention(const Var& queries, const Var& references,
                                  std::span<const FeatureTokens> maps,
                                  const DeformableAttention& p) {
  if (maps.empty()) throw ShapeError("temporal deformable attention needs at least one map");
  for (const auto& m : maps) {
    if (m.tokens.value().rank() != 2 || m.tokens.dim(1) != p.dim) {
      throw ShapeError("feature map channels " + shape_to_string(m.tokens.shape()) +
                       " do not match attention dim " + std::to_string(p.dim));
    }
  }
  SamplingPlan plan = deformable_sampling_plan(queries, references, maps, p);
  std::vector<FeatureTokens> projected;
  projected.reserve(maps.size());
  for (const auto& m : maps) {
    projected.push_back(FeatureTokens{matmul(m.tokens, p.value_proj), m.height, m.width});
  }
  Var gathered = deformable_gather(projected, plan.locations, plan.weights, p.heads, p.points);
  return matmul(gathered, p.out_proj);
}

Var deformable_attention(const Var& queries, const Var& references, const FeatureTokens& map,
                         const DeformableAttention& p) {
  if (p.frames != 1) {
    throw std::invalid_argument("deformable_attention needs a single-frame parameter set");
  }
  return temporal_deformable_attention(queries, references, std::span(&map, 1), p);
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  return LayerNorm{store.add(prefix + ".gain", Tensor(Shape{dim}, 1.0)),
                   store.add(prefix + ".bias", Tensor(Shape{dim}, 0.0))};
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& prefix,
                                std::size_t dim, std::size_t hidden, std::mt19937_64& rng) {
  FeedForward f;
  f.w1 = store.add(prefix + ".w1", xavier_uniform({dim, hidden}, dim, hidden, rng));
  f.b1 = store.add(prefix + ".b1", Tensor(Shape{hidden}, 0.0));
  f.w2 = store.add(prefix + ".w2", xavier_uniform({hidden, dim}, hidden, dim, rng));
  f.b2 = store.add(prefix + ".b2", Tensor(Shape{dim}, 0.0));
  f.norm = LayerNorm::create(store, prefix + ".norm", dim);
  return f;
}

Var transformer_ffn(const Var& x, const FeedForward& p) {
  Var hidden = relu(linear(x, p.w1, p.b1));
  return p.norm(add(x, linear(hidden, p.w2, p.b2)));
}

}  // namespace stvod
