#include "rat/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rat/init.hpp"

namespace rat {

std::string to_string(RelaxMode mode) {
  switch (mode) {
    case RelaxMode::Off: return "off";
    case RelaxMode::TrainOnly: return "train_only";
    case RelaxMode::Matched: return "matched";
  }
  return "off";
}

std::string to_string(WeightFn fn) {
  return fn == WeightFn::Softmax ? "softmax" : "smoothed_focus";
}

RelaxMode relax_mode_from_string(const std::string& s) {
  if (s == "off") return RelaxMode::Off;
  if (s == "train_only") return RelaxMode::TrainOnly;
  if (s == "matched") return RelaxMode::Matched;
  throw std::invalid_argument("unknown relaxation mode '" + s + "'");
}

WeightFn weight_fn_from_string(const std::string& s) {
  if (s == "softmax") return WeightFn::Softmax;
  if (s == "smoothed_focus") return WeightFn::SmoothedFocus;
  throw std::invalid_argument("unknown attention weight function '" + s + "'");
}

void RelaxationConfig::validate() const {
  if (!(gamma0 >= 0.0 && gamma0 <= 1.0))
    throw std::invalid_argument("relaxation gamma0 " + std::to_string(gamma0) +
                                " outside [0, 1]");
  if (!(sigma2 >= 0.0))
    throw std::invalid_argument("fuzzy variance must be non-negative");
  if (fuzzy && sigma2 <= 0.0)
    throw std::invalid_argument("fuzzy relaxation needs a positive variance");
}

double sample_fuzzy_gamma(const RelaxationConfig& cfg, RngStream& rng, Phase phase) {
  if (cfg.mode == RelaxMode::Off) return 0.0;
  if (phase == Phase::Eval) return cfg.mode == RelaxMode::Matched ? cfg.gamma0 : 0.0;
  if (!cfg.fuzzy || cfg.sigma2 == 0.0) return cfg.gamma0;
  const double g = rng.normal(cfg.gamma0, std::sqrt(cfg.sigma2));
  return std::clamp(g, 0.0, 1.0);
}

Tensor relax_weights(const Tensor& g, double gamma, std::size_t len) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("relax_weights: gamma " + std::to_string(gamma) +
                                " outside [0, 1]");
  if (g.dim() != 2 || len != g.cols())
    throw DimensionError("relax_weights: len " + std::to_string(len) +
                         " does not match the column count of " + shape_str(g.shape()));
  const double keep = 1.0 - gamma;
  const double floor = gamma / static_cast<double>(len);
  std::vector<double> out(g.numel());
  auto x = g.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x[i] + floor;
  return detail::make_result(g.shape(), std::move(out), {g},
                             [g, keep](std::span<const double> go, std::span<const double>) {
                               auto gg = detail::grad_of(g);
                               for (std::size_t i = 0; i < gg.size(); ++i) gg[i] += keep * go[i];
                             });
}

Tensor smoothed_focus_weights(const Tensor& e) {
  if (e.dim() != 2)
    throw DimensionError("smoothed_focus_weights: expected a matrix, got " + shape_str(e.shape()));
  const auto r = e.rows(), c = e.cols();
  std::vector<double> sig(r * c), out(r * c), row_sum(r);
  auto x = e.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = x[i * c + j];
      const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      sig[i * c + j] = y;
      s += y;
    }
    if (!(s > 0.0))
      throw std::domain_error("smoothed_focus_weights: row " + std::to_string(i) +
                              " is fully masked");
    row_sum[i] = s;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = sig[i * c + j] / s;
  }
  return detail::make_result(
      e.shape(), std::move(out), {e},
      [e, r, c, sig = std::move(sig), row_sum = std::move(row_sum)](std::span<const double> go,
                                                                    std::span<const double> y) {
        auto ge = detail::grad_of(e);
        for (std::size_t i = 0; i < r; ++i) {
          const auto o = i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += go[o + j] * y[o + j];
          for (std::size_t j = 0; j < c; ++j) {
            const double ds = (go[o + j] - dot) / row_sum[i];
            ge[o + j] += ds * sig[o + j] * (1.0 - sig[o + j]);
          }
        }
      });
}

Tensor attention_dropout(const Tensor& g, double p, RngStream& rng, Phase phase) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("attention dropout rate " + std::to_string(p) +
                                " outside [0, 1)");
  if (phase == Phase::Eval || p == 0.0) return g;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factors(g.numel());
  for (auto& f : factors) f = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mul_const(g, std::move(factors));
}

// ---------------------------------------------------------------------------
// Multi-head attention

MhaParams MhaParams::init(std::size_t d, std::size_t heads, RngStream& rng) {
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("model dimension " + std::to_string(d) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  const double limit = 1.0 / std::sqrt(static_cast<double>(d));
  MhaParams p;
  p.d = d;
  p.heads = heads;
  p.w_q = uniform_param({d, d}, limit, rng);
  p.w_k = uniform_param({d, d}, limit, rng);
  p.w_v = uniform_param({d, d}, limit, rng);
  p.w_o = uniform_param({d, d}, limit, rng);
  p.b_o = constant_param({d}, 0.0);
  return p;
}

void MhaParams::visit(const std::string& prefix, const Visitor& fn) const {
  fn(prefix + ".w_q", w_q);
  fn(prefix + ".w_k", w_k);
  fn(prefix + ".w_v", w_v);
  fn(prefix + ".w_o", w_o);
  fn(prefix + ".b_o", b_o);
}

namespace {

using LogitHook = std::function<Tensor(const Tensor&, std::size_t head)>;

void check_inputs(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
                  std::size_t batch) {
  for (const Tensor* t : {&q, &k, &v}) {
    if (t->dim() != 2 || t->cols() != params.d)
      throw DimensionError("attention input " + shape_str(t->shape()) +
                           " does not have model dimension " + std::to_string(params.d));
  }
  if (k.rows() != v.rows())
    throw DimensionError("attention keys " + shape_str(k.shape()) + " and values " +
                         shape_str(v.shape()) + " differ in length");
  if (batch == 0 || q.rows() % batch || k.rows() % batch)
    throw DimensionError("attention inputs do not split into " + std::to_string(batch) +
                         " sequences");
}

// One head on already projected inputs qh, kh, vh.
Tensor head_core(const Tensor& qh, const Tensor& kh, const Tensor& vh, std::size_t head,
                 const AttentionOptions& opts, double logit_scale, double gamma,
                 RngStream& rng, const LogitHook& hook, Tensor* weights_out) {
  const auto key_len = kh.rows() / opts.batch;
  Tensor e = scale(block_matmul_nt(qh, kh, opts.batch), logit_scale);
  if (hook) e = hook(e, head);
  if (!opts.mask.empty()) e = mask_fill(e, opts.mask, opts.batch);
  Tensor g = opts.weight_fn == WeightFn::Softmax ? softmax_rows(e) : smoothed_focus_weights(e);
  if (gamma != 0.0) g = relax_weights(g, gamma, key_len);
  g = attention_dropout(g, opts.dropout_p, rng, opts.phase);
  if (weights_out) *weights_out = g;
  return block_matmul(g, vh, opts.batch);
}

Tensor mha_impl(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
                const AttentionOptions& opts, RngStream& rng, MhaTrace* trace,
                const LogitHook& hook) {
  check_inputs(q, k, v, params, opts.batch);
  opts.relax.validate();
  const double gamma = sample_fuzzy_gamma(opts.relax, rng, opts.phase);
  const double logit_scale =
      opts.scale > 0.0 ? opts.scale : 1.0 / std::sqrt(static_cast<double>(params.d));
  const auto dk = params.head_dim();
  const Tensor qp = matmul(q, params.w_q);
  const Tensor kp = matmul(k, params.w_k);
  const Tensor vp = matmul(v, params.w_v);
  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  if (trace) {
    trace->gamma = gamma;
    trace->weights.assign(params.heads, Tensor());
  }
  for (std::size_t h = 0; h < params.heads; ++h) {
    heads.push_back(head_core(slice_cols(qp, h * dk, dk), slice_cols(kp, h * dk, dk),
                              slice_cols(vp, h * dk, dk), h, opts, logit_scale, gamma, rng, hook,
                              trace ? &trace->weights[h] : nullptr));
  }
  const Tensor concat = params.heads == 1 ? heads[0] : concat_cols(heads);
  return add_bias(matmul(concat, params.w_o), params.b_o);
}

}  // namespace

HeadOutput attention_head(const Tensor& q, const Tensor& k, const Tensor& v,
                          const MhaParams& params, std::size_t head,
                          const AttentionOptions& opts, RngStream& rng) {
  check_inputs(q, k, v, params, opts.batch);
  if (head >= params.heads)
    throw std::out_of_range("head " + std::to_string(head) + " of " +
                            std::to_string(params.heads));
  opts.relax.validate();
  const double gamma = sample_fuzzy_gamma(opts.relax, rng, opts.phase);
  const double logit_scale =
      opts.scale > 0.0 ? opts.scale : 1.0 / std::sqrt(static_cast<double>(params.d));
  const auto dk = params.head_dim();
  HeadOutput out;
  out.output = head_core(matmul(q, slice_cols(params.w_q, head * dk, dk)),
                         matmul(k, slice_cols(params.w_k, head * dk, dk)),
                         matmul(v, slice_cols(params.w_v, head * dk, dk)), head, opts,
                         logit_scale, gamma, rng, nullptr, &out.weights);
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MhaParams& params, const AttentionOptions& opts,
                            RngStream& rng, MhaTrace* trace) {
  return mha_impl(q, k, v, params, opts, rng, trace, nullptr);
}

// ---------------------------------------------------------------------------
// Window attention

WindowAttnParams WindowAttnParams::init(std::size_t channels, std::size_t heads,
                                        std::size_t window, RngStream& rng) {
  if (window == 0) throw std::invalid_argument("window side must be positive");
  WindowAttnParams p;
  p.mha = MhaParams::init(channels, heads, rng);
  const auto span = 2 * window - 1;
  p.bias_table = uniform_param({heads, span * span}, 0.02, rng);
  p.window = window;
  return p;
}

void WindowAttnParams::visit(const std::string& prefix, const Visitor& fn) const {
  mha.visit(prefix, fn);
  fn(prefix + ".rel_bias", bias_table);
}

namespace {

struct ImageDims {
  std::size_t n, h, w, c;
};

ImageDims image_dims(const Tensor& x) {
  if (x.dim() == 3) return {1, x.size(0), x.size(1), x.size(2)};
  if (x.dim() == 4) return {x.size(0), x.size(1), x.size(2), x.size(3)};
  throw DimensionError("expected an [h×w×c] or [n×h×w×c] feature map, got " +
                       shape_str(x.shape()));
}

// Row of the flattened [n·h·w × c] map feeding each window slot, in window order.
std::vector<std::size_t> window_order(std::size_t n, std::size_t h, std::size_t w,
                                      std::size_t m) {
  std::vector<std::size_t> idx;
  idx.reserve(n * h * w);
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t wy = 0; wy < h / m; ++wy)
      for (std::size_t wx = 0; wx < w / m; ++wx)
        for (std::size_t sy = 0; sy < m; ++sy)
          for (std::size_t sx = 0; sx < m; ++sx)
            idx.push_back(img * h * w + (wy * m + sy) * w + (wx * m + sx));
  return idx;
}

}  // namespace

Tensor window_partition(const Tensor& x, std::size_t m) {
  const auto [n, h, w, c] = image_dims(x);
  if (m == 0 || h % m || w % m)
    throw DimensionError("feature map " + shape_str(x.shape()) +
                         " is not divisible into windows of side " + std::to_string(m));
  const auto order = window_order(n, h, w, m);
  const Tensor flat = reshape(x, {n * h * w, c});
  return reshape(gather_rows(flat, order), {n * (h / m) * (w / m), m * m, c});
}

Tensor window_merge(const Tensor& windows, std::size_t h, std::size_t w, std::size_t m,
                    std::size_t images) {
  if (windows.dim() != 3 || m == 0 || h % m || w % m || windows.size(1) != m * m ||
      windows.size(0) != images * (h / m) * (w / m))
    throw DimensionError("windows " + shape_str(windows.shape()) + " do not tile " +
                         std::to_string(images) + " image(s) of " + std::to_string(h) + "x" +
                         std::to_string(w) + " with side " + std::to_string(m));
  const auto c = windows.size(2);
  const auto order = window_order(images, h, w, m);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
  const Tensor flat = reshape(windows, {images * h * w, c});
  Shape shape = images == 1 ? Shape{h, w, c} : Shape{images, h, w, c};
  return reshape(gather_rows(flat, inverse), std::move(shape));
}

Tensor add_relative_bias(const Tensor& e, const Tensor& table, std::size_t head,
                         std::size_t window) {
  const auto slots = window * window;
  const auto span = 2 * window - 1;
  if (e.dim() != 2 || e.cols() != slots || e.rows() % slots)
    throw DimensionError("relative bias: logits " + shape_str(e.shape()) +
                         " are not window blocks of side " + std::to_string(window));
  if (table.dim() != 2 || head >= table.rows() || table.cols() != span * span)
    throw DimensionError("relative bias table " + shape_str(table.shape()) +
                         " does not cover head " + std::to_string(head) + " with window " +
                         std::to_string(window));
  std::vector<std::size_t> rel(slots * slots);
  for (std::size_t i = 0; i < slots; ++i)
    for (std::size_t j = 0; j < slots; ++j) {
      const auto dy = i / window + window - 1 - j / window;
      const auto dx = i % window + window - 1 - j % window;
      rel[i * slots + j] = head * span * span + dy * span + dx;
    }
  std::vector<double> out(e.data().begin(), e.data().end());
  auto tb = table.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[rel[i % rel.size()]];
  return detail::make_result(e.shape(), std::move(out), {e, table},
                             [e, table, rel = std::move(rel)](std::span<const double> g,
                                                              std::span<const double>) {
                               if (detail::needs_grad(e)) {
                                 auto ge = detail::grad_of(e);
                                 for (std::size_t i = 0; i < ge.size(); ++i) ge[i] += g[i];
                               }
                               if (detail::needs_grad(table)) {
                                 auto gt = detail::grad_of(table);
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   gt[rel[i % rel.size()]] += g[i];
                               }
                             });
}

Tensor windowed_mha(const Tensor& x, const WindowAttnParams& params, const WindowOptions& opts,
                    RngStream& rng, MhaTrace* trace) {
  const auto [n, h, w, c] = image_dims(x);
  const auto m = params.window;
  if (c != params.mha.d)
    throw DimensionError("feature map " + shape_str(x.shape()) + " does not have " +
                         std::to_string(params.mha.d) + " channels");
  const Tensor windows = window_partition(x, m);
  const auto count = windows.size(0);
  const Tensor tokens = reshape(windows, {count * m * m, c});

  AttentionOptions ao;
  ao.relax = opts.relax;
  ao.weight_fn = opts.weight_fn;
  ao.dropout_p = opts.dropout_p;
  ao.phase = opts.phase;
  ao.batch = count;
  ao.scale = 1.0 / std::sqrt(static_cast<double>(c) / 4.0);
  const Tensor& table = params.bias_table;
  const Tensor attended =
      mha_impl(tokens, tokens, tokens, params.mha, ao, rng, trace,
               [&table, m](const Tensor& e, std::size_t head) {
                 return add_relative_bias(e, table, head, m);
               });
  return window_merge(reshape(attended, {count, m * m, c}), h, w, m, n);
}

}  // namespace rat
