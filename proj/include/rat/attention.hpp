#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rat/rng.hpp"
#include "rat/tensor.hpp"

namespace rat {

enum class Phase { Train, Eval };
enum class RelaxMode { Off, TrainOnly, Matched };
enum class WeightFn { Softmax, SmoothedFocus };

std::string to_string(RelaxMode mode);
std::string to_string(WeightFn fn);
RelaxMode relax_mode_from_string(const std::string& s);
WeightFn weight_fn_from_string(const std::string& s);

/// Relaxation settings for one attention site (encoder self-attention or
/// decoder cross attention).
///
/// Off behaves exactly like plain attention in both phases. TrainOnly relaxes
/// with gamma0 during training and not at all in evaluation. Matched relaxes in
/// both phases; evaluation always uses gamma0 even when fuzzy.
struct RelaxationConfig {
  double gamma0 = 0.0;
  double sigma2 = 0.0;
  RelaxMode mode = RelaxMode::Off;
  bool fuzzy = false;

  // Throws std::invalid_argument on gamma0 ∉ [0,1], sigma2 < 0, or fuzzy
  // without variance.
  void validate() const;

  static RelaxationConfig off() { return {}; }
  static RelaxationConfig train_only(double gamma) { return {gamma, 0.0, RelaxMode::TrainOnly, false}; }
  static RelaxationConfig matched(double gamma) { return {gamma, 0.0, RelaxMode::Matched, false}; }
};

// Relaxation coefficient for one forward pass of one attention layer. Train
// draws N(gamma0, sigma2) clamped to [0,1] when fuzzy; Eval returns gamma0
// under Matched and 0 otherwise. Non-fuzzy configs consume no draws.
double sample_fuzzy_gamma(const RelaxationConfig& cfg, RngStream& rng, Phase phase);

// G̃ = (1−γ)·G + γ/len, row-wise. len must equal the column count.
Tensor relax_weights(const Tensor& g, double gamma, std::size_t len);

// g[ℓ,t] = sigmoid(e[ℓ,t]) / Σ_t sigmoid(e[ℓ,t]). Throws on a row whose
// sigmoids sum to zero (every entry masked).
Tensor smoothed_focus_weights(const Tensor& e);

// Inverted dropout in the Train phase, identity in Eval or for p = 0.
Tensor attention_dropout(const Tensor& g, double p, RngStream& rng, Phase phase);

/// Projections of one multi-head attention layer. Head i owns columns
/// [i·d/N_h, (i+1)·d/N_h) of w_q, w_k and w_v.
struct MhaParams {
  std::size_t d = 0;
  std::size_t heads = 0;
  Tensor w_q, w_k, w_v;  // d×d
  Tensor w_o;            // d×d
  Tensor b_o;            // d

  std::size_t head_dim() const { return d / heads; }

  static MhaParams init(std::size_t d, std::size_t heads, RngStream& rng);
  using Visitor = std::function<void(const std::string&, const Tensor&)>;
  void visit(const std::string& prefix, const Visitor& fn) const;
};

/// Per-call attention settings. Inputs hold `batch` stacked sequences:
/// q is [batch·Lq × d], k and v are [batch·Lk × d].
struct AttentionOptions {
  std::span<const std::uint8_t> mask;  // Lq×Lk, nonzero = masked; empty = none
  RelaxationConfig relax;
  WeightFn weight_fn = WeightFn::Softmax;
  double dropout_p = 0.0;
  Phase phase = Phase::Eval;
  std::size_t batch = 1;
  double scale = 0.0;  // 0 → 1/√d
};

struct HeadOutput {
  Tensor output;   // [batch·Lq × d/N_h]
  Tensor weights;  // [batch·Lq × Lk], after relaxation and dropout
};

HeadOutput attention_head(const Tensor& q, const Tensor& k, const Tensor& v,
                          const MhaParams& params, std::size_t head,
                          const AttentionOptions& opts, RngStream& rng);

struct MhaTrace {
  double gamma = 0.0;
  std::vector<Tensor> weights;  // one per head
};

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MhaParams& params, const AttentionOptions& opts,
                            RngStream& rng, MhaTrace* trace = nullptr);

// ---------------------------------------------------------------------------
// Window attention.

/// Multi-head attention over non-overlapping M×M windows with a learned
/// relative position bias. bias_table is [heads × (2M−1)²]; entry
/// (dy+M−1)·(2M−1) + (dx+M−1) holds the bias for offset (dy, dx).
struct WindowAttnParams {
  MhaParams mha;
  Tensor bias_table;
  std::size_t window = 0;

  static WindowAttnParams init(std::size_t channels, std::size_t heads, std::size_t window,
                               RngStream& rng);
  using Visitor = std::function<void(const std::string&, const Tensor&)>;
  void visit(const std::string& prefix, const Visitor& fn) const;
};

// [h×w×c] or [n×h×w×c] → [windows × m² × c]; windows in row-major window
// order (image-major for n > 1), slots row-major inside a window.
Tensor window_partition(const Tensor& x, std::size_t m);
// Inverse of window_partition for `images` images of h×w; returns [h×w×c]
// when images == 1, else [images×h×w×c].
Tensor window_merge(const Tensor& windows, std::size_t h, std::size_t w, std::size_t m,
                    std::size_t images = 1);

// E += table[head, rel(i, j)] for every window block of e[blocks·M² × M²].
Tensor add_relative_bias(const Tensor& e, const Tensor& table, std::size_t head,
                         std::size_t window);

struct WindowOptions {
  RelaxationConfig relax;
  WeightFn weight_fn = WeightFn::Softmax;
  double dropout_p = 0.0;
  Phase phase = Phase::Eval;
};

// Logit scale is 1/√(c/4); relaxation spreads over the M² window slots.
Tensor windowed_mha(const Tensor& x, const WindowAttnParams& params, const WindowOptions& opts,
                    RngStream& rng, MhaTrace* trace = nullptr);

}  // namespace rat
