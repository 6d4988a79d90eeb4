#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "rat/transformer.hpp"

namespace rat {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double label_smoothing = 0.1;
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t eval_every = 200;  // 0 → evaluate only at the end
  // Stop once eval accuracy reaches this value; 0 disables.
  double stop_at_accuracy = 0.0;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// One bias-corrected Adam update of every parameter from explicit gradients.
void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, const TrainConfig& cfg);
// Same, reading each parameter's accumulated gradient (absent → zero).
void adam_step(std::span<const Tensor> params, AdamState& state, const TrainConfig& cfg);

// Mean over rows of −Σ_c q(c)·log p(c) with q = (1−α)·onehot + α/D. p holds
// probabilities; log is floored at 1e-12 and `clamped` reports whether the
// floor was hit.
Tensor label_smoothed_nll(const Tensor& p, std::span<const Token> targets, double alpha,
                          bool* clamped = nullptr);
// Same loss from unnormalized logits, fused with log-softmax.
Tensor label_smoothed_nll_logits(const Tensor& logits, std::span<const Token> targets,
                                 double alpha);

struct Example {
  TokenSequence source;
  TokenSequence target;  // content tokens only; BOS/EOS added by the loop
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> eval_acc;
  double gamma_effective = 0.0;
};

nlohmann::json to_json(const MetricsRecord& r);

struct TrainResult {
  std::vector<MetricsRecord> log;
  double final_eval_acc = 0.0;
  std::size_t steps_run = 0;
};

// Teacher-forced training in the Train phase with periodic Eval-phase greedy
// sequence accuracy. Throws NumericError if the loss becomes NaN.
TrainResult train(Seq2Seq& model, std::span<const Example> train_set,
                  std::span<const Example> eval_set, const TrainConfig& cfg,
                  std::ostream* metrics_log = nullptr);

// Fraction of examples whose greedy output equals target + EOS.
double sequence_accuracy(const Seq2Seq& model, std::span<const Example> examples);

struct ImageSet {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> pixels;  // n×h×w×c
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  Tensor batch(std::span<const std::size_t> indices) const;
};

TrainResult train(WindowClassifier& model, const ImageSet& train_set, const ImageSet& eval_set,
                  const TrainConfig& cfg, std::ostream* metrics_log = nullptr);

double classification_accuracy(const WindowClassifier& model, const ImageSet& set);

}  // namespace rat
