#include "rat/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "rat/decoding.hpp"

namespace rat {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw std::invalid_argument("label smoothing must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1) and eps must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size())
    throw DimensionError("Adam got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("Adam state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto theta = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) throw DimensionError("Adam moment shape mismatch");
    const auto g = grads[i];
    if (g.empty()) {
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] *= cfg.beta1;
        v[j] *= cfg.beta2;
        theta[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
      }
      continue;
    }
    if (g.size() != theta.size()) throw DimensionError("Adam gradient shape mismatch");
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      theta[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

void adam_step(std::span<const Tensor> params, AdamState& state, const TrainConfig& cfg) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state, cfg);
}

namespace {

void check_targets(const Tensor& x, std::span<const Token> targets, double alpha) {
  if (x.dim() != 2 || x.rows() != targets.size() || x.rows() == 0)
    throw DimensionError("loss input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(targets.size()) + " targets");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in [0, 1)");
  for (auto t : targets)
    if (t >= x.cols()) throw std::out_of_range("target " + std::to_string(t) + " outside vocabulary");
}

}  // namespace

Tensor label_smoothed_nll(const Tensor& p, std::span<const Token> targets, double alpha,
                          bool* clamped) {
  check_targets(p, targets, alpha);
  constexpr double kFloor = 1e-12;
  const std::size_t rows = p.rows(), d = p.cols();
  const double off = alpha / static_cast<double>(d);
  const auto pv = p.data();
  double loss = 0.0;
  bool hit = false;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double q = off + (c == targets[r] ? 1.0 - alpha : 0.0);
      if (q == 0.0) continue;
      const double v = pv[r * d + c];
      if (v < kFloor) hit = true;
      loss -= q * std::log(std::max(v, kFloor));
    }
  loss /= static_cast<double>(rows);
  if (clamped) *clamped = hit;

  std::vector<Token> tgt(targets.begin(), targets.end());
  return detail::make_result(
      {1}, {loss}, {p}, [p, tgt = std::move(tgt), alpha, rows, d, off](auto g, auto) {
        auto gp = detail::grad_of(p);
        const auto pv = p.data();
        const double scale = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            const double v = pv[r * d + c];
            if (v < kFloor) continue;
            const double q = off + (c == tgt[r] ? 1.0 - alpha : 0.0);
            gp[r * d + c] -= scale * q / v;
          }
      });
}

Tensor label_smoothed_nll_logits(const Tensor& logits, std::span<const Token> targets,
                                 double alpha) {
  check_targets(logits, targets, alpha);
  const std::size_t rows = logits.rows(), d = logits.cols();
  const double off = alpha / static_cast<double>(d);
  const auto z = logits.data();
  std::vector<double> probs(rows * d);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.data() + r * d;
    const double mx = *std::max_element(zr, zr + d);
    double sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) sum += std::exp(zr[c] - mx);
    const double lse = mx + std::log(sum);
    double qz = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      probs[r * d + c] = std::exp(zr[c] - lse);
      qz += (off + (c == targets[r] ? 1.0 - alpha : 0.0)) * zr[c];
    }
    loss += lse - qz;  // Σ_c q = 1
  }
  loss /= static_cast<double>(rows);

  std::vector<Token> tgt(targets.begin(), targets.end());
  return detail::make_result(
      {1}, {loss}, {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt), alpha, rows, d, off](auto g, auto) {
        auto gz = detail::grad_of(logits);
        const double scale = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            const double q = off + (c == tgt[r] ? 1.0 - alpha : 0.0);
            gz[r * d + c] += scale * (probs[r * d + c] - q);
          }
      });
}

nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json j{{"step", r.step}, {"loss", r.loss}};
  j["eval_acc"] = r.eval_acc ? nlohmann::json(*r.eval_acc) : nlohmann::json(nullptr);
  j["gamma_effective"] = r.gamma_effective;
  return j;
}

double sequence_accuracy(const Seq2Seq& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::vector<TokenSequence> sources;
  std::size_t longest = 0;
  for (const auto& ex : examples) {
    sources.push_back(ex.source);
    longest = std::max(longest, ex.target.size() + 1);
  }
  const auto outputs =
      greedy_decode_batch(model, sources, std::min(longest, model.config().max_len));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    TokenSequence expect = examples[i].target;
    expect.push_back(kEos);
    if (outputs[i] == expect) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

namespace {

double effective_gamma(const ForwardTrace& trace) {
  for (double g : trace.self_gammas)
    if (g != 0.0) return g;
  for (double g : trace.cross_gammas)
    if (g != 0.0) return g;
  return 0.0;
}

void finish_step(std::vector<Tensor>& params, const Tensor& loss, std::size_t step,
                 AdamState& state, const TrainConfig& cfg) {
  const double value = loss.item();
  if (std::isnan(value) || std::isinf(value))
    throw NumericError("training loss diverged at step " + std::to_string(step));
  for (auto& p : params) p.zero_grad();
  backward(loss);
  adam_step(params, state, cfg);
}

// Shared loop: records metrics, evaluates on cadence, honours early stop.
template <typename StepFn, typename EvalFn>
TrainResult run_loop(const TrainConfig& cfg, std::ostream* metrics_log, StepFn step_fn,
                     EvalFn eval_fn) {
  TrainResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    MetricsRecord rec = step_fn(step);
    const bool last = step == cfg.steps;
    if (last || (cfg.eval_every && step % cfg.eval_every == 0)) {
      rec.eval_acc = eval_fn();
      result.final_eval_acc = *rec.eval_acc;
    }
    if (metrics_log) *metrics_log << to_json(rec).dump() << '\n';
    result.log.push_back(rec);
    result.steps_run = step;
    if (rec.eval_acc && cfg.stop_at_accuracy > 0.0 && *rec.eval_acc >= cfg.stop_at_accuracy) break;
  }
  if (cfg.steps == 0) result.final_eval_acc = eval_fn();
  return result;
}

}  // namespace

TrainResult train(Seq2Seq& model, std::span<const Example> train_set,
                  std::span<const Example> eval_set, const TrainConfig& cfg,
                  std::ostream* metrics_log) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  RngStream data_rng(cfg.seed, "data");
  RngStream drop_rng(cfg.seed, "dropout");
  auto params = model.parameters();
  AdamState state;

  auto step_fn = [&](std::size_t step) {
    // Group the batch by (source, target) length so each group is rectangular.
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto i = static_cast<std::size_t>(data_rng.uniform_int(train_set.size()));
      groups[{train_set[i].source.size(), train_set[i].target.size()}].push_back(i);
    }
    std::size_t positions = 0;
    for (const auto& [key, members] : groups) positions += members.size() * (key.second + 1);

    Tensor loss;
    ForwardTrace first_trace;
    bool first = true;
    for (const auto& [key, members] : groups) {
      std::vector<TokenSequence> sources, inputs;
      std::vector<Token> labels;
      for (auto i : members) {
        const auto& ex = train_set[i];
        sources.push_back(ex.source);
        TokenSequence in{kBos};
        in.insert(in.end(), ex.target.begin(), ex.target.end());
        inputs.push_back(std::move(in));
        labels.insert(labels.end(), ex.target.begin(), ex.target.end());
        labels.push_back(kEos);
      }
      ForwardTrace trace;
      const EncoderOutput h = model.encode(sources, drop_rng, Phase::Train, &trace);
      const Tensor logits = model.decoder_logits(h, inputs, drop_rng, Phase::Train, &trace);
      const double weight = static_cast<double>(labels.size()) / static_cast<double>(positions);
      const Tensor part = scale(label_smoothed_nll_logits(logits, labels, cfg.label_smoothing), weight);
      loss = loss.defined() ? add(loss, part) : part;
      if (first) first_trace = std::move(trace);
      first = false;
    }
    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss.item();
    rec.gamma_effective = effective_gamma(first_trace);
    finish_step(params, loss, step, state, cfg);
    return rec;
  };
  return run_loop(cfg, metrics_log, step_fn, [&] { return sequence_accuracy(model, eval_set); });
}

Tensor ImageSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = height * width * channels;
  std::vector<double> data(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw std::out_of_range("image index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                data.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return Tensor::from({indices.size(), height, width, channels}, std::move(data));
}

double classification_accuracy(const WindowClassifier& model, const ImageSet& set) {
  if (set.size() == 0) return 0.0;
  NoGradGuard no_grad;
  RngStream unused(0, "eval");
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + kChunk); ++i) idx.push_back(i);
    const Tensor z = model.logits(set.batch(idx), unused, Phase::Eval);
    const std::size_t k = z.cols();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = z.data().subspan(b * k, k);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == set.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train(WindowClassifier& model, const ImageSet& train_set, const ImageSet& eval_set,
                  const TrainConfig& cfg, std::ostream* metrics_log) {
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
  RngStream data_rng(cfg.seed, "data");
  RngStream drop_rng(cfg.seed, "dropout");
  auto params = model.parameters();
  AdamState state;

  auto step_fn = [&](std::size_t step) {
    std::vector<std::size_t> idx(cfg.batch_size);
    std::vector<Token> labels(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      idx[b] = static_cast<std::size_t>(data_rng.uniform_int(train_set.size()));
      labels[b] = train_set.labels[idx[b]];
    }
    std::vector<double> gammas;
    const Tensor z = model.logits(train_set.batch(idx), drop_rng, Phase::Train, &gammas);
    const Tensor loss = label_smoothed_nll_logits(z, labels, cfg.label_smoothing);
    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss.item();
    rec.gamma_effective = gammas.empty() ? 0.0 : gammas.front();
    finish_step(params, loss, step, state, cfg);
    return rec;
  };
  return run_loop(cfg, metrics_log, step_fn,
                  [&] { return classification_accuracy(model, eval_set); });
}

}  // namespace rat
