#include "rat/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace rat {

BigramLm::BigramLm(std::size_t vocab, double k, std::vector<double> counts)
    : vocab_(vocab), k_(k), counts_(std::move(counts)), log_probs_(vocab * vocab) {
  if (!(k > 0.0)) throw std::invalid_argument("bigram smoothing k must be positive");
  if (vocab == 0 || counts_.size() != vocab * vocab)
    throw DimensionError("bigram counts must be " + std::to_string(vocab) + "×" +
                         std::to_string(vocab));
  for (std::size_t a = 0; a < vocab; ++a) {
    double total = 0.0;
    for (std::size_t b = 0; b < vocab; ++b) total += counts_[a * vocab + b];
    const double denom = total + k * static_cast<double>(vocab);
    for (std::size_t b = 0; b < vocab; ++b)
      log_probs_[a * vocab + b] = std::log((counts_[a * vocab + b] + k) / denom);
  }
}

double BigramLm::log_prob(Token context, Token next) const {
  if (context >= vocab_ || next >= vocab_) throw std::out_of_range("bigram token outside vocabulary");
  return log_probs_[context * vocab_ + next];
}

std::vector<double> BigramLm::log_probs(const TokenSequence& prefix) const {
  const Token context = prefix.empty() ? kBos : prefix.back();
  if (context >= vocab_) throw std::out_of_range("bigram context outside vocabulary");
  auto row = log_probs_.begin() + static_cast<std::ptrdiff_t>(context * vocab_);
  return {row, row + static_cast<std::ptrdiff_t>(vocab_)};
}

BigramLm bigram_lm_train(std::span<const TokenSequence> corpus, std::size_t vocab, double k) {
  if (corpus.empty()) throw std::invalid_argument("bigram corpus is empty");
  if (!(k > 0.0)) throw std::invalid_argument("bigram smoothing k must be positive");
  std::vector<double> counts(vocab * vocab, 0.0);
  for (const auto& seq : corpus)
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      if (seq[i] >= vocab || seq[i + 1] >= vocab)
        throw std::out_of_range("corpus token outside vocabulary of " + std::to_string(vocab));
      counts[seq[i] * vocab + seq[i + 1]] += 1.0;
    }
  return BigramLm(vocab, k, std::move(counts));
}

std::vector<double> shallow_fusion(std::span<const double> log_p, std::span<const double> log_p_lm,
                                   double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("LM weight must be non-negative");
  if (log_p.size() != log_p_lm.size())
    throw DimensionError("fusion inputs have " + std::to_string(log_p.size()) + " and " +
                         std::to_string(log_p_lm.size()) + " entries");
  std::vector<double> out(log_p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_p[i] + lambda * log_p_lm[i];
  return out;
}

ModelScorer::ModelScorer(const Seq2Seq& model, EncoderOutput h) : model_(model), h_(std::move(h)) {
  if (!h_.h.defined() || h_.length == 0) throw std::invalid_argument("empty encoder output");
}

std::vector<std::vector<double>> ModelScorer::next_log_probs(
    std::span<const TokenSequence> prefixes) const {
  RngStream unused(0, "decode");
  return model_.next_log_probs(h_, prefixes, unused, Phase::Eval);
}

namespace {

TokenSequence with_bos(const TokenSequence& emitted) {
  TokenSequence p;
  p.reserve(emitted.size() + 1);
  p.push_back(kBos);
  p.insert(p.end(), emitted.begin(), emitted.end());
  return p;
}

std::vector<double> step_scores(const std::vector<double>& model_lp, const TokenSequence& prefix,
                                const BeamOptions& opts) {
  if (!opts.lm || opts.lambda == 0.0) return model_lp;
  return shallow_fusion(model_lp, opts.lm->log_probs(prefix), opts.lambda);
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, const BeamOptions& opts) {
  if (opts.beam < 1) throw std::invalid_argument("beam size must be at least 1");
  if (opts.lambda < 0.0) throw std::invalid_argument("LM weight must be non-negative");
  if (opts.lm && opts.lm->vocab_size() != scorer.vocab_size())
    throw DimensionError("LM vocabulary differs from model vocabulary");
  const std::size_t vocab = scorer.vocab_size();

  std::vector<BeamHypothesis> active{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  for (std::size_t step = 0; step < opts.max_len && !active.empty(); ++step) {
    std::vector<TokenSequence> prefixes;
    prefixes.reserve(active.size());
    for (const auto& h : active) prefixes.push_back(with_bos(h.tokens));
    const auto lp = scorer.next_log_probs(prefixes);

    struct Candidate {
      double score;
      std::size_t parent;
      Token token;
    };
    std::vector<Candidate> cands;
    cands.reserve(active.size() * vocab);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto fused = step_scores(lp[a], prefixes[a], opts);
      for (Token t = 0; t < vocab; ++t) cands.push_back({active[a].score + fused[t], a, t});
    }
    const std::size_t keep = std::min(opts.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& x, const Candidate& y) {
                        if (x.score != y.score) return x.score > y.score;
                        if (x.parent != y.parent) return x.parent < y.parent;
                        return x.token < y.token;
                      });

    std::vector<BeamHypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      BeamHypothesis h{active[cands[i].parent].tokens, cands[i].score, cands[i].token == kEos};
      h.tokens.push_back(cands[i].token);
      (h.finished ? finished : next).push_back(std::move(h));
    }
    active = std::move(next);

    if (!finished.empty() && !active.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& h : finished) best_finished = std::max(best_finished, h.score);
      double best_active = -std::numeric_limits<double>::infinity();
      for (const auto& h : active) best_active = std::max(best_active, h.score);
      if (best_finished - best_active >= opts.eos_margin) break;
    }
  }

  std::vector<BeamHypothesis> out = std::move(finished);
  for (auto& h : active) out.push_back(std::move(h));
  const bool norm = opts.length_normalize;
  std::sort(out.begin(), out.end(), [norm](const BeamHypothesis& x, const BeamHypothesis& y) {
    if (x.finished != y.finished) return x.finished;
    const double sx = norm ? x.normalized_score() : x.score;
    const double sy = norm ? y.normalized_score() : y.score;
    if (sx != sy) return sx > sy;
    return x.tokens < y.tokens;
  });
  return out;
}

std::vector<BeamHypothesis> beam_search(const Seq2Seq& model, const EncoderOutput& h,
                                        const BeamOptions& opts) {
  if (opts.max_len > model.config().max_len)
    throw std::invalid_argument("decode max_len exceeds model max_len");
  return beam_search(ModelScorer(model, h), opts);
}

TokenSequence greedy_decode(const StepScorer& scorer, std::size_t max_len) {
  TokenSequence prefix{kBos};
  while (prefix.size() - 1 < max_len) {
    const auto lp = scorer.next_log_probs(std::span<const TokenSequence>(&prefix, 1)).front();
    const auto best = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    prefix.push_back(best);
    if (best == kEos) break;
  }
  return {prefix.begin() + 1, prefix.end()};
}

TokenSequence greedy_decode(const Seq2Seq& model, const EncoderOutput& h, std::size_t max_len) {
  if (max_len > model.config().max_len)
    throw std::invalid_argument("decode max_len exceeds model max_len");
  return greedy_decode(ModelScorer(model, h), max_len);
}

std::vector<TokenSequence> greedy_decode_batch(const Seq2Seq& model,
                                               std::span<const TokenSequence> sources,
                                               std::size_t max_len) {
  if (max_len > model.config().max_len)
    throw std::invalid_argument("decode max_len exceeds model max_len");
  constexpr std::size_t kChunk = 64;
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < sources.size(); ++i) by_length[sources[i].size()].push_back(i);

  std::vector<TokenSequence> out(sources.size());
  RngStream unused(0, "decode");
  for (const auto& [length, members] : by_length) {
    for (std::size_t start = 0; start < members.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, members.size() - start);
      std::vector<TokenSequence> batch;
      for (std::size_t j = 0; j < n; ++j) batch.push_back(sources[members[start + j]]);
      NoGradGuard no_grad;
      const EncoderOutput h = model.encode(batch, unused, Phase::Eval);
      std::vector<TokenSequence> prefixes(n, TokenSequence{kBos});
      std::vector<bool> done(n, false);
      for (std::size_t step = 0; step < max_len; ++step) {
        const auto lp = model.next_log_probs(h, prefixes, unused, Phase::Eval);
        bool all_done = true;
        for (std::size_t j = 0; j < n; ++j) {
          // Finished rows keep a placeholder so the batch stays rectangular.
          const Token t = done[j] ? kPad
                                  : static_cast<Token>(std::max_element(lp[j].begin(), lp[j].end()) -
                                                       lp[j].begin());
          prefixes[j].push_back(t);
          if (!done[j]) out[members[start + j]].push_back(t);
          if (t == kEos) done[j] = true;
          all_done = all_done && done[j];
        }
        if (all_done) break;
      }
    }
  }
  return out;
}

nlohmann::json decode_record(const std::string& id, const BeamHypothesis& hyp, double lambda) {
  return {{"id", id}, {"tokens", hyp.tokens}, {"score", hyp.score}, {"lm_lambda", lambda}};
}

}  // namespace rat
