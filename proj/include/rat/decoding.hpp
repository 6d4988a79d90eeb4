#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rat/transformer.hpp"

namespace rat {

/// External language model over the decoder's vocabulary.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  // log P_LM(· | prefix), a normalized log-distribution over the vocabulary.
  virtual std::vector<double> log_probs(const TokenSequence& prefix) const = 0;
};

/// Add-k smoothed bigram model. The context is the last token of the prefix
/// (BOS for an empty prefix).
class BigramLm : public LmScorer {
 public:
  BigramLm(std::size_t vocab, double k, std::vector<double> counts);

  std::size_t vocab_size() const override { return vocab_; }
  std::vector<double> log_probs(const TokenSequence& prefix) const override;

  double log_prob(Token context, Token next) const;
  double k() const { return k_; }
  double count(Token context, Token next) const { return counts_[context * vocab_ + next]; }

 private:
  std::size_t vocab_;
  double k_;
  std::vector<double> counts_;    // D×D
  std::vector<double> log_probs_; // D×D
};

// Counts adjacent pairs inside each sequence as given (wrap sequences in
// BOS/EOS beforehand to model boundaries).
BigramLm bigram_lm_train(std::span<const TokenSequence> corpus, std::size_t vocab, double k);

// log_p + λ·log_p_lm, not renormalized.
std::vector<double> shallow_fusion(std::span<const double> log_p, std::span<const double> log_p_lm,
                                   double lambda);

/// Source of next-token log-probabilities for a batch of equal-length
/// prefixes. Prefixes start with BOS.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::vector<double>> next_log_probs(
      std::span<const TokenSequence> prefixes) const = 0;
};

// Eval-phase decoder of a trained model against one encoded input.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Seq2Seq& model, EncoderOutput h);
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<std::vector<double>> next_log_probs(
      std::span<const TokenSequence> prefixes) const override;

 private:
  const Seq2Seq& model_;
  EncoderOutput h_;
};

struct BeamHypothesis {
  TokenSequence tokens;  // emitted tokens, BOS excluded, EOS included when finished
  double score = 0.0;    // accumulated fused log-probability
  bool finished = false;

  double normalized_score() const {
    return tokens.empty() ? score : score / static_cast<double>(tokens.size());
  }
};

struct BeamOptions {
  std::size_t beam = 4;
  const LmScorer* lm = nullptr;
  double lambda = 0.0;
  std::size_t max_len = 16;  // emitted tokens, EOS included
  // Stop once best finished − best active ≥ eos_margin on raw scores.
  double eos_margin = 0.0;
  bool length_normalize = true;

  static constexpr double kNoEarlyStop = std::numeric_limits<double>::infinity();
};

// Finished hypotheses come first, then those cut off at max_len; each group
// is ordered by (normalized) score, ties broken by token sequence.
std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, const BeamOptions& opts);
std::vector<BeamHypothesis> beam_search(const Seq2Seq& model, const EncoderOutput& h,
                                        const BeamOptions& opts);

// Argmax per step, lowest index on ties, until EOS or max_len tokens.
TokenSequence greedy_decode(const StepScorer& scorer, std::size_t max_len);
TokenSequence greedy_decode(const Seq2Seq& model, const EncoderOutput& h, std::size_t max_len);

// Greedy decoding of many inputs at once; inputs of equal length share one
// batched forward pass. Output i matches greedy_decode on sources[i].
std::vector<TokenSequence> greedy_decode_batch(const Seq2Seq& model,
                                               std::span<const TokenSequence> sources,
                                               std::size_t max_len);

// {id, tokens, score, lm_lambda}
nlohmann::json decode_record(const std::string& id, const BeamHypothesis& hyp, double lambda);

}  // namespace rat
