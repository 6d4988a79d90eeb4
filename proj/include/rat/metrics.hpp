#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rat/tensor.hpp"
#include "rat/transformer.hpp"

namespace rat {

struct EditAlignment {
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t substitutions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return deletions + insertions + substitutions; }
};

// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
// prefers a substitution, then a deletion, then an insertion.
EditAlignment edit_align(std::span<const Token> ref, std::span<const Token> hyp);

// Corpus WER: total errors over total reference length. May exceed 1.
double wer(std::span<const TokenSequence> refs, std::span<const TokenSequence> hyps);

// Geometric mean of clipped n-gram precisions times the brevity penalty,
// counts pooled over the corpus, no smoothing.
double corpus_bleu(std::span<const TokenSequence> refs, std::span<const TokenSequence> hyps,
                   std::size_t max_n = 4);

// Shannon entropy in nats of every row, with 0·ln 0 = 0.
std::vector<double> attention_entropy(const Tensor& g);

// Hex digest of the canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

// {metric, value, n_utterances, config_hash}
nlohmann::json metric_report(const std::string& metric, double value, std::size_t n_utterances,
                             const std::string& hash);

}  // namespace rat
