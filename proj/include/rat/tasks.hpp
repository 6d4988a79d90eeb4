#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rat/config.hpp"
#include "rat/rng.hpp"
#include "rat/training.hpp"

namespace rat {

enum class TaskKind { Copy, Reverse, ToyTranslate, WindowClassify };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

// Pairs over vocabulary D: content tokens are drawn uniformly from
// [kFirstContentToken, D). Copy targets equal sources; reverse targets are
// the reversed sources.
std::vector<Example> gen_copy_task(RngStream& rng, std::size_t vocab, std::size_t length,
                                   std::size_t n);
std::vector<Example> gen_reverse_task(RngStream& rng, std::size_t vocab, std::size_t length,
                                      std::size_t n);

struct ToyTranslateSpec {
  std::size_t source_symbols = 12;  // content tokens on the source side
  double ambiguity_rate = 0.25;     // fraction of source symbols with two translations
  // Fraction of (ambiguous symbol, previous target) contexts that occur in
  // the parallel data; the rest only occur in text-only data and at test time.
  double seen_context_fraction = 0.5;
  std::size_t length = 8;
  std::size_t n_train = 4000;
  std::size_t n_dev = 200;
  std::size_t n_test = 300;
  std::size_t n_extended = 20000;

  void validate() const;
};

/// Substitution cipher in which ambiguous source symbols have two possible
/// translations, picked by the previous target token. Only target-side
/// bigram statistics can resolve the choice.
struct ToyTranslateTask {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::vector<Token> primary;     // per source token: its (first) translation
  std::vector<Token> alternate;   // per source token: second translation or kPad
  std::vector<std::uint8_t> pick_alternate;  // [source × target]: context rule
  std::vector<std::uint8_t> seen;            // [source × target]: context in parallel data

  bool ambiguous(Token s) const { return alternate[s] != kPad; }
  Token translate_one(Token s, Token previous) const;
  TokenSequence translate(const TokenSequence& source) const;
};

struct ToyTranslateData {
  ToyTranslateTask task;
  std::vector<Example> train, dev, test;
  std::vector<TokenSequence> in_domain_text;  // BOS … EOS wrapped training targets
  std::vector<TokenSequence> extended_text;   // in-domain text plus full-distribution text
};

ToyTranslateData gen_toy_translate(RngStream& rng, const ToyTranslateSpec& spec);

struct ImageTaskSpec {
  std::size_t height = 8, width = 8, channels = 3, classes = 4;
  std::size_t pattern = 3;  // side of the class-specific local pattern
  double noise = 0.5;
  std::size_t n_train = 2000, n_dev = 200, n_test = 400;
};

// Images of Gaussian noise with one class-specific pattern stamped at a
// random location.
struct ImageTaskData {
  ImageSet train, dev, test;
};
ImageTaskData gen_window_images(RngStream& rng, const ImageTaskSpec& spec);

/// Declarative task description inside an experiment spec. Sizes and
/// lengths are shared by every kind; the remaining fields apply to one kind.
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::uint64_t data_seed = 1234;
  std::size_t length = 8;
  std::size_t n_train = 4000, n_dev = 200, n_test = 300;
  std::size_t n_extended = 20000;  // extra text-only sequences for the extended LM
  std::size_t vocab = 16;          // copy / reverse: total vocabulary
  std::size_t source_symbols = 12;
  double ambiguity_rate = 0.25;
  double seen_context_fraction = 0.5;
  std::size_t height = 8, width = 8, channels = 3, classes = 4, pattern = 3;
  double noise = 0.5;

  ToyTranslateSpec translate_spec() const;
  ImageTaskSpec image_spec() const;
};

Json to_json(const TaskSpec& t);
TaskSpec task_spec_from_json(const Json& j);

/// Materialized data for any sequence task.
struct SequenceData {
  std::vector<Example> train, dev, test;
  std::vector<TokenSequence> in_domain_text, extended_text;
  std::size_t source_vocab = 0, target_vocab = 0, max_length = 0;
};

SequenceData make_sequence_data(const TaskSpec& spec);
ImageTaskData make_image_data(const TaskSpec& spec);

}  // namespace rat
