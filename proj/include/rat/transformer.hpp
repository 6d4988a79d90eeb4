#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rat/attention.hpp"
#include "rat/checkpoint.hpp"
#include "rat/rng.hpp"
#include "rat/tensor.hpp"

namespace rat {

using Token = std::size_t;
using TokenSequence = std::vector<Token>;

// Reserved ids shared by every task vocabulary.
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kFirstContentToken = 3;

struct ModelConfig {
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 16;      // target vocabulary D
  std::size_t src_vocab_size = 0;   // 0 → same as vocab_size
  std::size_t max_len = 32;
  double residual_dropout = 0.1;
  double activation_dropout = 0.1;
  double attention_dropout = 0.0;
  RelaxationConfig relax_self;
  RelaxationConfig relax_cross;
  WeightFn self_weight_fn = WeightFn::Softmax;
  WeightFn cross_weight_fn = WeightFn::Softmax;

  std::size_t source_vocab() const { return src_vocab_size ? src_vocab_size : vocab_size; }
  void validate() const;
};

struct Norm {
  Tensor gain, bias;
  static Norm init(std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
  static FeedForward init(std::size_t d, std::size_t d_ff, RngStream& rng);
  Tensor operator()(const Tensor& x, double activation_dropout, RngStream& rng,
                    Phase phase) const;
};

// Inverted dropout for any activation; identity in Eval.
Tensor dropout(const Tensor& x, double p, RngStream& rng, Phase phase);

struct EncoderOutput {
  Tensor h;               // [batch·length × d]
  std::size_t batch = 1;
  std::size_t length = 0;
};

// Relaxation coefficients actually used during one forward pass.
struct ForwardTrace {
  std::vector<double> self_gammas;   // per encoder layer
  std::vector<double> cross_gammas;  // per decoder layer
  std::vector<MhaTrace> cross;       // per decoder layer, when requested
  bool keep_cross_weights = false;
};

/// Post-norm encoder-decoder transformer over token inputs.
///
/// Encoder self-attention is relaxed per relax_self and decoder cross
/// attention per relax_cross. Decoder masked self-attention is never relaxed.
/// All sequences in a batch share one length.
class Seq2Seq {
 public:
  Seq2Seq(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }

  EncoderOutput encode(std::span<const TokenSequence> sources, RngStream& rng, Phase phase,
                       ForwardTrace* trace = nullptr) const;
  EncoderOutput encode(const TokenSequence& source, RngStream& rng, Phase phase) const;

  // Raw target embeddings [batch·L × d] for decoder prefixes (before √d scaling).
  Tensor embed_targets(std::span<const TokenSequence> prefixes) const;
  // Decoder logits [batch·L × D] from embedded prefixes; h is either one
  // sequence (broadcast to every prefix) or one per prefix.
  Tensor decode_embedded(const EncoderOutput& h, const Tensor& target_embeddings,
                         std::size_t batch, RngStream& rng, Phase phase,
                         ForwardTrace* trace = nullptr) const;
  Tensor decoder_logits(const EncoderOutput& h, std::span<const TokenSequence> prefixes,
                        RngStream& rng, Phase phase, ForwardTrace* trace = nullptr) const;

  // P_ℓ for the token after `prefix` (which starts with BOS).
  std::vector<double> decode_step(const EncoderOutput& h, const TokenSequence& prefix,
                                  RngStream& rng, Phase phase) const;
  // Next-token log-probabilities for several equal-length prefixes against
  // one encoded input.
  std::vector<std::vector<double>> next_log_probs(const EncoderOutput& h,
                                                  std::span<const TokenSequence> prefixes,
                                                  RngStream& rng, Phase phase) const;

  // Row ℓ holds P(· | x, y_1..y_ℓ); y starts with BOS.
  Tensor forward_teacher_forced(const TokenSequence& x, const TokenSequence& y, RngStream& rng,
                                Phase phase) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  // Replaces parameter values; throws DimensionError naming the first tensor
  // whose name or shape disagrees.
  void load_parameters(std::span<const NamedTensor> tensors);

  std::size_t parameter_count() const;
  // 4d²+d per attention layer, 2d·d_ff+d_ff+d per feed-forward, 2d per norm,
  // plus both embeddings and the output projection with bias.
  static std::size_t parameter_count(const ModelConfig& config);

 private:
  struct EncoderLayer {
    MhaParams self_attn;
    Norm norm1;
    FeedForward ff;
    Norm norm2;
  };
  struct DecoderLayer {
    MhaParams self_attn;
    Norm norm1;
    MhaParams cross_attn;
    Norm norm2;
    FeedForward ff;
    Norm norm3;
  };

  Tensor positional(std::size_t batch, std::size_t length) const;
  void visit(const MhaParams::Visitor& fn) const;
  void check_tokens(const TokenSequence& seq, std::size_t vocab, const char* what) const;

  ModelConfig config_;
  Tensor src_embed_;
  Tensor tgt_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Tensor out_w_;
  Tensor out_b_;
  std::vector<double> pe_;  // max_len × d
};

// Sinusoidal position table [length × d].
std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d);

// ---------------------------------------------------------------------------

struct WindowClassifierConfig {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t in_channels = 3;
  std::size_t channels = 16;
  std::size_t heads = 2;
  std::size_t window = 4;
  std::size_t blocks = 2;
  std::size_t d_ff = 32;
  std::size_t classes = 4;
  double residual_dropout = 0.0;
  double activation_dropout = 0.0;
  double attention_dropout = 0.0;
  RelaxationConfig relax;
  WeightFn weight_fn = WeightFn::Softmax;

  void validate() const;
};

/// Encoder-only image classifier: per-pixel embedding, post-norm blocks of
/// windowed relaxed attention and feed-forward, mean pooling, linear head.
class WindowClassifier {
 public:
  WindowClassifier(WindowClassifierConfig config, std::uint64_t init_seed);

  const WindowClassifierConfig& config() const { return config_; }

  // images [n×h×w×in_channels] → logits [n×classes]
  Tensor logits(const Tensor& images, RngStream& rng, Phase phase,
                std::vector<double>* gammas = nullptr) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void load_parameters(std::span<const NamedTensor> tensors);

 private:
  struct Block {
    WindowAttnParams attn;
    Norm norm1;
    FeedForward ff;
    Norm norm2;
  };
  void visit(const MhaParams::Visitor& fn) const;

  WindowClassifierConfig config_;
  Tensor embed_w_, embed_b_;
  std::vector<Block> blocks_;
  Norm head_norm_;
  Tensor head_w_, head_b_;
};

// Shared implementation of load_parameters for any named parameter set.
void assign_parameters(std::span<const NamedTensor> target, std::span<const NamedTensor> source);

}  // namespace rat
