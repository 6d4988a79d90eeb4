#include "rat/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "rat/init.hpp"

namespace rat {

void ModelConfig::validate() const {
  if (encoder_layers == 0 || decoder_layers == 0)
    throw std::invalid_argument("model needs at least one encoder and one decoder block");
  if (heads == 0 || d_model % heads != 0)
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  if (d_ff == 0 || max_len == 0) throw std::invalid_argument("d_ff and max_len must be positive");
  if (vocab_size <= kFirstContentToken || source_vocab() <= kFirstContentToken)
    throw std::invalid_argument("vocabularies must hold the reserved PAD/BOS/EOS ids");
  for (double p : {residual_dropout, activation_dropout, attention_dropout})
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rates must lie in [0, 1)");
  relax_self.validate();
  relax_cross.validate();
}

Norm Norm::init(std::size_t d) { return {constant_param({d}, 1.0), constant_param({d}, 0.0)}; }

FeedForward FeedForward::init(std::size_t d, std::size_t d_ff, RngStream& rng) {
  FeedForward f;
  f.w1 = uniform_param({d, d_ff}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  f.b1 = constant_param({d_ff}, 0.0);
  f.w2 = uniform_param({d_ff, d}, 1.0 / std::sqrt(static_cast<double>(d_ff)), rng);
  f.b2 = constant_param({d}, 0.0);
  return f;
}

Tensor FeedForward::operator()(const Tensor& x, double activation_dropout, RngStream& rng,
                               Phase phase) const {
  const Tensor hidden = dropout(relu(add_bias(matmul(x, w1), b1)), activation_dropout, rng, phase);
  return add_bias(matmul(hidden, w2), b2);
}

Tensor dropout(const Tensor& x, double p, RngStream& rng, Phase phase) {
  return attention_dropout(x, p, rng, phase);
}

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<double> pe(length * d);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  return pe;
}

void assign_parameters(std::span<const NamedTensor> target, std::span<const NamedTensor> source) {
  if (target.size() != source.size())
    throw DimensionError("parameter set has " + std::to_string(source.size()) +
                         " tensors, model expects " + std::to_string(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].name != source[i].name)
      throw DimensionError("parameter " + std::to_string(i) + " is '" + source[i].name +
                           "', model expects '" + target[i].name + "'");
    if (target[i].tensor.shape() != source[i].tensor.shape())
      throw DimensionError("parameter '" + target[i].name + "' has shape " +
                           shape_str(source[i].tensor.shape()) + ", model expects " +
                           shape_str(target[i].tensor.shape()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    Tensor dst = target[i].tensor;
    auto values = source[i].tensor.data();
    std::copy(values.begin(), values.end(), dst.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------
// Seq2Seq

Seq2Seq::Seq2Seq(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  RngStream rng(init_seed, "init");
  const auto d = config_.d_model;
  const double limit = 1.0 / std::sqrt(static_cast<double>(d));
  src_embed_ = uniform_param({config_.source_vocab(), d}, limit, rng);
  tgt_embed_ = uniform_param({config_.vocab_size, d}, limit, rng);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    EncoderLayer layer{MhaParams::init(d, config_.heads, rng), Norm::init(d),
                       FeedForward::init(d, config_.d_ff, rng), Norm::init(d)};
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    DecoderLayer layer;
    layer.self_attn = MhaParams::init(d, config_.heads, rng);
    layer.norm1 = Norm::init(d);
    layer.cross_attn = MhaParams::init(d, config_.heads, rng);
    layer.norm2 = Norm::init(d);
    layer.ff = FeedForward::init(d, config_.d_ff, rng);
    layer.norm3 = Norm::init(d);
    decoder_.push_back(std::move(layer));
  }
  out_w_ = uniform_param({d, config_.vocab_size}, limit, rng);
  out_b_ = constant_param({config_.vocab_size}, 0.0);
  pe_ = sinusoidal_positions(config_.max_len, d);
}

void Seq2Seq::check_tokens(const TokenSequence& seq, std::size_t vocab, const char* what) const {
  if (seq.empty()) throw std::invalid_argument(std::string(what) + " sequence is empty");
  if (seq.size() > config_.max_len)
    throw std::invalid_argument(std::string(what) + " length " + std::to_string(seq.size()) +
                                " exceeds max_len " + std::to_string(config_.max_len));
  for (auto t : seq)
    if (t >= vocab)
      throw std::out_of_range(std::string(what) + " token " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(vocab));
}

Tensor Seq2Seq::positional(std::size_t batch, std::size_t length) const {
  const auto d = config_.d_model;
  std::vector<double> data(batch * length * d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(pe_.begin(), length * d, data.begin() + b * length * d);
  return Tensor::from({batch * length, d}, std::move(data));
}

EncoderOutput Seq2Seq::encode(std::span<const TokenSequence> sources, RngStream& rng,
                              Phase phase, ForwardTrace* trace) const {
  if (sources.empty()) throw std::invalid_argument("encode: empty batch");
  const auto length = sources[0].size();
  std::vector<std::size_t> ids;
  ids.reserve(sources.size() * length);
  for (const auto& s : sources) {
    check_tokens(s, config_.source_vocab(), "source");
    if (s.size() != length) throw DimensionError("encode: batch sequences differ in length");
    ids.insert(ids.end(), s.begin(), s.end());
  }
  const auto batch = sources.size();
  const double emb_scale = std::sqrt(static_cast<double>(config_.d_model));
  Tensor x = add(scale(gather_rows(src_embed_, ids), emb_scale), positional(batch, length));
  x = dropout(x, config_.residual_dropout, rng, phase);

  AttentionOptions opts;
  opts.relax = config_.relax_self;
  opts.weight_fn = config_.self_weight_fn;
  opts.dropout_p = config_.attention_dropout;
  opts.phase = phase;
  opts.batch = batch;
  for (const auto& layer : encoder_) {
    MhaTrace mt;
    const Tensor a = multi_head_attention(x, x, x, layer.self_attn, opts, rng, &mt);
    if (trace) trace->self_gammas.push_back(mt.gamma);
    x = layer.norm1(add(x, dropout(a, config_.residual_dropout, rng, phase)));
    const Tensor f = layer.ff(x, config_.activation_dropout, rng, phase);
    x = layer.norm2(add(x, dropout(f, config_.residual_dropout, rng, phase)));
  }
  return {x, batch, length};
}

EncoderOutput Seq2Seq::encode(const TokenSequence& source, RngStream& rng, Phase phase) const {
  return encode(std::span<const TokenSequence>(&source, 1), rng, phase);
}

Tensor Seq2Seq::embed_targets(std::span<const TokenSequence> prefixes) const {
  if (prefixes.empty()) throw std::invalid_argument("decoder: empty batch");
  const auto length = prefixes[0].size();
  std::vector<std::size_t> ids;
  ids.reserve(prefixes.size() * length);
  for (const auto& p : prefixes) {
    check_tokens(p, config_.vocab_size, "target prefix");
    if (p.size() != length) throw DimensionError("decoder: batch prefixes differ in length");
    ids.insert(ids.end(), p.begin(), p.end());
  }
  return gather_rows(tgt_embed_, ids);
}

Tensor Seq2Seq::decode_embedded(const EncoderOutput& h, const Tensor& target_embeddings,
                                std::size_t batch, RngStream& rng, Phase phase,
                                ForwardTrace* trace) const {
  const auto d = config_.d_model;
  if (!h.h.defined() || h.length == 0) throw std::invalid_argument("decoder: empty encoder output");
  if (batch == 0 || target_embeddings.dim() != 2 || target_embeddings.cols() != d ||
      target_embeddings.rows() % batch)
    throw DimensionError("decoder: target embeddings " + shape_str(target_embeddings.shape()) +
                         " do not form " + std::to_string(batch) + " prefixes");
  const auto length = target_embeddings.rows() / batch;
  if (length > config_.max_len)
    throw std::invalid_argument("decoder: prefix length " + std::to_string(length) +
                                " exceeds max_len " + std::to_string(config_.max_len));

  Tensor memory = h.h;
  if (h.batch != batch) {
    if (h.batch != 1)
      throw DimensionError("decoder: encoder batch " + std::to_string(h.batch) +
                           " does not match " + std::to_string(batch) + " prefixes");
    std::vector<Tensor> copies(batch, h.h);
    memory = concat_rows(copies);
  }

  const double emb_scale = std::sqrt(static_cast<double>(d));
  Tensor y = add(scale(target_embeddings, emb_scale), positional(batch, length));
  y = dropout(y, config_.residual_dropout, rng, phase);

  std::vector<std::uint8_t> causal(length * length, 0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) causal[i * length + j] = 1;

  AttentionOptions self_opts;
  self_opts.mask = causal;
  self_opts.dropout_p = config_.attention_dropout;
  self_opts.phase = phase;
  self_opts.batch = batch;

  AttentionOptions cross_opts;
  cross_opts.relax = config_.relax_cross;
  cross_opts.weight_fn = config_.cross_weight_fn;
  cross_opts.dropout_p = config_.attention_dropout;
  cross_opts.phase = phase;
  cross_opts.batch = batch;

  for (const auto& layer : decoder_) {
    const Tensor s = multi_head_attention(y, y, y, layer.self_attn, self_opts, rng);
    y = layer.norm1(add(y, dropout(s, config_.residual_dropout, rng, phase)));
    MhaTrace mt;
    const Tensor c = multi_head_attention(y, memory, memory, layer.cross_attn, cross_opts, rng, &mt);
    if (trace) {
      trace->cross_gammas.push_back(mt.gamma);
      if (trace->keep_cross_weights) trace->cross.push_back(mt);
    }
    y = layer.norm2(add(y, dropout(c, config_.residual_dropout, rng, phase)));
    const Tensor f = layer.ff(y, config_.activation_dropout, rng, phase);
    y = layer.norm3(add(y, dropout(f, config_.residual_dropout, rng, phase)));
  }
  return add_bias(matmul(y, out_w_), out_b_);
}

Tensor Seq2Seq::decoder_logits(const EncoderOutput& h, std::span<const TokenSequence> prefixes,
                               RngStream& rng, Phase phase, ForwardTrace* trace) const {
  return decode_embedded(h, embed_targets(prefixes), prefixes.size(), rng, phase, trace);
}

std::vector<std::vector<double>> Seq2Seq::next_log_probs(const EncoderOutput& h,
                                                         std::span<const TokenSequence> prefixes,
                                                         RngStream& rng, Phase phase) const {
  NoGradGuard no_grad;
  const Tensor logits = decoder_logits(h, prefixes, rng, phase);
  const auto length = prefixes[0].size();
  const auto vocab = config_.vocab_size;
  std::vector<Tensor> last;
  last.reserve(prefixes.size());
  for (std::size_t b = 0; b < prefixes.size(); ++b)
    last.push_back(slice_rows(logits, b * length + length - 1, 1));
  const Tensor lp = log_softmax_rows(concat_rows(last));
  std::vector<std::vector<double>> out(prefixes.size());
  for (std::size_t b = 0; b < prefixes.size(); ++b)
    out[b].assign(lp.data().begin() + b * vocab, lp.data().begin() + (b + 1) * vocab);
  return out;
}

std::vector<double> Seq2Seq::decode_step(const EncoderOutput& h, const TokenSequence& prefix,
                                         RngStream& rng, Phase phase) const {
  NoGradGuard no_grad;
  const Tensor logits = decoder_logits(h, std::span<const TokenSequence>(&prefix, 1), rng, phase);
  const Tensor p = softmax_rows(slice_rows(logits, prefix.size() - 1, 1));
  return {p.data().begin(), p.data().end()};
}

Tensor Seq2Seq::forward_teacher_forced(const TokenSequence& x, const TokenSequence& y,
                                       RngStream& rng, Phase phase) const {
  if (y.empty() || y.front() != kBos)
    throw std::invalid_argument("teacher forcing input must start with BOS");
  const EncoderOutput h = encode(x, rng, phase);
  return softmax_rows(decoder_logits(h, std::span<const TokenSequence>(&y, 1), rng, phase));
}

void Seq2Seq::visit(const MhaParams::Visitor& fn) const {
  fn("src_embed", src_embed_);
  fn("tgt_embed", tgt_embed_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const auto p = "encoder." + std::to_string(i);
    const auto& l = encoder_[i];
    l.self_attn.visit(p + ".self_attn", fn);
    fn(p + ".norm1.gain", l.norm1.gain);
    fn(p + ".norm1.bias", l.norm1.bias);
    fn(p + ".ff.w1", l.ff.w1);
    fn(p + ".ff.b1", l.ff.b1);
    fn(p + ".ff.w2", l.ff.w2);
    fn(p + ".ff.b2", l.ff.b2);
    fn(p + ".norm2.gain", l.norm2.gain);
    fn(p + ".norm2.bias", l.norm2.bias);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto p = "decoder." + std::to_string(i);
    const auto& l = decoder_[i];
    l.self_attn.visit(p + ".self_attn", fn);
    fn(p + ".norm1.gain", l.norm1.gain);
    fn(p + ".norm1.bias", l.norm1.bias);
    l.cross_attn.visit(p + ".cross_attn", fn);
    fn(p + ".norm2.gain", l.norm2.gain);
    fn(p + ".norm2.bias", l.norm2.bias);
    fn(p + ".ff.w1", l.ff.w1);
    fn(p + ".ff.b1", l.ff.b1);
    fn(p + ".ff.w2", l.ff.w2);
    fn(p + ".ff.b2", l.ff.b2);
    fn(p + ".norm3.gain", l.norm3.gain);
    fn(p + ".norm3.bias", l.norm3.bias);
  }
  fn("out.w", out_w_);
  fn("out.b", out_b_);
}

std::vector<NamedTensor> Seq2Seq::named_parameters() const {
  std::vector<NamedTensor> out;
  visit([&out](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> Seq2Seq::parameters() const {
  std::vector<Tensor> out;
  visit([&out](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

void Seq2Seq::load_parameters(std::span<const NamedTensor> tensors) {
  assign_parameters(named_parameters(), tensors);
}

std::size_t Seq2Seq::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

std::size_t Seq2Seq::parameter_count(const ModelConfig& c) {
  const auto d = c.d_model;
  const auto mha = 4 * d * d + d;
  const auto ff = 2 * d * c.d_ff + c.d_ff + d;
  const auto norm = 2 * d;
  return c.source_vocab() * d + c.vocab_size * d + c.encoder_layers * (mha + ff + 2 * norm) +
         c.decoder_layers * (2 * mha + ff + 3 * norm) + d * c.vocab_size + c.vocab_size;
}

// ---------------------------------------------------------------------------
// WindowClassifier

void WindowClassifierConfig::validate() const {
  if (window == 0 || height % window || width % window)
    throw std::invalid_argument("image size must be a multiple of the window side");
  if (heads == 0 || channels % heads)
    throw std::invalid_argument("channels must be divisible by heads");
  if (channels % 4) throw std::invalid_argument("channels must be divisible by 4");
  if (blocks == 0 || classes < 2 || in_channels == 0 || d_ff == 0)
    throw std::invalid_argument("window classifier sizes must be positive");
  for (double p : {residual_dropout, activation_dropout, attention_dropout})
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rates must lie in [0, 1)");
  relax.validate();
}

WindowClassifier::WindowClassifier(WindowClassifierConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  RngStream rng(init_seed, "init");
  const auto c = config_.channels;
  embed_w_ = uniform_param({config_.in_channels, c},
                           1.0 / std::sqrt(static_cast<double>(config_.in_channels)), rng);
  embed_b_ = constant_param({c}, 0.0);
  for (std::size_t i = 0; i < config_.blocks; ++i)
    blocks_.push_back({WindowAttnParams::init(c, config_.heads, config_.window, rng), Norm::init(c),
                       FeedForward::init(c, config_.d_ff, rng), Norm::init(c)});
  head_norm_ = Norm::init(c);
  head_w_ = uniform_param({c, config_.classes}, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  head_b_ = constant_param({config_.classes}, 0.0);
}

Tensor WindowClassifier::logits(const Tensor& images, RngStream& rng, Phase phase,
                                std::vector<double>* gammas) const {
  const auto& cfg = config_;
  if (images.dim() != 4 || images.size(1) != cfg.height || images.size(2) != cfg.width ||
      images.size(3) != cfg.in_channels)
    throw DimensionError("images " + shape_str(images.shape()) + " do not match [n×" +
                         std::to_string(cfg.height) + "×" + std::to_string(cfg.width) + "×" +
                         std::to_string(cfg.in_channels) + "]");
  const auto n = images.size(0);
  const auto pixels = cfg.height * cfg.width;
  const Shape map_shape{n, cfg.height, cfg.width, cfg.channels};
  Tensor x = add_bias(matmul(reshape(images, {n * pixels, cfg.in_channels}), embed_w_), embed_b_);

  WindowOptions opts;
  opts.relax = cfg.relax;
  opts.weight_fn = cfg.weight_fn;
  opts.dropout_p = cfg.attention_dropout;
  opts.phase = phase;
  for (const auto& block : blocks_) {
    MhaTrace mt;
    const Tensor a = reshape(windowed_mha(reshape(x, map_shape), block.attn, opts, rng, &mt),
                             {n * pixels, cfg.channels});
    if (gammas) gammas->push_back(mt.gamma);
    x = block.norm1(add(x, dropout(a, cfg.residual_dropout, rng, phase)));
    const Tensor f = block.ff(x, cfg.activation_dropout, rng, phase);
    x = block.norm2(add(x, dropout(f, cfg.residual_dropout, rng, phase)));
  }
  const Tensor pooled = head_norm_(block_mean_rows(x, n));
  return add_bias(matmul(pooled, head_w_), head_b_);
}

void WindowClassifier::visit(const MhaParams::Visitor& fn) const {
  fn("embed.w", embed_w_);
  fn("embed.b", embed_b_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto p = "block." + std::to_string(i);
    const auto& b = blocks_[i];
    b.attn.visit(p + ".attn", fn);
    fn(p + ".norm1.gain", b.norm1.gain);
    fn(p + ".norm1.bias", b.norm1.bias);
    fn(p + ".ff.w1", b.ff.w1);
    fn(p + ".ff.b1", b.ff.b1);
    fn(p + ".ff.w2", b.ff.w2);
    fn(p + ".ff.b2", b.ff.b2);
    fn(p + ".norm2.gain", b.norm2.gain);
    fn(p + ".norm2.bias", b.norm2.bias);
  }
  fn("head.norm.gain", head_norm_.gain);
  fn("head.norm.bias", head_norm_.bias);
  fn("head.w", head_w_);
  fn("head.b", head_b_);
}

std::vector<NamedTensor> WindowClassifier::named_parameters() const {
  std::vector<NamedTensor> out;
  visit([&out](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> WindowClassifier::parameters() const {
  std::vector<Tensor> out;
  visit([&out](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

void WindowClassifier::load_parameters(std::span<const NamedTensor> tensors) {
  assign_parameters(named_parameters(), tensors);
}

}  // namespace rat
