#include "rat/config.hpp"

#include <algorithm>
#include <stdexcept>

namespace rat {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&key](const char* a) { return key == a; });
    if (!known) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

namespace {

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Json to_json(const RelaxationConfig& c) {
  return {{"gamma", c.gamma0}, {"sigma2", c.sigma2}, {"mode", to_string(c.mode)}, {"fuzzy", c.fuzzy}};
}

RelaxationConfig relaxation_from_json(const Json& j, RelaxationConfig c) {
  check_keys(j, {"gamma", "sigma2", "mode", "fuzzy"}, "relaxation config");
  read(j, "gamma", c.gamma0);
  read(j, "sigma2", c.sigma2);
  read(j, "fuzzy", c.fuzzy);
  if (j.contains("mode")) c.mode = relax_mode_from_string(j.at("mode").get<std::string>());
  c.validate();
  return c;
}

Json to_json(const ModelConfig& c) {
  return {{"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},
          {"d_model", c.d_model},
          {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size},
          {"src_vocab_size", c.src_vocab_size},
          {"max_len", c.max_len},
          {"residual_dropout", c.residual_dropout},
          {"activation_dropout", c.activation_dropout},
          {"attention_dropout", c.attention_dropout},
          {"relax_self", to_json(c.relax_self)},
          {"relax_cross", to_json(c.relax_cross)},
          {"self_weight_fn", to_string(c.self_weight_fn)},
          {"cross_weight_fn", to_string(c.cross_weight_fn)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  check_keys(j,
             {"encoder_layers", "decoder_layers", "heads", "d_model", "d_ff", "vocab_size",
              "src_vocab_size", "max_len", "residual_dropout", "activation_dropout",
              "attention_dropout", "relax_self", "relax_cross", "self_weight_fn", "cross_weight_fn"},
             "model config");
  read(j, "encoder_layers", c.encoder_layers);
  read(j, "decoder_layers", c.decoder_layers);
  read(j, "heads", c.heads);
  read(j, "d_model", c.d_model);
  read(j, "d_ff", c.d_ff);
  read(j, "vocab_size", c.vocab_size);
  read(j, "src_vocab_size", c.src_vocab_size);
  read(j, "max_len", c.max_len);
  read(j, "residual_dropout", c.residual_dropout);
  read(j, "activation_dropout", c.activation_dropout);
  read(j, "attention_dropout", c.attention_dropout);
  if (j.contains("relax_self")) c.relax_self = relaxation_from_json(j.at("relax_self"));
  if (j.contains("relax_cross")) c.relax_cross = relaxation_from_json(j.at("relax_cross"));
  if (j.contains("self_weight_fn"))
    c.self_weight_fn = weight_fn_from_string(j.at("self_weight_fn").get<std::string>());
  if (j.contains("cross_weight_fn"))
    c.cross_weight_fn = weight_fn_from_string(j.at("cross_weight_fn").get<std::string>());
  return c;
}

Json to_json(const WindowClassifierConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"in_channels", c.in_channels},
          {"channels", c.channels},
          {"heads", c.heads},
          {"window", c.window},
          {"blocks", c.blocks},
          {"d_ff", c.d_ff},
          {"classes", c.classes},
          {"residual_dropout", c.residual_dropout},
          {"activation_dropout", c.activation_dropout},
          {"attention_dropout", c.attention_dropout},
          {"relax", to_json(c.relax)},
          {"weight_fn", to_string(c.weight_fn)}};
}

WindowClassifierConfig classifier_config_from_json(const Json& j, WindowClassifierConfig c) {
  check_keys(j,
             {"height", "width", "in_channels", "channels", "heads", "window", "blocks", "d_ff",
              "classes", "residual_dropout", "activation_dropout", "attention_dropout", "relax",
              "weight_fn"},
             "classifier config");
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "in_channels", c.in_channels);
  read(j, "channels", c.channels);
  read(j, "heads", c.heads);
  read(j, "window", c.window);
  read(j, "blocks", c.blocks);
  read(j, "d_ff", c.d_ff);
  read(j, "classes", c.classes);
  read(j, "residual_dropout", c.residual_dropout);
  read(j, "activation_dropout", c.activation_dropout);
  read(j, "attention_dropout", c.attention_dropout);
  if (j.contains("relax")) c.relax = relaxation_from_json(j.at("relax"));
  if (j.contains("weight_fn")) c.weight_fn = weight_fn_from_string(j.at("weight_fn").get<std::string>());
  return c;
}

Json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"label_smoothing", c.label_smoothing},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"stop_at_accuracy", c.stop_at_accuracy}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  check_keys(j,
             {"lr", "beta1", "beta2", "eps", "label_smoothing", "steps", "batch_size", "seed",
              "eval_every", "stop_at_accuracy"},
             "train config");
  read(j, "lr", c.lr);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "eps", c.eps);
  read(j, "label_smoothing", c.label_smoothing);
  read(j, "steps", c.steps);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "stop_at_accuracy", c.stop_at_accuracy);
  c.validate();
  return c;
}

}  // namespace rat
