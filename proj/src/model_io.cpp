#include "rat/model_io.hpp"

#include <fstream>

namespace rat {

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

namespace {

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Json::parse(in);
}

}  // namespace

void checkpoint_save(const Seq2Seq& model, const std::filesystem::path& path) {
  save_tensors(path, model.named_parameters());
  write_json(config_sidecar(path), {{"kind", "seq2seq"}, {"model", to_json(model.config())}});
}

void checkpoint_save(const WindowClassifier& model, const std::filesystem::path& path) {
  save_tensors(path, model.named_parameters());
  write_json(config_sidecar(path), {{"kind", "window_classifier"}, {"model", to_json(model.config())}});
}

Seq2Seq checkpoint_load(const std::filesystem::path& path, const ModelConfig& config) {
  const auto tensors = load_tensors(path);
  Seq2Seq model(config, 0);
  model.load_parameters(tensors);
  return model;
}

Seq2Seq checkpoint_load(const std::filesystem::path& path) {
  const Json j = read_json(config_sidecar(path));
  if (j.value("kind", "") != "seq2seq")
    throw FormatError(config_sidecar(path).string() + " does not describe a seq2seq model");
  return checkpoint_load(path, model_config_from_json(j.at("model")));
}

WindowClassifier classifier_checkpoint_load(const std::filesystem::path& path) {
  const Json j = read_json(config_sidecar(path));
  if (j.value("kind", "") != "window_classifier")
    throw FormatError(config_sidecar(path).string() + " does not describe a window classifier");
  WindowClassifier model(classifier_config_from_json(j.at("model")), 0);
  model.load_parameters(load_tensors(path));
  return model;
}

}  // namespace rat
