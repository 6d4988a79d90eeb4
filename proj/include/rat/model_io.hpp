#pragma once

#include <filesystem>

#include "rat/config.hpp"
#include "rat/transformer.hpp"

namespace rat {

// Writes the parameters to `path` and the config as JSON to `path` + ".json".
void checkpoint_save(const Seq2Seq& model, const std::filesystem::path& path);
void checkpoint_save(const WindowClassifier& model, const std::filesystem::path& path);

// Rebuilds the model from the JSON sidecar, then loads the parameters.
Seq2Seq checkpoint_load(const std::filesystem::path& path);
// Loads into a model built from `config`; throws DimensionError naming the
// first tensor that does not fit.
Seq2Seq checkpoint_load(const std::filesystem::path& path, const ModelConfig& config);
WindowClassifier classifier_checkpoint_load(const std::filesystem::path& path);

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

}  // namespace rat
