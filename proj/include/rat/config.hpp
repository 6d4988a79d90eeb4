#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "rat/training.hpp"
#include "rat/transformer.hpp"

namespace rat {

using Json = nlohmann::json;

// Missing keys keep the defaults of `base`; unknown keys throw
// std::invalid_argument naming the key.
Json to_json(const RelaxationConfig& c);
RelaxationConfig relaxation_from_json(const Json& j, RelaxationConfig base = {});

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});

Json to_json(const WindowClassifierConfig& c);
WindowClassifierConfig classifier_config_from_json(const Json& j, WindowClassifierConfig base = {});

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace rat
