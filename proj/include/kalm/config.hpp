#pragma once

#include <string>

#include "kalm/inference.hpp"
#include "kalm/model.hpp"
#include "kalm/training.hpp"

namespace kalm {

// Flat key = value experiment configuration. Unknown keys are rejected;
// referenced files are checked for existence before any compute.
struct ExperimentConfig {
  std::string train_path, valid_path, test_path;
  std::string kb_path, prior_path, gold_path, type_map_path;
  std::string profile = "desk";  // desk | paper
  std::string mode = "uni";      // uni | bi
  bool feedback = false;
  bool lowercase = false;
  size_t min_count = 1;
  double prior_smoothing = 1.0;
  ModelConfig model;  // profile defaults, overridable per field
  TrainConfig train;
  DecodeConfig decode;

  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_text(const std::string& text, const std::string& origin);
  void apply_profile();   // fills model/train defaults from the profile name
  void validate() const;  // field ranges and file existence
};

}  // namespace kalm
