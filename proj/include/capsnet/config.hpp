#pragma once

#include <stdexcept>
#include <string>

#include "capsnet/model.hpp"

namespace capsnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { classification, qa };

/// Everything one training run needs. Paths are resolved against the config file's
/// directory when loaded from disk.
struct RunConfig {
  Task task = Task::classification;
  std::string train_path;
  std::string test_path;
  std::string embeddings_path;
  std::string checkpoint_path;
  ModelConfig model;  // embed_dim is replaced by the embedding file's dimension when training
  TrainConfig train;
};

/// Flat JSON object; every key is optional and unknown keys are errors.
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

/// Inverse of parse_run_config (paths written as stored).
std::string run_config_json(const RunConfig& cfg);

/// Small model and schedule sized for the synthetic corpora (embedding dim 32 for
/// classification, 16 for QA); paths are left empty.
RunConfig toy_run_config(Task task, std::size_t n_labels = 6);

const char* task_name(Task t);
const char* method_name(RoutingMethod m);

}  // namespace capsnet
