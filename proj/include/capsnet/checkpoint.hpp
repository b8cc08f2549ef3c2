#pragma once

#include <stdexcept>
#include <string>

#include "capsnet/config.hpp"
#include "capsnet/model.hpp"

namespace capsnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  ModelParams params;
};

/// Binary container: magic, version byte, config JSON, then every tensor with its
/// name and shape. Doubles are stored in host byte order.
void save_checkpoint(const std::string& path, const RunConfig& config, const ModelParams& params);

/// Rebuilds the parameter layout from the stored config and rejects any tensor whose
/// name or shape disagrees with it.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace capsnet
