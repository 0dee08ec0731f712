#ifndef CLIFFM_CHECKPOINT_HPP
#define CLIFFM_CHECKPOINT_HPP

#include <filesystem>
#include <string>

#include "cliffm/seqmodel.hpp"

namespace cliffm {

// Layout: 8-byte magic "CLIFFMCK", u64 little-endian header length, JSON
// header {format, config, metadata, tensors: [{name, shape, dtype, offset}]},
// then the float32 little-endian payload. `metadata_json` must be a JSON
// object (seed, step, source hashes, ...).
void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path,
                     const std::string& metadata_json = "{}");

struct LoadedCheckpoint {
  ModelParams<float> params;
  std::string metadata_json;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cliffm

#endif  // CLIFFM_CHECKPOINT_HPP
