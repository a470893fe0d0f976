#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sembridge/nn.hpp"
#include "sembridge/tensor.hpp"

namespace sembridge {

// Binary tensor container: consecutive little-endian float32 blobs plus a
// JSON sidecar manifest carrying the shapes.
void write_tensor_file(const std::string &bin_path, const std::string &manifest_path,
                       const std::vector<const TensorT<float> *> &tensors);
std::vector<TensorT<float>> read_tensor_file(const std::string &bin_path,
                                             const std::string &manifest_path);

// Checkpoint directory: manifest.json (names, shapes, frozen flags, roles,
// free-form meta) plus one float32 blob file per parameter.
struct CheckpointEntry {
  std::string name;
  TensorT<float> value;
  bool frozen = false;
  std::string role;  // e.g. "generator", "aux"; aux heads are marked non-exported
  bool exported = true;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::string meta_json;  // serialized free-form metadata

  const CheckpointEntry *find(const std::string &name) const;
};

void save_checkpoint(const std::string &dir, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::string &dir);

// Snapshot/restore helpers between live parameters and checkpoints.
Checkpoint snapshot_params(const std::vector<ParameterT<float> *> &params,
                           const std::string &role = "");
// Returns the number of parameters restored; throws on shape mismatch.
size_t restore_params(const Checkpoint &ckpt, const std::vector<ParameterT<float> *> &params);

uint64_t file_content_hash(const std::string &path);
uint64_t checkpoint_hash(const Checkpoint &ckpt);

}  // namespace sembridge
