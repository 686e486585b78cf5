#pragma once
// Model checkpoint container.
//
//   magic "CTXK", u32 version (1), u64 step,
//   u32 config length + model config text (sorted key = value lines),
//   u32 tensor count, then per tensor:
//     u32 name length + name, u32 rows, u32 cols, float32 LE payload
//
// Tensors are stored in the model's parameter order; loading matches by name
// and rejects any missing, extra, or mis-shaped tensor.

#include <cstddef>
#include <memory>
#include <string>

#include "ctxtts/model.hpp"

namespace ctxtts::checkpoint {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode(const model::AcousticModel<float>& m, std::size_t step);
// Atomic write (temporary + rename).
void save(const std::string& path, const model::AcousticModel<float>& m, std::size_t step);

struct Loaded {
  std::unique_ptr<model::AcousticModel<float>> model;
  std::size_t step = 0;
};

// Throws CheckpointError on a missing, truncated, or inconsistent file.
Loaded load(const std::string& path);
Loaded decode(const std::string& bytes, const std::string& what);
// Copies tensors into an existing model after validating every shape.
void load_into(const std::string& path, model::AcousticModel<float>& m);

std::string model_config_text(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_text(const std::string& text);

}  // namespace ctxtts::checkpoint
