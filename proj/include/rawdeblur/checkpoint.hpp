#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rawdeblur/model.hpp"

// Checkpoint file, little-endian throughout:
//   "DBRW", u16 version, u8 variant, u16 base_channels, u8 n_resblocks,
//   u8 multiplier, u32 entry count, then per entry: u16 name length, name,
//   u8 rank, rank x u32 dims, f32 values.
// An optional "TRST" trailer carries the training state needed to resume.
namespace rawdeblur::model {

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kTrainingStateVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct TrainingState {
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;  ///< epochs completed
  std::uint64_t step = 0;   ///< optimizer steps taken
  double lr0 = 0.0;
  std::uint32_t epochs_flat = 0;
  std::uint32_t epochs_decay = 0;
  std::uint32_t batch_size = 0;
  std::uint32_t crop_size = 0;
  double lambda = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double adam_eps = 0.0;
  double bn_momentum = 0.0;
  double bn_eps = 0.0;
  /// First and second Adam moments, one array per trainable parameter in canonical order.
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<CheckpointEntry> entries;
  std::optional<TrainingState> training;

  const CheckpointEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (truncated or malformed), VersionError or DuplicateParameterError.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters and running statistics of `net`, rounded to f32.
template <typename T>
Checkpoint snapshot(DeblurNet<T>& net);

/// Copies every entry into `net`. Throws ConfigMismatchError when the
/// configurations differ, MissingParameterError for absent or unknown names,
/// ParameterShapeError for dimension conflicts.
template <typename T>
void restore(DeblurNet<T>& net, const Checkpoint& ckpt);

/// Builds a network from the stored configuration and restores it.
template <typename T>
DeblurNet<T> instantiate(const Checkpoint& ckpt);

}  // namespace rawdeblur::model
