#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmreid/cca.hpp"
#include "xmreid/common.hpp"
#include "xmreid/trainer.hpp"

namespace xmreid {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major

  bool operator==(const NamedArray&) const = default;
};

// Layout, all little-endian:
//   "XMRD" | u32 version | u64 metadata length | metadata (JSON) |
//   u32 array count | per array: u32 name length, name, u32 ndim, u64 dims,
//   f64 data | u64 FNV-1a of every preceding byte
struct Checkpoint {
  std::string metadata = "{}";
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  const NamedArray& at(std::string_view name) const;
  void put(NamedArray a);  // replaces an array of the same name
  void put_matrix(const std::string& name, const Matrix& m);
  void put_vector(const std::string& name, const Vector& v);
  Matrix matrix(std::string_view name) const;
  Vector vector(std::string_view name) const;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CheckpointInfo {
  std::string config_hash;
  std::uint64_t seed = 0;
  int stage = 0;
  int epoch = 0;
  int strategy = 0;
};

Checkpoint model_to_checkpoint(const CrossModalModel& model, const CheckpointInfo& info);
CrossModalModel model_from_checkpoint(const Checkpoint& c);
CheckpointInfo checkpoint_info(const Checkpoint& c);

// CCA arrays live under "cca/"; side x is the image side.
void put_cca(Checkpoint& c, const CcaModel& cca);
std::optional<CcaModel> cca_from_checkpoint(const Checkpoint& c);

}  // namespace xmreid
