#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdmae/params.hpp"

namespace gdmae {

// File layout: magic "GDMAE\0" + version byte, then records of
//   u32 name length, name bytes, u8 dtype, u8 ndim, u64 dims[ndim], payload
// all little-endian.
inline constexpr char kCheckpointMagic[6] = {'G', 'D', 'M', 'A', 'E', '\0'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F64 = 0, U64 = 1, U8 = 2 };

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NotACheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class UnknownArrayError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointArray {
  std::string name;
  DType dtype = DType::F64;
  Shape dims;
  std::vector<double> f64;
  std::vector<std::uint64_t> u64;
  std::vector<std::uint8_t> u8;

  static CheckpointArray from_f64(std::string name, Shape dims, std::vector<double> values);
  static CheckpointArray from_u64(std::string name, std::vector<std::uint64_t> values);
  static CheckpointArray from_bytes(std::string name, const std::string& bytes);
  std::string as_string() const { return {u8.begin(), u8.end()}; }
};

struct Checkpoint {
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
  const CheckpointArray& get(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Copies the arrays named like `params` (after stripping `prefix`) into
/// them. Arrays under `prefix` with no matching parameter raise
/// UnknownArrayError; missing parameters raise CheckpointError.
void restore_params(const Checkpoint& ckpt, const std::string& prefix, const ParamList& params);

}  // namespace gdmae
