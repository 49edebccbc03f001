#pragma once

#include "powerformer/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace powerformer {

// Flat archive: "PFCKPT\0\0", u32 version, u64 record count, then per record
// u32 name length, name bytes, u32 rank, u64 extents[rank], f64 data (row-major).
// Every integer and float is little-endian.
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major

  bool operator==(const CheckpointRecord&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> load_checkpoint(const std::string& path);

CheckpointRecord to_record(const std::string& name, const Eigen::MatrixXd& m);
Eigen::MatrixXd from_record(const CheckpointRecord& r);

std::vector<CheckpointRecord> to_records(const ad::ParameterStore<double>& store);

// Copies every store parameter from the matching record. Missing names and shape
// differences raise ShapeMismatch; records not in the store are ignored.
void assign_records(ad::ParameterStore<double>& store, const std::vector<CheckpointRecord>& records);

}  // namespace powerformer
