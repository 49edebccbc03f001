#include "powerformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace powerformer {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw Error(ErrorCode::Io, "truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<CheckpointRecord>& records) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    std::uint64_t count = 1;
    for (auto e : r.shape) count *= e;
    if (count != r.data.size()) {
      throw Error(ErrorCode::ShapeMismatch, "record " + r.name + " shape does not match its data length");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) put<std::uint64_t>(out, e);
    for (double v : r.data) put<double>(out, v);
  }
  if (!out) throw Error(ErrorCode::Io, "checkpoint write failed");
}

std::vector<CheckpointRecord> read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::Io, "not a checkpoint archive");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Io, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(in);
  std::vector<CheckpointRecord> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = get<std::uint32_t>(in);
    r.name.resize(len);
    if (!in.read(r.name.data(), len)) throw Error(ErrorCode::Io, "truncated checkpoint");
    const auto rank = get<std::uint32_t>(in);
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.shape.push_back(get<std::uint64_t>(in));
      total *= r.shape.back();
    }
    r.data.resize(total);
    for (auto& v : r.data) v = get<double>(in);
    records.push_back(std::move(r));
  }
  return records;
}

void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  write_checkpoint(out, records);
}

std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

CheckpointRecord to_record(const std::string& name, const Eigen::MatrixXd& m) {
  CheckpointRecord r;
  r.name = name;
  r.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  r.data.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(r.data.data(), m.rows(), m.cols()) = m;
  return r;
}

Eigen::MatrixXd from_record(const CheckpointRecord& r) {
  if (r.shape.size() != 2) throw Error(ErrorCode::ShapeMismatch, "record " + r.name + " is not two-dimensional");
  const auto rows = static_cast<Eigen::Index>(r.shape[0]);
  const auto cols = static_cast<Eigen::Index>(r.shape[1]);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(r.data.data(), rows, cols);
}

std::vector<CheckpointRecord> to_records(const ad::ParameterStore<double>& store) {
  std::vector<CheckpointRecord> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back(to_record(p.name, p.value));
  return out;
}

void assign_records(ad::ParameterStore<double>& store, const std::vector<CheckpointRecord>& records) {
  for (auto& p : store) {
    const CheckpointRecord* match = nullptr;
    for (const auto& r : records) {
      if (r.name == p.name) {
        match = &r;
        break;
      }
    }
    if (!match) throw Error(ErrorCode::ShapeMismatch, "checkpoint has no parameter " + p.name);
    const Eigen::MatrixXd m = from_record(*match);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter " + p.name + " expects " +
                                                ad::shape_str(p.value.rows(), p.value.cols()) + ", checkpoint has " +
                                                ad::shape_str(m.rows(), m.cols()));
    }
    p.value = m;
  }
}

}  // namespace powerformer
