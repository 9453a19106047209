#pragma once

#include "gormpo/common.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gormpo {

// Single-file container of named, typed 2-D arrays with a version tag.
// Layout (little-endian):
//   magic "GPAC" | u32 version | u32 entry count |
//   per entry: u16 name length | name | u8 dtype | u64 rows | u64 cols | data
// dtype: 0 = f32, 1 = f64, 2 = i64, 3 = u8. Data is column-major.
class ArrayFile {
 public:
  enum class DType : uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3 };

  struct Entry {
    DType dtype;
    uint64_t rows = 0, cols = 0;
    std::vector<unsigned char> raw;
  };

  explicit ArrayFile(uint32_t version = 1) : version_(version) {}

  uint32_t version() const { return version_; }

  // Matrices are quantized to f32 with put_f32 (the dataset convention) or
  // kept at full precision with put_f64 (the checkpoint convention).
  void put_f32(const std::string& name, const Mat& m) {
    Entry e{DType::F32, uint64_t(m.rows()), uint64_t(m.cols()), {}};
    e.raw.resize(sizeof(float) * m.size());
    Eigen::MatrixXf f = m.cast<float>();
    std::memcpy(e.raw.data(), f.data(), e.raw.size());
    entries_[name] = std::move(e);
  }
  void put_f64(const std::string& name, const Mat& m) {
    Entry e{DType::F64, uint64_t(m.rows()), uint64_t(m.cols()), {}};
    e.raw.resize(sizeof(double) * m.size());
    std::memcpy(e.raw.data(), m.data(), e.raw.size());
    entries_[name] = std::move(e);
  }
  void put_i64(const std::string& name, const std::vector<int64_t>& v) {
    Entry e{DType::I64, uint64_t(v.size()), 1, {}};
    e.raw.resize(sizeof(int64_t) * v.size());
    std::memcpy(e.raw.data(), v.data(), e.raw.size());
    entries_[name] = std::move(e);
  }
  void put_u8(const std::string& name, const std::vector<uint8_t>& v) {
    Entry e{DType::U8, uint64_t(v.size()), 1, {}};
    e.raw.assign(v.begin(), v.end());
    entries_[name] = std::move(e);
  }
  void put_string(const std::string& name, const std::string& s) {
    put_u8(name, std::vector<uint8_t>(s.begin(), s.end()));
  }
  void put_scalar(const std::string& name, double x) {
    put_f64(name, Mat::Constant(1, 1, x));
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Mat get_mat(const std::string& name) const {
    const Entry& e = find(name);
    Mat m(Eigen::Index(e.rows), Eigen::Index(e.cols));
    if (e.dtype == DType::F32) {
      Eigen::MatrixXf f(Eigen::Index(e.rows), Eigen::Index(e.cols));
      std::memcpy(f.data(), e.raw.data(), e.raw.size());
      m = f.cast<double>();
    } else if (e.dtype == DType::F64) {
      std::memcpy(m.data(), e.raw.data(), e.raw.size());
    } else {
      throw FormatError("field '" + name + "' is not a float array");
    }
    return m;
  }
  std::vector<int64_t> get_i64(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != DType::I64) throw FormatError("field '" + name + "' is not i64");
    std::vector<int64_t> v(e.rows * e.cols);
    std::memcpy(v.data(), e.raw.data(), e.raw.size());
    return v;
  }
  std::vector<uint8_t> get_u8(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != DType::U8) throw FormatError("field '" + name + "' is not u8");
    return std::vector<uint8_t>(e.raw.begin(), e.raw.end());
  }
  std::string get_string(const std::string& name) const {
    auto v = get_u8(name);
    return std::string(v.begin(), v.end());
  }
  double get_scalar(const std::string& name) const {
    Mat m = get_mat(name);
    if (m.size() != 1) throw FormatError("field '" + name + "' is not a scalar");
    return m(0, 0);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write("GPAC", 4);
    write_pod(out, version_);
    write_pod(out, uint32_t(entries_.size()));
    for (const auto& [name, e] : entries_) {
      write_pod(out, uint16_t(name.size()));
      out.write(name.data(), std::streamsize(name.size()));
      write_pod(out, uint8_t(e.dtype));
      write_pod(out, e.rows);
      write_pod(out, e.cols);
      out.write(reinterpret_cast<const char*>(e.raw.data()), std::streamsize(e.raw.size()));
    }
    if (!out) throw FormatError("write failed for '" + path + "'");
  }

  // Fully parses before returning, so a truncated file never yields a
  // partially-populated container.
  static ArrayFile load(const std::string& path, uint32_t expected_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GPAC", 4) != 0)
      throw FormatError("'" + path + "': bad magic (field 'magic')");
    ArrayFile af;
    af.version_ = read_pod<uint32_t>(in, path, "version");
    if (af.version_ != expected_version)
      throw FormatError("'" + path + "': version " + std::to_string(af.version_) +
                        ", expected " + std::to_string(expected_version) + " (field 'version')");
    auto count = read_pod<uint32_t>(in, path, "entry count");
    for (uint32_t i = 0; i < count; ++i) {
      auto name_len = read_pod<uint16_t>(in, path, "name length");
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      if (!in) throw FormatError("'" + path + "': truncated (field 'name')");
      Entry e;
      e.dtype = DType(read_pod<uint8_t>(in, path, name + ".dtype"));
      e.rows = read_pod<uint64_t>(in, path, name + ".rows");
      e.cols = read_pod<uint64_t>(in, path, name + ".cols");
      size_t elem = e.dtype == DType::F32 ? 4 : e.dtype == DType::F64 ? 8
                    : e.dtype == DType::I64 ? 8 : 1;
      e.raw.resize(elem * e.rows * e.cols);
      in.read(reinterpret_cast<char*>(e.raw.data()), std::streamsize(e.raw.size()));
      if (!in) throw FormatError("'" + path + "': truncated (field '" + name + "')");
      af.entries_[name] = std::move(e);
    }
    return af;
  }

 private:
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError("missing field '" + name + "'");
    return it->second;
  }
  template <class T>
  static void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  static T read_pod(std::ifstream& in, const std::string& path, const std::string& field) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("'" + path + "': truncated (field '" + field + "')");
    return v;
  }

  uint32_t version_ = 1;
  std::map<std::string, Entry> entries_;
};

/// Append one line to a line-delimited log file.
inline void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot open '" + path + "' for appending");
  out << line << '\n';
}

}  // namespace gormpo
