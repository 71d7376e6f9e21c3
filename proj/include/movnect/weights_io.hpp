// Little-endian tensor container: magic "MVNW", version, count, then per
// tensor name / rank / extents / precision tag / raw buffer. Used for network
// weights and for dataset sample records.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "movnect/tensor.hpp"

namespace movnect {

constexpr uint32_t kWeightFormatVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("weight container truncated");
  return v;
}

}  // namespace detail

// One named tensor, either precision. Doubles as the in-memory record form.
struct NamedTensor {
  std::string name;
  Tensor<double> f64;  // exactly one of f64/f32 is set, per the stored tag
  Tensor<float> f32;
  bool is_double = true;

  template <typename T>
  Tensor<T> as() const {
    if constexpr (std::is_same_v<T, double>)
      return is_double ? f64 : f32.template cast<double>();
    else
      return is_double ? f64.template cast<float>() : f32;
  }
};

class TensorContainer {
 public:
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    NamedTensor nt;
    nt.name = name;
    nt.is_double = std::is_same_v<T, double>;
    if constexpr (std::is_same_v<T, double>)
      nt.f64 = t;
    else
      nt.f32 = t;
    index_[name] = entries_.size();
    entries_.push_back(std::move(nt));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const NamedTensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("container missing tensor '" + name + "'");
    return entries_[it->second];
  }
  const std::vector<NamedTensor>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("MVNW", 4);
    detail::put<uint32_t>(os, kWeightFormatVersion);
    detail::put<uint32_t>(os, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      detail::put<uint16_t>(os, static_cast<uint16_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      const Shape& s = e.is_double ? e.f64.shape() : e.f32.shape();
      detail::put<uint8_t>(os, static_cast<uint8_t>(s.rank()));
      for (int i = 0; i < s.rank(); ++i) detail::put<uint32_t>(os, static_cast<uint32_t>(s[i]));
      detail::put<uint8_t>(os, e.is_double ? 1 : 0);
      if (e.is_double)
        os.write(reinterpret_cast<const char*>(e.f64.data()),
                 static_cast<std::streamsize>(e.f64.numel() * sizeof(double)));
      else
        os.write(reinterpret_cast<const char*>(e.f32.data()),
                 static_cast<std::streamsize>(e.f32.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("short write: " + path);
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MVNW", 4) != 0)
      throw std::runtime_error(path + ": not a MVNW tensor container");
    const uint32_t version = detail::get<uint32_t>(is);
    if (version != kWeightFormatVersion)
      throw std::runtime_error(path + ": unsupported container version " +
                               std::to_string(version));
    const uint32_t count = detail::get<uint32_t>(is);
    TensorContainer c;
    for (uint32_t i = 0; i < count; ++i) {
      const uint16_t name_len = detail::get<uint16_t>(is);
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      const uint8_t rank = detail::get<uint8_t>(is);
      if (rank > Shape::kMaxRank) throw std::runtime_error(path + ": bad rank for '" + name + "'");
      std::initializer_list<int64_t> dummy{};
      (void)dummy;
      int64_t dims[Shape::kMaxRank] = {1, 1, 1, 1};
      int64_t numel = 1;
      for (int d = 0; d < rank; ++d) {
        dims[d] = detail::get<uint32_t>(is);
        numel *= dims[d];
      }
      Shape shape = [&] {
        switch (rank) {
          case 1: return Shape{dims[0]};
          case 2: return Shape{dims[0], dims[1]};
          case 3: return Shape{dims[0], dims[1], dims[2]};
          case 4: return Shape{dims[0], dims[1], dims[2], dims[3]};
          default: throw std::runtime_error(path + ": zero-rank tensor '" + name + "'");
        }
      }();
      const uint8_t tag = detail::get<uint8_t>(is);
      if (tag == 1) {
        std::vector<double> buf(numel);
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw std::runtime_error(path + ": truncated tensor '" + name + "'");
        c.add(name, Tensor<double>(shape, std::move(buf)));
      } else if (tag == 0) {
        std::vector<float> buf(numel);
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw std::runtime_error(path + ": truncated tensor '" + name + "'");
        c.add(name, Tensor<float>(shape, std::move(buf)));
      } else {
        throw std::runtime_error(path + ": unknown precision tag for '" + name + "'");
      }
    }
    return c;
  }

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace movnect
