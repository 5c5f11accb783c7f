#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Flat container of named arrays used for checkpoints and packed datasets.
/// Layout (all integers little-endian):
///   magic "ADVLABCK" | u32 version | u32 entry_count
///   per entry: u32 name_len | name | u8 dtype | u32 ndim | u32 dims[] | payload
/// dtype: 0 = float32, 1 = int32, 2 = raw bytes.
class Container {
 public:
  enum class Type : std::uint8_t { F32 = 0, I32 = 1, Bytes = 2 };

  struct Entry {
    Type type = Type::F32;
    std::vector<int> dims;
    std::vector<float> f32;
    std::vector<std::int32_t> i32;
    std::vector<std::uint8_t> bytes;
  };

  void put_f32(const std::string& name, Shape dims, std::span<const float> values);
  void put_i32(const std::string& name, std::vector<std::int32_t> values);
  void put_bytes(const std::string& name, const std::string& text);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  const std::vector<float>& get_f32(const std::string& name) const;
  const std::vector<std::int32_t>& get_i32(const std::string& name) const;
  std::string get_text(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  void save(const std::string& path) const;
  static Container load(const std::string& path);

  static constexpr std::uint32_t kVersion = 1;

 private:
  Entry& insert(const std::string& name);
  std::vector<std::pair<std::string, Entry>> entries_;
};

}  // namespace advlab
