#include "advlab/npy.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace advlab {

namespace {

std::string quoted_value(const std::string& header, const std::string& key) {
  const auto kpos = header.find("'" + key + "'");
  if (kpos == std::string::npos)
    throw std::runtime_error("npy: header missing key '" + key + "': " + header);
  auto q0 = header.find('\'', kpos + key.size() + 2);
  if (q0 == std::string::npos)
    throw std::runtime_error("npy: malformed value for '" + key + "': " + header);
  auto q1 = header.find('\'', q0 + 1);
  if (q1 == std::string::npos)
    throw std::runtime_error("npy: malformed value for '" + key + "': " + header);
  return header.substr(q0 + 1, q1 - q0 - 1);
}

bool bool_value(const std::string& header, const std::string& key) {
  const auto kpos = header.find("'" + key + "'");
  if (kpos == std::string::npos)
    throw std::runtime_error("npy: header missing key '" + key + "': " + header);
  const auto tail = header.substr(kpos);
  const auto t = tail.find("True");
  const auto f = tail.find("False");
  if (t == std::string::npos && f == std::string::npos)
    throw std::runtime_error("npy: malformed value for '" + key + "': " + header);
  return f == std::string::npos || (t != std::string::npos && t < f);
}

std::vector<int> shape_value(const std::string& header) {
  const auto kpos = header.find("'shape'");
  if (kpos == std::string::npos) throw std::runtime_error("npy: header missing shape: " + header);
  const auto p0 = header.find('(', kpos);
  const auto p1 = header.find(')', p0);
  if (p0 == std::string::npos || p1 == std::string::npos)
    throw std::runtime_error("npy: malformed shape tuple: " + header);
  std::vector<int> shape;
  std::string tok;
  for (auto i = p0 + 1; i <= p1; ++i) {
    const char ch = header[i];
    if (ch == ',' || ch == ')') {
      if (!tok.empty()) shape.push_back(std::stoi(tok));
      tok.clear();
    } else if (ch != ' ') {
      tok.push_back(ch);
    }
  }
  return shape;
}

}  // namespace

std::int64_t NpyArray::numel() const {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

NpyArray load_npy(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("npy: cannot open '" + path + "'");

  static constexpr unsigned char kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  unsigned char magic[6];
  if (!is.read(reinterpret_cast<char*>(magic), 6))
    throw std::runtime_error("npy: file shorter than magic in '" + path + "'");
  for (int i = 0; i < 6; ++i)
    if (magic[i] != kMagic[i])
      throw std::runtime_error("npy: bad magic byte at offset " + std::to_string(i) + " in '" +
                               path + "'");

  unsigned char ver[2];
  if (!is.read(reinterpret_cast<char*>(ver), 2))
    throw std::runtime_error("npy: truncated version in '" + path + "'");
  std::uint32_t header_len = 0;
  if (ver[0] == 1) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
      throw std::runtime_error("npy: truncated header length in '" + path + "'");
    header_len = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8);
  } else if (ver[0] == 2) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw std::runtime_error("npy: truncated header length in '" + path + "'");
    header_len = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                 (static_cast<std::uint32_t>(b[2]) << 16) |
                 (static_cast<std::uint32_t>(b[3]) << 24);
  } else {
    throw std::runtime_error("npy: unsupported format version " + std::to_string(ver[0]) + "." +
                             std::to_string(ver[1]));
  }

  std::string header(header_len, '\0');
  if (!is.read(header.data(), header_len))
    throw std::runtime_error("npy: truncated header in '" + path + "'");

  NpyArray arr;
  arr.descr = quoted_value(header, "descr");
  arr.shape = shape_value(header);
  if (bool_value(header, "fortran_order"))
    throw std::runtime_error("npy: fortran_order not supported; header: " + header);

  std::size_t item = 0;
  if (arr.descr == "|u1" || arr.descr == "<u1")
    item = 1;
  else if (arr.descr == "<f4")
    item = 4;
  else if (arr.descr == "<i4")
    item = 4;
  else if (arr.descr == "<i8")
    item = 8;
  else
    throw std::runtime_error("npy: unsupported descr '" + arr.descr + "'; header: " + header);

  const auto count = static_cast<std::size_t>(arr.numel());
  std::vector<unsigned char> raw(count * item);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error("npy: truncated payload in '" + path + "' (want " +
                             std::to_string(raw.size()) + " bytes)");

  if (item == 1) {
    arr.u8.assign(raw.begin(), raw.end());
  } else if (arr.descr == "<f4") {
    arr.f32.resize(count);
    std::memcpy(arr.f32.data(), raw.data(), raw.size());
  } else if (arr.descr == "<i4") {
    arr.i64.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::int32_t v;
      std::memcpy(&v, raw.data() + i * 4, 4);
      arr.i64[i] = v;
    }
  } else {
    arr.i64.resize(count);
    std::memcpy(arr.i64.data(), raw.data(), raw.size());
  }
  return arr;
}

}  // namespace advlab
