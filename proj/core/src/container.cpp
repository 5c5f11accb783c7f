#include "advlab/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace advlab {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'L', 'A', 'B', 'C', 'K'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("container: truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n)))
    throw std::runtime_error("container: truncated while reading " + what);
}

}  // namespace

Container::Entry& Container::insert(const std::string& name) {
  if (name.empty()) throw std::invalid_argument("container: empty entry name");
  if (has(name)) throw std::invalid_argument("container: duplicate entry '" + name + "'");
  entries_.emplace_back(name, Entry{});
  return entries_.back().second;
}

void Container::put_f32(const std::string& name, Shape dims, std::span<const float> values) {
  if (shape_numel(dims) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("container: '" + name + "' dims " + shape_str(dims) +
                                " want " + std::to_string(shape_numel(dims)) + " values, got " +
                                std::to_string(values.size()));
  Entry& e = insert(name);
  e.type = Type::F32;
  e.dims = std::move(dims);
  e.f32.assign(values.begin(), values.end());
}

void Container::put_i32(const std::string& name, std::vector<std::int32_t> values) {
  Entry& e = insert(name);
  e.type = Type::I32;
  e.dims = {static_cast<int>(values.size())};
  e.i32 = std::move(values);
}

void Container::put_bytes(const std::string& name, const std::string& text) {
  Entry& e = insert(name);
  e.type = Type::Bytes;
  e.dims = {static_cast<int>(text.size())};
  e.bytes.assign(text.begin(), text.end());
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, e] : entries_)
    if (n == name) return true;
  return false;
}

const Container::Entry& Container::get(const std::string& name) const {
  for (const auto& [n, e] : entries_)
    if (n == name) return e;
  throw std::out_of_range("container: no entry '" + name + "'");
}

const std::vector<float>& Container::get_f32(const std::string& name) const {
  const Entry& e = get(name);
  if (e.type != Type::F32)
    throw std::invalid_argument("container: entry '" + name + "' is not float32");
  return e.f32;
}

const std::vector<std::int32_t>& Container::get_i32(const std::string& name) const {
  const Entry& e = get(name);
  if (e.type != Type::I32)
    throw std::invalid_argument("container: entry '" + name + "' is not int32");
  return e.i32;
}

std::string Container::get_text(const std::string& name) const {
  const Entry& e = get(name);
  if (e.type != Type::Bytes)
    throw std::invalid_argument("container: entry '" + name + "' is not bytes");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [n, e] : entries_) out.push_back(n);
  return out;
}

void Container::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("container: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto t = static_cast<unsigned char>(e.type);
    os.write(reinterpret_cast<const char*>(&t), 1);
    write_u32(os, static_cast<std::uint32_t>(e.dims.size()));
    for (int d : e.dims) write_u32(os, static_cast<std::uint32_t>(d));
    switch (e.type) {
      case Type::F32:
        os.write(reinterpret_cast<const char*>(e.f32.data()),
                 static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
        break;
      case Type::I32:
        os.write(reinterpret_cast<const char*>(e.i32.data()),
                 static_cast<std::streamsize>(e.i32.size() * sizeof(std::int32_t)));
        break;
      case Type::Bytes:
        os.write(reinterpret_cast<const char*>(e.bytes.data()),
                 static_cast<std::streamsize>(e.bytes.size()));
        break;
    }
  }
  if (!os) throw std::runtime_error("container: write failed for '" + path + "'");
}

Container Container::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("container: cannot open '" + path + "'");
  char magic[8];
  read_exact(is, magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("container: bad magic in '" + path + "'");
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw std::runtime_error("container: unsupported version " + std::to_string(version));
  const std::uint32_t count = read_u32(is, "entry count");
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, "name length");
    std::string name(name_len, '\0');
    read_exact(is, name.data(), name_len, "name");
    unsigned char t = 0;
    read_exact(is, &t, 1, "dtype");
    if (t > 2) throw std::runtime_error("container: unknown dtype " + std::to_string(t));
    const std::uint32_t ndim = read_u32(is, "ndim");
    Entry e;
    e.type = static_cast<Type>(t);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto ext = static_cast<int>(read_u32(is, "dim"));
      e.dims.push_back(ext);
      numel *= ext;
    }
    switch (e.type) {
      case Type::F32:
        e.f32.resize(static_cast<std::size_t>(numel));
        read_exact(is, e.f32.data(), e.f32.size() * sizeof(float), "'" + name + "' payload");
        break;
      case Type::I32:
        e.i32.resize(static_cast<std::size_t>(numel));
        read_exact(is, e.i32.data(), e.i32.size() * sizeof(std::int32_t),
                   "'" + name + "' payload");
        break;
      case Type::Bytes:
        e.bytes.resize(static_cast<std::size_t>(numel));
        read_exact(is, e.bytes.data(), e.bytes.size(), "'" + name + "' payload");
        break;
    }
    c.entries_.emplace_back(std::move(name), std::move(e));
  }
  return c;
}

}  // namespace advlab
