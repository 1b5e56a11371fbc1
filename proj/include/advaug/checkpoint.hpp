#pragma once

// Checkpoint file format:
//   magic "AAF1", format version u32 LE, array count u32 LE, then per array:
//   name length u32, name bytes (UTF-8), ndim u32, dims u32..., raw f32 LE.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "advaug/models.hpp"

namespace advaug {

struct ArrayRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8),
                        (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error("corrupt checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void checkpoint_save(const std::string& path,
                            const std::vector<ArrayRecord>& records) {
  // temp-then-rename so a crash never leaves a half-written checkpoint
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint: " + path);
    os.write("AAF1", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, std::uint32_t(records.size()));
    for (const ArrayRecord& r : records) {
      detail::put_u32(os, std::uint32_t(r.name.size()));
      os.write(r.name.data(), std::streamsize(r.name.size()));
      detail::put_u32(os, std::uint32_t(r.shape.size()));
      for (std::size_t d : r.shape) detail::put_u32(os, std::uint32_t(d));
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char*>(r.data.data()),
               std::streamsize(r.data.size() * 4));
    }
    if (!os) throw Error("write failure for checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("cannot move checkpoint into place: " + path);
}

inline std::vector<ArrayRecord> checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AAF1", 4) != 0)
    throw Error("corrupt checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw Error("corrupt checkpoint: unsupported version " +
                std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  std::vector<ArrayRecord> records(count);
  for (ArrayRecord& r : records) {
    const std::uint32_t name_len = detail::get_u32(is);
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    const std::uint32_t ndim = detail::get_u32(is);
    r.shape.resize(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      r.shape[d] = detail::get_u32(is);
      numel *= r.shape[d];
    }
    r.data.resize(numel);
    is.read(reinterpret_cast<char*>(r.data.data()), std::streamsize(numel * 4));
    if (!is) throw Error("corrupt checkpoint: truncated file " + path);
  }
  return records;
}

// Network state <-> records. Net must provide state_entries().
template <class T, class Net>
void append_network_records(std::vector<ArrayRecord>& records,
                            const std::string& prefix, Net& net) {
  for (const StateEntry<T>& e : net.state_entries()) {
    ArrayRecord r;
    r.name = prefix + "/" + e.name;
    r.shape = e.shape;
    r.data.assign(e.data->begin(), e.data->end());
    records.push_back(std::move(r));
  }
}

template <class T, class Net>
void load_network_records(const std::vector<ArrayRecord>& records,
                          const std::string& prefix, Net& net) {
  std::map<std::string, const ArrayRecord*> by_name;
  for (const ArrayRecord& r : records) by_name[r.name] = &r;
  for (const StateEntry<T>& e : net.state_entries()) {
    const std::string full = prefix + "/" + e.name;
    auto it = by_name.find(full);
    if (it == by_name.end())
      throw Error("checkpoint is missing array " + full);
    const ArrayRecord& r = *it->second;
    if (r.shape != e.shape)
      throw Error("checkpoint shape mismatch for " + full + ": file has " +
                  shape_str(r.shape) + ", network expects " + shape_str(e.shape));
    e.data->assign(r.data.begin(), r.data.end());
  }
}

}  // namespace advaug
