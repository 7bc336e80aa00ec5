#include "wukong/archive.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace wukong {

using nlohmann::json;

namespace {

void write_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t read_u32_le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void write_f32_le(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32_le(out, bits);
}

float read_f32_le(const uint8_t* p) {
  uint32_t bits = read_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

size_t shape_product(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

}  // namespace

void TensorArchive::put(const std::string& name, const Mat& m) {
  Entry e;
  e.shape = {m.rows, m.cols};
  e.data.reserve(m.a.size());
  for (double v : m.a) e.data.push_back(static_cast<float>(v));
  entries_[name] = std::move(e);
}

Mat TensorArchive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || it->second.is_meta)
    throw std::runtime_error("tensor archive: missing entry '" + name + "'");
  const Entry& e = it->second;
  if (e.shape.size() != 2)
    throw std::runtime_error("tensor archive: entry '" + name + "' is not rank-2");
  Mat m(e.shape[0], e.shape[1]);
  for (size_t i = 0; i < e.data.size(); ++i) m.a[i] = static_cast<double>(e.data[i]);
  return m;
}

bool TensorArchive::contains(const std::string& name) const {
  auto it = entries_.find(name);
  return it != entries_.end() && !it->second.is_meta;
}

std::pair<int, int> TensorArchive::shape(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || it->second.is_meta)
    throw std::runtime_error("tensor archive: missing entry '" + name + "'");
  return {it->second.shape[0], it->second.shape[1]};
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void TensorArchive::put_meta(const std::string& name, const std::string& value) {
  Entry e;
  e.is_meta = true;
  e.str_value = value;
  entries_[name] = std::move(e);
}

std::string TensorArchive::get_meta(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || !it->second.is_meta)
    throw std::runtime_error("tensor archive: missing meta entry '" + name + "'");
  return it->second.str_value;
}

bool TensorArchive::contains_meta(const std::string& name) const {
  auto it = entries_.find(name);
  return it != entries_.end() && it->second.is_meta;
}

std::vector<uint8_t> TensorArchive::serialize() const {
  json header = json::object();
  size_t offset = 0;
  for (const auto& [name, e] : entries_) {  // std::map: sorted, canonical
    if (e.is_meta) {
      header[name] = {{"dtype", "str"}, {"value", e.str_value}};
    } else {
      size_t nbytes = e.data.size() * 4;
      header[name] = {{"dtype", "f32"}, {"shape", e.shape}, {"offset", offset}, {"nbytes", nbytes}};
      offset += nbytes;
    }
  }
  const std::string hs = header.dump();

  std::vector<uint8_t> out;
  out.reserve(8 + hs.size() + offset);
  out.push_back('W');
  out.push_back('K');
  out.push_back('T');
  out.push_back('A');
  write_u32_le(out, static_cast<uint32_t>(hs.size()));
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& [name, e] : entries_) {
    if (e.is_meta) continue;
    for (float f : e.data) write_f32_le(out, f);
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || bytes[0] != 'W' || bytes[1] != 'K' || bytes[2] != 'T' || bytes[3] != 'A')
    throw std::runtime_error("tensor archive: bad magic (expected WKTA)");
  const uint32_t hlen = read_u32_le(bytes.data() + 4);
  if (bytes.size() < 8 + static_cast<size_t>(hlen))
    throw std::runtime_error("tensor archive: truncated header");
  json header = json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + hlen));
  const uint8_t* payload = bytes.data() + 8 + hlen;
  const size_t payload_len = bytes.size() - 8 - hlen;

  TensorArchive ar;
  for (auto& [name, rec] : header.items()) {
    const std::string dtype = rec.at("dtype").get<std::string>();
    if (dtype == "str") {
      ar.put_meta(name, rec.at("value").get<std::string>());
      continue;
    }
    if (dtype != "f32")
      throw std::runtime_error("tensor archive: unsupported dtype '" + dtype + "' for '" + name + "'");
    Entry e;
    e.shape = rec.at("shape").get<std::vector<int>>();
    const size_t offset = rec.at("offset").get<size_t>();
    const size_t nbytes = rec.at("nbytes").get<size_t>();
    if (nbytes != shape_product(e.shape) * 4)
      throw std::runtime_error("tensor archive: entry '" + name + "' payload length " +
                               std::to_string(nbytes) + " does not match shape");
    if (offset + nbytes > payload_len)
      throw std::runtime_error("tensor archive: entry '" + name + "' payload out of bounds");
    e.data.resize(nbytes / 4);
    for (size_t i = 0; i < e.data.size(); ++i) e.data[i] = read_f32_le(payload + offset + 4 * i);
    ar.entries_[name] = std::move(e);
  }
  return ar;
}

void TensorArchive::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("tensor archive: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("tensor archive: short write to '" + path + "'");
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tensor archive: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

uint64_t TensorArchive::digest() const {
  const auto bytes = serialize();
  return fnv1a64(bytes.data(), bytes.size());
}

uint64_t digest_f32(const Mat& m) {
  TensorArchive ar;
  ar.put("t", m);
  return ar.digest();
}

}  // namespace wukong
