#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wukong/tensor.hpp"

namespace wukong {

// Portable checkpoint container.
//
// On-disk layout:
//   bytes 0..3   magic "WKTA"
//   bytes 4..7   uint32 little-endian header length
//   then         UTF-8 JSON header: name -> {dtype, shape, offset, nbytes}
//   then         concatenated little-endian float32 payloads
//
// Offsets are relative to the start of the payload section. Tensor entries
// use dtype "f32"; short string attributes (e.g. decoder.variant) use
// dtype "str" with a "value" field and no payload. Header keys are sorted,
// payloads follow key order, so serialization is canonical: equal content
// means equal bytes.
class TensorArchive {
 public:
  void put(const std::string& name, const Mat& m);  // stored as f32
  Mat get(const std::string& name) const;           // widened to double
  bool contains(const std::string& name) const;
  std::pair<int, int> shape(const std::string& name) const;
  std::vector<std::string> names() const;

  void put_meta(const std::string& name, const std::string& value);
  std::string get_meta(const std::string& name) const;
  bool contains_meta(const std::string& name) const;

  std::vector<uint8_t> serialize() const;
  static TensorArchive deserialize(const std::vector<uint8_t>& bytes);

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

  uint64_t digest() const;  // fnv1a64 over the serialized bytes

 private:
  struct Entry {
    std::vector<int> shape;
    std::vector<float> data;   // f32 payload, row-major
    std::string str_value;
    bool is_meta = false;
  };
  std::map<std::string, Entry> entries_;
};

// Content digest of a single matrix as its archive (f32) representation;
// used for cache provenance keys.
uint64_t digest_f32(const Mat& m);

}  // namespace wukong
