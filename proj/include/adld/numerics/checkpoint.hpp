#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adld/numerics/layers.hpp"
#include "adld/numerics/tensor.hpp"

namespace adld {

// Named tensors plus a free-form text trailer.
//
// Binary layout: "ADLD1", u32 record count, then per record u32 name length,
// name bytes, u32 rank, u64 dims, f64 payload; then u64 trailer length and
// trailer bytes. All integers and floats little-endian.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string trailer;

  void add(std::string name, Tensor t);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  static Checkpoint from(const ParamRefs& params, std::string trailer = {});
  // Copies matching tensors into the parameters. Missing names or shape
  // mismatches raise FormatError.
  void load_into(const ParamRefs& params) const;

  std::string encode() const;
  static Checkpoint decode(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace adld
