#pragma once
// Versioned binary parameter container.
//
//   "MCNN"  u32 version  u32 record_count
//   per record, in ascending name order:
//     u32 name_length, name bytes, u32 rank, rank x u32 dims,
//     prod(dims) x f32 values
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "mcnn/nn/autodiff.hpp"

namespace mcnn::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::map<std::string, Tensor<float>>;

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Parameter values as float tensors, names optionally prefixed.
template <typename T>
NamedTensors snapshot(const ParameterStore<T>& params, const std::string& prefix = "");

/// Copies tensors named prefix + parameter name into the store. With
/// `require_all`, every store parameter must be present. Shapes must match.
template <typename T>
void assign(ParameterStore<T>& params, const NamedTensors& tensors, const std::string& prefix = "",
            bool require_all = true);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& params) {
  write_checkpoint(path, snapshot(params));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParameterStore<T>& params) {
  assign(params, read_checkpoint(path));
}

}  // namespace mcnn::nn
