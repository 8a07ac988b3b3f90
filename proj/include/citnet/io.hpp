#pragma once

// Tensor files: "CITN", u8 version (1), u8 dtype (0 = f32, 1 = f64), u8 ndim,
// ndim little-endian u32 dims, then the little-endian payload. A directory of
// tensor files is indexed by manifest.txt, one "name<TAB>file" per line.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "citnet/tensor.hpp"

namespace citnet::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using Named = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);

/// Reads a tensor file of either dtype, converting to T.
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

template <typename T>
void save_dir(const std::filesystem::path& dir, const Named<T>& tensors);

template <typename T>
Named<T> load_dir(const std::filesystem::path& dir);

/// Overwrites the values of `into` from a saved directory. Every name must be
/// present with a matching shape.
template <typename T>
void load_into(const std::filesystem::path& dir, const Named<T>& into);

}  // namespace citnet::io
