#include "citnet/io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace citnet::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'C', 'I', 'T', 'N'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const fs::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError(path.string() + ": truncated file");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <typename F, typename U>
void put_real(std::ostream& os, F v) {
  U bits;
  std::memcpy(&bits, &v, sizeof(F));
  put_le<U>(os, bits);
}

template <typename F, typename U>
F get_real(std::istream& is, const fs::path& path) {
  const U bits = get_le<U>(is, path);
  F v;
  std::memcpy(&v, &bits, sizeof(F));
  return v;
}

}  // namespace

template <typename T>
void write_tensor(const fs::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_le<std::uint8_t>(os, kVersion);
  put_le<std::uint8_t>(os, sizeof(T) == 4 ? 0 : 1);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 4) {
      put_real<float, std::uint32_t>(os, v);
    } else {
      put_real<double, std::uint64_t>(os, v);
    }
  }
  if (!os) throw FormatError("write failed: " + path.string());
}

template <typename T>
Tensor<T> read_tensor(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic");
  }
  const auto version = get_le<std::uint8_t>(is, path);
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto dtype = get_le<std::uint8_t>(is, path);
  if (dtype > 1) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
  const auto ndim = get_le<std::uint8_t>(is, path);
  Shape shape(ndim);
  for (auto& d : shape) {
    d = get_le<std::uint32_t>(is, path);
    if (d == 0) throw FormatError(path.string() + ": zero dimension");
  }
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) {
    v = dtype == 0 ? static_cast<T>(get_real<float, std::uint32_t>(is, path))
                   : static_cast<T>(get_real<double, std::uint64_t>(is, path));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  return Tensor<T>::from(shape, std::move(values));
}

template <typename T>
void save_dir(const fs::path& dir, const Named<T>& tensors) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (name.find_first_of("\t\n") != std::string::npos) {
      throw FormatError("tensor name contains tab or newline: " + name);
    }
    char file[32];
    std::snprintf(file, sizeof file, "t%05zu.citn", i);
    write_tensor(dir / file, t);
    manifest << name << '\t' << file << '\n';
  }
}

template <typename T>
Named<T> load_dir(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("missing manifest.txt in " + dir.string());
  Named<T> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("malformed manifest line: " + line);
    out.emplace_back(line.substr(0, tab), read_tensor<T>(dir / line.substr(tab + 1)));
  }
  return out;
}

template <typename T>
void load_into(const fs::path& dir, const Named<T>& into) {
  std::map<std::string, Tensor<T>> saved;
  for (auto& [name, t] : load_dir<T>(dir)) saved.emplace(name, t);
  for (const auto& [name, t] : into) {
    const auto it = saved.find(name);
    if (it == saved.end()) throw FormatError("checkpoint has no tensor named " + name);
    if (it->second.shape() != t.shape()) {
      throw FormatError("shape mismatch for " + name + ": saved " + to_string(it->second.shape()) +
                        ", expected " + to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    const auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

#define CITNET_IO_INSTANTIATE(T)                                    \
  template void write_tensor<T>(const fs::path&, const Tensor<T>&); \
  template Tensor<T> read_tensor<T>(const fs::path&);               \
  template void save_dir<T>(const fs::path&, const Named<T>&);      \
  template Named<T> load_dir<T>(const fs::path&);                   \
  template void load_into<T>(const fs::path&, const Named<T>&);

CITNET_IO_INSTANTIATE(float)
CITNET_IO_INSTANTIATE(double)

}  // namespace citnet::io
