// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sparseattn/errors.hpp"

namespace sparseattn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'T', 'T', 'N', 'C', 'K'};

template <class T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError(path.string() + ": truncated checkpoint");
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write checkpoint " + path.string());
  }
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Tensor&) { ++count; });
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, count);
  params.for_each([&](const std::string& name, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      put<std::uint64_t>(out, d);
    }
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
  if (!out.flush()) {
    throw DataError("I/O error writing checkpoint " + path.string());
  }
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot read checkpoint " + path.string());
  }
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<NamedTensor> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw DataError(path.string() + ": truncated checkpoint");
    }
    const auto rank = get<std::uint32_t>(in, path);
    std::vector<std::size_t> shape;
    std::size_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(get<std::uint64_t>(in, path));
      elements *= shape.back();
    }
    std::vector<double> values(elements);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(elements * sizeof(double)))) {
      throw DataError(path.string() + ": truncated checkpoint");
    }
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return entries;
}

void load_checkpoint(const std::filesystem::path& path, ModelParams& params) {
  const std::vector<NamedTensor> entries = read_checkpoint(path);
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (i >= entries.size() || entries[i].name != name || !entries[i].value.same_shape(t)) {
      throw DataError(path.string() + ": checkpoint layout does not match model at '" + name + "'");
    }
    t = entries[i++].value;
  });
  if (i != entries.size()) {
    throw DataError(path.string() + ": checkpoint has extra entries");
  }
}

}  // namespace sparseattn
