// SPDX-License-Identifier: Apache-2.0
#include "smad/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "smad/errors.hpp"

namespace smad {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'A', 'D', 'C', 'K', 'P', '1'};

// Fan-in/fan-out for Xavier init. Convolution weights are [3x3xCinxCout];
// everything else is treated as [in x out].
std::pair<std::size_t, std::size_t> fans(const Shape& shape) {
  if (shape.size() == 4) {
    const std::size_t rf = shape[0] * shape[1];
    return {rf * shape[2], rf * shape[3]};
  }
  if (shape.size() == 2) return {shape[0], shape[1]};
  return {shape_numel(shape), shape_numel(shape)};
}

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

Tensor ParamStore::create(const std::string& name, Shape shape, Init init,
                          double gain) {
  if (index_.count(name)) {
    throw ConfigError("parameter name not unique: " + name);
  }
  if (count_only_) {
    index_[name] = params_.size();
    params_.push_back({name, std::move(shape), Tensor()});
    return Tensor();
  }
  std::vector<double> data(shape_numel(shape), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      data.assign(data.size(), gain);
      break;
    case Init::xavier_uniform: {
      const auto [fin, fout] = fans(shape);
      const double limit =
          gain * std::sqrt(6.0 / static_cast<double>(fin + fout));
      for (double& v : data) v = rng_.uniform(-limit, limit);
      break;
    }
  }
  Tensor t = Tensor::from(shape, std::move(data), true);
  index_[name] = params_.size();
  params_.push_back({name, std::move(shape), t});
  return t;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += shape_numel(p.shape);
  return n;
}

void ParamStore::zero_grad() {
  if (count_only_) throw UsageError("count-only store has no gradients");
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParamStore::save(const std::filesystem::path& path) const {
  if (count_only_) throw UsageError("count-only store cannot be saved");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for write: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (std::size_t d : p.tensor.shape())
      write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
             static_cast<std::streamsize>(p.tensor.numel() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint: write failed: " + path.string());
}

void ParamStore::load(const std::filesystem::path& path) {
  if (count_only_) throw UsageError("count-only store cannot be loaded into");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic/version in " + path.string());
  }
  const auto n = read_pod<std::uint32_t>(is);
  if (n != params_.size()) {
    throw DataError("checkpoint: parameter count " + std::to_string(n) +
                    " does not match model (" + std::to_string(params_.size()) +
                    ")");
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape)
      d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw DataError("checkpoint: unknown parameter '" + name + "'");
    }
    Tensor& t = params_[it->second].tensor;
    if (t.shape() != shape) {
      throw DataError("checkpoint: shape mismatch for '" + name + "': file " +
                      shape_str(shape) + " vs model " + shape_str(t.shape()));
    }
    is.read(reinterpret_cast<char*>(t.mutable_data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated payload for '" + name + "'");
  }
}

}  // namespace smad
