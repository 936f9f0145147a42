#include "imagine/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace imagine {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'M', 'G', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());

  std::ofstream manifest(path.string() + ".manifest", std::ios::trunc);
  for (const auto& [name, t] : tensors) {
    manifest << name << ' ';
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "x" : "") << t.shape()[i];
    manifest << '\n';
  }
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("not a checkpoint: " + path.string());
  const auto count = get_u64(in);
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_u64(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rank = get_u64(in);
    if (rank == 0 || rank > 2) throw std::runtime_error("bad tensor rank in " + path.string());
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(get_u64(in));
    std::vector<double> data(shape_product(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ad::ParameterSet& params) {
  NamedTensors tensors;
  for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back(params[i].name(), params[i].value);
  write_tensors(path, tensors);
}

void load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params) {
  const NamedTensors tensors = read_tensors(path);
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint " + path.string() + " has " + std::to_string(tensors.size()) +
                             " tensors, expected " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (name != params[i].name() || t.shape() != params[i].value.shape())
      throw std::runtime_error("checkpoint tensor " + name + " " + to_string(t.shape()) + " does not match " +
                               params[i].name() + " " + to_string(params[i].value.shape()));
    params[i].value = t;
  }
}

}  // namespace imagine
