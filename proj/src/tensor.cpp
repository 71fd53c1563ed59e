#include "momaplan/tensor.hpp"

#include <cstring>
#include <fstream>

namespace momaplan::ad {

namespace {

constexpr char kMagic[4] = {'N', 'M', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated weights file");
  return v;
}

}  // namespace

void save_weights(const ParamSet<float>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.all().size()));
  for (const auto& p : params.all()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

ParamSet<float> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + " is not a weights file");
  if (get<std::uint32_t>(in) != kVersion) throw std::runtime_error("unsupported weights version");
  const auto count = get<std::uint32_t>(in);
  ParamSet<float> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in);
    if (len > (1u << 16)) throw std::runtime_error("corrupt tensor name in " + path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto nd = get<std::uint32_t>(in);
    if (nd > 8) throw std::runtime_error("corrupt tensor rank in " + path);
    Shape shape(nd);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(in));
    auto& p = params.add(name, shape);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated weights file");
  }
  return params;
}

void load_weights(ParamSet<float>& params, const std::string& path) {
  ParamSet<float> file = read_weights(path);
  if (file.all().size() != params.all().size()) throw std::runtime_error("weights file tensor count mismatch");
  for (auto& p : params.all()) {
    const auto& q = file.get(p.name);
    if (q.shape != p.shape) {
      throw std::runtime_error("weight shape mismatch for " + p.name + ": " + shape_str(q.shape) + " vs " + shape_str(p.shape));
    }
    p.value = q.value;
  }
}

}  // namespace momaplan::ad
