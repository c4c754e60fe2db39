#include "unifl/tensor.hpp"

#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace unifl::nn {

Tensor Tensor::zeros(std::string name, std::vector<std::size_t> shape,
                     bool is_norm) {
  Tensor t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  std::size_t n = 1;
  for (std::size_t d : t.shape) n *= d;
  t.values.assign(n, 0.0);
  t.is_norm = is_norm;
  return t;
}

std::size_t ParamSet::total_values() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += t.size();
  return n;
}

const Tensor& ParamSet::find(const std::string& name) const {
  for (const Tensor& t : tensors) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor named " + name);
}

Tensor& ParamSet::find(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).find(name));
}

bool same_shapes(const ParamSet& a, const ParamSet& b) {
  if (a.count() != b.count()) return false;
  for (std::size_t i = 0; i < a.count(); ++i) {
    if (a.at(i).name != b.at(i).name || a.at(i).shape != b.at(i).shape ||
        a.at(i).is_norm != b.at(i).is_norm) {
      return false;
    }
  }
  return true;
}

std::uint64_t digest(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Tensor& t : params.tensors) {
    feed(t.name.data(), t.name.size());
    for (std::size_t d : t.shape) feed(&d, sizeof(d));
    const unsigned char flag = t.is_norm ? 1 : 0;
    feed(&flag, 1);
    feed(t.values.data(), t.values.size() * sizeof(double));
  }
  return h;
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  nlohmann::json doc;
  doc["rng_seed"] = params.rng_seed;
  auto& arr = doc["tensors"] = nlohmann::json::array();
  for (const Tensor& t : params.tensors) {
    arr.push_back({{"name", t.name},
                   {"shape", t.shape},
                   {"is_norm", t.is_norm},
                   {"values", t.values}});
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << doc.dump() << '\n';
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  nlohmann::json doc = nlohmann::json::parse(f);
  ParamSet params;
  params.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
  for (const auto& jt : doc.at("tensors")) {
    Tensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<std::vector<std::size_t>>();
    t.is_norm = jt.at("is_norm").get<bool>();
    t.values = jt.at("values").get<std::vector<double>>();
    params.tensors.push_back(std::move(t));
  }
  return params;
}

}  // namespace unifl::nn
