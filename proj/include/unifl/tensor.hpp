#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace unifl::nn {

// Named dense tensor of doubles. `is_norm` marks normalization gain/bias
// tensors, the ones personalized federated aggregation leaves untouched.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool is_norm = false;

  static Tensor zeros(std::string name, std::vector<std::size_t> shape,
                      bool is_norm = false);
  std::size_t size() const { return values.size(); }
};

// Ordered collection of tensors; the model's full parameter state. Tensor
// order is fixed at init so flat traversals are canonical. Value semantics:
// copies are independent snapshots safe to hand to worker threads.
struct ParamSet {
  std::vector<Tensor> tensors;
  std::uint64_t rng_seed = 0;

  Tensor& at(std::size_t i) { return tensors[i]; }
  const Tensor& at(std::size_t i) const { return tensors[i]; }
  std::size_t count() const { return tensors.size(); }
  std::size_t total_values() const;

  const Tensor& find(const std::string& name) const;
  Tensor& find(const std::string& name);
};

// Same shapes as a ParamSet; gradients are carried in the same container.
using GradSet = ParamSet;

bool same_shapes(const ParamSet& a, const ParamSet& b);

// FNV-1a over names, shapes, flags and raw value bits; digest equality is
// how trajectory tests assert bit-identical parameters cheaply.
std::uint64_t digest(const ParamSet& params);

// JSON checkpoint: {"rng_seed": ..., "tensors": [{name, shape, is_norm,
// values}, ...]}. Doubles survive the round trip bit-exactly.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace unifl::nn
