#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "geomt/rng.hpp"
#include "geomt/tensor.hpp"

namespace geomt::nn {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  explicit Parameter(Shape shape) : value(shape), grad(shape) {}
};

template <typename T>
struct NamedParameter {
  std::string name;
  Parameter<T>* param;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* buffer;
};

template <typename T>
struct Registry {
  std::vector<NamedParameter<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(const std::string& name, Parameter<T>& p) { params.push_back({name, &p}); }
  void add_buffer(const std::string& name, Tensor<T>& b) { buffers.push_back({name, &b}); }
};

/// He-normal fan-in initialisation.
template <typename T>
void kaiming_init(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : weight.values()) v = static_cast<T>(rng.normal(0.0, stddev));
}

}  // namespace geomt::nn
