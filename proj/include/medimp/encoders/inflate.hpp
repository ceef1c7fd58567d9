#pragma once

#include "medimp/numerics/graph.hpp"

namespace medimp {

/// Co×Ci×ky×kx → Co×Ci×kz×ky×kx, each depth slice equal to kernel2d / depth.
template <std::floating_point T>
Tensor<T> inflate_kernel(const Tensor<T>& k2d, std::size_t depth) {
  if (depth < 1) throw std::invalid_argument("inflate_kernel: depth must be at least 1");
  if (k2d.rank() != 4)
    throw ShapeError("inflate_kernel: expected Co×Ci×ky×kx, got " + shape_str(k2d.shape()));
  const auto& s = k2d.shape();
  Tensor<T> out(Shape{s[0], s[1], depth, s[2], s[3]});
  const std::size_t plane = s[2] * s[3];
  const T inv = T{1} / static_cast<T>(depth);
  for (std::size_t oc = 0; oc < s[0] * s[1]; ++oc)
    for (std::size_t z = 0; z < depth; ++z)
      for (std::size_t i = 0; i < plane; ++i)
        out[(oc * depth + z) * plane + i] = k2d[oc * plane + i] * inv;
  return out;
}

/// Replaces a 3D kernel parameter by the inflation of a 2D one of matching channels and size.
template <std::floating_point T>
void load_inflated(ParameterStore<T>& store, const std::string& name, const Tensor<T>& k2d) {
  auto& p = store.at(name);
  const auto& want = p.value.shape();
  if (want.size() != 5 || k2d.rank() != 4 || want[0] != k2d.dim(0) || want[1] != k2d.dim(1) ||
      want[3] != k2d.dim(2) || want[4] != k2d.dim(3))
    throw ShapeError("load_inflated: 2D kernel " + shape_str(k2d.shape()) +
                     " does not inflate to '" + name + "' " + shape_str(want));
  p.value = inflate_kernel(k2d, want[2]);
}

}  // namespace medimp
