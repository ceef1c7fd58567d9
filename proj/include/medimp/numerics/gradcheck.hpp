#pragma once

#include "medimp/numerics/attention.hpp"
#include "medimp/numerics/ops.hpp"
#include "medimp/numerics/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace medimp {

/// Scalar function of a list of leaf tensors, expressed on a fresh graph.
using ScalarFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double h = 1e-3;  // five-point stencil, truncation O(h^4)
  std::size_t max_coords_per_tensor = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;                 // picks coordinates when subsampling
};

/// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& params,
                         const GradCheckOptions& opt = {}) {
  if (!(opt.h > 0)) throw std::invalid_argument("grad_check: step must be positive");
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& p : params) leaves.push_back(g.leaf(p));
    auto loss = f(g, leaves);
    g.backward(loss);
    for (const auto& l : leaves) analytic.push_back(g.grad(l));
  }
  auto eval = [&](const std::vector<Tensor<double>>& ps) {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& p : ps) leaves.push_back(g.constant(p));
    return f(g, leaves).value().item();
  };
  Rng rng({opt.seed, 0x6772616463686bULL});
  auto work = params;
  double worst = 0.0;
  for (std::size_t t = 0; t < work.size(); ++t) {
    std::vector<std::size_t> coords(work[t].numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_tensor);
    }
    for (auto i : coords) {
      const double orig = work[t][i];
      auto at = [&](double dx) {
        work[t][i] = orig + dx;
        return eval(work);
      };
      const double central =
          (at(-2 * opt.h) - 8 * at(-opt.h) + 8 * at(opt.h) - at(2 * opt.h)) / (12.0 * opt.h);
      work[t][i] = orig;
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-8});
      worst = std::max(worst, std::abs(a - central) / denom);
    }
  }
  return worst;
}

using StoreFn = std::function<Var<double>(Graph<double>&, const Bound<double>&)>;

/// grad_check over the trainable parameters of a store. Parameters rejected by
/// `check` (and frozen ones) are bound as constants.
inline double grad_check_store(const ParameterStore<double>& store, const StoreFn& f,
                               const GradCheckOptions& opt = {},
                               const std::function<bool(const std::string&)>& check = {}) {
  std::vector<std::string> names;
  std::vector<Tensor<double>> values;
  for (const auto& p : store.all())
    if (p.trainable && (!check || check(p.name))) {
      names.push_back(p.name);
      values.push_back(p.value);
    }
  return grad_check(
      [&](Graph<double>& g, const std::vector<Var<double>>& leaves) {
        std::map<std::string, Var<double>> vars;
        for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], leaves[i]);
        for (const auto& p : store.all())
          if (!vars.count(p.name)) vars.emplace(p.name, g.constant(p.value));
        return f(g, Bound<double>(std::move(vars)));
      },
      values, opt);
}

/// sum(x ⊙ w) for a constant weight tensor; turns any op output into a scalar
/// whose gradient reaches every output element with a distinct weight.
template <std::floating_point T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  return ops::sum(ops::mul(x, x.graph()->constant(weights)));
}

struct PrimitiveCheck {
  std::string name;
  std::function<double(std::uint64_t seed)> run;  // returns max relative error
};

namespace detail {

// Values bounded away from zero so kinks (relu, clamp) are never straddled by ±h.
inline Tensor<double> away_from_zero(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) {
    const double u = rng.uniform(0.1, 1.5);
    v = rng.bernoulli(0.5) ? u : -u;
  }
  return t;
}

inline Tensor<double> positive(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(0.2, 2.0);
  return t;
}

inline double check_unary(std::uint64_t seed, bool need_positive,
                          Var<double> (*op)(Var<double>)) {
  Rng rng({seed, 1});
  const Shape s{2 + rng.index(3), 2 + rng.index(3)};
  auto x = need_positive ? positive(s, rng) : away_from_zero(s, rng);
  auto w = random_tensor<double>(s, rng, 1.0);
  return grad_check([&](Graph<double>&, const auto& v) { return weighted_sum(op(v[0]), w); },
                    {x});
}

}  // namespace detail

/// One finite-difference check per differentiable primitive, on randomized shapes.
inline std::vector<PrimitiveCheck> primitive_checks() {
  using detail::away_from_zero;
  using detail::positive;
  using V = Var<double>;
  std::vector<PrimitiveCheck> c;
  auto mat = [](Rng& r) { return Shape{2 + r.index(3), 2 + r.index(4)}; };

  c.push_back({"add", [=](std::uint64_t s) {
                 Rng r({s, 2});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::add(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"sub", [=](std::uint64_t s) {
                 Rng r({s, 3});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::sub(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"mul", [=](std::uint64_t s) {
                 Rng r({s, 4});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::mul(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"add_bias", [=](std::uint64_t s) {
                 Rng r({s, 5});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::add_bias(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(Shape{sh[1]}, r, 1.0)});
               }});
  c.push_back({"add_channel_bias", [=](std::uint64_t s) {
                 Rng r({s, 6});
                 const Shape sh{2 + r.index(2), 2, 3, 2};
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::add_channel_bias(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(Shape{sh[0]}, r, 1.0)});
               }});
  c.push_back({"scale", [=](std::uint64_t s) {
                 Rng r({s, 7});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 const double k = r.uniform(-2, 2);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::scale(v[0], k), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"mul_scalar", [=](std::uint64_t s) {
                 Rng r({s, 8});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::mul_scalar(v[0], v[1]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(Shape{1}, r, 1.0)});
               }});
  c.push_back({"matmul", [=](std::uint64_t s) {
                 Rng r({s, 9});
                 const std::size_t n = 2 + r.index(3), k = 2 + r.index(3), m = 2 + r.index(3);
                 auto w = random_tensor<double>(Shape{n, m}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::matmul(v[0], v[1]), w);
                 }, {random_tensor<double>(Shape{n, k}, r, 1.0),
                     random_tensor<double>(Shape{k, m}, r, 1.0)});
               }});
  c.push_back({"transpose", [=](std::uint64_t s) {
                 Rng r({s, 10});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(Shape{sh[1], sh[0]}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::transpose(v[0]), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"relu", [](std::uint64_t s) { return detail::check_unary(s, false, &ops::relu<double>); }});
  c.push_back({"gelu", [](std::uint64_t s) { return detail::check_unary(s, false, &ops::gelu<double>); }});
  c.push_back({"exp", [](std::uint64_t s) { return detail::check_unary(s, false, &ops::exp<double>); }});
  c.push_back({"log", [](std::uint64_t s) { return detail::check_unary(s, true, &ops::log<double>); }});
  c.push_back({"sigmoid", [](std::uint64_t s) { return detail::check_unary(s, false, &ops::sigmoid<double>); }});
  c.push_back({"softplus", [](std::uint64_t s) { return detail::check_unary(s, false, &ops::softplus<double>); }});
  c.push_back({"clamp_max", [=](std::uint64_t s) {
                 Rng r({s, 11});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::clamp_max(v[0], 0.05), w);
                 }, {away_from_zero(sh, r)});
               }});
  c.push_back({"sum", [=](std::uint64_t s) {
                 Rng r({s, 12});
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return ops::scale(ops::sum(v[0]), 1.7);
                 }, {random_tensor<double>(mat(r), r, 1.0)});
               }});
  c.push_back({"mean_rows", [=](std::uint64_t s) {
                 Rng r({s, 13});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(Shape{1, sh[1]}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::mean_rows(v[0]), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"reshape", [=](std::uint64_t s) {
                 Rng r({s, 14});
                 auto w = random_tensor<double>(Shape{3, 4}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::reshape(v[0], Shape{3, 4}), w);
                 }, {random_tensor<double>(Shape{2, 6}, r, 1.0)});
               }});
  c.push_back({"slice_rows", [=](std::uint64_t s) {
                 Rng r({s, 15});
                 auto w = random_tensor<double>(Shape{2, 3}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::slice_rows(v[0], 1, 3), w);
                 }, {random_tensor<double>(Shape{4, 3}, r, 1.0)});
               }});
  c.push_back({"slice_cols", [=](std::uint64_t s) {
                 Rng r({s, 16});
                 auto w = random_tensor<double>(Shape{3, 2}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::slice_cols(v[0], 2, 4), w);
                 }, {random_tensor<double>(Shape{3, 5}, r, 1.0)});
               }});
  c.push_back({"concat_rows", [=](std::uint64_t s) {
                 Rng r({s, 17});
                 auto w = random_tensor<double>(Shape{5, 3}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::concat_rows<double>({v[0], v[1]}), w);
                 }, {random_tensor<double>(Shape{2, 3}, r, 1.0), random_tensor<double>(Shape{3, 3}, r, 1.0)});
               }});
  c.push_back({"concat_cols", [=](std::uint64_t s) {
                 Rng r({s, 18});
                 auto w = random_tensor<double>(Shape{3, 5}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::concat_cols<double>({v[0], v[1]}), w);
                 }, {random_tensor<double>(Shape{3, 2}, r, 1.0), random_tensor<double>(Shape{3, 3}, r, 1.0)});
               }});
  c.push_back({"gather_rows", [=](std::uint64_t s) {
                 Rng r({s, 19});
                 std::vector<std::size_t> ids;
                 for (int i = 0; i < 5; ++i) ids.push_back(r.index(4));
                 auto w = random_tensor<double>(Shape{5, 3}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::gather_rows(v[0], ids), w);
                 }, {random_tensor<double>(Shape{4, 3}, r, 1.0)});
               }});
  c.push_back({"diagonal", [=](std::uint64_t s) {
                 Rng r({s, 20});
                 const std::size_t n = 2 + r.index(3);
                 auto w = random_tensor<double>(Shape{n}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::diagonal(v[0]), w);
                 }, {random_tensor<double>(Shape{n, n}, r, 1.0)});
               }});
  c.push_back({"conv3d", [=](std::uint64_t s) {
                 Rng r({s, 21});
                 const std::size_t cin = 1 + r.index(2), cout = 1 + r.index(3);
                 const ops::Triple stride{1 + r.index(2), 1 + r.index(2), 1 + r.index(2)};
                 const ops::Triple pad{r.index(2), r.index(2), r.index(2)};
                 const Shape xs{cin, 3 + r.index(3), 3 + r.index(3), 3 + r.index(3)};
                 const Shape ks{cout, cin, 1 + r.index(3), 1 + r.index(3), 1 + r.index(3)};
                 Graph<double> probe;
                 auto out = ops::conv3d(probe.constant(Tensor<double>(xs)),
                                        probe.constant(Tensor<double>(ks)), stride, pad);
                 auto w = random_tensor<double>(out.shape(), r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::conv3d(v[0], v[1], stride, pad), w);
                 }, {random_tensor<double>(xs, r, 1.0), random_tensor<double>(ks, r, 1.0)});
               }});
  c.push_back({"avg_pool3d", [=](std::uint64_t s) {
                 Rng r({s, 22});
                 const Shape xs{1 + r.index(2), 4, 2, 4};
                 auto w = random_tensor<double>(Shape{xs[0], 2, 1, 2}, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::avg_pool3d(v[0], 2), w);
                 }, {random_tensor<double>(xs, r, 1.0)});
               }});
  c.push_back({"layer_norm", [=](std::uint64_t s) {
                 Rng r({s, 23});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::layer_norm(v[0], v[1], v[2]), w);
                 }, {random_tensor<double>(sh, r, 1.0), random_tensor<double>(Shape{sh[1]}, r, 1.0),
                     random_tensor<double>(Shape{sh[1]}, r, 1.0)});
               }});
  c.push_back({"softmax_rows", [=](std::uint64_t s) {
                 Rng r({s, 24});
                 auto sh = mat(r);
                 std::vector<bool> mask(sh[1], true);
                 mask[r.index(sh[1])] = false;
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::softmax_rows(v[0], mask), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"log_softmax_rows", [=](std::uint64_t s) {
                 Rng r({s, 25});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::log_softmax_rows(v[0]), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"row_normalize", [=](std::uint64_t s) {
                 Rng r({s, 26});
                 auto sh = mat(r);
                 auto w = random_tensor<double>(sh, r, 1.0);
                 return grad_check([&](Graph<double>&, const auto& v) {
                   return weighted_sum(ops::row_normalize(v[0]), w);
                 }, {random_tensor<double>(sh, r, 1.0)});
               }});
  c.push_back({"multi_head_attention", [=](std::uint64_t s) {
                 Rng r({s, 27});
                 const std::size_t n = 2 + r.index(3), d = 4, heads = 2;
                 std::vector<bool> mask(n, true);
                 mask[n - 1] = false;
                 auto w = random_tensor<double>(Shape{n, d}, r, 1.0);
                 std::vector<Tensor<double>> ps;
                 ps.push_back(random_tensor<double>(Shape{n, d}, r, 1.0));
                 for (int i = 0; i < 4; ++i) {
                   ps.push_back(random_tensor<double>(Shape{d, d}, r, 0.5));
                   if (i != 1) ps.push_back(random_tensor<double>(Shape{d}, r, 0.5));
                 }
                 // The key bias shifts every score in a row equally, so its gradient is
                 // exactly zero and only roundoff would be compared; it stays constant.
                 return grad_check([&](Graph<double>& g, const std::vector<V>& v) {
                   auto bk = g.constant(Tensor<double>(Shape{d}, 0.3));
                   AttentionWeights<double> aw{v[1], v[2], v[3], bk, v[4], v[5], v[6], v[7]};
                   return weighted_sum(multi_head_attention(v[0], v[0], v[0], aw, heads, mask), w);
                 }, ps);
               }});
  return c;
}

}  // namespace medimp
