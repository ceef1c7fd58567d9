#pragma once

#include "medimp/contrastive/model.hpp"
#include "medimp/numerics/gradcheck.hpp"

#include <ostream>

namespace medimp {

struct GradSuiteRow {
  std::string name;
  std::size_t configs = 0;
  double max_rel_error = 0;
  bool pass = false;
};

struct GradSuiteOptions {
  std::size_t seeds = 20;
  double tolerance = 1e-4;
};

namespace detail {

inline ImageEncoderConfig gradcheck_image_config() {
  ImageEncoderConfig c;
  c.extents = {8, 8, 4};
  c.widths = {2, 4};
  c.blocks = {1, 1};
  c.embed_dim = 4;
  c.pool_heads = 2;
  return c;
}

inline TextEncoderConfig gradcheck_text_config(std::size_t vocab) {
  TextEncoderConfig c;
  c.vocab_size = vocab;
  c.layers = 2;
  c.width = 8;
  c.heads = 2;
  c.ffn = 8;
  c.max_len = 16;
  c.embed_dim = 4;
  return c;
}

// The key bias shifts every score of a query equally, so its gradient is exactly
// zero and a relative comparison against finite-difference noise is meaningless.
inline bool checkable(const std::string& n) { return n.size() < 3 || n.substr(n.size() - 3) != ".bk"; }

// Moves zero-initialised biases and gains off their initial values so every path carries gradient.
inline void jitter(ParameterStore<double>& s, Rng& rng) {
  for (auto& p : s.all())
    for (auto& v : p.value.data()) v += rng.normal(0, 0.1);
}

inline Tensor<double> random_volume_tensor(const ImageEncoderConfig& c, Rng& rng) {
  Tensor<double> t(Shape{1, c.extents[2], c.extents[1], c.extents[0]});
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace detail

/// Finite-difference checks in double precision: every primitive, each encoder
/// end to end, and the contrastive loss through both encoders including the logit scale.
inline std::vector<GradSuiteRow> run_gradient_suite(const GradSuiteOptions& opt = {}) {
  std::vector<GradSuiteRow> rows;
  auto finish = [&](GradSuiteRow r) {
    r.pass = r.max_rel_error < opt.tolerance;
    rows.push_back(std::move(r));
  };
  for (const auto& check : primitive_checks()) {
    GradSuiteRow r{check.name, opt.seeds, 0, false};
    for (std::uint64_t s = 0; s < opt.seeds; ++s) r.max_rel_error = std::max(r.max_rel_error, check.run(s));
    finish(r);
  }

  const auto vocab = build_vocab(std::vector<std::string>{"gfr is low and donor age is high , one month ."});
  const auto ic = detail::gradcheck_image_config();
  const auto tc = detail::gradcheck_text_config(vocab.size());
  GradCheckOptions gopt;
  gopt.max_coords_per_tensor = 6;

  GradSuiteRow image{"image_encoder", opt.seeds, 0, false};
  GradSuiteRow text{"text_encoder", opt.seeds, 0, false};
  GradSuiteRow loss{"contrastive_loss", opt.seeds, 0, false};
  GradSuiteRow full{"encoders+contrastive_loss", opt.seeds, 0, false};
  for (std::uint64_t s = 0; s < opt.seeds; ++s) {
    Rng rng({s, 0x73756974ULL});
    gopt.seed = s;
    {
      ParameterStore<double> st;
      init_image_encoder(st, ic, rng);
      detail::jitter(st, rng);
      const auto x = detail::random_volume_tensor(ic, rng);
      const auto w = random_tensor<double>(Shape{1, ic.embed_dim}, rng, 1.0);
      image.max_rel_error = std::max(image.max_rel_error, grad_check_store(st, [&](Graph<double>& g, const Bound<double>& p) {
        return weighted_sum(image_forward(p, ic, g.constant(x)), w);
      }, gopt, detail::checkable));
    }
    {
      ParameterStore<double> st;
      init_text_encoder(st, tc, rng);
      detail::jitter(st, rng);
      const auto t = tokenize("donor age is high and gfr is low .", vocab, 12);
      const auto w = random_tensor<double>(Shape{1, tc.embed_dim}, rng, 1.0);
      text.max_rel_error = std::max(text.max_rel_error, grad_check_store(st, [&](Graph<double>&, const Bound<double>& p) {
        return weighted_sum(text_forward(p, tc, t), w);
      }, gopt, detail::checkable));
    }
    {
      const std::size_t b = 2 + rng.index(3), d = 2 + rng.index(4);
      loss.max_rel_error = std::max(loss.max_rel_error, grad_check(
          [](Graph<double>&, const std::vector<Var<double>>& v) { return contrastive_loss(v[0], v[1], v[2]); },
          {random_tensor<double>(Shape{b, d}, rng, 1.0), random_tensor<double>(Shape{b, d}, rng, 1.0),
           Tensor<double>::scalar(rng.uniform(0.0, 4.0))}));
    }
    {
      ParameterStore<double> st;
      init_image_encoder(st, ic, rng);
      init_text_encoder(st, tc, rng);
      st.add(kLogitScaleName, Tensor<double>::scalar(kInitLogitScale), false);
      detail::jitter(st, rng);
      const auto x0 = detail::random_volume_tensor(ic, rng), x1 = detail::random_volume_tensor(ic, rng);
      const auto t0 = tokenize("gfr is low .", vocab, 12), t1 = tokenize("donor age is high , one month .", vocab, 12);
      full.max_rel_error = std::max(full.max_rel_error, grad_check_store(st, [&](Graph<double>& g, const Bound<double>& p) {
        auto fi = ops::concat_rows(std::vector<Var<double>>{image_forward(p, ic, g.constant(x0)), image_forward(p, ic, g.constant(x1))});
        auto ft = ops::concat_rows(std::vector<Var<double>>{text_forward(p, tc, t0), text_forward(p, tc, t1)});
        return contrastive_loss(fi, ft, p[kLogitScaleName]);
      }, gopt, detail::checkable));
    }
  }
  finish(image);
  finish(text);
  finish(loss);
  finish(full);
  return rows;
}

inline void print_gradient_suite(std::ostream& out, const std::vector<GradSuiteRow>& rows) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %8s %14s  %s\n", "check", "configs", "max rel err", "result");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s %8zu %14.3e  %s\n", r.name.c_str(), r.configs, r.max_rel_error,
                  r.pass ? "PASS" : "FAIL");
    out << buf;
  }
}

}  // namespace medimp
