#include "medimp/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace medimp;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const GlobalFlags& g) {
  RunConfig cfg = g.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(g.config);
  apply_seed_overrides(cfg, g.seed);
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive volume/prompt pretraining on a synthetic longitudinal cohort"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed; overrides MEDIMP_SEED and the config");
  app.add_option("--out", g.out, "Output directory; overrides the config");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic cohort");
  auto* prompts = app.add_subcommand("prompts", "Write generated prompts as JSONL");
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining; writes checkpoint and metrics");
  auto* embed = app.add_subcommand("embed", "Export image embeddings as CSV");
  auto* eval = app.add_subcommand("eval", "Downstream graft-function prediction");
  std::size_t cv = 0;
  eval->add_option("--cv", cv, "Also run k-fold cross-validation on the training split")->check(CLI::Range(2, 1000));
  auto* plot = app.add_subcommand("plot", "t-SNE of the exported embeddings as SVG scatter plots");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t grad_seeds = 20;
  gradcheck->add_option("--seeds", grad_seeds, "Random configurations per check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gradcheck->parsed()) {
      GradSuiteOptions opt;
      opt.seeds = grad_seeds;
      const auto rows = run_gradient_suite(opt);
      print_gradient_suite(std::cout, rows);
      return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; }) ? 0 : 1;
    }
    const auto cfg = resolve(g);
    if (synth->parsed()) run_synth(cfg, std::cout);
    else if (prompts->parsed()) run_prompts(cfg, std::cout);
    else if (pretrain->parsed()) run_pretrain(cfg, std::cout);
    else if (embed->parsed()) run_embed(cfg, std::cout);
    else if (eval->parsed()) run_eval(cfg, cv ? std::optional<std::size_t>(cv) : std::nullopt, std::cout);
    else if (plot->parsed()) run_plot(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
