// Command-line front end for the data-driven reduced-order modelling pipeline.
//
//   assm collect  --config cfg.json [--out DIR] [--seed N]
//   assm train    --config cfg.json [--out DIR]
//   assm openloop --config cfg.json [--out DIR]
//   assm control  --config cfg.json [--out DIR]
//   assm report   --config cfg.json [--out DIR]
//   assm run      --config cfg.json [--out DIR]     (all of the above in order)
//
// Exit status: 0 success, 2 invalid input or unreadable/unwritable files, 3 numerical failure.

#include "assm/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;

namespace {

struct Options
{
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

fs::path resolve_output(const Options & o, const assm::RunConfig & c)
{
  fs::path root = ".";
  if (const char * env = std::getenv("ASSM_OUTPUT_ROOT"); env && *env) root = env;
  if (!o.out.empty()) {
    const fs::path p(o.out);
    return p.is_absolute() ? p : root / p;
  }
  return root / "runs" / (fs::path(o.config).stem().string() + "-" + assm::config_hash(c).substr(0, 8));
}

void print_collect(const assm::CollectSummary & s)
{
  std::cout << "collected " << s.groups << " groups, " << s.decays << " decays, " << s.failures << " failed inputs\n";
}

void print_train(const assm::TrainSummary & s)
{
  std::cout << "dictionary: " << s.dictionary->nodes().size() << " nodes, mean test NMTE " << s.mean_test_nmte
            << ", max " << s.max_test_nmte << ", critical-manifold residual " << s.manifold_residual << "\n";
}

void print_openloop(const std::vector<assm::OpenLoopVariant> & v)
{
  for (const auto & r : v)
    std::cout << r.variant << ": mean NMTE " << r.report.mean_nmte << ", fraction <= 10% "
              << r.report.fraction_below_10 << "\n";
}

void print_control(const assm::ControlOutcome & oc)
{
  std::cout << "target slowness r_s = " << oc.slowness << "\n";
  for (const auto & r : oc.results) {
    std::cout << r.variant << ": ISE " << r.metrics.ise << ", violation ratio " << r.metrics.violation_ratio
              << ", mean solve " << 1e3 * r.mean_solve_time() << " ms";
    if (r.aborted) std::cout << " (aborted: " << r.abort_reason << ")";
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Adiabatic spectral-submanifold reduced-order models: data collection, training, validation and MPC"};
  app.set_version_flag("--version", ASSM_VERSION);
  app.require_subcommand(1);

  Options opt;
  const auto add_common = [&](CLI::App * sub) {
    sub->add_option("--config,-c", opt.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out,-o", opt.out, "run directory (relative paths resolve under $ASSM_OUTPUT_ROOT)");
    sub->add_option("--seed", opt.seed, "override the configured seed");
  };
  const std::vector<std::pair<std::string, std::string>> stages{
    {"collect", "simulate decays and forced responses at every static input"},
    {"train", "fit the static models, the dictionary and the baselines"},
    {"openloop", "scatter validation of the aSSM variants on the forced responses"},
    {"control", "closed-loop tracking with every configured controller"},
    {"report", "gather stage summaries into report.json and summary.csv"},
    {"run", "all stages in order"},
  };
  for (const auto & [name, help] : stages) add_common(app.add_subcommand(name, help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    assm::RunConfig cfg = assm::load_config(opt.config);
    if (opt.seed) {
      cfg.seed = *opt.seed;
      cfg.collection.seed = *opt.seed;
    }
    const fs::path out = resolve_output(opt, cfg);
    const std::string stage = app.get_subcommands().front()->get_name();
    std::cout << "run directory " << out.string() << " (config " << assm::config_hash(cfg) << ")\n";
    const bool all = stage == "run";
    if (all || stage == "collect") print_collect(assm::run_collect(cfg, out));
    if (all || stage == "train") print_train(assm::run_train(cfg, out));
    if (all || stage == "openloop") print_openloop(assm::run_openloop(cfg, out));
    if (all || stage == "control") print_control(assm::run_control(cfg, out));
    if (all || stage == "report") assm::run_report(cfg, out);
    return 0;
  } catch (const assm::Error & e) {
    std::cerr << "error [" << assm::to_string(e.kind()) << "]: " << e.what() << "\n";
    return e.is_validation() ? 2 : 3;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
