// hardbc -- build solution structures with exactly enforced boundary
// conditions, train the free part against a PDE residual, and report errors.
//
// Subcommands:
//   poisson    manufactured Poisson problem on the unit square
//   darcy      heterogeneous Darcy flow on an L-shaped domain
//   ns         steady Navier-Stokes channel flow past a cylinder
//   verify-bc  check exact boundary enforcement for a problem's structure

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "hardbc/bench.hpp"
#include "hardbc/structure.hpp"

namespace {

void add_common_options(CLI::App* sub, hardbc::bench::RunOptions* opt,
                        std::string* mode, std::vector<int>* grid) {
  sub->add_option("--mode", *mode,
                  "structure mode: glss | op | semi-weak | weak | legacy-sukumar")
      ->capture_default_str();
  sub->add_option("--grid", *grid, "grid resolution: NX NY")
      ->expected(2);
  sub->add_option("--epochs", opt->epochs,
                  "training epochs (0 = problem default)");
  sub->add_option("--lr", opt->lr0,
                  "initial learning rate (0 = problem default)");
  sub->add_option("--seed", opt->seed, "RNG seed for network init");
  sub->add_option("--out", opt->out_dir, "output directory")
      ->capture_default_str();
  sub->add_option("--spec", opt->spec_path,
                  "problem-spec JSON file (default: built-in)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "solution structures with exactly enforced boundary conditions"};
  app.require_subcommand(1);

  hardbc::bench::RunOptions opt;
  std::string mode = "glss";
  std::vector<int> grid;
  std::vector<double> pair_range;

  CLI::App* poisson =
      app.add_subcommand("poisson", "Poisson problem on the unit square");
  CLI::App* darcy =
      app.add_subcommand("darcy", "Darcy flow on the L-shaped domain");
  CLI::App* ns =
      app.add_subcommand("ns", "Navier-Stokes channel flow past a cylinder");
  CLI::App* verify = app.add_subcommand(
      "verify-bc", "verify exact boundary enforcement for a structure");

  for (CLI::App* sub : {poisson, darcy, ns, verify})
    add_common_options(sub, &opt, &mode, &grid);

  darcy->add_option("--pairs", opt.pairs,
                    "train this many sampled (alpha, beta) pairs");
  darcy
      ->add_option("--pair-range", pair_range,
                   "sampling range LO HI for --pairs")
      ->expected(2);
  ns->add_flag("--full", opt.full, "use the full-scale grid");

  std::string verify_problem;
  verify
      ->add_option("problem", verify_problem,
                   "which problem's domain to verify: poisson | darcy | ns")
      ->check(CLI::IsMember({"poisson", "darcy", "ns"}));

  CLI11_PARSE(app, argc, argv);

  try {
    opt.mode = hardbc::structure::mode_from_name(mode);
    if (grid.size() == 2) {
      opt.nx = grid[0];
      opt.ny = grid[1];
    }
    if (pair_range.size() == 2) {
      opt.pair_lo = pair_range[0];
      opt.pair_hi = pair_range[1];
    }

    if (poisson->parsed()) opt.problem = "poisson";
    if (darcy->parsed()) opt.problem = "darcy";
    if (ns->parsed()) opt.problem = "ns";
    if (verify->parsed()) {
      if (verify_problem.empty() && opt.spec_path.empty()) {
        std::fprintf(stderr,
                     "verify-bc: give a problem name or a --spec file\n");
        return 2;
      }
      opt.problem = verify_problem.empty() ? "poisson" : verify_problem;
      return hardbc::bench::run_verify(opt);
    }
    return hardbc::bench::run(opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hardbc: %s\n", e.what());
    return 2;
  }
}
