#pragma once
// Benchmark problems (Poisson square, Darcy L-shape, Navier-Stokes channel
// with cylinder): PDE residuals and differentiable loss assemblies, error
// metrics, Turek cylinder diagnostics, problem-spec JSON I/O, field emission
// (CSV + PNG heatmaps) and the experiment orchestration behind the CLI.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hardbc/grid.hpp"
#include "hardbc/structure.hpp"
#include "hardbc/train.hpp"

namespace hardbc::bench {

using grid::Field;
using grid::Grid;
using grid::Mask;

// ---- problem specs -------------------------------------------------------------

enum class ProblemKind : std::uint8_t { poisson, darcy, ns };
[[nodiscard]] std::string_view problem_name(ProblemKind k);
[[nodiscard]] ProblemKind problem_from_name(std::string_view s);

struct TrainingBlock {
  int nx = 51, ny = 51;
  int epochs = 1000;
  double lr0 = 2.5e-3;
  int milestone = 200;
};

struct ProblemSpec {
  ProblemKind kind = ProblemKind::poisson;
  geom::DomainSpec domain;
  double nu = 0.0;                    // ns viscosity
  double alpha = 0.0, beta = 0.0;     // darcy coefficient parameters
  std::vector<expr::Expr> reference;  // analytic reference per component
  std::string reference_csv;          // ns: external reference field
  TrainingBlock training;
  int full_nx = 0, full_ny = 0;       // ns: full-scale grid (behind --full)
};

/// The three shipped problems, constructed in code (the specs/*.json files
/// hold the same content for CLI use; a test pins the equivalence).
[[nodiscard]] ProblemSpec builtin_poisson();
[[nodiscard]] ProblemSpec builtin_darcy();
[[nodiscard]] ProblemSpec builtin_ns();

/// JSON round-trip (schema: see specs/*.json). load validates the domain.
[[nodiscard]] ProblemSpec load_problem_spec(const std::string& path);
[[nodiscard]] std::string dump_problem_spec(const ProblemSpec& spec);

// ---- PDE residuals -------------------------------------------------------------
// All residuals are evaluated at Inside nodes with mask-aware (inside-only)
// stencils; nodes without enough stencil reach are flagged invalid and hold 0.

/// r = -lap_h u - 2 pi^2 cos(pi x) cos(pi y).
[[nodiscard]] Field residual_poisson(const Field& u, const Grid& g,
                                     const Mask& m,
                                     std::vector<std::uint8_t>* valid = nullptr);

/// r = -div_h(a grad_h u) - f in conservative flux form with the coefficient
/// a(x,y) = sin(alpha x) sin(beta y) evaluated analytically at half-points.
[[nodiscard]] Field residual_darcy(const Field& u, const Grid& g, const Mask& m,
                                   double alpha, double beta,
                                   std::vector<std::uint8_t>* valid = nullptr);

/// Hand-derived RHS f = -div(a grad u*) for the manufactured solution
/// u* = sin(alpha x) cos(beta y).
[[nodiscard]] double darcy_rhs(double x, double y, double alpha, double beta);

struct NsResidual {
  Field rx, ry, rdiv;
  std::vector<std::uint8_t> valid_x, valid_y, valid_div;
};

/// Momentum residuals -nu lap u + (u . grad)u + sqrt(nu) grad p_tilde (the
/// pressure rescaling p = sqrt(nu) p_tilde substituted) and the continuity
/// residual div u.
[[nodiscard]] NsResidual residual_ns(const Field& u, const Field& v,
                                     const Field& pt, const Grid& g,
                                     const Mask& m, double nu);

/// Mean-squared-residual loss wired for reverse mode. alpha/beta feed the
/// Darcy coefficient, nu the NS terms; unused parameters are ignored.
[[nodiscard]] std::unique_ptr<train::PdeLoss> make_pde_loss(
    ProblemKind kind, const Grid& g, const Mask& m, double alpha = 0.0,
    double beta = 0.0, double nu = 0.0);

// ---- metrics and diagnostics ---------------------------------------------------

/// Relative discrete l2 over non-Outside nodes; throws on zero reference norm.
[[nodiscard]] double l2_error(const Field& pred, const Field& ref,
                              const Mask& m);

/// Deterministic i.i.d. uniform (alpha, beta) pairs in [lo, hi)^2.
[[nodiscard]] std::vector<std::pair<double, double>> sample_parameters(
    int n, std::uint64_t seed, double lo = 1.0, double hi = 10.0);

struct Diagnostics {
  double delta_p = 0.0, c_d = 0.0, c_l = 0.0;
};

/// Turek cylinder quantities: pressure drop between the front and back
/// surface points and drag/lift coefficients from the tangential-form stress
/// integral over 360 circle samples (p = sqrt(nu) p_tilde).
[[nodiscard]] Diagnostics compute_diagnostics(const Field& u, const Field& v,
                                              const Field& pt, const Grid& g,
                                              const geom::DomainSpec& dom,
                                              double nu);

// ---- field I/O and rendering ---------------------------------------------------

/// Columns x,y,value,usable (usable = 0 marks Outside nodes).
void write_field_csv(const std::string& path, const Field& f, const Grid& g,
                     const Mask& m);

/// Viridis heatmap over usable nodes, Outside in light gray; integer-upscaled
/// so the longer image side is at least ~440 px.
void write_heatmap_png(const std::string& path, const Field& f, const Grid& g,
                       const Mask& m);

/// Reference CSV with header x,y,u,v,p and one row per grid node in index
/// order; returns {u, v, p} fields. Throws when the row count mismatches.
[[nodiscard]] std::vector<Field> load_ns_reference(const std::string& path,
                                                   const Grid& g);

// ---- orchestration -------------------------------------------------------------

struct RunOptions {
  std::string problem;  // poisson | darcy | ns
  structure::Mode mode = structure::Mode::glss;
  int nx = 0, ny = 0;       // 0 = problem-spec default
  int epochs = 0;           // 0 = problem-spec default
  double lr0 = 0.0;         // 0 = problem-spec default
  std::uint64_t seed = 0;
  int pairs = 0;            // darcy: train `pairs` sampled (alpha, beta) pairs
  double pair_lo = 1.0, pair_hi = 4.0;  // desk-scale sampling range
  std::string out_dir = "out";
  std::string spec_path;    // empty = built-in problem spec
  bool full = false;        // ns: full-scale grid
};

/// build -> train -> evaluate -> emit. Writes results.csv plus per-run
/// losses.csv, field CSVs, heatmaps and a checkpoint. Returns an exit code.
int run(const RunOptions& opt);

/// Structure-correctness gate: exact-BC verification for the problem spec's
/// domain under the requested mode. Prints the report; 0 iff it passes.
int run_verify(const RunOptions& opt);

}  // namespace hardbc::bench
