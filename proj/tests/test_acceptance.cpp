// Acceptance suite: end-to-end checks of the exact-boundary-condition
// machinery and the shipped benchmark experiments. Each criterion prints one
// PASS/FAIL line; the process exits nonzero when any selected criterion
// fails. Run with --all (the ctest default) or a subset like `acceptance c1
// c4 c6`. Thresholds live next to each criterion and are intentionally not
// configurable from the command line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hardbc/bench.hpp"
#include "hardbc/expr.hpp"
#include "hardbc/grid.hpp"
#include "hardbc/structure.hpp"
#include "hardbc/train.hpp"
#include "hardbc/verify_bc.hpp"

using namespace hardbc;
using bench::ProblemKind;
using geom::Point2;
using grid::Field;
using grid::Grid;
using grid::Mask;
using structure::Mode;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// Shared training harness: build the structure, train against the problem's
// PDE loss, return the relative l2 errors per component (empty if the
// problem has no usable reference) plus the trained fields.
struct RunOut {
  std::vector<double> l2;
  std::vector<Field> fields;
  bool diverged = false;
};

RunOut run_training(const bench::ProblemSpec& spec, Mode mode, int nx, int ny,
                    int epochs, double alpha, double beta,
                    std::uint64_t seed) {
  const Grid g = Grid::make(nx, ny, spec.domain.box);
  const Mask m = grid::build_mask(g, spec.domain);
  const auto ss = structure::build(mode, spec.domain);
  const auto pde = bench::make_pde_loss(spec.kind, g, m, alpha, beta, spec.nu);

  train::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr0 = spec.training.lr0;
  cfg.milestone = spec.training.milestone;
  cfg.seed = seed;
  cfg.alpha = alpha;
  cfg.beta = beta;

  const auto res = train::train(ss, g, m, *pde, cfg);

  RunOut out;
  out.fields = res.fields;
  out.diverged = res.report.diverged;
  for (std::size_t c = 0; c < spec.reference.size(); ++c) {
    const auto prog = expr::compile(spec.reference[c]);
    Field ref(g.size(), 0.0);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        ref[g.idx(i, j)] = prog.eval(g.xs[i], g.ys[j], alpha, beta);
    out.l2.push_back(bench::l2_error(res.fields[c], ref, m));
  }
  return out;
}

// ---- C1: exact boundary enforcement --------------------------------------------

Outcome c1() {
  const double t0 = now_s();
  double max_dir = 0.0, min_order = 99.0;
  bool pass = true;
  std::ostringstream detail;
  for (const auto& spec :
       {bench::builtin_poisson(), bench::builtin_darcy(), bench::builtin_ns()}) {
    for (Mode mode : {Mode::glss, Mode::op}) {
      structure::VerifyOptions vo;
      vo.alpha = 2.0;
      vo.beta = 3.0;
      if (spec.kind == ProblemKind::ns)
        vo.grids = {{221, 42}, {441, 83}, {881, 165}};
      const auto rep = structure::verify_bc(structure::build(mode, spec.domain), vo);
      max_dir = std::max(max_dir, rep.max_dirichlet_residual);
      min_order = std::min(min_order, rep.min_robin_order);
      if (!rep.pass) {
        pass = false;
        detail << " [" << bench::problem_name(spec.kind) << "/"
               << structure::mode_name(mode) << " FAILED]";
      }
    }
  }
  const double wall = now_s() - t0;
  if (wall >= 60.0) pass = false;
  detail << "max dirichlet " << fmt(max_dir) << ", min robin order "
         << fmt(min_order, "%.2f") << ", " << fmt(wall, "%.1f") << "s";
  return {pass, detail.str()};
}

// ---- C2: Poisson, structure quality vs the legacy distance construction --------

Outcome c2() {
  const auto spec = bench::builtin_poisson();
  const auto glss = run_training(spec, Mode::glss, 51, 51, 1000, 0, 0, 0);
  const auto legacy =
      run_training(spec, Mode::legacy_sukumar, 51, 51, 1000, 0, 0, 0);
  const double rg = glss.l2.at(0), rl = legacy.l2.at(0);
  const bool pass = !glss.diverged && rg <= 5e-2 && rl >= 5.0 * rg;
  return {pass, "glss rel-l2 " + fmt(rg) + " (need <= 5e-2), legacy " +
                    fmt(rl) + " (need >= 5x glss)"};
}

// ---- C3: Darcy across sampled coefficient parameters ----------------------------

Outcome c3() {
  const auto spec = bench::builtin_darcy();
  const auto pairs = bench::sample_parameters(3, 0, 1.0, 4.0);
  bool pass = true;
  std::ostringstream detail;
  for (Mode mode : {Mode::glss, Mode::op, Mode::semi_weak, Mode::weak}) {
    const bool asserted = mode == Mode::glss || mode == Mode::op;
    detail << structure::mode_name(mode) << ":";
    for (const auto& [a, b] : pairs) {
      const auto out = run_training(spec, mode, 101, 101, 1000, a, b, 0);
      const double rel = out.l2.at(0);
      detail << " " << fmt(rel);
      if (asserted && (out.diverged || rel > 0.1)) pass = false;
    }
    detail << (asserted ? " (asserted <= 0.1); " : " (reported); ");
  }
  return {pass, detail.str()};
}

// ---- C4: analytic gradients against central differences -------------------------

Outcome c4() {
  struct Combo {
    bench::ProblemSpec spec;
    int nx, ny;
    double alpha, beta;
  };
  const Combo combos[] = {
      {bench::builtin_poisson(), 21, 21, 0.0, 0.0},
      {bench::builtin_darcy(), 21, 21, 2.0, 3.0},
      {bench::builtin_ns(), 111, 21, 0.0, 0.0},
  };
  bool pass = true;
  double worst = 0.0;
  std::ostringstream detail;
  for (const auto& cb : combos) {
    std::vector<Mode> modes{Mode::glss, Mode::op, Mode::semi_weak, Mode::weak};
    if (cb.spec.kind == ProblemKind::poisson)
      modes.push_back(Mode::legacy_sukumar);
    for (Mode mode : modes) {
      const Grid g = Grid::make(cb.nx, cb.ny, cb.spec.domain.box);
      const Mask m = grid::build_mask(g, cb.spec.domain);
      const auto ss = structure::build(mode, cb.spec.domain);
      const auto pde =
          bench::make_pde_loss(cb.spec.kind, g, m, cb.alpha, cb.beta, cb.spec.nu);
      train::TrainConfig cfg;
      cfg.seed = 1;
      cfg.alpha = cb.alpha;
      cfg.beta = cb.beta;
      train::Trainer tr(ss, g, m, *pde, cfg);

      std::vector<double> ga;
      tr.evaluate(&ga);
      double max_g = 0.0;
      for (double v : ga) max_g = std::max(max_g, std::abs(v));

      auto& params = tr.ansatz().params();
      std::mt19937_64 rng(0xC4 + static_cast<int>(mode) * 131 +
                          static_cast<int>(cb.spec.kind));
      std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
      const double h = 1e-5;
      double combo_worst = 0.0;
      for (int t = 0; t < 20; ++t) {
        const std::size_t k = pick(rng);
        const double save = params[k];
        params[k] = save + h;
        const double lp = tr.evaluate(nullptr).total;
        params[k] = save - h;
        const double lm = tr.evaluate(nullptr).total;
        params[k] = save;
        const double gn = (lp - lm) / (2.0 * h);
        const double rel = std::abs(ga[k] - gn) /
                           std::max({std::abs(ga[k]), std::abs(gn), 1e-8 * max_g});
        combo_worst = std::max(combo_worst, rel);
      }
      worst = std::max(worst, combo_worst);
      if (combo_worst > 1e-4) {
        pass = false;
        detail << " [" << bench::problem_name(cb.spec.kind) << "/"
               << structure::mode_name(mode) << " rel " << fmt(combo_worst)
               << "]";
      }
    }
  }
  detail << "worst rel mismatch " << fmt(worst) << " (need <= 1e-4)";
  return {pass, detail.str()};
}

// ---- C5: hand-derived Darcy RHS against a symbolic rebuild ----------------------

Outcome c5() {
  using expr::Var;
  const auto a = expr::parse("sin(alpha*x)*sin(beta*y)");
  const auto u = expr::parse("sin(alpha*x)*cos(beta*y)");
  const auto ux = expr::diff(u, Var::x);
  const auto uy = expr::diff(u, Var::y);
  // -div(a grad u) expanded with the product rule, then compiled.
  std::ostringstream sym;
  sym << "-((" << expr::to_string(expr::diff(a, Var::x)) << ")*("
      << expr::to_string(ux) << ")+(" << expr::to_string(a) << ")*("
      << expr::to_string(expr::diff(ux, Var::x)) << ")+("
      << expr::to_string(expr::diff(a, Var::y)) << ")*("
      << expr::to_string(uy) << ")+(" << expr::to_string(a) << ")*("
      << expr::to_string(expr::diff(uy, Var::y)) << "))";
  const auto prog = expr::compile(expr::parse(sym.str()));

  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> uxy(0.0, 1.0), uab(1.0, 10.0);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const double x = uxy(rng), y = uxy(rng), al = uab(rng), be = uab(rng);
    worst = std::max(worst, std::abs(prog.eval(x, y, al, be) -
                                     bench::darcy_rhs(x, y, al, be)));
  }
  return {worst <= 1e-10,
          "max |symbolic - closed form| = " + fmt(worst) + " over 500 draws"};
}

// ---- C6: partition of unity and vanishing weight gradients ----------------------

Outcome c6() {
  const auto dom = bench::builtin_darcy().domain;
  bool pass = true;
  std::ostringstream detail;

  double worst_pou = 0.0;
  for (int n : {51, 101, 201}) {
    const Grid g = Grid::make(n, n, dom.box);
    const Mask m = grid::build_mask(g, dom);
    const auto pts = g.points();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (m.cls[k].cls != geom::NodeClass::inside) continue;
      const auto w = structure::weights(dom, pts[k]);
      double s = 0.0;
      for (double wi : w) s += wi;
      worst_pou = std::max(worst_pou, std::abs(s - 1.0));
    }
  }
  if (worst_pou > 1e-12) pass = false;
  detail << "|sum w - 1| max " << fmt(worst_pou) << " (need <= 1e-12)";

  // Vanishing normal derivative of the mu=2 weights, measured on nested
  // on-segment probes of the coarsest lattice with 10% corner margins.
  const Grid g0 = Grid::make(51, 51, dom.box);
  const Mask m0 = grid::build_mask(g0, dom);
  const auto pts0 = g0.points();
  double worst_ratio = 99.0;
  for (int s = 0; s < static_cast<int>(dom.segments.size()); ++s) {
    const auto& seg = dom.segments[s];
    if (seg.mu() != 2) continue;
    const auto* line = std::get_if<geom::Line>(&seg.curve);
    if (!line) continue;
    const double len = geom::norm(line->b - line->a);
    const Point2 t = (1.0 / len) * (line->b - line->a);
    const Point2 nin = geom::rot90(t);  // domain on the left of a->b

    std::vector<Point2> probes;
    for (std::size_t k = 0; k < g0.size(); ++k) {
      if (m0.cls[k].cls != geom::NodeClass::on_segment ||
          m0.cls[k].segment != s)
        continue;
      const double along = geom::dot(pts0[k] - line->a, t);
      if (along < 0.10 * len || along > 0.90 * len) continue;
      probes.push_back(pts0[k]);
    }
    if (probes.empty()) {
      pass = false;
      detail << " [seg " << seg.name << ": no probes]";
      continue;
    }

    std::vector<double> levels;
    for (int n : {51, 101, 201}) {
      const double h = 1.0 / (n - 1);
      const double d = 2.0 * h;
      double emax = 0.0;
      for (const auto& p : probes) {
        const auto w0 = structure::weights(dom, p);             // bypass: w=1
        const auto w1 = structure::weights(dom, p + d * nin);
        const auto w2 = structure::weights(dom, p + 2.0 * d * nin);
        const double dn =
            (-3.0 * w0[s] + 4.0 * w1[s] - w2[s]) / (2.0 * d);
        emax = std::max(emax, std::abs(dn));
      }
      levels.push_back(emax);
    }
    for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
      const double ratio = levels[l] / levels[l + 1];
      worst_ratio = std::min(worst_ratio, ratio);
      if (ratio < std::pow(2.0, 0.9)) {
        pass = false;
        detail << " [seg " << seg.name << " ratio " << fmt(ratio, "%.2f")
               << "]";
      }
    }
  }
  detail << "; min dW/dn decay ratio " << fmt(worst_ratio, "%.2f")
         << " (need >= 2^0.9 = 1.87)";
  return {pass, detail.str()};
}

// ---- C7: Navier-Stokes structure and smoke diagnostics --------------------------

Outcome c7() {
  const auto spec = bench::builtin_ns();
  bool pass = true;
  std::ostringstream detail;

  const auto glss = structure::build(Mode::glss, spec.domain);
  const auto op = structure::build(Mode::op, spec.domain);
  if (glss.n_slots() != 10 || op.n_slots() != 6) pass = false;
  detail << "slots glss " << glss.n_slots() << " (want 10), op "
         << op.n_slots() << " (want 6)";

  for (const auto* ss : {&glss, &op}) {
    structure::VerifyOptions vo;
    vo.grids = {{221, 42}, {441, 83}, {881, 165}};
    const auto rep = structure::verify_bc(*ss, vo);
    if (!rep.pass) {
      pass = false;
      detail << " [verify_bc " << structure::mode_name(ss->mode) << " FAILED]";
    }
  }

  // Smoke training; the diagnostics are reported, not asserted.
  const Grid g = Grid::make(221, 42, spec.domain.box);
  const Mask m = grid::build_mask(g, spec.domain);
  const auto pde = bench::make_pde_loss(ProblemKind::ns, g, m, 0, 0, spec.nu);
  train::TrainConfig cfg;
  cfg.epochs = 300;
  cfg.lr0 = spec.training.lr0;
  cfg.milestone = spec.training.milestone;
  cfg.seed = 0;
  const auto res = train::train(glss, g, m, *pde, cfg);
  const auto d = bench::compute_diagnostics(res.fields[0], res.fields[1],
                                            res.fields[2], g, spec.domain,
                                            spec.nu);
  detail << "; smoke(300 ep) delta_p " << fmt(d.delta_p) << ", c_d "
         << fmt(d.c_d) << ", c_l " << fmt(d.c_l)
         << " (published: 0.1175 / 5.5795 / 0.0106; not asserted)";
  if (res.report.diverged) {
    pass = false;
    detail << " [training diverged]";
  }
  return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    const char* key;
    const char* label;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries{
      {"c1", "exact BC enforcement (3 domains x {glss,op})", c1},
      {"c2", "Poisson training beats the legacy construction", c2},
      {"c3", "Darcy training across sampled (alpha,beta)", c3},
      {"c4", "analytic gradients match central differences", c4},
      {"c5", "Darcy RHS closed form matches symbolic rebuild", c5},
      {"c6", "partition of unity + vanishing weight gradients", c6},
      {"c7", "NS structure, verification and smoke diagnostics", c7},
  };

  std::vector<std::string> want;
  for (int i = 1; i < argc; ++i) want.emplace_back(argv[i]);
  const bool all =
      want.empty() ||
      std::find(want.begin(), want.end(), "--all") != want.end();

  bool ok = true;
  for (const auto& e : entries) {
    if (!all && std::find(want.begin(), want.end(), e.key) == want.end())
      continue;
    const double t0 = now_s();
    Outcome out;
    try {
      out = e.fn();
    } catch (const std::exception& ex) {
      out = {false, std::string("exception: ") + ex.what()};
    }
    const double wall = now_s() - t0;
    std::printf("%s %s: %s [%s; %.1fs]\n", e.key, e.label,
                out.pass ? "PASS" : "FAIL", out.detail.c_str(), wall);
    std::fflush(stdout);
    ok = ok && out.pass;
  }
  return ok ? 0 : 1;
}
