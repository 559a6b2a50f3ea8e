#include "hardbc/train.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "hardbc/grid.hpp"
#include "hardbc/structure.hpp"

using namespace hardbc;
using namespace hardbc::train;
using geom::Point2;
using grid::Field;
using grid::Grid;
using grid::Mask;

namespace {

constexpr std::array<double, 4> kUnitBox{0.0, 1.0, 0.0, 1.0};

/// Flat parameter layout of an Ansatz, re-derived for white-box checks.
struct Layout {
  std::vector<std::size_t> w_off, b_off, w_len, b_len;
  explicit Layout(const std::vector<int>& layers) {
    std::size_t off = 0;
    for (std::size_t l = 1; l < layers.size(); ++l) {
      w_off.push_back(off);
      w_len.push_back(static_cast<std::size_t>(layers[l - 1]) * layers[l]);
      off += w_len.back();
      b_off.push_back(off);
      b_len.push_back(layers[l]);
      off += b_len.back();
    }
  }
};

/// PDE-loss stand-in: mean squared distance to a smooth target field. Lets
/// the trainer tests exercise the full chain without any FD stencil.
class QuadLoss final : public PdeLoss {
public:
  QuadLoss(const Grid& g, const Mask& m) : target_(g.size(), 0.0), m_(&m) {
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        target_[g.idx(i, j)] = std::sin(g.xs[i] + 2.0 * g.ys[j]);
    for (std::size_t k = 0; k < target_.size(); ++k)
      if (m.usable(k)) ++n_;
  }

  double eval(const std::vector<Field>& fields,
              std::vector<Field>& seeds) override {
    double s = 0.0;
    for (std::size_t k = 0; k < target_.size(); ++k) {
      if (!m_->usable(k)) continue;
      const double r = fields[0][k] - target_[k];
      s += r * r;
      seeds[0][k] += 2.0 * r / static_cast<double>(n_);
    }
    return s / static_cast<double>(n_);
  }

private:
  Field target_;
  const Mask* m_;
  std::size_t n_ = 0;
};

std::vector<Point2> probe_points() {
  return {{0.12, 0.34}, {0.5, 0.5}, {0.91, 0.08}, {0.33, 0.77}, {0.6, 0.25}};
}

}  // namespace

TEST_CASE("ansatz: layer table, parameter count, Xavier bounds, zero biases") {
  const Ansatz a(3, kUnitBox, 42, 4, 64);
  const std::vector<int> want{2, 64, 64, 64, 64, 3};
  CHECK(a.layers() == want);
  std::size_t n = 0;
  for (std::size_t l = 1; l < want.size(); ++l)
    n += static_cast<std::size_t>(want[l - 1]) * want[l] + want[l];
  CHECK(a.n_params() == n);
  CHECK(a.n_outputs() == 3);
  CHECK(a.seed() == 42);

  const Layout lay(a.layers());
  for (std::size_t l = 0; l < lay.w_off.size(); ++l) {
    const double limit =
        std::sqrt(6.0 / (want[l] + want[l + 1])) * (1.0 + 1e-12);
    bool nonzero = false;
    for (std::size_t k = 0; k < lay.w_len[l]; ++k) {
      const double w = a.params()[lay.w_off[l] + k];
      CHECK(std::abs(w) <= limit);
      nonzero |= w != 0.0;
    }
    CHECK(nonzero);
    for (std::size_t k = 0; k < lay.b_len[l]; ++k)
      CHECK(a.params()[lay.b_off[l] + k] == 0.0);
  }
}

TEST_CASE("ansatz: initialization is deterministic in the seed") {
  const Ansatz a(2, kUnitBox, 7, 2, 16), b(2, kUnitBox, 7, 2, 16);
  const Ansatz c(2, kUnitBox, 8, 2, 16);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
}

TEST_CASE("ansatz forward: all-zero parameters, then an output bias") {
  Ansatz a(2, kUnitBox, 1, 2, 8);
  std::fill(a.params().begin(), a.params().end(), 0.0);
  MlpCache cache;
  std::vector<Field> out;
  a.forward(probe_points(), cache, out);
  REQUIRE(out.size() == 2);
  for (const auto& f : out)
    for (double v : f) CHECK(v == 0.0);

  // Last bias block drives the matching output directly (linear last layer).
  const Layout lay(a.layers());
  a.params()[lay.b_off.back() + 1] = 3.25;
  a.forward(probe_points(), cache, out);
  for (std::size_t i = 0; i < out[0].size(); ++i) {
    CHECK(out[0][i] == 0.0);
    CHECK(out[1][i] == 3.25);
  }
  CHECK(cache.n_points == probe_points().size());
}

TEST_CASE("ansatz forward: inputs are normalized to the domain box") {
  // Same seed => same parameters; points that map to the same normalized
  // coordinates must produce identical outputs across different boxes.
  const Ansatz a(1, {-1.0, 1.0, -1.0, 1.0}, 5, 2, 12);
  const Ansatz b(1, {0.0, 2.0, 10.0, 14.0}, 5, 2, 12);
  MlpCache ca, cb;
  std::vector<Field> oa, ob;
  a.forward({{-0.5, 0.25}, {1.0, -1.0}}, ca, oa);
  b.forward({{0.5, 12.5}, {2.0, 10.0}}, cb, ob);
  for (std::size_t i = 0; i < oa[0].size(); ++i)
    CHECK(oa[0][i] == doctest::Approx(ob[0][i]).epsilon(1e-15));
}

TEST_CASE("ansatz backward matches central differences") {
  Ansatz a(3, kUnitBox, 11, 2, 8);
  const auto pts = probe_points();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> un(-1.0, 1.0);

  // Scalar functional: L = sum_slot sum_i c[slot][i] * out[slot][i].
  std::vector<Field> c(3, Field(pts.size()));
  for (auto& f : c)
    for (auto& v : f) v = un(rng);
  const auto value = [&]() {
    MlpCache cache;
    std::vector<Field> out;
    a.forward(pts, cache, out);
    double L = 0.0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < pts.size(); ++i) L += c[s][i] * out[s][i];
    return L;
  };

  MlpCache cache;
  std::vector<Field> out;
  a.forward(pts, cache, out);
  std::vector<double> grad(a.n_params(), 0.0);
  a.backward(cache, c, grad);

  std::uniform_int_distribution<std::size_t> pick(0, a.n_params() - 1);
  const double h = 1e-6;
  for (int t = 0; t < 40; ++t) {
    const std::size_t k = pick(rng);
    const double save = a.params()[k];
    a.params()[k] = save + h;
    const double lp = value();
    a.params()[k] = save - h;
    const double lm = value();
    a.params()[k] = save;
    const double num = (lp - lm) / (2.0 * h);
    CHECK(grad[k] == doctest::Approx(num).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("ansatz backward accumulates instead of overwriting") {
  Ansatz a(1, kUnitBox, 3, 1, 4);
  MlpCache cache;
  std::vector<Field> out;
  a.forward(probe_points(), cache, out);
  std::vector<Field> g1(1, Field(probe_points().size(), 1.0));
  std::vector<double> once(a.n_params(), 0.0), twice(a.n_params(), 0.0);
  a.backward(cache, g1, once);
  a.backward(cache, g1, twice);
  a.backward(cache, g1, twice);
  for (std::size_t k = 0; k < once.size(); ++k)
    CHECK(twice[k] == doctest::Approx(2.0 * once[k]).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
  Adam ad(4);
  std::vector<double> p{1.0, -2.0, 0.5, 3.0};
  const auto orig = p;
  ad.step(p, {0.0, 0.0, 0.0, 0.0}, 0.1);
  CHECK(p == orig);
}

TEST_CASE("adam: first-step magnitude is ~lr, direction opposes gradient") {
  Adam ad(2);
  std::vector<double> p{0.0, 0.0};
  ad.step(p, {4.0, -0.25}, 0.01);
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: deterministic given the same gradient sequence") {
  Adam a1(3), a2(3);
  std::vector<double> p1{1.0, 2.0, 3.0}, p2{1.0, 2.0, 3.0};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> un(-1.0, 1.0);
  for (int t = 0; t < 25; ++t) {
    std::vector<double> g{un(rng), un(rng), un(rng)};
    a1.step(p1, g, 1e-3);
    a2.step(p2, g, 1e-3);
  }
  CHECK(p1 == p2);
}

TEST_CASE("trainer: full-chain gradient matches central differences") {
  const auto g = Grid::make(11, 11, {0.0, 1.0, 0.0, 1.0});

  const auto check_mode = [&](structure::Mode mode) {
    CAPTURE(structure::mode_name(mode));
    const auto dom = fixtures::square_with_rows(
        fixtures::dirichlet_row("x+y/2"), fixtures::robin_row("1", "x*y"),
        fixtures::dirichlet_row("1-x"), fixtures::robin_row("0", "0"));
    const auto ss = structure::build(mode, dom);
    const auto m = grid::build_mask(g, dom);
    QuadLoss loss(g, m);
    TrainConfig cfg;
    cfg.hidden_layers = 2;
    cfg.hidden_width = 8;
    cfg.seed = 3;
    Trainer tr(ss, g, m, loss, cfg);

    std::vector<double> grad;
    tr.evaluate(&grad);
    auto& params = tr.ansatz().params();
    REQUIRE(grad.size() == params.size());

    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
    const double h = 1e-5;
    double max_ga = 0.0;
    for (double v : grad) max_ga = std::max(max_ga, std::abs(v));
    for (int t = 0; t < 25; ++t) {
      const std::size_t k = pick(rng);
      const double save = params[k];
      params[k] = save + h;
      const double lp = tr.evaluate(nullptr).total;
      params[k] = save - h;
      const double lm = tr.evaluate(nullptr).total;
      params[k] = save;
      const double num = (lp - lm) / (2.0 * h);
      const double den =
          std::max({std::abs(grad[k]), std::abs(num), 1e-8 * max_ga});
      CAPTURE(k);
      CHECK(std::abs(grad[k] - num) / den <= 1e-4);
    }
  };

  check_mode(structure::Mode::glss);       // no penalty rows
  check_mode(structure::Mode::semi_weak);  // Robin rows penalized
  check_mode(structure::Mode::weak);       // everything penalized
}

TEST_CASE("trainer: exact modes have zero bc loss, weak modes do not") {
  const auto dom = fixtures::square_with_rows(
      fixtures::dirichlet_row("x"), fixtures::robin_row("1", "2"),
      fixtures::dirichlet_row("x"), fixtures::robin_row("1", "2"));
  const auto g = Grid::make(11, 11, {0.0, 1.0, 0.0, 1.0});
  const auto m = grid::build_mask(g, dom);
  QuadLoss loss(g, m);
  TrainConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 8;

  Trainer exact(structure::build(structure::Mode::glss, dom), g, m, loss, cfg);
  CHECK(exact.evaluate(nullptr).bc == 0.0);

  Trainer weak(structure::build(structure::Mode::weak, dom), g, m, loss, cfg);
  CHECK(weak.evaluate(nullptr).bc > 0.0);
}

TEST_CASE("trainer: bc_weight scales the bc part of the loss") {
  const auto dom = fixtures::square_with_rows(
      fixtures::dirichlet_row("x"), fixtures::robin_row("1", "2"),
      fixtures::dirichlet_row("x"), fixtures::robin_row("1", "2"));
  const auto g = Grid::make(11, 11, {0.0, 1.0, 0.0, 1.0});
  const auto m = grid::build_mask(g, dom);
  QuadLoss loss(g, m);
  const auto ss = structure::build(structure::Mode::weak, dom);

  TrainConfig c1;
  c1.hidden_layers = 2;
  c1.hidden_width = 8;
  TrainConfig c3 = c1;
  c3.bc_weight = 3.0;
  const auto p1 = Trainer(ss, g, m, loss, c1).evaluate(nullptr);
  const auto p3 = Trainer(ss, g, m, loss, c3).evaluate(nullptr);
  CHECK(p3.bc == doctest::Approx(3.0 * p1.bc).epsilon(1e-12));
  CHECK(p3.pde == doctest::Approx(p1.pde).epsilon(1e-12));
  CHECK(p3.total == doctest::Approx(p3.pde + p3.bc).epsilon(1e-12));
}

TEST_CASE("training: loss decreases and the run is bitwise deterministic") {
  const auto dom = fixtures::poisson_square();
  const auto g = Grid::make(11, 11, dom.box);
  const auto m = grid::build_mask(g, dom);
  const auto ss = structure::build(structure::Mode::glss, dom);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.lr0 = 5e-3;
  cfg.milestone = 30;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 16;
  cfg.seed = 1;

  QuadLoss l1(g, m), l2(g, m);
  const auto r1 = train::train(ss, g, m, l1, cfg);
  const auto r2 = train::train(ss, g, m, l2, cfg);

  REQUIRE(r1.report.rows.size() == 60);
  CHECK(!r1.report.diverged);
  CHECK(r1.final_loss.total < 0.5 * r1.report.rows.front().loss_total);

  CHECK(r1.ansatz.params() == r2.ansatz.params());
  for (std::size_t e = 0; e < r1.report.rows.size(); ++e)
    CHECK(r1.report.rows[e].loss_total == r2.report.rows[e].loss_total);
  CHECK(r1.fields[0] == r2.fields[0]);
}

TEST_CASE("training: Dirichlet data stays machine-exact throughout") {
  const auto dom = fixtures::square_with_rows(
      fixtures::dirichlet_row("x*(1-x)"), fixtures::dirichlet_row("0"),
      fixtures::dirichlet_row("sin(3*x)"), fixtures::dirichlet_row("y*y"));
  const auto g = Grid::make(13, 13, {0.0, 1.0, 0.0, 1.0});
  const auto m = grid::build_mask(g, dom);
  const auto ss = structure::build(structure::Mode::glss, dom);

  QuadLoss loss(g, m);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 8;
  const auto res = train::train(ss, g, m, loss, cfg);

  double worst = 0.0;
  const auto pts = g.points();
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& cl = m.cls[k];
    if (cl.cls != geom::NodeClass::on_segment) continue;
    const auto& row = dom.segments[cl.segment].rows[0];
    const double want = expr::eval(row.g, expr::Env::xy(pts[k].x, pts[k].y));
    worst = std::max(worst, std::abs(res.fields[0][k] - want));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("training: divergence abort stops the loop and flags the report") {
  const auto dom = fixtures::poisson_square();
  const auto g = Grid::make(11, 11, dom.box);
  const auto m = grid::build_mask(g, dom);
  const auto ss = structure::build(structure::Mode::glss, dom);
  QuadLoss loss(g, m);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.hidden_layers = 1;
  cfg.hidden_width = 4;
  cfg.divergence_abort = 1e-30;  // every positive loss counts as divergence
  const auto res = train::train(ss, g, m, loss, cfg);
  CHECK(res.report.diverged);
  CHECK(res.report.rows.size() == 1);
}

TEST_CASE("write_losses_csv emits one row per epoch with error columns") {
  LossReport rep;
  rep.rows.push_back({0, 1.5, 1.0, 0.5, {0.25, 0.75}});
  rep.rows.push_back({1, 0.75, 0.5, 0.25, {0.2, 0.7}});
  const auto path =
      (std::filesystem::temp_directory_path() / "hardbc_losses.csv").string();
  write_losses_csv(path, rep, {"u", "v"});
  std::ifstream f(path);
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "epoch,loss_total,loss_pde,loss_bc,err_u,err_v");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: round trip, hash guard, corruption guard") {
  const Ansatz a(4, {0.0, 2.2, 0.0, 0.41}, 31, 3, 12);
  const auto path =
      (std::filesystem::temp_directory_path() / "hardbc_ckpt.bin").string();
  save_checkpoint(path, a, 0xabcdef12u);

  const auto b = load_checkpoint(path, a.box(), 0xabcdef12u);
  CHECK(b.layers() == a.layers());
  CHECK(b.seed() == a.seed());
  CHECK(b.params() == a.params());

  const auto c = load_checkpoint(path, a.box());  // 0 = skip the hash check
  CHECK(c.params() == a.params());

  CHECK_THROWS_AS(load_checkpoint(path, a.box(), 0xdeadbeefu),
                  geom::ConfigError);

  // Truncated payload.
  {
    std::ifstream in(path, std::ios::binary);
    std::stringstream all;
    all << in.rdbuf();
    const auto s = all.str();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size() - 16));
  }
  CHECK_THROWS_AS(load_checkpoint(path, a.box()), geom::ConfigError);

  // Wrong magic.
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("NOPE", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path, a.box()), geom::ConfigError);
  std::filesystem::remove(path);
}
