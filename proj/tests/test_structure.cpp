#include "hardbc/structure.hpp"

#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <random>

#include "fixtures.hpp"
#include "hardbc/grid.hpp"
#include "hardbc/verify_bc.hpp"

using namespace hardbc;
using namespace hardbc::structure;
using geom::Classification;
using geom::ConfigError;
using geom::DomainSpec;
using geom::NodeClass;
using geom::Point2;

namespace {

std::vector<std::string> names(const SolutionStructure& ss) {
  return ss.slot_names;
}

/// Two-segment "domain" (bottom y=0, top y=1) for weight formulas only.
DomainSpec two_strips() {
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  geom::SegmentSpec bottom, top;
  bottom.name = "B";
  bottom.curve = geom::Line{{0, 0}, {1, 0}};
  bottom.rows = {fixtures::dirichlet_row("0")};
  top.name = "T";
  top.curve = geom::Line{{1, 1}, {0, 1}};
  top.rows = {fixtures::dirichlet_row("0")};
  d.segments = {bottom, top};
  return d;
}

DomainSpec square_with_hole(geom::BcKind hole_kind) {
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  const Point2 A{0, 0}, B{1, 0}, C{1, 1}, D{0, 1};
  auto side = [](const char* name, Point2 a, Point2 b) {
    geom::SegmentSpec s;
    s.name = name;
    s.curve = geom::Line{a, b};
    s.rows = {fixtures::dirichlet_row("0")};
    return s;
  };
  d.segments = {side("G1", A, B), side("G2", B, C), side("G3", C, D),
                side("G4", D, A)};
  geom::SegmentSpec hole;
  hole.name = "H";
  hole.curve = geom::Circle{{0.5, 0.5}, 0.2, geom::Circle::Side::outside};
  hole.rows = {hole_kind == geom::BcKind::robin
                   ? fixtures::robin_row("1", "0")
                   : fixtures::dirichlet_row("0")};
  d.segments.push_back(hole);
  d.intersections = {{"A", A, {3, 0}}, {"B", B, {0, 1}}, {"C", C, {1, 2}},
                     {"D", D, {2, 3}}};
  return d;
}

}  // namespace

TEST_CASE("slot tables are deterministic and minimal") {
  const auto poisson = fixtures::poisson_square();
  const auto darcy = fixtures::darcy_lshape();
  const auto ns = fixtures::ns_turek();

  CHECK(names(build(Mode::glss, poisson)) ==
        std::vector<std::string>{"Psi", "Psi_A", "Psi_B", "Psi_C", "Psi_D"});
  CHECK(names(build(Mode::op, poisson)) ==
        std::vector<std::string>{"Psi", "Psitilde"});
  CHECK(names(build(Mode::glss, darcy)) ==
        std::vector<std::string>{"Psi", "Psi_C", "Psi_D", "Psi_E"});
  CHECK(names(build(Mode::op, darcy)) ==
        std::vector<std::string>{"Psi", "Psitilde"});
  CHECK(names(build(Mode::glss, ns)) ==
        std::vector<std::string>{"Psi_u", "Psi_v", "Psi_p", "Psi_A_p",
                                 "Psi_B_p", "Psi_C_p", "Psi_D_p",
                                 "Psibar_G3_u", "Psibar_G3_v", "Psi_GS_p"});
  CHECK(names(build(Mode::op, ns)) ==
        std::vector<std::string>{"Psi_u", "Psi_v", "Psi_p", "Psitilde_u",
                                 "Psitilde_v", "Psitilde_p"});
  CHECK(names(build(Mode::legacy_sukumar, darcy)) ==
        std::vector<std::string>{"Psi", "Psi_G3", "Psi_G4", "Psi_G5",
                                 "Psi_G6"});

  // The interface term can be forced on every non-Dirichlet segment.
  BuildOptions always;
  always.psi_bar_always = true;
  CHECK(names(build(Mode::glss, darcy, always)) ==
        std::vector<std::string>{"Psi", "Psi_C", "Psi_D", "Psi_E",
                                 "Psibar_G3", "Psibar_G4", "Psibar_G5",
                                 "Psibar_G6"});
}

TEST_CASE("penalty rows cover exactly the weakly imposed conditions") {
  const auto darcy = fixtures::darcy_lshape();
  const auto ns = fixtures::ns_turek();

  const auto semi = build(Mode::semi_weak, darcy);
  REQUIRE(semi.penalty_rows.size() == 4);  // the four Robin rows
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(semi.penalty_rows[i].seg == static_cast<int>(i + 2));
    CHECK(semi.penalty_rows[i].row == 0);
  }
  CHECK(build(Mode::weak, darcy).penalty_rows.size() == 6);
  CHECK(build(Mode::semi_weak, ns).penalty_rows.size() == 2);   // outflow rows
  CHECK(build(Mode::weak, ns).penalty_rows.size() == 10);       // all non-free
  CHECK(build(Mode::glss, ns).penalty_rows.empty());
}

TEST_CASE("transfinite weights: two-strip value and partition of unity") {
  const auto strips = two_strips();
  // mu = 1 on both segments: w_bottom(x, 0.25) = 0.75 / (0.75 + 0.25).
  const auto w = weights(strips, {0.3, 0.25});
  REQUIRE(w.size() == 2);
  CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-14));

  const auto dom = fixtures::darcy_lshape();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int tested = 0;
  while (tested < 200) {
    const Point2 p{u(rng), u(rng)};
    if (geom::classify(dom, p).cls != NodeClass::inside) continue;
    const auto ws = weights(dom, p);
    double sum = 0.0;
    for (double v : ws) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    ++tested;
  }

  // Boundary bypass: exact unit vectors.
  const auto on5 = weights(dom, {0.5, 0.8});
  for (std::size_t i = 0; i < on5.size(); ++i)
    CHECK(on5[i] == (i == 4 ? 1.0 : 0.0));
  // Corner A joins G1 and G2, both Dirichlet: lowest index wins.
  const auto atA = weights(dom, {0.0, 0.0});
  CHECK(atA[0] == 1.0);
  // Corner B joins Dirichlet G2 and Robin G3: Dirichlet preferred.
  const auto atB = weights(dom, {1.0, 0.0});
  CHECK(atB[1] == 1.0);

  // Subset weights with plain exponents (semi-weak): two Robin segments of
  // the L-shape, mu forced to 1.
  const std::vector<int> subset{2, 4};  // G3 (x=1), G5 (x=0.5)
  const Point2 q{0.75, 0.25};
  const auto cls = geom::classify(dom, q);
  const auto ws = weights_subset(dom, subset, /*plain_mu=*/true, q, cls);
  const double p3 = geom::phi(dom.segments[2], q);
  const double p5 = geom::phi(dom.segments[4], q);
  CHECK(ws[0] == doctest::Approx(p5 / (p3 + p5)).epsilon(1e-14));
  CHECK(ws[1] == doctest::Approx(p3 / (p3 + p5)).epsilon(1e-14));
}

TEST_CASE("glss robin local reproduces the hand-worked example") {
  // Segment y=0 with c=1, h=2 and Psi = x+y gives
  //   u = (x+y) - y*1 + y*((x+y) - 2) = x + y*(x+y-2).
  auto dom = fixtures::square_with_rows(
      fixtures::robin_row("1", "2"), fixtures::robin_row("0", "0"),
      fixtures::robin_row("0", "0"), fixtures::robin_row("0", "0"));
  const auto local =
      local_robin_glss(dom, 0, f_data(expr::parse("x+y")));

  SolutionStructure probe;
  probe.mode = Mode::glss;
  probe.domain = dom;
  probe.components = {local};
  const auto g = grid::Grid::make(21, 21, dom.box);
  const auto m = grid::build_mask(g, dom);
  grid::StructureEvaluator ev(probe, g, m);
  const auto& f = ev.forward(ev.zero_slots(), false);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double x = g.xs[i], y = g.ys[j];
      CHECK(f[0][g.idx(i, j)] ==
            doctest::Approx(x + y * (x + y - 2)).epsilon(1e-12));
    }
}

TEST_CASE("scalar and system builders coincide on scalar domains") {
  const auto darcy = fixtures::darcy_lshape();
  CHECK(build_scalar_glss(darcy).dump_json() ==
        build_system_glss(darcy).dump_json());
  CHECK(build_scalar_op(darcy).dump_json() ==
        build_system_op(darcy).dump_json());
  const auto poisson = fixtures::poisson_square();
  CHECK(build_scalar_glss(poisson).dump_json() ==
        build_system_glss(poisson).dump_json());
}

TEST_CASE("corner functions pin Dirichlet data and expose the complement") {
  const auto ns = fixtures::ns_turek();
  const auto ss = build(Mode::glss, ns);
  const auto g = grid::Grid::make(45, 12, ns.box);

  std::vector<grid::PointEvaluator::SlotFn> fns(ss.n_slots());
  for (int s = 0; s < ss.n_slots(); ++s)
    fns[s] = [s](Point2 p) { return 0.25 * (s + 1) + p.x - 0.5 * p.y; };
  const grid::PointEvaluator pe(ss, g, fns);

  // At corner A = (0,0), u and v are pinned to the inflow/wall data (both 0)
  // and the pressure equals the fresh corner slot Psi_A_p (slot index 3).
  const auto uA = pe.eval({0.0, 0.0});
  CHECK(uA[0] == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(uA[1] == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(uA[2] == doctest::Approx(fns[3]({0.0, 0.0})).epsilon(1e-12));

  // At corner D = (0, 0.41) the inflow parabola vanishes as well.
  const auto uD = pe.eval({0.0, 0.41});
  CHECK(uD[0] == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(uD[2] == doctest::Approx(fns[6]({0.0, 0.41})).epsilon(1e-12));

  // Incompatible corner data must be rejected at build time.
  auto bad = fixtures::ns_turek();
  bad.segments[0].rows[0].g = expr::parse("1");  // inflow u = 1 vs wall u = 0
  CHECK_THROWS_AS(build(Mode::glss, bad), ConfigError);
}

TEST_CASE("structure values are continuous across corner neighborhoods") {
  const auto dom = fixtures::darcy_lshape();
  const auto ss = build(Mode::glss, dom);
  const auto g = grid::Grid::make(41, 41, dom.box);

  std::mt19937_64 rng(17);
  const auto fns = random_poly_slots(ss.n_slots(), rng, dom.box);
  const grid::PointEvaluator pe(ss, g, fns, 2.0, 3.0);

  // Limit at a corner equals the corner value delivered by the bypass; any
  // interior approach direction must land within O(eps) of it.
  const auto check_corner = [&](Point2 C, double th0, double th1) {
    const double at = pe.eval(C)[0];
    for (int k = 0; k < 7; ++k) {
      const double th = th0 + (th1 - th0) * (k + 0.5) / 7;
      const double eps = 1e-6;
      const Point2 p{C.x + eps * std::cos(th), C.y + eps * std::sin(th)};
      REQUIRE(geom::classify(dom, p).cls == NodeClass::inside);
      CHECK(std::abs(pe.eval(p)[0] - at) < 1e-4);
    }
  };
  check_corner({1.0, 0.5}, M_PI + 0.15, 1.5 * M_PI - 0.15);     // corner C
  check_corner({0.5, 0.5}, 0.5 * M_PI + 0.15, 2 * M_PI - 0.15); // reentrant D
  check_corner({0.5, 1.0}, M_PI + 0.15, 1.5 * M_PI - 0.15);     // corner E
}

TEST_CASE("boundary conditions hold exactly for random slot functions") {
  VerifyOptions opt;
  opt.trials = 4;
  opt.alpha = 2.0;
  opt.beta = 3.0;

  for (const auto mode : {Mode::glss, Mode::op}) {
    for (int fix = 0; fix < 2; ++fix) {
      const auto dom =
          fix == 0 ? fixtures::poisson_square() : fixtures::darcy_lshape();
      const auto rep = verify_bc(build(mode, dom), opt);
      INFO(mode_name(mode), " fixture ", fix, "\n", rep.summary());
      CHECK(rep.pass);
      CHECK(rep.max_dirichlet_residual <= opt.dirichlet_tol);
    }
  }

  VerifyOptions ns_opt;
  ns_opt.grids = {{221, 42}, {441, 83}, {881, 165}};
  ns_opt.trials = 2;
  for (const auto mode : {Mode::glss, Mode::op}) {
    const auto rep = verify_bc(build(mode, fixtures::ns_turek()), ns_opt);
    INFO(mode_name(mode), " ns\n", rep.summary());
    CHECK(rep.pass);
  }

  // Robin data on a circle is exact under GLSS as well.
  const auto hole = square_with_hole(geom::BcKind::robin);
  const auto rep = verify_bc(build(Mode::glss, hole), opt);
  INFO(rep.summary());
  CHECK(rep.pass);
}

TEST_CASE("semi-weak structures satisfy Dirichlet data and free the rest") {
  const auto ns = fixtures::ns_turek();
  const auto ss = build(Mode::semi_weak, ns);
  const auto g = grid::Grid::make(45, 12, ns.box);
  std::mt19937_64 rng(5);
  const auto fns = random_poly_slots(ss.n_slots(), rng, ns.box);
  const grid::PointEvaluator pe(ss, g, fns);

  const auto inflow = pe.eval({0.0, 0.2});
  CHECK(inflow[0] ==
        doctest::Approx(4 * 0.3 * 0.2 * (0.41 - 0.2) / (0.41 * 0.41))
            .epsilon(1e-12));
  CHECK(inflow[1] == doctest::Approx(0.0).epsilon(1e-13));
  // Pressure has no Dirichlet rows anywhere: it is the bare slot.
  CHECK(inflow[2] == doctest::Approx(fns[2]({0.0, 0.2})).epsilon(1e-12));

  const auto wall = pe.eval({1.3, 0.0});
  CHECK(wall[0] == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(wall[1] == doctest::Approx(0.0).epsilon(1e-13));

  // The outflow (Robin only) is NOT pinned: u there follows the slots.
  const auto out = pe.eval({2.2, 0.2});
  CHECK(std::abs(out[0]) > 1e-6);

  // Weak mode: bare slots everywhere.
  const auto weak = build(Mode::weak, ns);
  const grid::PointEvaluator pw(weak, g, fns);
  const auto w = pw.eval({0.7, 0.3});
  for (int c = 0; c < 3; ++c)
    CHECK(w[c] == doctest::Approx(fns[c]({0.7, 0.3})).epsilon(1e-12));
}

TEST_CASE("config errors: mode/domain combinations that cannot be exact") {
  // Robin rows on circles have no affine projection: OP must refuse.
  const auto hole_robin = square_with_hole(geom::BcKind::robin);
  CHECK_THROWS_AS(build(Mode::op, hole_robin), ConfigError);
  // Dirichlet-only circles are fine.
  const auto hole_dir = square_with_hole(geom::BcKind::dirichlet);
  CHECK_NOTHROW(build(Mode::op, hole_dir));
  CHECK_NOTHROW(build(Mode::glss, hole_robin));

  // Exact modes require per-segment orthonormal row bases.
  auto skewed = fixtures::ns_turek();
  skewed.segments[1].rows[0].b = {1, 1, 0};
  skewed.segments[1].rows[1].b = {1, -1, 0};
  CHECK_THROWS_AS(build(Mode::glss, skewed), ConfigError);
  CHECK_THROWS_AS(build(Mode::op, skewed), ConfigError);

  // Semi-weak needs canonical (single-component) Dirichlet rows.
  auto mixed = fixtures::ns_turek();
  const double s = 1.0 / std::sqrt(2.0);
  mixed.segments[1].rows[0].b = {s, s, 0};
  mixed.segments[1].rows[1].b = {s, -s, 0};
  CHECK_THROWS_AS(build(Mode::semi_weak, mixed), ConfigError);

  // Legacy structures are scalar-only.
  CHECK_THROWS_AS(build(Mode::legacy_sukumar, fixtures::ns_turek()),
                  ConfigError);
}

TEST_CASE("rotated orthonormal bases stay exact") {
  // Two-component square; the bottom segment uses the rotated orthonormal
  // basis {(1,1)/sqrt2, (1,-1)/sqrt2} with a Dirichlet row on the first
  // direction and a homogeneous Neumann row on the second.
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  d.n_components = 2;
  d.component_names = {"u", "v"};
  const double s = 1.0 / std::sqrt(2.0);
  const Point2 A{0, 0}, B{1, 0}, C{1, 1}, D{0, 1};

  geom::SegmentSpec bottom;
  bottom.name = "G1";
  bottom.curve = geom::Line{A, B};
  bottom.rows = {fixtures::dirichlet_row("x/sqrt(2)", {s, s}),
                 fixtures::robin_row("0", "0", {s, -s})};
  bottom.rows[1].c = {expr::parse("0"), expr::parse("0")};

  auto side = [](const char* name, Point2 a, Point2 b, const char* gu,
                 const char* gv) {
    geom::SegmentSpec sgm;
    sgm.name = name;
    sgm.curve = geom::Line{a, b};
    sgm.rows = {fixtures::dirichlet_row(gu, {1, 0}),
                fixtures::dirichlet_row(gv, {0, 1})};
    return sgm;
  };
  d.segments = {bottom, side("G2", B, C, "1", "0"), side("G3", C, D, "x", "0"),
                side("G4", D, A, "0", "0")};
  d.intersections = {{"A", A, {3, 0}}, {"B", B, {0, 1}}, {"C", C, {1, 2}},
                     {"D", D, {2, 3}}};
  d.validate();

  VerifyOptions opt;
  opt.trials = 4;
  const auto rep = verify_bc(build(Mode::glss, d), opt);
  INFO(rep.summary());
  CHECK(rep.pass);
}

TEST_CASE("vanishing-gradient Dirichlet segments get a correction slot") {
  // Trigger 1: the squared-distance variant.
  auto dom = fixtures::square_with_rows(
      fixtures::dirichlet_row("x"), fixtures::robin_row("0", "0"),
      fixtures::robin_row("0", "0"), fixtures::robin_row("0", "0"));
  dom.segments[0].vanishing_gradient = true;
  const auto ss = build(Mode::glss, dom);
  CHECK(std::find(ss.slot_names.begin(), ss.slot_names.end(),
                  "Psitilde_G1") != ss.slot_names.end());

  // Without the flag (mu = 1, regular phi) no correction slot appears.
  auto plain = fixtures::square_with_rows(
      fixtures::dirichlet_row("x"), fixtures::robin_row("0", "0"),
      fixtures::robin_row("0", "0"), fixtures::robin_row("0", "0"));
  const auto ps = build(Mode::glss, plain);
  CHECK(std::find(ps.slot_names.begin(), ps.slot_names.end(),
                  "Psitilde_G1") == ps.slot_names.end());

  // Trigger 2: a mixed Dirichlet/Robin segment (mu = 2) in a system.
  auto mixed = fixtures::ns_turek();
  mixed.segments[1].rows[1] = fixtures::robin_row("0", "0", {0, 1, 0});
  mixed.segments[1].rows[1].c = {expr::parse("0"), expr::parse("0"),
                                 expr::parse("0")};
  const auto ms = build(Mode::glss, mixed);
  bool found = false;
  for (const auto& n : ms.slot_names)
    if (n.rfind("Psitilde_G2", 0) == 0) found = true;
  CHECK(found);
}

TEST_CASE("debug dump is stable, valid JSON, and hashes distinctly") {
  const auto darcy = fixtures::darcy_lshape();
  const auto a = build(Mode::glss, darcy);
  const auto b = build(Mode::glss, darcy);
  CHECK(a.dump_json() == b.dump_json());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != build(Mode::op, darcy).hash());
  CHECK(a.hash() != build(Mode::glss, fixtures::poisson_square()).hash());

  const auto j = nlohmann::json::parse(a.dump_json());
  CHECK(j.at("mode") == "glss");
  CHECK(j.at("slots").size() == 4);
  CHECK(j.at("components").size() == 1);
  CHECK(j.at("nodes").is_array());
  CHECK(!j.at("nodes").empty());
}

TEST_CASE("mode names round-trip") {
  for (const auto m : {Mode::glss, Mode::op, Mode::semi_weak, Mode::weak,
                       Mode::legacy_sukumar}) {
    CHECK(mode_from_name(mode_name(m)) == m);
  }
  CHECK_THROWS_AS(static_cast<void>(mode_from_name("nope")), ConfigError);
}
