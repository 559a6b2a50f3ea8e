#include "hardbc/geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"

using namespace hardbc::geom;

namespace {

SegmentSpec line_seg(Point2 a, Point2 b, bool vanishing = false) {
  SegmentSpec s;
  s.name = "L";
  s.curve = Line{a, b};
  s.rows = {fixtures::dirichlet_row("0")};
  s.vanishing_gradient = vanishing;
  return s;
}

SegmentSpec circle_seg(Point2 c, double r,
                       Circle::Side side = Circle::Side::outside) {
  SegmentSpec s;
  s.name = "C";
  s.curve = Circle{c, r, side};
  s.rows = {fixtures::dirichlet_row("0")};
  return s;
}

// Sample a point on a segment's curve at parameter t in [0,1].
Point2 curve_point(const SegmentSpec& s, double t) {
  if (s.is_line()) {
    const Line& l = s.line();
    return l.a + t * (l.b - l.a);
  }
  const Circle& c = s.circle();
  const double th = 2 * M_PI * t;
  return c.center + Point2{c.radius * std::cos(th), c.radius * std::sin(th)};
}

}  // namespace

TEST_CASE("phi: distance to closed line segment") {
  const SegmentSpec s = line_seg({0, 0}, {1, 0});
  CHECK(phi(s, {0.3, 0.5}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phi(s, {1.5, 0.8}) == doctest::Approx(std::hypot(0.5, 0.8)).epsilon(1e-15));
  CHECK(phi(s, {-0.5, 0.0}) == doctest::Approx(0.5));
  CHECK(phi(s, {0.7, 0.0}) == 0.0);

  const SegmentSpec sq = line_seg({0, 0}, {1, 0}, /*vanishing=*/true);
  CHECK(phi(sq, {0.3, 0.5}) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("phi: distance to circle") {
  const SegmentSpec c = circle_seg({0, 0}, 0.25);
  CHECK(phi(c, {0.5, 0.0}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(phi(c, {0.1, 0.0}) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(phi(c, {0.25, 0.0}) == 0.0);
}

TEST_CASE("phi_bar: line gives signed distance and constant inward normal") {
  const SegmentSpec s = line_seg({0, 0}, {1, 0});  // domain above
  const ValGrad v = phi_bar(s, {0.7, 0.2});
  CHECK(v.value == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(v.grad.x == doctest::Approx(0.0));
  CHECK(v.grad.y == doctest::Approx(1.0));
  CHECK(phi_bar(s, {0.7, -0.1}).value == doctest::Approx(-0.1));
  CHECK(phi_bar(s, {3.0, 0.0}).value == doctest::Approx(0.0));  // extension
}

TEST_CASE("phi_bar: circle radial variants") {
  const SegmentSpec out = circle_seg({1, 1}, 0.25, Circle::Side::outside);
  const ValGrad v = phi_bar(out, {1.5, 1.0});
  CHECK(v.value == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(v.grad.x == doctest::Approx(1.0));
  CHECK(v.grad.y == doctest::Approx(0.0));

  const SegmentSpec in = circle_seg({1, 1}, 0.25, Circle::Side::inside);
  const ValGrad w = phi_bar(in, {1.5, 1.0});
  CHECK(w.value == doctest::Approx(-0.25));
  CHECK(w.grad.x == doctest::Approx(-1.0));
}

TEST_CASE("phi_point") {
  CHECK(phi_point({4, 0}, {4, 2}) == doctest::Approx(2.0));
  CHECK(phi_point({0.5, 0.5}, {0.5, 0.5}) == 0.0);
}

TEST_CASE("segment invariants: zero on curve, positive off, unit normal slope") {
  const DomainSpec dom = fixtures::darcy_lshape();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.02, 0.98);
  for (const SegmentSpec& s : dom.segments) {
    for (int k = 0; k < 200; ++k) {
      const Point2 p = curve_point(s, u01(rng));
      CHECK(phi(s, p) <= 1e-12);
      const ValGrad vg = phi_bar(s, p);
      CHECK(std::abs(vg.value) <= 1e-12);
      CHECK(norm(vg.grad) == doctest::Approx(1.0).epsilon(1e-12));
      // FD slope along the inward normal must be 1.
      const double eps = 1e-7;
      const double ahead = phi_bar(s, p + eps * vg.grad).value;
      CHECK((ahead - vg.value) / eps == doctest::Approx(1.0).epsilon(1e-6));
    }
    // Off-curve positivity.
    for (int k = 0; k < 50; ++k) {
      const Point2 p{u01(rng), u01(rng)};
      if (distance(s.curve, p) > 1e-6) CHECK(phi(s, p) > 0.0);
    }
  }
}

TEST_CASE("phi_true_grad zones (legacy structures)") {
  const SegmentSpec s = line_seg({0, 0}, {1, 0});
  auto g1 = phi_true_grad(s, {0.5, 0.3});
  CHECK(g1.x == doctest::Approx(0.0));
  CHECK(g1.y == doctest::Approx(1.0));
  auto g2 = phi_true_grad(s, {-0.3, 0.4});  // endpoint zone at a=(0,0)
  CHECK(g2.x == doctest::Approx(-0.6));
  CHECK(g2.y == doctest::Approx(0.8));
  auto g3 = phi_true_grad(s, {0.5, 0.0});  // on the segment: inward normal
  CHECK(g3.y == doctest::Approx(1.0));
  auto g4 = phi_true_grad(s, {0.5, -0.2});  // below: points away from curve
  CHECK(g4.y == doctest::Approx(-1.0));

  const SegmentSpec c = circle_seg({0.2, 0.2}, 0.05);
  auto g5 = phi_true_grad(c, {0.3, 0.2});
  CHECK(g5.x == doctest::Approx(1.0));
  auto g6 = phi_true_grad(c, {0.21, 0.2});  // inside the disk
  CHECK(g6.x == doctest::Approx(-1.0));
}

TEST_CASE("classify: unit-scale L-shape") {
  const DomainSpec dom = fixtures::darcy_lshape();
  dom.validate();
  CHECK(classify(dom, {0.25, 0.25}).cls == NodeClass::inside);
  CHECK(classify(dom, {0.75, 0.75}).cls == NodeClass::outside);  // notch
  const auto corner = classify(dom, {0.5, 0.5});
  CHECK(corner.cls == NodeClass::at_intersection);
  CHECK(dom.intersections[corner.intersection].name == "D");
  const auto on5 = classify(dom, {0.5, 0.75});
  CHECK(on5.cls == NodeClass::on_segment);
  CHECK(dom.segments[on5.segment].name == "G5");
  const auto on1 = classify(dom, {0.0, 0.5});
  CHECK(on1.cls == NodeClass::on_segment);
  CHECK(dom.segments[on1.segment].name == "G1");
  CHECK(classify(dom, {1.2, 0.5}).cls == NodeClass::outside);
  // On the extension of G5's line but far from the closed segment: inside.
  CHECK(classify(dom, {0.5, 0.3}).cls == NodeClass::inside);
  CHECK(classify(dom, {0.5, 0.3}).cls == NodeClass::inside);
}

TEST_CASE("classify: 4x-scaled L-shape reference points") {
  const DomainSpec dom = fixtures::lshape_scaled4();
  dom.validate();
  CHECK(classify(dom, {1, 1}).cls == NodeClass::inside);
  CHECK(classify(dom, {2, 2}).cls == NodeClass::at_intersection);
  CHECK(classify(dom, {1, 3}).cls == NodeClass::inside);  // left arm
  CHECK(classify(dom, {3, 3}).cls == NodeClass::outside); // notch
  CHECK(classify(dom, {3, 1}).cls == NodeClass::inside);  // lower arm
}

TEST_CASE("classify: channel with cylinder") {
  const DomainSpec dom = fixtures::ns_turek();
  dom.validate();
  CHECK(classify(dom, {0.2, 0.2}).cls == NodeClass::outside);   // disk interior
  CHECK(classify(dom, {0.26, 0.2}).cls == NodeClass::inside);
  const auto on_s = classify(dom, {0.25, 0.2});
  CHECK(on_s.cls == NodeClass::on_segment);
  CHECK(dom.segments[on_s.segment].name == "GS");
  const auto at_a = classify(dom, {0.0, 0.0});
  CHECK(at_a.cls == NodeClass::at_intersection);
  CHECK(dom.intersections[at_a.intersection].name == "A");
  CHECK(dom.segments[classify(dom, {2.2, 0.2}).segment].name == "G3");
  CHECK(dom.segments[classify(dom, {1.0, 0.41}).segment].name == "G4");
  CHECK(classify(dom, {1.0, 0.2}).cls == NodeClass::inside);
}

TEST_CASE("classify: ambiguous double-match raises") {
  const DomainSpec dom = fixtures::darcy_lshape();
  // A point near corner B within a huge tolerance of both G2 and G3 but not
  // within tolerance of B itself.
  const Point2 p{1 - 1e-3, 1e-3};
  CHECK_THROWS_AS((void)classify(dom, p, 1.2e-3), ConfigError);
}

TEST_CASE("validate: orientation and structure errors are caught") {
  {
    DomainSpec d = fixtures::poisson_square();
    std::swap(std::get<Line>(d.segments[0].curve).a,
              std::get<Line>(d.segments[0].curve).b);  // flip bottom edge
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::poisson_square();
    d.intersections.pop_back();
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::poisson_square();
    d.segments[1].name = "G1";
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::poisson_square();
    d.intersections[0].p = {0.3, 0.3};  // off-curve intersection
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::ns_turek();
    // Robin coefficient outside the span of non-Dirichlet bases: on the
    // inflow segment only e3 is non-Dirichlet, so c = e1 must be rejected.
    d.segments[0].rows[2].kind = BcKind::robin;
    d.segments[0].rows[2].c = {hardbc::expr::parse("1"), hardbc::expr::parse("0"),
                               hardbc::expr::parse("0")};
    d.segments[0].rows[2].h = hardbc::expr::parse("0");
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::ns_turek();
    d.segments[0].rows[1].b = {1, 0, 0};  // duplicate basis: rank deficient
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  {
    DomainSpec d = fixtures::ns_turek();
    std::get<Circle>(d.segments[4].curve).domain_side = Circle::Side::inside;
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
  // All fixtures validate cleanly.
  fixtures::poisson_square().validate();
  fixtures::darcy_lshape().validate();
  fixtures::ns_turek().validate();
}

TEST_CASE("corners_of / neighbor_at") {
  const DomainSpec dom = fixtures::darcy_lshape();
  const auto c3 = dom.corners_of(2);  // G3 = B -> C
  REQUIRE(c3.size() == 2);
  CHECK(dom.intersections[c3[0]].name == "B");
  CHECK(dom.intersections[c3[1]].name == "C");
  CHECK(dom.segments[dom.neighbor_at(2, c3[0])].name == "G2");
  CHECK(dom.segments[dom.neighbor_at(2, c3[1])].name == "G4");
  const DomainSpec ns = fixtures::ns_turek();
  CHECK(ns.corners_of(4).empty());  // circle has no corners
}

TEST_CASE("project_line: idempotent orthogonal projection") {
  const SegmentSpec s = line_seg({1, 0}, {1, 0.5});  // x = 1
  const Point2 q = project_line(s, {0.3, 0.8});
  CHECK(q.x == doctest::Approx(1.0));
  CHECK(q.y == doctest::Approx(0.8));
  const Point2 q2 = project_line(s, q);
  CHECK(q2.x == doctest::Approx(q.x));
  CHECK(q2.y == doctest::Approx(q.y));
  const SegmentSpec c = circle_seg({0, 0}, 1);
  CHECK_THROWS_AS((void)project_line(c, {2, 0}), ConfigError);
}
