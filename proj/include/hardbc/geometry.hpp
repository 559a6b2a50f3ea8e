#pragma once
// Piecewise-C1 planar domains: boundary segments (line segments and full
// circles), per-segment boundary-condition rows, distance functions and
// point classification.
//
// Conventions:
//  - Line segments are declared a -> b with the domain on the LEFT of the
//    direction a->b (validated).  phi_bar of a line is the signed distance to
//    the infinite line, positive on the domain side; its gradient is the
//    constant inward unit normal.
//  - Circles are full closed curves.  domain_side says on which side of the
//    circle the domain lies: Side::outside means the disk is a hole (e.g. a
//    cylinder obstacle).  phi_bar = ||p-c|| - R with gradient (p-c)/||p-c||
//    for Side::outside, negated for Side::inside.
//  - phi is the (unsigned) distance to the closed curve; a segment flagged
//    vanishing_gradient uses the SQUARED distance instead (synthetic variant
//    whose gradient vanishes on the segment).

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hardbc/expr.hpp"

namespace hardbc::geom {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0, y = 0.0;
  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
};

[[nodiscard]] double dot(Point2 a, Point2 b);
[[nodiscard]] double norm(Point2 a);
/// Rotate by +90 degrees: the left normal of a direction vector.
[[nodiscard]] Point2 rot90(Point2 a);

struct Line {
  Point2 a, b;
};

struct Circle {
  enum class Side : std::uint8_t { inside, outside };
  Point2 center;
  double radius = 0.0;
  Side domain_side = Side::outside;
};

using Curve = std::variant<Line, Circle>;

enum class BcKind : std::uint8_t { dirichlet, robin, free };

/// One boundary-condition row on a segment:
///   dirichlet:  b.u = g        robin:  d(b.u)/dn + c.u = h        free: none.
/// b has one entry per solution component; c is a componentwise coefficient
/// vector (must lie in the span of the segment's non-Dirichlet basis rows).
struct BcRow {
  std::vector<double> b;
  BcKind kind = BcKind::free;
  expr::Expr g;
  std::vector<expr::Expr> c;
  expr::Expr h;
};

struct SegmentSpec {
  std::string name;
  Curve curve;
  std::vector<BcRow> rows;  // exactly n_components rows; bases span R^n
  bool vanishing_gradient = false;

  [[nodiscard]] bool is_line() const { return std::holds_alternative<Line>(curve); }
  [[nodiscard]] const Line& line() const { return std::get<Line>(curve); }
  [[nodiscard]] const Circle& circle() const { return std::get<Circle>(curve); }
  [[nodiscard]] bool has_dirichlet() const;
  [[nodiscard]] bool has_robin() const;
  /// Weight exponent: 2 if any Robin row, else 1.
  [[nodiscard]] int mu() const { return has_robin() ? 2 : 1; }
};

struct IntersectionSpec {
  std::string name;
  Point2 p;
  std::vector<int> segments;  // indices of the (two) incident segments
};

struct DomainSpec {
  std::vector<SegmentSpec> segments;
  std::vector<IntersectionSpec> intersections;
  std::array<double, 4> box{0, 1, 0, 1};  // x0, x1, y0, y1
  int n_components = 1;
  std::vector<std::string> component_names{"u"};

  [[nodiscard]] double diagonal() const;
  [[nodiscard]] double default_tol() const { return 1e-12 * diagonal(); }
  /// Strict inside test (boundary points give unspecified results; use
  /// classify for boundary-aware queries).
  [[nodiscard]] bool inside(Point2 p) const;
  /// Intersection indices incident to segment i, in declaration order;
  /// for a line both endpoints must be matched (endpoint a first).
  [[nodiscard]] std::vector<int> corners_of(int seg) const;
  /// Index of the other segment sharing intersection k with segment i.
  [[nodiscard]] int neighbor_at(int seg, int intersection) const;
  /// Throws ConfigError on any structural violation (orientation, loops,
  /// row shapes, basis rank, Robin-coefficient span, intersections off-curve).
  void validate() const;
};

enum class NodeClass : std::uint8_t { inside, on_segment, at_intersection, outside };

struct Classification {
  NodeClass cls = NodeClass::outside;
  int segment = -1;       // valid when cls == on_segment
  int intersection = -1;  // valid when cls == at_intersection
};

/// Unsigned distance to the closed curve (squared when vanishing_gradient).
[[nodiscard]] double phi(const SegmentSpec& seg, Point2 p);

/// Plain geometric distance to the closed curve (never squared).
[[nodiscard]] double distance(const Curve& curve, Point2 p);

struct ValGrad {
  double value = 0.0;
  Point2 grad;
};

/// Normalized distance-like function: zero on the segment, unit inward normal
/// derivative there.  Lines: signed distance to the infinite line (positive on
/// the domain side, constant gradient).  Circles: signed radial distance.
[[nodiscard]] ValGrad phi_bar(const SegmentSpec& seg, Point2 p);

/// Distance to an intersection point.
[[nodiscard]] double phi_point(Point2 P, Point2 p);

/// Zone-wise analytic gradient of the TRUE distance function (legacy
/// structures): direction away from the nearest curve point; on the curve,
/// the inward (domain-side) unit normal.
[[nodiscard]] Point2 phi_true_grad(const SegmentSpec& seg, Point2 p);

/// Classify a point against the domain.  Order: declared intersection points
/// (||p-P|| <= tol), then on-segment (distance <= tol; two simultaneous
/// non-corner matches raise ConfigError), then inside/outside.
[[nodiscard]] Classification classify(const DomainSpec& dom, Point2 p, double tol);
[[nodiscard]] Classification classify(const DomainSpec& dom, Point2 p);

/// Orthogonal projection onto the infinite line through a line segment
/// (identity on the line; idempotent).  Requires a Line segment.
[[nodiscard]] Point2 project_line(const SegmentSpec& seg, Point2 p);

}  // namespace hardbc::geom
