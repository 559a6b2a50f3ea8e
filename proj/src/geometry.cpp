#include "hardbc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace hardbc::geom {

double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
double norm(Point2 a) { return std::hypot(a.x, a.y); }
Point2 rot90(Point2 a) { return {-a.y, a.x}; }

bool SegmentSpec::has_dirichlet() const {
  return std::any_of(rows.begin(), rows.end(),
                     [](const BcRow& r) { return r.kind == BcKind::dirichlet; });
}

bool SegmentSpec::has_robin() const {
  return std::any_of(rows.begin(), rows.end(),
                     [](const BcRow& r) { return r.kind == BcKind::robin; });
}

double DomainSpec::diagonal() const {
  return std::hypot(box[1] - box[0], box[3] - box[2]);
}

// ---- distance functions -----------------------------------------------------

namespace {

struct LineFrame {
  Point2 dir;   // unit a->b
  Point2 nrm;   // unit left normal (inward)
  double len;
};

LineFrame frame(const Line& l) {
  const Point2 ab = l.b - l.a;
  const double len = norm(ab);
  if (len <= 0.0) throw ConfigError("degenerate line segment (a == b)");
  const Point2 d = (1.0 / len) * ab;
  return {d, rot90(d), len};
}

}  // namespace

double distance(const Curve& curve, Point2 p) {
  if (const Line* l = std::get_if<Line>(&curve)) {
    const LineFrame f = frame(*l);
    const double t = std::clamp(dot(p - l->a, f.dir), 0.0, f.len);
    return norm(p - (l->a + t * f.dir));
  }
  const Circle& c = std::get<Circle>(curve);
  return std::abs(norm(p - c.center) - c.radius);
}

double phi(const SegmentSpec& seg, Point2 p) {
  const double d = distance(seg.curve, p);
  return seg.vanishing_gradient ? d * d : d;
}

ValGrad phi_bar(const SegmentSpec& seg, Point2 p) {
  if (seg.is_line()) {
    const Line& l = seg.line();
    const LineFrame f = frame(l);
    return {dot(p - l.a, f.nrm), f.nrm};
  }
  const Circle& c = seg.circle();
  const Point2 rv = p - c.center;
  const double r = norm(rv);
  // The exact center has a well-defined value but no radial direction. It can
  // only be hit by grid nodes deep inside a hole (outside the domain), where
  // the gradient is never consumed, so a zero direction is safe.
  const Point2 rhat = r > 0.0 ? (1.0 / r) * rv : Point2{0.0, 0.0};
  if (c.domain_side == Circle::Side::outside) return {r - c.radius, rhat};
  return {c.radius - r, {-rhat.x, -rhat.y}};
}

double phi_point(Point2 P, Point2 p) { return norm(p - P); }

Point2 phi_true_grad(const SegmentSpec& seg, Point2 p) {
  if (seg.is_line()) {
    const Line& l = seg.line();
    const LineFrame f = frame(l);
    const double t = dot(p - l.a, f.dir);
    if (t <= 0.0) {
      const double d = norm(p - l.a);
      if (d == 0.0) return f.nrm;
      return (1.0 / d) * (p - l.a);
    }
    if (t >= f.len) {
      const double d = norm(p - l.b);
      if (d == 0.0) return f.nrm;
      return (1.0 / d) * (p - l.b);
    }
    const double s = dot(p - l.a, f.nrm);
    if (s == 0.0) return f.nrm;  // on the segment: inward normal
    return s > 0 ? f.nrm : Point2{-f.nrm.x, -f.nrm.y};
  }
  const Circle& c = seg.circle();
  const Point2 rv = p - c.center;
  const double r = norm(rv);
  if (r == 0.0) return {1.0, 0.0};  // arbitrary fixed direction at the center
  const Point2 rhat = (1.0 / r) * rv;
  if (r == c.radius)
    return c.domain_side == Circle::Side::outside ? rhat
                                                  : Point2{-rhat.x, -rhat.y};
  return r > c.radius ? rhat : Point2{-rhat.x, -rhat.y};
}

Point2 project_line(const SegmentSpec& seg, Point2 p) {
  if (!seg.is_line())
    throw ConfigError("projection requires a line segment: " + seg.name);
  const Line& l = seg.line();
  const LineFrame f = frame(l);
  const double s = dot(p - l.a, f.nrm);
  return p - s * f.nrm;
}

// ---- inside test ------------------------------------------------------------

bool DomainSpec::inside(Point2 p) const {
  bool have_lines = false;
  bool odd = false;
  for (const SegmentSpec& s : segments) {
    if (const Line* l = std::get_if<Line>(&s.curve)) {
      have_lines = true;
      const Point2 a = l->a, b = l->b;
      // Half-open crossing rule; horizontal edges never count.
      if ((a.y > p.y) != (b.y > p.y)) {
        const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (p.x < xc) odd = !odd;
      }
    }
  }
  bool in = have_lines ? odd : true;
  for (const SegmentSpec& s : segments) {
    if (const Circle* c = std::get_if<Circle>(&s.curve)) {
      const double r = norm(p - c->center);
      if (c->domain_side == Circle::Side::outside && r < c->radius) in = false;
      if (c->domain_side == Circle::Side::inside && r > c->radius) in = false;
    }
  }
  return in;
}

// ---- classification ---------------------------------------------------------

Classification classify(const DomainSpec& dom, Point2 p, double tol) {
  for (std::size_t k = 0; k < dom.intersections.size(); ++k) {
    if (norm(p - dom.intersections[k].p) <= tol)
      return {NodeClass::at_intersection, -1, static_cast<int>(k)};
  }
  int hit = -1;
  for (std::size_t i = 0; i < dom.segments.size(); ++i) {
    if (distance(dom.segments[i].curve, p) <= tol) {
      if (hit >= 0)
        throw ConfigError("ambiguous boundary point: within tolerance of segments '" +
                          dom.segments[hit].name + "' and '" +
                          dom.segments[i].name + "' away from any declared intersection");
      hit = static_cast<int>(i);
    }
  }
  if (hit >= 0) return {NodeClass::on_segment, hit, -1};
  return dom.inside(p) ? Classification{NodeClass::inside, -1, -1}
                       : Classification{NodeClass::outside, -1, -1};
}

Classification classify(const DomainSpec& dom, Point2 p) {
  return classify(dom, p, dom.default_tol());
}

// ---- helpers / validation ---------------------------------------------------

std::vector<int> DomainSpec::corners_of(int seg) const {
  std::vector<int> out;
  if (segments[seg].is_line()) {
    const Line& l = segments[seg].line();
    const double tol = 1e-9 * diagonal();
    int ia = -1, ib = -1;
    for (std::size_t k = 0; k < intersections.size(); ++k) {
      const auto& segs = intersections[k].segments;
      if (std::find(segs.begin(), segs.end(), seg) == segs.end()) continue;
      if (norm(intersections[k].p - l.a) <= tol) ia = static_cast<int>(k);
      if (norm(intersections[k].p - l.b) <= tol) ib = static_cast<int>(k);
    }
    if (ia >= 0) out.push_back(ia);
    if (ib >= 0) out.push_back(ib);
  }
  return out;
}

int DomainSpec::neighbor_at(int seg, int intersection) const {
  for (int other : intersections[intersection].segments)
    if (other != seg) return other;
  return -1;
}

namespace {

int rank_of(std::vector<std::vector<double>> m, double tol) {
  const std::size_t rows = m.size();
  if (rows == 0) return 0;
  const std::size_t cols = m[0].size();
  int rank = 0;
  std::size_t lead = 0;
  for (std::size_t r = 0; r < rows && lead < cols; ++lead) {
    std::size_t piv = r;
    for (std::size_t k = r + 1; k < rows; ++k)
      if (std::abs(m[k][lead]) > std::abs(m[piv][lead])) piv = k;
    if (std::abs(m[piv][lead]) <= tol) continue;
    std::swap(m[piv], m[r]);
    for (std::size_t k = 0; k < rows; ++k) {
      if (k == r) continue;
      const double f = m[k][lead] / m[r][lead];
      for (std::size_t cidx = 0; cidx < cols; ++cidx) m[k][cidx] -= f * m[r][cidx];
    }
    ++r;
    ++rank;
  }
  return rank;
}

}  // namespace

void DomainSpec::validate() const {
  if (segments.empty()) throw ConfigError("domain has no segments");
  if (n_components < 1) throw ConfigError("n_components must be >= 1");
  if (component_names.size() != static_cast<std::size_t>(n_components))
    throw ConfigError("component_names size must equal n_components");
  const double tol = 1e-9 * diagonal();

  for (std::size_t i = 0; i < segments.size(); ++i) {
    const SegmentSpec& s = segments[i];
    for (std::size_t j = i + 1; j < segments.size(); ++j)
      if (s.name == segments[j].name)
        throw ConfigError("duplicate segment name '" + s.name + "'");
    if (s.rows.size() != static_cast<std::size_t>(n_components))
      throw ConfigError("segment '" + s.name + "': expected " +
                        std::to_string(n_components) + " bc rows, got " +
                        std::to_string(s.rows.size()));
    std::vector<std::vector<double>> basis;
    std::vector<std::vector<double>> non_dirichlet;
    for (const BcRow& r : s.rows) {
      if (r.b.size() != static_cast<std::size_t>(n_components))
        throw ConfigError("segment '" + s.name + "': bc row basis size mismatch");
      basis.push_back(r.b);
      if (r.kind != BcKind::dirichlet) non_dirichlet.push_back(r.b);
      if (r.kind == BcKind::dirichlet && !r.g.valid())
        throw ConfigError("segment '" + s.name + "': dirichlet row without data g");
      if (r.kind == BcKind::robin) {
        if (!r.h.valid())
          throw ConfigError("segment '" + s.name + "': robin row without data h");
        if (r.c.size() != static_cast<std::size_t>(n_components))
          throw ConfigError("segment '" + s.name + "': robin coefficient size mismatch");
      }
    }
    if (rank_of(basis, 1e-12) != n_components)
      throw ConfigError("segment '" + s.name + "': bc row bases do not span R^n");
    // Robin coefficient vectors must lie in the span of non-Dirichlet bases
    // (checked when all entries are numeric constants).
    for (const BcRow& r : s.rows) {
      if (r.kind != BcKind::robin) continue;
      bool numeric = true;
      std::vector<double> cvec(n_components, 0.0);
      for (int k = 0; k < n_components; ++k) {
        if (!r.c[k].valid()) { cvec[k] = 0.0; continue; }
        if (!r.c[k].is_number()) { numeric = false; break; }
        cvec[k] = r.c[k].number();
      }
      if (!numeric) continue;
      auto stacked = non_dirichlet;
      const int base_rank = rank_of(stacked, 1e-12);
      stacked.push_back(cvec);
      if (rank_of(stacked, 1e-12) != base_rank)
        throw ConfigError("segment '" + s.name +
                          "': robin coefficient vector outside the span of "
                          "non-Dirichlet row bases");
    }
  }

  for (const IntersectionSpec& is : intersections) {
    if (is.segments.size() != 2)
      throw ConfigError("intersection '" + is.name + "' must join exactly 2 segments");
    for (int si : is.segments) {
      if (si < 0 || si >= static_cast<int>(segments.size()))
        throw ConfigError("intersection '" + is.name + "' references invalid segment");
      if (distance(segments[si].curve, is.p) > tol)
        throw ConfigError("intersection '" + is.name + "' does not lie on segment '" +
                          segments[si].name + "'");
    }
  }

  // Every line endpoint must be covered by exactly one declared intersection
  // (segments tile closed loops).
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!segments[i].is_line()) continue;
    const Line& l = segments[i].line();
    for (Point2 end : {l.a, l.b}) {
      int count = 0;
      for (const IntersectionSpec& is : intersections) {
        if (std::find(is.segments.begin(), is.segments.end(),
                      static_cast<int>(i)) == is.segments.end())
          continue;
        if (norm(is.p - end) <= tol) ++count;
      }
      if (count != 1)
        throw ConfigError("segment '" + segments[i].name +
                          "': each line endpoint must match exactly one declared "
                          "intersection");
    }
  }

  // Orientation: the domain must lie to the left of a->b.
  for (const SegmentSpec& s : segments) {
    if (!s.is_line()) continue;
    const Line& l = s.line();
    const Point2 mid = 0.5 * (l.a + l.b);
    const Point2 n = rot90((1.0 / norm(l.b - l.a)) * (l.b - l.a));
    const Point2 probe = mid + (1e-6 * diagonal()) * n;
    if (!inside(probe))
      throw ConfigError("segment '" + s.name +
                        "': domain must lie on the left of a->b (orientation)");
  }
  // Circle side consistency.
  for (const SegmentSpec& s : segments) {
    if (s.is_line()) continue;
    const Circle& c = s.circle();
    const double off = 1e-6 * diagonal();
    const double rp = c.domain_side == Circle::Side::outside ? c.radius + off
                                                             : c.radius - off;
    if (!inside(c.center + Point2{rp, 0.0}))
      throw ConfigError("segment '" + s.name + "': circle domain_side mismatch");
  }
}

}  // namespace hardbc::geom
