#include "hardbc/structure.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <utility>

namespace hardbc::structure {

namespace {

using geom::BcKind;
using geom::BcRow;
using geom::Classification;
using geom::DomainSpec;
using geom::NodeClass;
using geom::Point2;
using geom::SegmentSpec;

constexpr double kSpanTol = 1e-12;

std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

// ---- small linear algebra on row vectors -------------------------------------

double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double vnorm(const std::vector<double>& a) { return std::sqrt(vdot(a, a)); }

/// Residual of v after projecting onto an orthonormal set.
std::vector<double> residual(const std::vector<std::vector<double>>& onb,
                             std::vector<double> v) {
  for (const auto& q : onb) {
    const double c = vdot(q, v);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * q[i];
  }
  return v;
}

bool in_span(const std::vector<std::vector<double>>& onb,
             const std::vector<double>& v) {
  const double scale = std::max(vnorm(v), 1.0);
  return vnorm(residual(onb, v)) <= kSpanTol * scale;
}

/// Gaussian elimination with partial pivoting; throws on singular input.
std::vector<std::vector<double>> invert(std::vector<std::vector<double>> m) {
  const std::size_t k = m.size();
  std::vector<std::vector<double>> inv(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    if (std::abs(m[piv][col]) < 1e-14)
      throw ConfigError("corner system is singular");
    std::swap(m[piv], m[col]);
    std::swap(inv[piv], inv[col]);
    const double d = m[col][col];
    for (std::size_t c = 0; c < k; ++c) {
      m[col][c] /= d;
      inv[col][c] /= d;
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < k; ++c) {
        m[r][c] -= f * m[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  return inv;
}

}  // namespace

// ---- node constructors --------------------------------------------------------

namespace {

FieldPtr make_node(FieldFn n) { return std::make_shared<const FieldFn>(std::move(n)); }

bool is_const(const FieldPtr& p, double v) {
  return p->op == FieldFn::Op::constant && p->value == v;
}

void walk(const FieldPtr& p, std::set<const FieldFn*>& seen,
          const std::function<void(const FieldFn&)>& fn) {
  if (!p || !seen.insert(p.get()).second) return;
  fn(*p);
  for (const auto& k : p->kids) walk(k, seen, fn);
}

}  // namespace

FieldPtr f_const(double v) {
  FieldFn n;
  n.op = FieldFn::Op::constant;
  n.value = v;
  return make_node(std::move(n));
}

FieldPtr f_x() {
  FieldFn n;
  n.op = FieldFn::Op::coord_x;
  return make_node(std::move(n));
}

FieldPtr f_y() {
  FieldFn n;
  n.op = FieldFn::Op::coord_y;
  return make_node(std::move(n));
}

FieldPtr f_data(expr::Expr e) {
  if (!e.valid()) throw ConfigError("field data expression is empty");
  if (e.is_number()) return f_const(e.number());
  FieldFn n;
  n.op = FieldFn::Op::data;
  n.ex = std::move(e);
  return make_node(std::move(n));
}

namespace {
FieldPtr seg_node(FieldFn::Op op, int seg) {
  FieldFn n;
  n.op = op;
  n.seg = seg;
  return make_node(std::move(n));
}
}  // namespace

FieldPtr f_phi(int seg) { return seg_node(FieldFn::Op::phi, seg); }
FieldPtr f_phi_bar(int seg) { return seg_node(FieldFn::Op::phi_bar, seg); }
FieldPtr f_phibar_gx(int seg) { return seg_node(FieldFn::Op::phibar_gx, seg); }
FieldPtr f_phibar_gy(int seg) { return seg_node(FieldFn::Op::phibar_gy, seg); }
FieldPtr f_phitrue_gx(int seg) { return seg_node(FieldFn::Op::phitrue_gx, seg); }
FieldPtr f_phitrue_gy(int seg) { return seg_node(FieldFn::Op::phitrue_gy, seg); }

FieldPtr f_phi_point(int point) {
  FieldFn n;
  n.op = FieldFn::Op::phi_point;
  n.point = point;
  return make_node(std::move(n));
}

FieldPtr f_weight(int seg, std::vector<int> subset, bool plain_mu) {
  std::sort(subset.begin(), subset.end());
  if (std::find(subset.begin(), subset.end(), seg) == subset.end())
    throw ConfigError("weight node: segment not in its subset");
  FieldFn n;
  n.op = FieldFn::Op::weight;
  n.seg = seg;
  n.pw = plain_mu ? 1 : 0;
  n.subset = std::move(subset);
  return make_node(std::move(n));
}

FieldPtr f_slot(int slot) {
  FieldFn n;
  n.op = FieldFn::Op::slot;
  n.slot = slot;
  return make_node(std::move(n));
}

FieldPtr f_add(FieldPtr a, FieldPtr b) {
  if (is_zero(a)) return b;
  if (is_zero(b)) return a;
  if (a->op == FieldFn::Op::constant && b->op == FieldFn::Op::constant)
    return f_const(a->value + b->value);
  FieldFn n;
  n.op = FieldFn::Op::add;
  n.kids = {std::move(a), std::move(b)};
  return make_node(std::move(n));
}

FieldPtr f_sub(FieldPtr a, FieldPtr b) {
  if (is_zero(b)) return a;
  if (is_zero(a)) return f_neg(std::move(b));
  if (a->op == FieldFn::Op::constant && b->op == FieldFn::Op::constant)
    return f_const(a->value - b->value);
  FieldFn n;
  n.op = FieldFn::Op::sub;
  n.kids = {std::move(a), std::move(b)};
  return make_node(std::move(n));
}

FieldPtr f_mul(FieldPtr a, FieldPtr b) {
  if (is_zero(a) || is_zero(b)) return f_const(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (a->op == FieldFn::Op::constant && b->op == FieldFn::Op::constant)
    return f_const(a->value * b->value);
  FieldFn n;
  n.op = FieldFn::Op::mul;
  n.kids = {std::move(a), std::move(b)};
  return make_node(std::move(n));
}

FieldPtr f_div(FieldPtr a, FieldPtr b) {
  if (is_zero(a)) return f_const(0.0);
  if (is_const(b, 1.0)) return a;
  if (a->op == FieldFn::Op::constant && b->op == FieldFn::Op::constant &&
      b->value != 0.0)
    return f_const(a->value / b->value);
  FieldFn n;
  n.op = FieldFn::Op::div;
  n.kids = {std::move(a), std::move(b)};
  return make_node(std::move(n));
}

FieldPtr f_neg(FieldPtr a) {
  if (a->op == FieldFn::Op::constant) return f_const(-a->value);
  FieldFn n;
  n.op = FieldFn::Op::neg;
  n.kids = {std::move(a)};
  return make_node(std::move(n));
}

FieldPtr f_prod(std::vector<FieldPtr> kids) {
  std::vector<FieldPtr> keep;
  for (auto& k : kids) {
    if (is_zero(k)) return f_const(0.0);
    if (is_const(k, 1.0)) continue;
    keep.push_back(std::move(k));
  }
  if (keep.empty()) return f_const(1.0);
  if (keep.size() == 1) return keep[0];
  FieldFn n;
  n.op = FieldFn::Op::prod;
  n.kids = std::move(keep);
  return make_node(std::move(n));
}

FieldPtr f_ipow(FieldPtr a, int k) {
  if (k < 0) throw ConfigError("ipow exponent must be >= 0");
  if (k == 0) return f_const(1.0);
  if (k == 1) return a;
  if (a->op == FieldFn::Op::constant) return f_const(std::pow(a->value, k));
  FieldFn n;
  n.op = FieldFn::Op::ipow;
  n.pw = k;
  n.kids = {std::move(a)};
  return make_node(std::move(n));
}

FieldPtr f_grad_x(FieldPtr a) {
  if (a->op == FieldFn::Op::constant) return f_const(0.0);
  FieldFn n;
  n.op = FieldFn::Op::grad_x;
  n.kids = {std::move(a)};
  return make_node(std::move(n));
}

FieldPtr f_grad_y(FieldPtr a) {
  if (a->op == FieldFn::Op::constant) return f_const(0.0);
  FieldFn n;
  n.op = FieldFn::Op::grad_y;
  n.kids = {std::move(a)};
  return make_node(std::move(n));
}

FieldPtr f_proj(int seg, FieldPtr a) {
  if (a->op == FieldFn::Op::constant) return a;
  std::set<const FieldFn*> seen;
  walk(a, seen, [](const FieldFn& n) {
    switch (n.op) {
      case FieldFn::Op::proj:
      case FieldFn::Op::grad_x:
      case FieldFn::Op::grad_y:
      case FieldFn::Op::weight:
        throw ConfigError(
            "projected subtrees must not contain proj, grad or weight nodes");
      default:
        break;
    }
  });
  FieldFn n;
  n.op = FieldFn::Op::proj;
  n.seg = seg;
  n.kids = {std::move(a)};
  return make_node(std::move(n));
}

bool is_zero(const FieldPtr& p) {
  return p && p->op == FieldFn::Op::constant && p->value == 0.0;
}

bool depends_on_slots(const FieldPtr& p) {
  bool dep = false;
  std::set<const FieldFn*> seen;
  walk(p, seen, [&](const FieldFn& n) {
    if (n.op == FieldFn::Op::slot) dep = true;
  });
  return dep;
}

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::glss: return "glss";
    case Mode::op: return "op";
    case Mode::semi_weak: return "semi-weak";
    case Mode::weak: return "weak";
    case Mode::legacy_sukumar: return "legacy-sukumar";
  }
  return "?";
}

Mode mode_from_name(std::string_view s) {
  if (s == "glss") return Mode::glss;
  if (s == "op") return Mode::op;
  if (s == "semi-weak" || s == "semi_weak") return Mode::semi_weak;
  if (s == "weak") return Mode::weak;
  if (s == "legacy-sukumar" || s == "legacy_sukumar") return Mode::legacy_sukumar;
  throw ConfigError("unknown structure mode: " + std::string(s));
}

// ---- weights ------------------------------------------------------------------

namespace {

/// Preferred incident segment for the intersection bypass: Dirichlet-bearing
/// segments first, then lowest index.
int pick_incident(const DomainSpec& dom, const std::vector<int>& candidates) {
  int best = -1;
  bool best_d = false;
  for (int s : candidates) {
    const bool d = dom.segments[s].has_dirichlet();
    if (best < 0 || (d && !best_d) || (d == best_d && s < best)) {
      best = s;
      best_d = d;
    }
  }
  return best;
}

}  // namespace

std::vector<double> weights_subset(const DomainSpec& dom,
                                   const std::vector<int>& subset, bool plain_mu,
                                   Point2 p, const Classification& cls) {
  std::vector<double> w(subset.size(), 0.0);
  if (subset.empty()) return w;
  auto pos_of = [&](int seg) {
    auto it = std::find(subset.begin(), subset.end(), seg);
    return it == subset.end() ? -1 : static_cast<int>(it - subset.begin());
  };

  if (cls.cls == NodeClass::on_segment) {
    const int pos = pos_of(cls.segment);
    if (pos >= 0) {
      w[pos] = 1.0;
      return w;
    }
  } else if (cls.cls == NodeClass::at_intersection) {
    std::vector<int> cand;
    for (int s : dom.intersections[cls.intersection].segments)
      if (pos_of(s) >= 0) cand.push_back(s);
    if (!cand.empty()) {
      w[pos_of(pick_incident(dom, cand))] = 1.0;
      return w;
    }
  }

  const std::size_t m = subset.size();
  std::vector<double> f(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& seg = dom.segments[subset[i]];
    const double ph = geom::phi(seg, p);
    f[i] = plain_mu ? ph : std::pow(ph, seg.mu());
  }
  double den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double prod = 1.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) prod *= f[j];
    w[i] = prod;
    den += prod;
  }
  if (den <= 0.0 || !std::isfinite(den))
    throw ConfigError("transfinite weights are singular at (" + fmt_double(p.x) +
                      ", " + fmt_double(p.y) + ")");
  for (auto& v : w) v /= den;
  return w;
}

std::vector<double> weights(const DomainSpec& dom, Point2 p) {
  std::vector<int> all(dom.segments.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return weights_subset(dom, all, false, p, geom::classify(dom, p));
}

geom::Point2 normalizer(Point2 p, const SegmentSpec& seg) {
  return geom::project_line(seg, p);
}

// ---- slot table -----------------------------------------------------------------

int SlotTable::add(std::string name) {
  for (const auto& n : names_)
    if (n == name) throw ConfigError("duplicate slot name: " + name);
  names_.push_back(std::move(name));
  return static_cast<int>(names_.size()) - 1;
}

// ---- builder core ---------------------------------------------------------------

namespace {

/// Name suffix for a basis/complement vector: the component name when the
/// vector is a canonical axis, otherwise a positional fallback.
std::string axis_label(const DomainSpec& dom, const std::vector<double>& v,
                       const std::string& fallback) {
  int axis = -1;
  for (std::size_t c = 0; c < v.size(); ++c) {
    if (std::abs(std::abs(v[c]) - 1.0) <= kSpanTol) {
      if (axis >= 0) return fallback;
      axis = static_cast<int>(c);
    } else if (std::abs(v[c]) > kSpanTol) {
      return fallback;
    }
  }
  if (axis < 0) return fallback;
  if (axis < static_cast<int>(dom.component_names.size()))
    return dom.component_names[axis];
  return "c" + std::to_string(axis);
}

/// Sum of coef[c]*fields[c], skipping negligible coefficients.
FieldPtr linear_combo(const std::vector<double>& coef,
                      const std::vector<FieldPtr>& fields) {
  FieldPtr acc = f_const(0.0);
  for (std::size_t c = 0; c < coef.size(); ++c) {
    if (std::abs(coef[c]) <= kSpanTol) continue;
    acc = f_add(acc, f_mul(f_const(coef[c]), fields[c]));
  }
  return acc;
}

/// c-vector dotted with a constant basis vector: sum_k c[k]*b[k] as a field.
FieldPtr c_dot_b(const BcRow& row, const std::vector<double>& b) {
  FieldPtr acc = f_const(0.0);
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (std::abs(b[k]) <= kSpanTol) continue;
    if (k >= row.c.size() || !row.c[k].valid()) continue;
    acc = f_add(acc, f_mul(f_const(b[k]), f_data(row.c[k])));
  }
  return acc;
}

struct CornerFn {
  std::vector<FieldPtr> u;                  // per component
  std::vector<std::vector<double>> span;    // orthonormalized Dirichlet rows
};

class BuilderCore {
public:
  BuilderCore(const DomainSpec& dom, const BuildOptions& opt, SlotTable& slots)
      : dom_(dom), opt_(opt), slots_(slots), n_(dom.n_components) {}

  void require_orthonormal_bases() const {
    for (const auto& seg : dom_.segments) {
      for (std::size_t p = 0; p < seg.rows.size(); ++p) {
        for (std::size_t q = p; q < seg.rows.size(); ++q) {
          const double want = (p == q) ? 1.0 : 0.0;
          if (std::abs(vdot(seg.rows[p].b, seg.rows[q].b) - want) > 1e-9)
            throw ConfigError("segment " + seg.name +
                              ": exact modes require orthonormal row bases");
        }
      }
    }
  }

  /// Corners incident to any segment with a non-Dirichlet row, ascending.
  std::vector<int> interface_corners() const {
    std::set<int> ips;
    for (std::size_t s = 0; s < dom_.segments.size(); ++s) {
      const auto& seg = dom_.segments[s];
      const bool mixed = std::any_of(seg.rows.begin(), seg.rows.end(),
                                     [](const BcRow& r) {
                                       return r.kind != BcKind::dirichlet;
                                     });
      if (!mixed || !seg.is_line()) continue;
      for (int ip : dom_.corners_of(static_cast<int>(s))) ips.insert(ip);
    }
    return {ips.begin(), ips.end()};
  }

  /// Span-increasing Dirichlet rows at the corner pin the corner value; the
  /// orthogonal complement gets fresh point slots.
  void solve_corner(int ip) {
    const auto& I = dom_.intersections[ip];
    CornerFn out;
    out.u.assign(n_, f_const(0.0));

    std::vector<std::vector<double>> accepted;  // raw b rows, in accept order
    std::vector<expr::Expr> accepted_g;
    std::vector<std::pair<std::vector<double>, expr::Expr>> rejected;
    for (int s : I.segments) {
      for (const auto& row : dom_.segments[s].rows) {
        if (row.kind != BcKind::dirichlet) continue;
        if (in_span(out.span, row.b)) {
          rejected.emplace_back(row.b, row.g);
          continue;
        }
        auto res = residual(out.span, row.b);
        const double rn = vnorm(res);
        for (auto& v : res) v /= rn;
        out.span.push_back(std::move(res));
        accepted.push_back(row.b);
        accepted_g.push_back(row.g);
      }
    }

    // Pinned part: minimum-norm solution u = A^T (A A^T)^{-1} g of A u = g.
    std::vector<std::vector<double>> coef(n_);  // coef[c][m]
    if (!accepted.empty()) {
      const std::size_t k = accepted.size();
      std::vector<std::vector<double>> gram(k, std::vector<double>(k));
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
          gram[i][j] = vdot(accepted[i], accepted[j]);
      const auto gram_inv = invert(std::move(gram));
      for (int c = 0; c < n_; ++c) {
        coef[c].assign(k, 0.0);
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t l = 0; l < k; ++l)
            coef[c][m] += accepted[l][c] * gram_inv[l][m];
      }
      for (int c = 0; c < n_; ++c) {
        FieldPtr acc = f_const(0.0);
        for (std::size_t m = 0; m < k; ++m) {
          if (std::abs(coef[c][m]) <= kSpanTol) continue;
          acc = f_add(acc, f_mul(f_const(coef[c][m]), f_data(accepted_g[m])));
        }
        out.u[c] = acc;
      }
    }

    // Compatibility: every rejected (dependent) row must agree with the
    // pinned data at the corner point; slot terms cancel exactly since the
    // rejected basis vector lies in the span of the accepted rows.
    static constexpr std::array<std::array<double, 2>, 5> kParams{
        {{1.0, 1.0}, {2.3, 3.1}, {4.0, 4.0}, {1.7, 3.9}, {3.14159, 2.71828}}};
    for (const auto& [b, g] : rejected) {
      for (const auto& ab : kParams) {
        const auto env = expr::Env::full(I.p.x, I.p.y, ab[0], ab[1]);
        double lhs = 0.0;
        for (int c = 0; c < n_; ++c) {
          if (coef[c].empty()) continue;
          double uc = 0.0;
          for (std::size_t m = 0; m < coef[c].size(); ++m)
            uc += coef[c][m] * expr::eval(accepted_g[m], env);
          lhs += b[c] * uc;
        }
        const double rhs = expr::eval(g, env);
        if (std::abs(lhs - rhs) > 1e-8 * (1.0 + std::abs(rhs)))
          throw ConfigError("incompatible Dirichlet data at intersection " +
                            I.name);
      }
    }

    // Orthogonal complement: fresh slot per direction.
    auto onb = out.span;
    for (int c = 0; c < n_; ++c) {
      std::vector<double> axis(n_, 0.0);
      axis[c] = 1.0;
      auto res = residual(onb, axis);
      const double rn = vnorm(res);
      if (rn <= kSpanTol) continue;
      for (auto& v : res) v /= rn;
      std::string name = "Psi_" + I.name;
      if (n_ > 1) name += "_" + axis_label(dom_, res, "k" + std::to_string(c));
      const int slot = slots_.add(std::move(name));
      for (int comp = 0; comp < n_; ++comp) {
        if (std::abs(res[comp]) <= kSpanTol) continue;
        out.u[comp] =
            f_add(out.u[comp], f_mul(f_const(res[comp]), f_slot(slot)));
      }
      onb.push_back(std::move(res));
    }
    corners_.emplace(ip, std::move(out));
  }

  void solve_corners() {
    for (int ip : interface_corners()) solve_corner(ip);
  }

  const CornerFn& corner(int ip) const { return corners_.at(ip); }

  /// Interface base function Psi_i^{(j)} for a non-Dirichlet row: corner
  /// interpolation for lines, a fresh slot for closed curves.
  FieldPtr base_for_row(int seg, int row) {
    const auto& sp = dom_.segments[seg];
    const auto& r = sp.rows[row];
    const std::string label =
        n_ > 1 ? "_" + axis_label(dom_, r.b, "r" + std::to_string(row)) : "";
    if (!sp.is_line())
      return f_slot(slots_.add("Psi_" + sp.name + label));

    const auto ips = dom_.corners_of(seg);
    const auto& ca = corner(ips[0]);
    const auto& cb = corner(ips[1]);
    const FieldPtr pa = f_phi_point(ips[0]);
    const FieldPtr pb = f_phi_point(ips[1]);
    const FieldPtr ua = linear_combo(r.b, ca.u);
    const FieldPtr ub = linear_combo(r.b, cb.u);
    FieldPtr base = f_div(f_add(f_mul(pb, ua), f_mul(pa, ub)), f_add(pa, pb));
    const bool with_bar =
        opt_.psi_bar_always || (in_span(ca.span, r.b) && in_span(cb.span, r.b));
    if (with_bar) {
      const int slot = slots_.add("Psibar_" + sp.name + label);
      base = f_add(base, f_mul(f_mul(pa, pb), f_slot(slot)));
    }
    return base;
  }

  /// Dirichlet local: the data, plus phi_bar * fresh slot when the weight
  /// factor phi^mu has vanishing gradient on the segment.
  FieldPtr dirichlet_local(int seg, int row) {
    const auto& sp = dom_.segments[seg];
    FieldPtr u = f_data(sp.rows[row].g);
    if (sp.vanishing_gradient || sp.mu() == 2) {
      const std::string label =
          n_ > 1 ? "_" + axis_label(dom_, sp.rows[row].b,
                                    "r" + std::to_string(row))
                 : "";
      const int slot = slots_.add("Psitilde_" + sp.name + label);
      u = f_add(u, f_mul(f_phi_bar(seg), f_slot(slot)));
    }
    return u;
  }

  /// GLSS Robin local around an arbitrary base function.
  FieldPtr robin_local(int seg, FieldPtr base, FieldPtr f) const {
    const FieldPtr pb = f_phi_bar(seg);
    const FieldPtr ndir = f_add(f_mul(f_phibar_gx(seg), f_grad_x(base)),
                                f_mul(f_phibar_gy(seg), f_grad_y(base)));
    return f_add(f_sub(base, f_mul(pb, ndir)), f_mul(pb, f));
  }

  const DomainSpec& dom_;
  BuildOptions opt_;
  SlotTable& slots_;
  int n_;
  std::map<int, CornerFn> corners_;
};

std::string remainder_name(const DomainSpec& dom, int c) {
  if (dom.n_components == 1) return "Psi";
  if (c < static_cast<int>(dom.component_names.size()))
    return "Psi_" + dom.component_names[c];
  return "Psi_c" + std::to_string(c);
}

/// Map every Dirichlet row to its canonical component, or throw.
std::vector<std::vector<std::pair<int, const BcRow*>>> dirichlet_by_component(
    const DomainSpec& dom, std::string_view mode) {
  std::vector<std::vector<std::pair<int, const BcRow*>>> by(dom.n_components);
  for (std::size_t s = 0; s < dom.segments.size(); ++s) {
    for (const auto& row : dom.segments[s].rows) {
      if (row.kind != BcKind::dirichlet) continue;
      int axis = -1;
      for (std::size_t c = 0; c < row.b.size(); ++c) {
        if (std::abs(row.b[c] - 1.0) <= kSpanTol) {
          if (axis >= 0) { axis = -2; break; }
          axis = static_cast<int>(c);
        } else if (std::abs(row.b[c]) > kSpanTol) {
          axis = -2;
          break;
        }
      }
      if (axis < 0)
        throw ConfigError(std::string(mode) +
                          " mode requires canonical Dirichlet bases (segment " +
                          dom.segments[s].name + ")");
      by[axis].emplace_back(static_cast<int>(s), &row);
    }
  }
  return by;
}

}  // namespace

// ---- exposed helpers -------------------------------------------------------------

FieldPtr local_dirichlet(const DomainSpec& dom, int seg, SlotTable& slots) {
  BuilderCore core(dom, {}, slots);
  if (dom.segments[seg].rows.empty() ||
      dom.segments[seg].rows[0].kind != BcKind::dirichlet)
    throw ConfigError("local_dirichlet: row 0 is not a Dirichlet row");
  return core.dirichlet_local(seg, 0);
}

FieldPtr local_robin_glss(const DomainSpec& dom, int seg, FieldPtr psi) {
  const auto& sp = dom.segments[seg];
  if (sp.rows.empty() || sp.rows[0].kind != BcKind::robin)
    throw ConfigError("local_robin_glss: row 0 is not a Robin row");
  const auto& row = sp.rows[0];
  SlotTable unused;
  BuilderCore core(dom, {}, unused);
  const FieldPtr f = f_sub(f_mul(c_dot_b(row, row.b), psi), f_data(row.h));
  return core.robin_local(seg, std::move(psi), f);
}

std::vector<FieldPtr> resolve_intersections_scalar(const DomainSpec& dom,
                                                   SlotTable& slots,
                                                   const BuildOptions& opt) {
  if (dom.n_components != 1)
    throw ConfigError("resolve_intersections_scalar requires a scalar domain");
  BuilderCore core(dom, opt, slots);
  core.solve_corners();
  std::vector<FieldPtr> psi(dom.segments.size());
  for (std::size_t s = 0; s < dom.segments.size(); ++s) {
    if (dom.segments[s].rows[0].kind == BcKind::dirichlet) continue;
    psi[s] = core.base_for_row(static_cast<int>(s), 0);
  }
  return psi;
}

// ---- builders ---------------------------------------------------------------------

SolutionStructure build_system_glss(const DomainSpec& dom,
                                    const BuildOptions& opt) {
  dom.validate();
  SolutionStructure ss;
  ss.mode = Mode::glss;
  ss.domain = dom;
  const int n = dom.n_components;
  const std::size_t S = dom.segments.size();

  SlotTable slots;
  std::vector<int> remainder(n);
  for (int c = 0; c < n; ++c) remainder[c] = slots.add(remainder_name(dom, c));

  BuilderCore core(dom, opt, slots);
  core.require_orthonormal_bases();
  core.solve_corners();

  // Per-row bases first (they allocate slots in declaration order), then the
  // locals, whose Robin coupling terms reference sibling bases.
  std::vector<std::vector<FieldPtr>> bases(S), locals(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& seg = dom.segments[s];
    bases[s].resize(seg.rows.size());
    locals[s].resize(seg.rows.size());
    for (std::size_t r = 0; r < seg.rows.size(); ++r) {
      if (seg.rows[r].kind == BcKind::dirichlet)
        locals[s][r] = core.dirichlet_local(static_cast<int>(s),
                                            static_cast<int>(r));
      else
        bases[s][r] = core.base_for_row(static_cast<int>(s),
                                        static_cast<int>(r));
    }
  }
  for (std::size_t s = 0; s < S; ++s) {
    const auto& seg = dom.segments[s];
    for (std::size_t r = 0; r < seg.rows.size(); ++r) {
      const auto& row = seg.rows[r];
      if (row.kind == BcKind::dirichlet) continue;
      if (row.kind == BcKind::free) {
        locals[s][r] = bases[s][r];
        continue;
      }
      // f = c . (sum over non-Dirichlet rows of b^(k) Psi^(k)) - h
      FieldPtr f = f_const(0.0);
      for (std::size_t k = 0; k < seg.rows.size(); ++k) {
        if (seg.rows[k].kind == BcKind::dirichlet) continue;
        f = f_add(f, f_mul(c_dot_b(row, seg.rows[k].b), bases[s][k]));
      }
      if (row.h.valid()) f = f_sub(f, f_data(row.h));
      locals[s][r] = core.robin_local(static_cast<int>(s), bases[s][r], f);
    }
  }

  // u_c = sum_i w_i (sum_j b^(j)[c] local_ij) + Psi_c prod_i phi_i^mu_i.
  std::vector<int> all(S);
  for (std::size_t i = 0; i < S; ++i) all[i] = static_cast<int>(i);
  std::vector<FieldPtr> mu_prod_kids;
  for (std::size_t i = 0; i < S; ++i)
    mu_prod_kids.push_back(
        f_ipow(f_phi(static_cast<int>(i)), dom.segments[i].mu()));
  const FieldPtr mu_prod = f_prod(mu_prod_kids);

  ss.components.resize(n);
  for (int c = 0; c < n; ++c) {
    FieldPtr u = f_const(0.0);
    for (std::size_t s = 0; s < S; ++s) {
      FieldPtr seg_c = f_const(0.0);
      for (std::size_t r = 0; r < dom.segments[s].rows.size(); ++r) {
        const double bc = dom.segments[s].rows[r].b[c];
        if (std::abs(bc) <= kSpanTol) continue;
        seg_c = f_add(seg_c, f_mul(f_const(bc), locals[s][r]));
      }
      u = f_add(u, f_mul(f_weight(static_cast<int>(s), all), seg_c));
    }
    u = f_add(u, f_mul(mu_prod, f_slot(remainder[c])));
    ss.components[c] = u;
  }
  ss.slot_names = slots.names();
  return ss;
}

SolutionStructure build_scalar_glss(const DomainSpec& dom,
                                    const BuildOptions& opt) {
  if (dom.n_components != 1)
    throw ConfigError("build_scalar_glss requires a scalar domain");
  return build_system_glss(dom, opt);
}

SolutionStructure build_system_op(const DomainSpec& dom,
                                  const BuildOptions& opt) {
  dom.validate();
  SolutionStructure ss;
  ss.mode = Mode::op;
  ss.domain = dom;
  const int n = dom.n_components;
  const std::size_t S = dom.segments.size();

  SlotTable slots;
  BuilderCore core(dom, opt, slots);
  core.require_orthonormal_bases();

  // Shared row bases across segments (row j means the same b everywhere).
  for (std::size_t s = 1; s < S; ++s)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < n; ++c)
        if (std::abs(dom.segments[s].rows[j].b[c] -
                     dom.segments[0].rows[j].b[c]) > kSpanTol)
          throw ConfigError(
              "op mode requires row bases shared across all segments");
  for (std::size_t s = 0; s < S; ++s)
    for (const auto& row : dom.segments[s].rows)
      if (row.kind == BcKind::robin && !dom.segments[s].is_line())
        throw ConfigError(
            "op mode supports Robin rows on straight segments only (segment " +
            dom.segments[s].name + ")");

  std::vector<int> remainder(n);
  for (int c = 0; c < n; ++c) remainder[c] = slots.add(remainder_name(dom, c));

  // Psi_bar per row: grouped transfinite blend of the Dirichlet data plus a
  // free slot damped by the product of the Dirichlet segments' distances.
  std::vector<FieldPtr> psibar(n);
  std::vector<std::vector<int>> ijd(n);
  for (int j = 0; j < n; ++j) {
    for (std::size_t s = 0; s < S; ++s)
      if (dom.segments[s].rows[j].kind == BcKind::dirichlet)
        ijd[j].push_back(static_cast<int>(s));

    FieldPtr blend = f_const(0.0);
    if (!ijd[j].empty()) {
      std::vector<std::string> keys;
      std::vector<std::vector<int>> groups;
      std::vector<expr::Expr> gexpr;
      for (int s : ijd[j]) {
        const auto key = expr::to_string(dom.segments[s].rows[j].g);
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
          keys.push_back(key);
          groups.push_back({s});
          gexpr.push_back(dom.segments[s].rows[j].g);
        } else {
          groups[it - keys.begin()].push_back(s);
        }
      }
      if (groups.size() == 1) {
        blend = f_data(gexpr[0]);
      } else {
        std::vector<FieldPtr> sigma;
        for (const auto& g : groups) {
          std::vector<FieldPtr> kids;
          for (int s : g) kids.push_back(f_phi(s));
          sigma.push_back(f_prod(std::move(kids)));
        }
        std::vector<FieldPtr> wg(groups.size());
        FieldPtr den = f_const(0.0);
        for (std::size_t g = 0; g < groups.size(); ++g) {
          std::vector<FieldPtr> others;
          for (std::size_t k = 0; k < groups.size(); ++k)
            if (k != g) others.push_back(sigma[k]);
          wg[g] = f_prod(std::move(others));
          den = f_add(den, wg[g]);
        }
        // Base-plus-corrections form of the quotient: equal to
        // sum_g wg*g / den away from corners, and exactly gexpr[0] where all
        // group products vanish together (each correction is then 0/0, which
        // the evaluators resolve to its removable limit 0; the groups' data
        // agree there for any compatible corner data).
        blend = f_data(gexpr[0]);
        for (std::size_t g = 1; g < groups.size(); ++g)
          blend = f_add(
              blend,
              f_div(f_mul(wg[g], f_sub(f_data(gexpr[g]), f_data(gexpr[0]))),
                    den));
      }
    }
    std::string tname = "Psitilde";
    if (n > 1)
      tname += "_" + axis_label(dom, dom.segments[0].rows[j].b,
                                "r" + std::to_string(j));
    const int tslot = slots.add(std::move(tname));
    std::vector<FieldPtr> damp;
    for (int s : ijd[j]) damp.push_back(f_phi(s));
    psibar[j] = f_add(blend, f_mul(f_slot(tslot), f_prod(std::move(damp))));
  }

  // Locals.
  std::vector<std::vector<FieldPtr>> locals(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& seg = dom.segments[s];
    locals[s].resize(seg.rows.size());
    for (std::size_t r = 0; r < seg.rows.size(); ++r) {
      const auto& row = seg.rows[r];
      if (row.kind == BcKind::dirichlet) {
        locals[s][r] = core.dirichlet_local(static_cast<int>(s),
                                            static_cast<int>(r));
      } else if (row.kind == BcKind::free) {
        locals[s][r] = psibar[r];
      } else {
        FieldPtr f = f_const(0.0);
        for (std::size_t k = 0; k < seg.rows.size(); ++k) {
          if (seg.rows[k].kind == BcKind::dirichlet) continue;
          f = f_add(f, f_mul(c_dot_b(row, seg.rows[k].b), psibar[k]));
        }
        if (row.h.valid()) f = f_sub(f, f_data(row.h));
        locals[s][r] =
            f_add(f_proj(static_cast<int>(s), psibar[r]),
                  f_mul(f_phi_bar(static_cast<int>(s)),
                        f_proj(static_cast<int>(s), f)));
      }
    }
  }

  // Per-component remainder: phi_i^2 when the component's value and normal
  // derivative both matter on segment i (a Robin row differentiates it),
  // phi_i when only the value does (a Dirichlet row pins it or a Robin
  // coupling samples it), nothing otherwise.
  ss.components.resize(n);
  std::vector<int> all(S);
  for (std::size_t i = 0; i < S; ++i) all[i] = static_cast<int>(i);
  for (int c = 0; c < n; ++c) {
    FieldPtr u = f_const(0.0);
    for (std::size_t s = 0; s < S; ++s) {
      FieldPtr seg_c = f_const(0.0);
      for (std::size_t r = 0; r < dom.segments[s].rows.size(); ++r) {
        const double bc = dom.segments[s].rows[r].b[c];
        if (std::abs(bc) <= kSpanTol) continue;
        seg_c = f_add(seg_c, f_mul(f_const(bc), locals[s][r]));
      }
      u = f_add(u, f_mul(f_weight(static_cast<int>(s), all), seg_c));
    }
    std::vector<FieldPtr> rem;
    for (std::size_t s = 0; s < S; ++s) {
      int p = 0;
      for (const auto& row : dom.segments[s].rows) {
        const bool bc = std::abs(row.b[c]) > kSpanTol;
        if (row.kind == BcKind::dirichlet && bc) p = std::max(p, 1);
        if (row.kind == BcKind::robin) {
          if (bc) p = 2;
          if (static_cast<std::size_t>(c) < row.c.size() &&
              row.c[c].valid() &&
              !(row.c[c].is_number() && row.c[c].number() == 0.0))
            p = std::max(p, 1);
        }
      }
      if (p > 0) rem.push_back(f_ipow(f_phi(static_cast<int>(s)), p));
    }
    u = f_add(u, f_mul(f_prod(std::move(rem)), f_slot(remainder[c])));
    ss.components[c] = u;
  }
  ss.slot_names = slots.names();
  return ss;
}

SolutionStructure build_scalar_op(const DomainSpec& dom,
                                  const BuildOptions& opt) {
  if (dom.n_components != 1)
    throw ConfigError("build_scalar_op requires a scalar domain");
  return build_system_op(dom, opt);
}

SolutionStructure build_semi_weak(const DomainSpec& dom) {
  dom.validate();
  SolutionStructure ss;
  ss.mode = Mode::semi_weak;
  ss.domain = dom;
  const int n = dom.n_components;
  const auto by_comp = dirichlet_by_component(dom, "semi-weak");

  SlotTable slots;
  ss.components.resize(n);
  for (int c = 0; c < n; ++c) {
    const int slot = slots.add(remainder_name(dom, c));
    std::vector<int> subset;
    for (const auto& [s, row] : by_comp[c]) subset.push_back(s);
    FieldPtr u = f_const(0.0);
    std::vector<FieldPtr> damp;
    for (const auto& [s, row] : by_comp[c]) {
      u = f_add(u, f_mul(f_weight(s, subset, /*plain_mu=*/true), f_data(row->g)));
      damp.push_back(f_phi(s));
    }
    u = f_add(u, f_mul(f_prod(std::move(damp)), f_slot(slot)));
    ss.components[c] = u;
  }
  for (std::size_t s = 0; s < dom.segments.size(); ++s)
    for (std::size_t r = 0; r < dom.segments[s].rows.size(); ++r)
      if (dom.segments[s].rows[r].kind == BcKind::robin)
        ss.penalty_rows.push_back({static_cast<int>(s), static_cast<int>(r)});
  ss.slot_names = slots.names();
  return ss;
}

SolutionStructure build_weak(const DomainSpec& dom) {
  dom.validate();
  SolutionStructure ss;
  ss.mode = Mode::weak;
  ss.domain = dom;
  SlotTable slots;
  ss.components.resize(dom.n_components);
  for (int c = 0; c < dom.n_components; ++c)
    ss.components[c] = f_slot(slots.add(remainder_name(dom, c)));
  for (std::size_t s = 0; s < dom.segments.size(); ++s)
    for (std::size_t r = 0; r < dom.segments[s].rows.size(); ++r)
      if (dom.segments[s].rows[r].kind != BcKind::free)
        ss.penalty_rows.push_back({static_cast<int>(s), static_cast<int>(r)});
  ss.slot_names = slots.names();
  return ss;
}

SolutionStructure build_legacy_sukumar(const DomainSpec& dom) {
  dom.validate();
  if (dom.n_components != 1)
    throw ConfigError("legacy-sukumar mode supports scalar domains only");
  SolutionStructure ss;
  ss.mode = Mode::legacy_sukumar;
  ss.domain = dom;
  const std::size_t S = dom.segments.size();

  SlotTable slots;
  const int rem = slots.add("Psi");
  std::vector<FieldPtr> locals(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& row = dom.segments[s].rows[0];
    if (row.kind == BcKind::dirichlet) {
      locals[s] = f_data(row.g);
      continue;
    }
    const FieldPtr psi = f_slot(slots.add("Psi_" + dom.segments[s].name));
    if (row.kind == BcKind::free) {
      locals[s] = psi;
      continue;
    }
    // True-distance Robin local: phi's zone-wise gradient replaces the
    // normalized phi_bar of the exact modes.
    const int si = static_cast<int>(s);
    const FieldPtr ph = f_phi(si);
    const FieldPtr ndir = f_add(f_mul(f_phitrue_gx(si), f_grad_x(psi)),
                                f_mul(f_phitrue_gy(si), f_grad_y(psi)));
    FieldPtr f = f_mul(c_dot_b(row, row.b), psi);
    if (row.h.valid()) f = f_sub(f, f_data(row.h));
    locals[s] = f_add(f_sub(psi, f_mul(ph, ndir)), f_mul(ph, f));
  }

  std::vector<int> all(S);
  for (std::size_t i = 0; i < S; ++i) all[i] = static_cast<int>(i);
  FieldPtr u = f_const(0.0);
  for (std::size_t s = 0; s < S; ++s)
    u = f_add(u, f_mul(f_weight(static_cast<int>(s), all), locals[s]));
  std::vector<FieldPtr> mu_kids;
  for (std::size_t s = 0; s < S; ++s)
    mu_kids.push_back(f_ipow(f_phi(static_cast<int>(s)), dom.segments[s].mu()));
  u = f_add(u, f_mul(f_prod(std::move(mu_kids)), f_slot(rem)));
  ss.components = {u};
  ss.slot_names = slots.names();
  return ss;
}

SolutionStructure build(Mode mode, const DomainSpec& dom,
                        const BuildOptions& opt) {
  switch (mode) {
    case Mode::glss: return build_system_glss(dom, opt);
    case Mode::op: return build_system_op(dom, opt);
    case Mode::semi_weak: return build_semi_weak(dom);
    case Mode::weak: return build_weak(dom);
    case Mode::legacy_sukumar: return build_legacy_sukumar(dom);
  }
  throw ConfigError("unknown structure mode");
}

// ---- debug dump -----------------------------------------------------------------

namespace {

std::string_view op_name(FieldFn::Op op) {
  switch (op) {
    case FieldFn::Op::constant: return "const";
    case FieldFn::Op::coord_x: return "x";
    case FieldFn::Op::coord_y: return "y";
    case FieldFn::Op::data: return "data";
    case FieldFn::Op::phi: return "phi";
    case FieldFn::Op::phi_bar: return "phi_bar";
    case FieldFn::Op::phibar_gx: return "phibar_gx";
    case FieldFn::Op::phibar_gy: return "phibar_gy";
    case FieldFn::Op::phitrue_gx: return "phitrue_gx";
    case FieldFn::Op::phitrue_gy: return "phitrue_gy";
    case FieldFn::Op::phi_point: return "phi_point";
    case FieldFn::Op::weight: return "weight";
    case FieldFn::Op::slot: return "slot";
    case FieldFn::Op::add: return "add";
    case FieldFn::Op::sub: return "sub";
    case FieldFn::Op::mul: return "mul";
    case FieldFn::Op::div: return "div";
    case FieldFn::Op::neg: return "neg";
    case FieldFn::Op::prod: return "prod";
    case FieldFn::Op::ipow: return "ipow";
    case FieldFn::Op::grad_x: return "grad_x";
    case FieldFn::Op::grad_y: return "grad_y";
    case FieldFn::Op::proj: return "proj";
  }
  return "?";
}

void json_escape(const std::string& s, std::string& out) {
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else {
      out += c;
    }
  }
}

}  // namespace

std::string SolutionStructure::dump_json() const {
  // Deterministic ids: post-order over components in order.
  std::map<const FieldFn*, int> id;
  std::vector<const FieldFn*> order;
  std::function<void(const FieldPtr&)> visit = [&](const FieldPtr& p) {
    if (!p || id.count(p.get())) return;
    for (const auto& k : p->kids) visit(k);
    id[p.get()] = static_cast<int>(order.size());
    order.push_back(p.get());
  };
  for (const auto& c : components) visit(c);

  std::string out = "{\"mode\":\"";
  out += mode_name(mode);
  out += "\",\"slots\":[";
  for (std::size_t i = 0; i < slot_names.size(); ++i) {
    if (i) out += ',';
    out += '"';
    json_escape(slot_names[i], out);
    out += '"';
  }
  out += "],\"components\":[";
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(id.at(components[i].get()));
  }
  out += "],\"penalties\":[";
  for (std::size_t i = 0; i < penalty_rows.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(penalty_rows[i].seg) + ',' +
           std::to_string(penalty_rows[i].row) + ']';
  }
  out += "],\"nodes\":[";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const FieldFn& n = *order[i];
    if (i) out += ',';
    out += "{\"op\":\"";
    out += op_name(n.op);
    out += '"';
    if (n.op == FieldFn::Op::constant) out += ",\"v\":" + fmt_double(n.value);
    if (n.seg >= 0) out += ",\"seg\":" + std::to_string(n.seg);
    if (n.point >= 0) out += ",\"pt\":" + std::to_string(n.point);
    if (n.slot >= 0) out += ",\"slot\":" + std::to_string(n.slot);
    if (n.op == FieldFn::Op::ipow) out += ",\"k\":" + std::to_string(n.pw);
    if (n.op == FieldFn::Op::data) {
      out += ",\"expr\":\"";
      json_escape(expr::to_string(n.ex), out);
      out += '"';
    }
    if (n.op == FieldFn::Op::weight) {
      out += ",\"subset\":[";
      for (std::size_t k = 0; k < n.subset.size(); ++k) {
        if (k) out += ',';
        out += std::to_string(n.subset[k]);
      }
      out += ']';
      if (n.pw == 1) out += ",\"plain\":1";
    }
    if (!n.kids.empty()) {
      out += ",\"kids\":[";
      for (std::size_t k = 0; k < n.kids.size(); ++k) {
        if (k) out += ',';
        out += std::to_string(id.at(n.kids[k].get()));
      }
      out += ']';
    }
    out += '}';
  }
  out += "]}";
  return out;
}

std::uint64_t SolutionStructure::hash() const {
  const std::string dump = dump_json();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace hardbc::structure
