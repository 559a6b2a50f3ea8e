#include "hardbc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

namespace hardbc::grid {

using structure::FieldFn;
using structure::FieldPtr;

// ---- grid -------------------------------------------------------------------

Grid Grid::make(int nx, int ny, const std::array<double, 4>& box) {
  if (nx < 4 || ny < 4) throw geom::ConfigError("grid must be at least 4x4");
  if (!(box[1] > box[0]) || !(box[3] > box[2]))
    throw geom::ConfigError("grid box is degenerate");
  Grid g;
  g.nx = nx;
  g.ny = ny;
  g.box = box;
  g.hx = (box[1] - box[0]) / (nx - 1);
  g.hy = (box[3] - box[2]) / (ny - 1);
  g.xs.resize(nx);
  g.ys.resize(ny);
  // Endpoint-exact interpolation keeps segment-aligned coordinates exact.
  for (int i = 0; i < nx; ++i)
    g.xs[i] = ((nx - 1 - i) * box[0] + i * box[1]) / (nx - 1);
  for (int j = 0; j < ny; ++j)
    g.ys[j] = ((ny - 1 - j) * box[2] + j * box[3]) / (ny - 1);
  return g;
}

std::vector<Point2> Grid::points() const {
  std::vector<Point2> p;
  p.reserve(size());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) p.push_back({xs[i], ys[j]});
  return p;
}

Mask build_mask(const Grid& g, const geom::DomainSpec& dom) {
  Mask m;
  m.cls.resize(g.size());
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const auto c = geom::classify(dom, g.point(i, j));
      m.cls[g.idx(i, j)] = c;
      switch (c.cls) {
        case geom::NodeClass::inside: ++m.n_inside; break;
        case geom::NodeClass::outside: ++m.n_outside; break;
        default: ++m.n_boundary; break;
      }
    }
  }
  return m;
}

// ---- stencils ---------------------------------------------------------------

Stencils::Stencils(const Grid& g, const Mask& m, MaskPolicy policy) : g_(&g) {
  ext_.assign(g.size() * 4, 0);
  const auto boundary = [&](std::size_t k) {
    const auto c = m.cls[k].cls;
    return c == geom::NodeClass::on_segment ||
           c == geom::NodeClass::at_intersection;
  };
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (policy == MaskPolicy::inside_only &&
          m.cls[k].cls == geom::NodeClass::outside)
        continue;
      static constexpr int dirs[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (int d = 0; d < 4; ++d) {
        int ci = i, cj = j;
        std::uint8_t reach = 0;
        while (reach < 3) {
          ci += dirs[d][0];
          cj += dirs[d][1];
          if (ci < 0 || ci >= g.nx || cj < 0 || cj >= g.ny) break;
          const std::size_t nk = g.idx(ci, cj);
          if (policy == MaskPolicy::inside_only) {
            if (m.cls[nk].cls == geom::NodeClass::outside) break;
            ++reach;
            if (boundary(nk)) break;  // a boundary node ends its run
          } else {
            ++reach;
          }
        }
        ext_[k * 4 + d] = reach;
      }
    }
  }
}

std::array<std::uint8_t, 4> Stencils::reach(std::size_t k) const {
  return {ext_[k * 4], ext_[k * 4 + 1], ext_[k * 4 + 2], ext_[k * 4 + 3]};
}

namespace {

/// First-derivative stencil along one axis; `s` is the index stride.
/// Returns false if the reach is insufficient.
template <typename Acc>
bool apply_d1(const std::uint8_t* ext, std::size_t k, std::ptrdiff_t s, double h,
              Acc&& acc) {
  const std::uint8_t L = ext[0], R = ext[1];
  if (L >= 1 && R >= 1) {
    acc(k - s, -1.0 / (2 * h));
    acc(k + s, 1.0 / (2 * h));
    return true;
  }
  if (R >= 2) {
    acc(k, -3.0 / (2 * h));
    acc(k + s, 4.0 / (2 * h));
    acc(k + 2 * s, -1.0 / (2 * h));
    return true;
  }
  if (L >= 2) {
    acc(k, 3.0 / (2 * h));
    acc(k - s, -4.0 / (2 * h));
    acc(k - 2 * s, 1.0 / (2 * h));
    return true;
  }
  return false;
}

/// Second-derivative stencil along one axis (second order).
template <typename Acc>
bool apply_d2(const std::uint8_t* ext, std::size_t k, std::ptrdiff_t s, double h,
              Acc&& acc) {
  const std::uint8_t L = ext[0], R = ext[1];
  const double h2 = h * h;
  if (L >= 1 && R >= 1) {
    acc(k - s, 1.0 / h2);
    acc(k, -2.0 / h2);
    acc(k + s, 1.0 / h2);
    return true;
  }
  if (R >= 3) {
    acc(k, 2.0 / h2);
    acc(k + s, -5.0 / h2);
    acc(k + 2 * s, 4.0 / h2);
    acc(k + 3 * s, -1.0 / h2);
    return true;
  }
  if (L >= 3) {
    acc(k, 2.0 / h2);
    acc(k - s, -5.0 / h2);
    acc(k - 2 * s, 4.0 / h2);
    acc(k - 3 * s, -1.0 / h2);
    return true;
  }
  return false;
}

}  // namespace

void Stencils::dx(const Field& f, Field& out,
                  std::vector<std::uint8_t>* valid) const {
  const std::size_t n = g_->size();
  out.assign(n, 0.0);
  if (valid) valid->assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    const bool ok = apply_d1(&ext_[k * 4], k, 1, g_->hx,
                             [&](std::size_t i, double c) { v += c * f[i]; });
    out[k] = ok ? v : 0.0;
    if (valid && ok) (*valid)[k] = 1;
  }
}

void Stencils::dy(const Field& f, Field& out,
                  std::vector<std::uint8_t>* valid) const {
  const std::size_t n = g_->size();
  out.assign(n, 0.0);
  if (valid) valid->assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    const bool ok = apply_d1(&ext_[k * 4 + 2], k, g_->nx, g_->hy,
                             [&](std::size_t i, double c) { v += c * f[i]; });
    out[k] = ok ? v : 0.0;
    if (valid && ok) (*valid)[k] = 1;
  }
}

void Stencils::laplace(const Field& f, Field& out,
                       std::vector<std::uint8_t>* valid) const {
  const std::size_t n = g_->size();
  out.assign(n, 0.0);
  if (valid) valid->assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    const bool okx = apply_d2(&ext_[k * 4], k, 1, g_->hx,
                              [&](std::size_t i, double c) { v += c * f[i]; });
    const bool oky = apply_d2(&ext_[k * 4 + 2], k, g_->nx, g_->hy,
                              [&](std::size_t i, double c) { v += c * f[i]; });
    const bool ok = okx && oky;
    out[k] = ok ? v : 0.0;
    if (valid && ok) (*valid)[k] = 1;
  }
}

void Stencils::dx_transpose(const Field& seed, Field& acc) const {
  const std::size_t n = g_->size();
  if (acc.size() != n) acc.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = seed[k];
    if (s == 0.0) continue;
    apply_d1(&ext_[k * 4], k, 1, g_->hx,
             [&](std::size_t i, double c) { acc[i] += c * s; });
  }
}

void Stencils::dy_transpose(const Field& seed, Field& acc) const {
  const std::size_t n = g_->size();
  if (acc.size() != n) acc.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = seed[k];
    if (s == 0.0) continue;
    apply_d1(&ext_[k * 4 + 2], k, g_->nx, g_->hy,
             [&](std::size_t i, double c) { acc[i] += c * s; });
  }
}

void Stencils::laplace_transpose(const Field& seed, Field& acc) const {
  const std::size_t n = g_->size();
  if (acc.size() != n) acc.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = seed[k];
    if (s == 0.0) continue;
    // Mirror of laplace(): both axes must succeed for the row to exist.
    const auto noop = [](std::size_t, double) {};
    const bool okx = apply_d2(&ext_[k * 4], k, 1, g_->hx, noop);
    const bool oky = apply_d2(&ext_[k * 4 + 2], k, g_->nx, g_->hy, noop);
    if (!(okx && oky)) continue;
    apply_d2(&ext_[k * 4], k, 1, g_->hx,
             [&](std::size_t i, double c) { acc[i] += c * s; });
    apply_d2(&ext_[k * 4 + 2], k, g_->nx, g_->hy,
             [&](std::size_t i, double c) { acc[i] += c * s; });
  }
}

GradResult fd_grad(const Field& f, const Stencils& st) {
  GradResult r;
  std::vector<std::uint8_t> vx, vy;
  st.dx(f, r.fx, &vx);
  st.dy(f, r.fy, &vy);
  r.valid.resize(vx.size());
  for (std::size_t k = 0; k < vx.size(); ++k) r.valid[k] = vx[k] && vy[k];
  return r;
}

Field fd_laplace(const Field& f, const Stencils& st,
                 std::vector<std::uint8_t>* valid) {
  Field out;
  st.laplace(f, out, valid);
  return out;
}

Field fd_div(const Field& fx, const Field& fy, const Stencils& st,
             std::vector<std::uint8_t>* valid) {
  Field dxf, dyf;
  std::vector<std::uint8_t> vx, vy;
  st.dx(fx, dxf, &vx);
  st.dy(fy, dyf, &vy);
  if (valid) {
    valid->resize(vx.size());
    for (std::size_t k = 0; k < vx.size(); ++k) (*valid)[k] = vx[k] && vy[k];
  }
  for (std::size_t k = 0; k < dxf.size(); ++k) dxf[k] += dyf[k];
  return dxf;
}

double sample_bilinear(const Field& f, const Grid& g, Point2 p) {
  double x = std::clamp(p.x, g.box[0], g.box[1]);
  double y = std::clamp(p.y, g.box[2], g.box[3]);
  int i = std::clamp(static_cast<int>((x - g.box[0]) / g.hx), 0, g.nx - 2);
  int j = std::clamp(static_cast<int>((y - g.box[2]) / g.hy), 0, g.ny - 2);
  const double tx = (x - g.xs[i]) / g.hx;
  const double ty = (y - g.ys[j]) / g.hy;
  const double f00 = f[g.idx(i, j)], f10 = f[g.idx(i + 1, j)];
  const double f01 = f[g.idx(i, j + 1)], f11 = f[g.idx(i + 1, j + 1)];
  return (1 - tx) * (1 - ty) * f00 + tx * (1 - ty) * f10 +
         (1 - tx) * ty * f01 + tx * ty * f11;
}

NormalDerivative normal_derivative(const Field& f, const Grid& g, const Mask& m,
                                   const geom::DomainSpec& dom, int seg) {
  const NormalDerivativeOp op = normal_derivative_op(g, m, dom, seg);
  NormalDerivative out;
  out.nodes = op.nodes;
  out.value.reserve(op.nodes.size());
  for (std::size_t i = 0; i < op.nodes.size(); ++i)
    out.value.push_back(op.coef[i][0] * f[op.taps[i][0]] +
                        op.coef[i][1] * f[op.taps[i][1]] +
                        op.coef[i][2] * f[op.taps[i][2]]);
  return out;
}

NormalDerivativeOp normal_derivative_op(const Grid& g, const Mask& m,
                                        const geom::DomainSpec& dom, int seg) {
  const auto& sp = dom.segments[seg];
  if (!sp.is_line())
    throw geom::ConfigError(
        "normal_derivative: use normal_derivative_circle for closed curves");
  const Point2 mid = 0.5 * (sp.line().a + sp.line().b);
  const Point2 nin = geom::phi_bar(sp, mid).grad;  // constant inward normal
  const int di = std::abs(nin.x) > 0.5 ? (nin.x > 0 ? 1 : -1) : 0;
  const int dj = std::abs(nin.y) > 0.5 ? (nin.y > 0 ? 1 : -1) : 0;
  if (std::abs(std::abs(nin.x) + std::abs(nin.y) - 1.0) > 1e-12 ||
      (di != 0 && dj != 0))
    throw geom::ConfigError("normal_derivative: segment " + sp.name +
                            " is not axis-aligned");
  const double h = di != 0 ? g.hx : g.hy;
  const std::ptrdiff_t s = di != 0 ? di : dj * g.nx;

  NormalDerivativeOp out;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      const auto& c = m.cls[k];
      if (c.cls != geom::NodeClass::on_segment || c.segment != seg) continue;
      const int i2 = i + 2 * di, j2 = j + 2 * dj;
      if (i2 < 0 || i2 >= g.nx || j2 < 0 || j2 >= g.ny) continue;
      const std::size_t k1 = k + s, k2 = k + 2 * s;
      if (m.cls[k1].cls == geom::NodeClass::outside ||
          m.cls[k2].cls == geom::NodeClass::outside)
        continue;
      // Inward 3-point derivative, negated to the outward normal.
      out.nodes.push_back(k);
      out.taps.push_back({k, k1, k2});
      out.coef.push_back({3.0 / (2.0 * h), -4.0 / (2.0 * h), 1.0 / (2.0 * h)});
    }
  }
  return out;
}

std::vector<double> normal_derivative_circle(const Field& f, const Grid& g,
                                             const geom::DomainSpec& dom,
                                             int seg,
                                             const std::vector<double>& thetas) {
  const auto& sp = dom.segments[seg];
  const auto& c = sp.circle();
  const double h = std::min(g.hx, g.hy);
  const bool outside = c.domain_side == geom::Circle::Side::outside;
  const double step = (outside ? 1.0 : -1.0) * 2.0 * h;
  std::vector<double> out;
  out.reserve(thetas.size());
  for (double th : thetas) {
    const Point2 dir{std::cos(th), std::sin(th)};
    double s[3];
    for (int m = 1; m <= 3; ++m) {
      const Point2 p = c.center + (c.radius + m * step) * dir;
      s[m - 1] = sample_bilinear(f, g, p);
    }
    const double dudr = (-5.0 * s[0] + 8.0 * s[1] - 3.0 * s[2]) / (2.0 * step);
    out.push_back(outside ? -dudr : dudr);
  }
  return out;
}

// ---- structure evaluation ------------------------------------------------------

struct StructureEvaluator::NodeEval {
  const FieldFn* fn = nullptr;
  std::vector<int> kids;
  bool slot_dep = false;
  bool keep = false;                  // keep precomputed values after folding
  std::vector<std::uint8_t> needed;   // per context
  std::vector<Field> val;             // per context
  mutable std::vector<Field> adj;     // per context (backward scratch)
  int proj_ctx = -1;
};

namespace {

int context_of(EvalContexts& ctx, int seg) {
  for (std::size_t c = 0; c < ctx.proj_segment.size(); ++c)
    if (ctx.proj_segment[c] == seg) return static_cast<int>(c);
  ctx.proj_segment.push_back(seg);
  ctx.points.emplace_back();
  return static_cast<int>(ctx.points.size()) - 1;
}

}  // namespace

StructureEvaluator::StructureEvaluator(const structure::SolutionStructure& ss,
                                       const Grid& g, const Mask& m)
    : ss_(&ss), g_(&g), m_(&m), full_box_(g, m, MaskPolicy::full_box) {
  // Contexts: 0 = grid nodes, then one per projected segment in first-use order.
  ctx_.points.push_back(g.points());
  ctx_.proj_segment.push_back(-1);

  std::map<const FieldFn*, int> ids;
  std::function<int(const FieldPtr&)> visit = [&](const FieldPtr& p) -> int {
    auto it = ids.find(p.get());
    if (it != ids.end()) return it->second;
    auto ne = std::make_shared<NodeEval>();
    ne->fn = p.get();
    for (const auto& k : p->kids) ne->kids.push_back(visit(k));
    ne->slot_dep = p->op == FieldFn::Op::slot;
    for (int k : ne->kids) ne->slot_dep = ne->slot_dep || nodes_[k]->slot_dep;
    if (p->op == FieldFn::Op::proj)
      ne->proj_ctx = context_of(ctx_, p->seg);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(ne));
    ids[p.get()] = id;
    return id;
  };
  for (const auto& c : ss.components) roots_.push_back(visit(c));

  // Fill projected point sets.
  for (std::size_t c = 1; c < ctx_.points.size(); ++c) {
    const auto& seg = ss.domain.segments[ctx_.proj_segment[c]];
    ctx_.points[c].reserve(g.size());
    for (const auto& p : ctx_.points[0])
      ctx_.points[c].push_back(geom::project_line(seg, p));
  }

  // Needed flags, top-down (reverse topological order).
  const int nc = static_cast<int>(ctx_.points.size());
  for (auto& n : nodes_) n->needed.assign(nc, 0);
  for (int r : roots_) nodes_[r]->needed[0] = 1;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const auto& n = nodes_[i];
    for (int c = 0; c < nc; ++c) {
      if (!n->needed[c]) continue;
      if (n->fn->op == FieldFn::Op::proj) {
        if (c != 0)
          throw geom::ConfigError("nested projections are not supported");
        nodes_[n->kids[0]]->needed[n->proj_ctx] = 1;
      } else if (n->fn->op == FieldFn::Op::grad_x ||
                 n->fn->op == FieldFn::Op::grad_y ||
                 n->fn->op == FieldFn::Op::weight) {
        if (c != 0)
          throw geom::ConfigError(
              "gradient and weight nodes must be evaluated on the grid");
        for (int k : n->kids) nodes_[k]->needed[0] = 1;
      } else {
        for (int k : n->kids) nodes_[k]->needed[c] = 1;
      }
    }
  }
  for (auto& n : nodes_) n->val.resize(nc);

  // Keep slot-independent values that feed slot-dependent computations.
  for (const auto& n : nodes_)
    if (n->slot_dep)
      for (int k : n->kids)
        if (!nodes_[k]->slot_dep) nodes_[k]->keep = true;
  for (int r : roots_)
    if (!nodes_[r]->slot_dep) nodes_[r]->keep = true;

  set_parameters(0.0, 0.0);
}

int StructureEvaluator::n_slots() const { return ss_->n_slots(); }

SlotValues StructureEvaluator::zero_slots() const {
  SlotValues sv(ctx_.points.size());
  for (std::size_t c = 0; c < ctx_.points.size(); ++c)
    sv[c].assign(ss_->n_slots(), Field(ctx_.points[c].size(), 0.0));
  return sv;
}

std::vector<std::vector<std::uint8_t>> StructureEvaluator::slot_usage() const {
  std::vector<std::vector<std::uint8_t>> use(
      ctx_.points.size(), std::vector<std::uint8_t>(ss_->n_slots(), 0));
  for (const auto& n : nodes_) {
    if (n->fn->op != FieldFn::Op::slot) continue;
    for (std::size_t c = 0; c < ctx_.points.size(); ++c)
      if (n->needed[c]) use[c][n->fn->slot] = 1;
  }
  return use;
}

void StructureEvaluator::eval_node(NodeEval& n, int c,
                                   const SlotValues* slots) {
  const auto& pts = ctx_.points[c];
  const std::size_t np = pts.size();
  Field& out = n.val[c];
  const auto& dom = ss_->domain;
  const FieldFn& fn = *n.fn;
  auto kid = [&](int i) -> const Field& { return nodes_[n.kids[i]]->val[c]; };

  switch (fn.op) {
    case FieldFn::Op::constant:
      out.assign(np, fn.value);
      break;
    case FieldFn::Op::coord_x:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = pts[i].x;
      break;
    case FieldFn::Op::coord_y:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = pts[i].y;
      break;
    case FieldFn::Op::data: {
      const auto prog = expr::compile(fn.ex);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = prog.eval(pts[i].x, pts[i].y, alpha_, beta_);
      break;
    }
    case FieldFn::Op::phi:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi(dom.segments[fn.seg], pts[i]);
      break;
    case FieldFn::Op::phi_bar:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_bar(dom.segments[fn.seg], pts[i]).value;
      break;
    case FieldFn::Op::phibar_gx:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_bar(dom.segments[fn.seg], pts[i]).grad.x;
      break;
    case FieldFn::Op::phibar_gy:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_bar(dom.segments[fn.seg], pts[i]).grad.y;
      break;
    case FieldFn::Op::phitrue_gx:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_true_grad(dom.segments[fn.seg], pts[i]).x;
      break;
    case FieldFn::Op::phitrue_gy:
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_true_grad(dom.segments[fn.seg], pts[i]).y;
      break;
    case FieldFn::Op::phi_point: {
      const Point2 P = dom.intersections[fn.point].p;
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i)
        out[i] = geom::phi_point(P, pts[i]);
      break;
    }
    case FieldFn::Op::weight: {
      out.resize(np);
      const bool plain = fn.pw == 1;
      const auto pos = static_cast<std::size_t>(
          std::find(fn.subset.begin(), fn.subset.end(), fn.seg) -
          fn.subset.begin());
      for (std::size_t i = 0; i < np; ++i)
        out[i] =
            structure::weights_subset(dom, fn.subset, plain, pts[i],
                                      m_->cls[i])[pos];
      break;
    }
    case FieldFn::Op::slot:
      out = (*slots)[c][fn.slot];
      break;
    case FieldFn::Op::add: {
      const Field &a = kid(0), &b = kid(1);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = a[i] + b[i];
      break;
    }
    case FieldFn::Op::sub: {
      const Field &a = kid(0), &b = kid(1);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = a[i] - b[i];
      break;
    }
    case FieldFn::Op::mul: {
      const Field &a = kid(0), &b = kid(1);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = a[i] * b[i];
      break;
    }
    case FieldFn::Op::div: {
      const Field &a = kid(0), &b = kid(1);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) {
        if (b[i] == 0.0) {
          // Exact 0/0 only arises from corner-compatible interpolation
          // quotients whose removable limit is 0.
          if (a[i] != 0.0)
            throw geom::ConfigError("structure division by zero at (" +
                                    std::to_string(pts[i].x) + ", " +
                                    std::to_string(pts[i].y) + ")");
          out[i] = 0.0;
          continue;
        }
        out[i] = a[i] / b[i];
      }
      break;
    }
    case FieldFn::Op::neg: {
      const Field& a = kid(0);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) out[i] = -a[i];
      break;
    }
    case FieldFn::Op::prod: {
      out.assign(np, 1.0);
      for (std::size_t m = 0; m < n.kids.size(); ++m) {
        const Field& a = kid(static_cast<int>(m));
        for (std::size_t i = 0; i < np; ++i) out[i] *= a[i];
      }
      break;
    }
    case FieldFn::Op::ipow: {
      const Field& a = kid(0);
      out.resize(np);
      for (std::size_t i = 0; i < np; ++i) {
        double v = a[i];
        double r = v;
        for (int t = 1; t < fn.pw; ++t) r *= v;
        out[i] = r;
      }
      break;
    }
    case FieldFn::Op::grad_x:
      full_box_.dx(nodes_[n.kids[0]]->val[0], out, nullptr);
      break;
    case FieldFn::Op::grad_y:
      full_box_.dy(nodes_[n.kids[0]]->val[0], out, nullptr);
      break;
    case FieldFn::Op::proj:
      out = nodes_[n.kids[0]]->val[n.proj_ctx];
      break;
  }
}

void StructureEvaluator::set_parameters(double alpha, double beta) {
  alpha_ = alpha;
  beta_ = beta;
  // Evaluate every slot-independent node once; drop intermediates.
  for (const auto& n : nodes_) {
    if (n->slot_dep) continue;
    for (std::size_t c = 0; c < ctx_.points.size(); ++c)
      if (n->needed[c]) eval_node(*n, static_cast<int>(c), nullptr);
  }
  for (const auto& n : nodes_) {
    if (n->slot_dep || n->keep) continue;
    for (auto& v : n->val) {
      v.clear();
      v.shrink_to_fit();
    }
  }
}

const std::vector<Field>& StructureEvaluator::forward(const SlotValues& slots,
                                                      bool retain) {
  if (slots.size() != ctx_.points.size())
    throw geom::ConfigError("slot values: wrong number of contexts");
  for (std::size_t c = 0; c < slots.size(); ++c) {
    if (slots[c].size() != static_cast<std::size_t>(ss_->n_slots()))
      throw geom::ConfigError("slot values: wrong slot count");
    for (const auto& f : slots[c])
      if (f.size() != ctx_.points[c].size())
        throw geom::ConfigError("slot values: wrong sample count");
  }
  for (const auto& n : nodes_) {
    if (!n->slot_dep) continue;
    for (std::size_t c = 0; c < ctx_.points.size(); ++c)
      if (n->needed[c]) eval_node(*n, static_cast<int>(c), &slots);
  }
  out_.assign(roots_.size(), {});
  for (std::size_t r = 0; r < roots_.size(); ++r)
    out_[r] = nodes_[roots_[r]]->val[0];
  retained_ = retain;
  return out_;
}

SlotValues StructureEvaluator::backward(const std::vector<Field>& seeds) const {
  if (!retained_)
    throw geom::ConfigError("backward requires a preceding forward(retain)");
  if (seeds.size() != roots_.size())
    throw geom::ConfigError("backward: wrong seed count");
  const std::size_t nc = ctx_.points.size();
  for (const auto& n : nodes_) {
    n->adj.assign(nc, {});
    if (!n->slot_dep) continue;
    for (std::size_t c = 0; c < nc; ++c)
      if (n->needed[c]) n->adj[c].assign(ctx_.points[c].size(), 0.0);
  }
  for (std::size_t r = 0; r < roots_.size(); ++r) {
    const auto& n = nodes_[roots_[r]];
    if (!n->slot_dep) continue;
    for (std::size_t i = 0; i < seeds[r].size(); ++i)
      n->adj[0][i] += seeds[r][i];
  }

  SlotValues out(nc);
  for (std::size_t c = 0; c < nc; ++c)
    out[c].assign(ss_->n_slots(), Field(ctx_.points[c].size(), 0.0));

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const auto& n = nodes_[i];
    if (!n->slot_dep) continue;
    const FieldFn& fn = *n->fn;
    for (std::size_t c = 0; c < nc; ++c) {
      if (!n->needed[c] || n->adj[c].empty()) continue;
      const Field& a = n->adj[c];
      const std::size_t np = a.size();
      auto kadj = [&](int k, std::size_t ctx) -> Field& {
        return nodes_[n->kids[k]]->adj[ctx];
      };
      auto kval = [&](int k) -> const Field& {
        return nodes_[n->kids[k]]->val[c];
      };
      auto kdep = [&](int k) { return nodes_[n->kids[k]]->slot_dep; };

      switch (fn.op) {
        case FieldFn::Op::slot:
          for (std::size_t p = 0; p < np; ++p) out[c][fn.slot][p] += a[p];
          break;
        case FieldFn::Op::add:
          for (int k = 0; k < 2; ++k)
            if (kdep(k))
              for (std::size_t p = 0; p < np; ++p) kadj(k, c)[p] += a[p];
          break;
        case FieldFn::Op::sub:
          if (kdep(0))
            for (std::size_t p = 0; p < np; ++p) kadj(0, c)[p] += a[p];
          if (kdep(1))
            for (std::size_t p = 0; p < np; ++p) kadj(1, c)[p] -= a[p];
          break;
        case FieldFn::Op::neg:
          if (kdep(0))
            for (std::size_t p = 0; p < np; ++p) kadj(0, c)[p] -= a[p];
          break;
        case FieldFn::Op::mul:
          if (kdep(0)) {
            const Field& b = kval(1);
            for (std::size_t p = 0; p < np; ++p) kadj(0, c)[p] += a[p] * b[p];
          }
          if (kdep(1)) {
            const Field& b = kval(0);
            for (std::size_t p = 0; p < np; ++p) kadj(1, c)[p] += a[p] * b[p];
          }
          break;
        case FieldFn::Op::div: {
          const Field& den = kval(1);
          if (kdep(0))
            for (std::size_t p = 0; p < np; ++p)
              if (den[p] != 0.0) kadj(0, c)[p] += a[p] / den[p];
          if (kdep(1)) {
            const Field& num = kval(0);
            for (std::size_t p = 0; p < np; ++p)
              if (den[p] != 0.0)
                kadj(1, c)[p] -= a[p] * num[p] / (den[p] * den[p]);
          }
          break;
        }
        case FieldFn::Op::prod: {
          const std::size_t m = n->kids.size();
          // prefix[p] and suffix products around each factor.
          Field pre(np, 1.0);
          std::vector<Field> prefix(m);
          for (std::size_t k = 0; k < m; ++k) {
            prefix[k] = pre;
            const Field& v = kval(static_cast<int>(k));
            for (std::size_t p = 0; p < np; ++p) pre[p] *= v[p];
          }
          Field suf(np, 1.0);
          for (std::size_t k = m; k-- > 0;) {
            if (kdep(static_cast<int>(k))) {
              Field& ka = kadj(static_cast<int>(k), c);
              for (std::size_t p = 0; p < np; ++p)
                ka[p] += a[p] * prefix[k][p] * suf[p];
            }
            const Field& v = kval(static_cast<int>(k));
            for (std::size_t p = 0; p < np; ++p) suf[p] *= v[p];
          }
          break;
        }
        case FieldFn::Op::ipow: {
          const Field& v = kval(0);
          Field& ka = kadj(0, c);
          for (std::size_t p = 0; p < np; ++p) {
            double d = static_cast<double>(fn.pw);
            for (int t = 1; t < fn.pw; ++t) d *= v[p];
            ka[p] += a[p] * d;
          }
          break;
        }
        case FieldFn::Op::grad_x:
          full_box_.dx_transpose(a, kadj(0, 0));
          break;
        case FieldFn::Op::grad_y:
          full_box_.dy_transpose(a, kadj(0, 0));
          break;
        case FieldFn::Op::proj: {
          Field& ka = nodes_[n->kids[0]]->adj[n->proj_ctx];
          for (std::size_t p = 0; p < np; ++p) ka[p] += a[p];
          break;
        }
        default:
          break;  // leaves other than slot carry no adjoint
      }
    }
  }
  return out;
}

// ---- pointwise evaluation ---------------------------------------------------------

PointEvaluator::PointEvaluator(const structure::SolutionStructure& ss,
                               const Grid& backing, std::vector<SlotFn> slots,
                               double alpha, double beta)
    : ss_(&ss), g_(backing), slots_(std::move(slots)), alpha_(alpha),
      beta_(beta) {
  if (slots_.size() != static_cast<std::size_t>(ss.n_slots()))
    throw geom::ConfigError("point evaluator: wrong slot count");
}

std::vector<double> PointEvaluator::eval(Point2 p) const {
  std::vector<double> out;
  out.reserve(ss_->components.size());
  for (const auto& c : ss_->components) out.push_back(value(c, p, -1));
  return out;
}

Field PointEvaluator::node_grid_values(const structure::FieldPtr& n) const {
  Field f(g_.size());
  for (int j = 0; j < g_.ny; ++j)
    for (int i = 0; i < g_.nx; ++i)
      f[g_.idx(i, j)] = value(n, g_.point(i, j), -1);
  return f;
}

double PointEvaluator::value(const structure::FieldPtr& n, Point2 p,
                             int proj_seg) const {
  const auto& dom = ss_->domain;
  switch (n->op) {
    case FieldFn::Op::constant: return n->value;
    case FieldFn::Op::coord_x: return p.x;
    case FieldFn::Op::coord_y: return p.y;
    case FieldFn::Op::data:
      return expr::eval(n->ex, expr::Env::full(p.x, p.y, alpha_, beta_));
    case FieldFn::Op::phi: return geom::phi(dom.segments[n->seg], p);
    case FieldFn::Op::phi_bar: return geom::phi_bar(dom.segments[n->seg], p).value;
    case FieldFn::Op::phibar_gx:
      return geom::phi_bar(dom.segments[n->seg], p).grad.x;
    case FieldFn::Op::phibar_gy:
      return geom::phi_bar(dom.segments[n->seg], p).grad.y;
    case FieldFn::Op::phitrue_gx:
      return geom::phi_true_grad(dom.segments[n->seg], p).x;
    case FieldFn::Op::phitrue_gy:
      return geom::phi_true_grad(dom.segments[n->seg], p).y;
    case FieldFn::Op::phi_point:
      return geom::phi_point(dom.intersections[n->point].p, p);
    case FieldFn::Op::weight: {
      const auto cls = geom::classify(dom, p);
      const auto w = structure::weights_subset(dom, n->subset, n->pw == 1, p, cls);
      const auto pos = static_cast<std::size_t>(
          std::find(n->subset.begin(), n->subset.end(), n->seg) -
          n->subset.begin());
      return w[pos];
    }
    case FieldFn::Op::slot: return slots_[n->slot](p);
    case FieldFn::Op::add: return value(n->kids[0], p, proj_seg) + value(n->kids[1], p, proj_seg);
    case FieldFn::Op::sub: return value(n->kids[0], p, proj_seg) - value(n->kids[1], p, proj_seg);
    case FieldFn::Op::mul: return value(n->kids[0], p, proj_seg) * value(n->kids[1], p, proj_seg);
    case FieldFn::Op::div: {
      const double den = value(n->kids[1], p, proj_seg);
      if (den == 0.0) {
        const double num = value(n->kids[0], p, proj_seg);
        if (num != 0.0)
          throw geom::ConfigError(
              "structure division by zero in point evaluation");
        return 0.0;  // removable corner limit
      }
      return value(n->kids[0], p, proj_seg) / den;
    }
    case FieldFn::Op::neg: return -value(n->kids[0], p, proj_seg);
    case FieldFn::Op::prod: {
      double r = 1.0;
      for (const auto& k : n->kids) r *= value(k, p, proj_seg);
      return r;
    }
    case FieldFn::Op::ipow: {
      const double v = value(n->kids[0], p, proj_seg);
      double r = v;
      for (int t = 1; t < n->pw; ++t) r *= v;
      return r;
    }
    case FieldFn::Op::grad_x:
    case FieldFn::Op::grad_y: {
      auto it = grad_cache_.find(n->kids[0].get());
      if (it == grad_cache_.end()) {
        const Field base = node_grid_values(n->kids[0]);
        Mask full;  // full-box stencils ignore the mask contents
        full.cls.assign(g_.size(), {geom::NodeClass::inside, -1, -1});
        Stencils st(g_, full, MaskPolicy::full_box);
        std::pair<Field, Field> fxy;
        st.dx(base, fxy.first, nullptr);
        st.dy(base, fxy.second, nullptr);
        it = grad_cache_.emplace(n->kids[0].get(), std::move(fxy)).first;
      }
      const Field& f =
          n->op == FieldFn::Op::grad_x ? it->second.first : it->second.second;
      return sample_bilinear(f, g_, p);
    }
    case FieldFn::Op::proj:
      return value(n->kids[0],
                   geom::project_line(dom.segments[n->seg], p), n->seg);
  }
  throw geom::ConfigError("internal: unknown field op");
}

}  // namespace hardbc::grid
