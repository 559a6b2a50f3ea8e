#include "hardbc/bench.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "hardbc/png.hpp"
#include "hardbc/verify_bc.hpp"

namespace hardbc::bench {

namespace {

using geom::BcKind;
using geom::BcRow;
using geom::Circle;
using geom::ConfigError;
using geom::DomainSpec;
using geom::Line;
using geom::Point2;
using geom::SegmentSpec;
using nlohmann::json;

constexpr double kPi = std::numbers::pi;

BcRow dirichlet_row(const std::string& g, std::vector<double> b = {1.0}) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::dirichlet;
  r.g = expr::parse(g);
  return r;
}

BcRow robin_row(const std::vector<std::string>& c, const std::string& h,
                std::vector<double> b = {1.0}) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::robin;
  for (const auto& ce : c) r.c.push_back(expr::parse(ce));
  r.h = expr::parse(h);
  return r;
}

BcRow free_row(std::vector<double> b) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::free;
  return r;
}

}  // namespace

// ---- problem specs -------------------------------------------------------------

std::string_view problem_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::poisson: return "poisson";
    case ProblemKind::darcy: return "darcy";
    case ProblemKind::ns: return "ns";
  }
  return "?";
}

ProblemKind problem_from_name(std::string_view s) {
  if (s == "poisson") return ProblemKind::poisson;
  if (s == "darcy") return ProblemKind::darcy;
  if (s == "ns" || s == "navier-stokes") return ProblemKind::ns;
  throw ConfigError("unknown problem: " + std::string(s));
}

ProblemSpec builtin_poisson() {
  ProblemSpec spec;
  spec.kind = ProblemKind::poisson;
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  const Point2 A{0, 0}, B{1, 0}, C{1, 1}, D{0, 1};
  auto seg = [](const std::string& name, Point2 a, Point2 b) {
    SegmentSpec s;
    s.name = name;
    s.curve = Line{a, b};
    s.rows = {robin_row({"0"}, "0")};
    return s;
  };
  d.segments = {seg("G1", A, B), seg("G2", B, C), seg("G3", C, D),
                seg("G4", D, A)};
  d.intersections = {{"A", A, {3, 0}}, {"B", B, {0, 1}}, {"C", C, {1, 2}},
                     {"D", D, {2, 3}}};
  spec.domain = std::move(d);
  spec.reference = {expr::parse("cos(pi*x)*cos(pi*y)")};
  spec.training = {51, 51, 1000, 2.5e-3, 200};
  return spec;
}

ProblemSpec builtin_darcy() {
  ProblemSpec spec;
  spec.kind = ProblemKind::darcy;
  spec.alpha = 2.0;
  spec.beta = 3.0;
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  const Point2 A{0, 0}, B{1, 0}, C{1, 0.5}, D{0.5, 0.5}, E{0.5, 1}, F{0, 1};
  auto seg = [](const std::string& name, Point2 a, Point2 b, BcRow row) {
    SegmentSpec s;
    s.name = name;
    s.curve = Line{a, b};
    s.rows = {std::move(row)};
    return s;
  };
  d.segments = {
      seg("G1", F, A, dirichlet_row("0")),
      seg("G2", A, B, dirichlet_row("sin(alpha*x)")),
      seg("G3", B, C, robin_row({"0"}, "alpha*cos(alpha)*cos(beta*y)")),
      seg("G4", C, D, robin_row({"0"}, "-beta*sin(alpha*x)*sin(beta/2)")),
      seg("G5", D, E,
          robin_row({"1"}, "(alpha*cos(alpha/2)+sin(alpha/2))*cos(beta*y)")),
      seg("G6", E, F,
          robin_row({"1"}, "(cos(beta)-beta*sin(beta))*sin(alpha*x)")),
  };
  d.intersections = {{"A", A, {0, 1}}, {"B", B, {1, 2}}, {"C", C, {2, 3}},
                     {"D", D, {3, 4}}, {"E", E, {4, 5}}, {"F", F, {5, 0}}};
  spec.domain = std::move(d);
  spec.reference = {expr::parse("sin(alpha*x)*cos(beta*y)")};
  spec.training = {101, 101, 1000, 2.5e-3, 200};
  return spec;
}

ProblemSpec builtin_ns() {
  ProblemSpec spec;
  spec.kind = ProblemKind::ns;
  spec.nu = 0.001;
  DomainSpec d;
  d.box = {0, 2.2, 0, 0.41};
  d.n_components = 3;
  d.component_names = {"u", "v", "p"};
  const Point2 A{0, 0}, B{2.2, 0}, C{2.2, 0.41}, D{0, 0.41};
  const std::vector<double> e1{1, 0, 0}, e2{0, 1, 0}, e3{0, 0, 1};

  auto noslip = [&](const std::string& name, geom::Curve curve) {
    SegmentSpec s;
    s.name = name;
    s.curve = std::move(curve);
    s.rows = {dirichlet_row("0", e1), dirichlet_row("0", e2), free_row(e3)};
    return s;
  };

  SegmentSpec g1;  // inflow: parabolic profile, Turek 2D-1 (Re = 20)
  g1.name = "G1";
  g1.curve = Line{D, A};
  g1.rows = {dirichlet_row("4*0.3*y*(0.41-y)/0.41^2", e1),
             dirichlet_row("0", e2), free_row(e3)};

  SegmentSpec g3;  // outflow: nu du/dn - n p = 0 with p = sqrt(nu) p_tilde
  g3.name = "G3";
  g3.curve = Line{B, C};
  g3.rows = {robin_row({"0", "0", "-1/sqrt(0.001)"}, "0", e1),
             robin_row({"0", "0", "0"}, "0", e2), free_row(e3)};

  SegmentSpec gs;
  gs.name = "GS";
  gs.curve = Circle{{0.2, 0.2}, 0.05, Circle::Side::outside};
  gs.rows = {dirichlet_row("0", e1), dirichlet_row("0", e2), free_row(e3)};

  d.segments = {g1, noslip("G2", Line{A, B}), g3, noslip("G4", Line{C, D}), gs};
  d.intersections = {{"A", A, {0, 1}}, {"B", B, {1, 2}}, {"C", C, {2, 3}},
                     {"D", D, {3, 0}}};
  spec.domain = std::move(d);
  spec.reference_csv = "data/ns_reference_221x42.csv";
  spec.training = {221, 42, 4000, 5e-3, 500};
  spec.full_nx = 441;
  spec.full_ny = 83;
  return spec;
}

// ---- JSON round trip -----------------------------------------------------------

namespace {

json point_json(Point2 p) { return json::array({p.x, p.y}); }

Point2 point_from(const json& j) { return {j.at(0), j.at(1)}; }

json row_json(const BcRow& r) {
  json j;
  j["b"] = r.b;
  switch (r.kind) {
    case BcKind::dirichlet:
      j["kind"] = "dirichlet";
      j["g"] = expr::to_string(r.g);
      break;
    case BcKind::robin: {
      j["kind"] = "robin";
      std::vector<std::string> c;
      for (const auto& ce : r.c) c.push_back(expr::to_string(ce));
      j["c"] = c;
      j["h"] = expr::to_string(r.h);
      break;
    }
    case BcKind::free:
      j["kind"] = "free";
      break;
  }
  return j;
}

BcRow row_from(const json& j) {
  BcRow r;
  r.b = j.at("b").get<std::vector<double>>();
  const std::string kind = j.at("kind");
  if (kind == "dirichlet") {
    r.kind = BcKind::dirichlet;
    r.g = expr::parse(j.at("g").get<std::string>());
  } else if (kind == "robin") {
    r.kind = BcKind::robin;
    for (const auto& ce : j.at("c")) r.c.push_back(expr::parse(ce.get<std::string>()));
    r.h = expr::parse(j.at("h").get<std::string>());
  } else if (kind == "free") {
    r.kind = BcKind::free;
  } else {
    throw ConfigError("problem spec: unknown row kind '" + kind + "'");
  }
  return r;
}

json domain_json(const DomainSpec& d) {
  json j;
  j["box"] = d.box;
  j["components"] = d.component_names;
  json segs = json::array();
  for (const auto& s : d.segments) {
    json js;
    js["name"] = s.name;
    if (s.is_line()) {
      js["line"] = {{"a", point_json(s.line().a)}, {"b", point_json(s.line().b)}};
    } else {
      const auto& c = s.circle();
      js["circle"] = {
          {"center", point_json(c.center)},
          {"radius", c.radius},
          {"side", c.domain_side == Circle::Side::outside ? "outside" : "inside"}};
    }
    if (s.vanishing_gradient) js["vanishing_gradient"] = true;
    json rows = json::array();
    for (const auto& r : s.rows) rows.push_back(row_json(r));
    js["rows"] = rows;
    segs.push_back(js);
  }
  j["segments"] = segs;
  json ints = json::array();
  for (const auto& p : d.intersections)
    ints.push_back({{"name", p.name}, {"p", point_json(p.p)},
                    {"segments", p.segments}});
  j["intersections"] = ints;
  return j;
}

DomainSpec domain_from(const json& j) {
  DomainSpec d;
  const auto box = j.at("box").get<std::vector<double>>();
  if (box.size() != 4) throw ConfigError("problem spec: box needs 4 entries");
  d.box = {box[0], box[1], box[2], box[3]};
  if (j.contains("components")) {
    d.component_names = j.at("components").get<std::vector<std::string>>();
    d.n_components = static_cast<int>(d.component_names.size());
  }
  for (const auto& js : j.at("segments")) {
    SegmentSpec s;
    s.name = js.at("name");
    if (js.contains("line")) {
      s.curve = Line{point_from(js.at("line").at("a")),
                     point_from(js.at("line").at("b"))};
    } else if (js.contains("circle")) {
      const auto& jc = js.at("circle");
      const std::string side = jc.at("side");
      if (side != "inside" && side != "outside")
        throw ConfigError("problem spec: circle side must be inside/outside");
      s.curve = Circle{point_from(jc.at("center")), jc.at("radius"),
                       side == "outside" ? Circle::Side::outside
                                         : Circle::Side::inside};
    } else {
      throw ConfigError("problem spec: segment '" + s.name +
                        "' needs a line or circle");
    }
    s.vanishing_gradient = js.value("vanishing_gradient", false);
    for (const auto& jr : js.at("rows")) s.rows.push_back(row_from(jr));
    d.segments.push_back(std::move(s));
  }
  for (const auto& ji : j.at("intersections")) {
    geom::IntersectionSpec p;
    p.name = ji.at("name");
    p.p = point_from(ji.at("p"));
    p.segments = ji.at("segments").get<std::vector<int>>();
    d.intersections.push_back(std::move(p));
  }
  return d;
}

}  // namespace

std::string dump_problem_spec(const ProblemSpec& spec) {
  json j;
  j["problem"] = std::string(problem_name(spec.kind));
  if (spec.kind == ProblemKind::darcy) {
    j["alpha"] = spec.alpha;
    j["beta"] = spec.beta;
  }
  if (spec.kind == ProblemKind::ns) j["nu"] = spec.nu;
  j["domain"] = domain_json(spec.domain);
  if (!spec.reference.empty()) {
    std::vector<std::string> refs;
    for (const auto& e : spec.reference) refs.push_back(expr::to_string(e));
    j["reference"] = refs;
  }
  if (!spec.reference_csv.empty()) j["reference_csv"] = spec.reference_csv;
  j["training"] = {{"grid", {spec.training.nx, spec.training.ny}},
                   {"epochs", spec.training.epochs},
                   {"lr0", spec.training.lr0},
                   {"milestone", spec.training.milestone}};
  if (spec.full_nx > 0) j["full_grid"] = {spec.full_nx, spec.full_ny};
  return j.dump(2) + "\n";
}

ProblemSpec load_problem_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("problem spec: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("problem spec " + path + ": " + e.what());
  }
  ProblemSpec spec;
  try {
    spec.kind = problem_from_name(j.at("problem").get<std::string>());
    spec.alpha = j.value("alpha", 0.0);
    spec.beta = j.value("beta", 0.0);
    spec.nu = j.value("nu", 0.0);
    spec.domain = domain_from(j.at("domain"));
    if (j.contains("reference"))
      for (const auto& s : j.at("reference"))
        spec.reference.push_back(expr::parse(s.get<std::string>()));
    spec.reference_csv = j.value("reference_csv", "");
    if (j.contains("training")) {
      const auto& jt = j.at("training");
      spec.training.nx = jt.at("grid").at(0);
      spec.training.ny = jt.at("grid").at(1);
      spec.training.epochs = jt.value("epochs", spec.training.epochs);
      spec.training.lr0 = jt.value("lr0", spec.training.lr0);
      spec.training.milestone = jt.value("milestone", spec.training.milestone);
    }
    if (j.contains("full_grid")) {
      spec.full_nx = j.at("full_grid").at(0);
      spec.full_ny = j.at("full_grid").at(1);
    }
  } catch (const json::exception& e) {
    throw ConfigError("problem spec " + path + ": " + e.what());
  }
  spec.domain.validate();
  if (!spec.reference.empty() &&
      static_cast<int>(spec.reference.size()) != spec.domain.n_components)
    throw ConfigError("problem spec: reference count != component count");
  return spec;
}

// ---- PDE residuals -------------------------------------------------------------

namespace {

Field residual_poisson_st(const Field& u, const Grid& g, const Mask& m,
                          const grid::Stencils& st,
                          std::vector<std::uint8_t>* valid) {
  Field lap;
  std::vector<std::uint8_t> lv;
  st.laplace(u, lap, &lv);
  Field out(g.size(), 0.0);
  if (valid) valid->assign(g.size(), 0);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (m.at(k).cls != geom::NodeClass::inside || !lv[k]) continue;
      out[k] = -lap[k] -
               2.0 * kPi * kPi * std::cos(kPi * g.xs[i]) * std::cos(kPi * g.ys[j]);
      if (valid) (*valid)[k] = 1;
    }
  }
  return out;
}

double darcy_a(double x, double y, double alpha, double beta) {
  return std::sin(alpha * x) * std::sin(beta * y);
}

}  // namespace

Field residual_poisson(const Field& u, const Grid& g, const Mask& m,
                       std::vector<std::uint8_t>* valid) {
  const grid::Stencils st(g, m, grid::MaskPolicy::inside_only);
  return residual_poisson_st(u, g, m, st, valid);
}

double darcy_rhs(double x, double y, double alpha, double beta) {
  return -0.5 * std::sin(2.0 * beta * y) *
         (alpha * alpha * std::cos(2.0 * alpha * x) +
          beta * beta * std::cos(2.0 * alpha * x) - beta * beta);
}

Field residual_darcy(const Field& u, const Grid& g, const Mask& m,
                     double alpha, double beta,
                     std::vector<std::uint8_t>* valid) {
  Field out(g.size(), 0.0);
  if (valid) valid->assign(g.size(), 0);
  const double ihx2 = 1.0 / (g.hx * g.hx), ihy2 = 1.0 / (g.hy * g.hy);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (m.at(k).cls != geom::NodeClass::inside) continue;
      if (i == 0 || i + 1 == g.nx || j == 0 || j + 1 == g.ny) continue;
      if (!m.usable(k - 1) || !m.usable(k + 1) || !m.usable(k - g.nx) ||
          !m.usable(k + g.nx))
        continue;
      const double x = g.xs[i], y = g.ys[j];
      const double aE = darcy_a(x + 0.5 * g.hx, y, alpha, beta);
      const double aW = darcy_a(x - 0.5 * g.hx, y, alpha, beta);
      const double aN = darcy_a(x, y + 0.5 * g.hy, alpha, beta);
      const double aS = darcy_a(x, y - 0.5 * g.hy, alpha, beta);
      const double flux =
          (aE * (u[k + 1] - u[k]) - aW * (u[k] - u[k - 1])) * ihx2 +
          (aN * (u[k + g.nx] - u[k]) - aS * (u[k] - u[k - g.nx])) * ihy2;
      out[k] = -flux - darcy_rhs(x, y, alpha, beta);
      if (valid) (*valid)[k] = 1;
    }
  }
  return out;
}

namespace {

/// All first/second derivative fields the NS residual and its transpose need.
struct NsParts {
  Field dxu, dyu, dxv, dyv, dxp, dyp, lapu, lapv;
  std::vector<std::uint8_t> vdxu, vdyu, vdxv, vdyv, vdxp, vdyp, vlapu, vlapv;
};

NsParts ns_parts(const Field& u, const Field& v, const Field& pt,
                 const grid::Stencils& st) {
  NsParts p;
  st.dx(u, p.dxu, &p.vdxu);
  st.dy(u, p.dyu, &p.vdyu);
  st.dx(v, p.dxv, &p.vdxv);
  st.dy(v, p.dyv, &p.vdyv);
  st.dx(pt, p.dxp, &p.vdxp);
  st.dy(pt, p.dyp, &p.vdyp);
  st.laplace(u, p.lapu, &p.vlapu);
  st.laplace(v, p.lapv, &p.vlapv);
  return p;
}

NsResidual ns_assemble(const Field& u, const Field& v, const NsParts& p,
                       const Grid& g, const Mask& m, double nu) {
  const double sq = std::sqrt(nu);
  const std::size_t n = g.size();
  NsResidual r;
  r.rx.assign(n, 0.0);
  r.ry.assign(n, 0.0);
  r.rdiv.assign(n, 0.0);
  r.valid_x.assign(n, 0);
  r.valid_y.assign(n, 0);
  r.valid_div.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    if (m.at(k).cls != geom::NodeClass::inside) continue;
    if (p.vlapu[k] && p.vdxu[k] && p.vdyu[k] && p.vdxp[k]) {
      r.rx[k] = -nu * p.lapu[k] + u[k] * p.dxu[k] + v[k] * p.dyu[k] +
                sq * p.dxp[k];
      r.valid_x[k] = 1;
    }
    if (p.vlapv[k] && p.vdxv[k] && p.vdyv[k] && p.vdyp[k]) {
      r.ry[k] = -nu * p.lapv[k] + u[k] * p.dxv[k] + v[k] * p.dyv[k] +
                sq * p.dyp[k];
      r.valid_y[k] = 1;
    }
    if (p.vdxu[k] && p.vdyv[k]) {
      r.rdiv[k] = p.dxu[k] + p.dyv[k];
      r.valid_div[k] = 1;
    }
  }
  return r;
}

}  // namespace

NsResidual residual_ns(const Field& u, const Field& v, const Field& pt,
                       const Grid& g, const Mask& m, double nu) {
  const grid::Stencils st(g, m, grid::MaskPolicy::inside_only);
  return ns_assemble(u, v, ns_parts(u, v, pt, st), g, m, nu);
}

// ---- differentiable losses -----------------------------------------------------

namespace {

double mean_sq(const Field& r, const std::vector<std::uint8_t>& valid,
               std::size_t* count = nullptr) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!valid[k]) continue;
    s += r[k] * r[k];
    ++n;
  }
  if (count) *count = n;
  return n ? s / static_cast<double>(n) : 0.0;
}

class PoissonLoss final : public train::PdeLoss {
public:
  PoissonLoss(const Grid& g, const Mask& m)
      : g_(&g), m_(&m), st_(g, m, grid::MaskPolicy::inside_only) {}

  double eval(const std::vector<Field>& fields,
              std::vector<Field>& seeds) override {
    std::vector<std::uint8_t> valid;
    const Field r = residual_poisson_st(fields[0], *g_, *m_, st_, &valid);
    std::size_t n = 0;
    const double loss = mean_sq(r, valid, &n);
    if (n == 0) return 0.0;
    Field s(r.size(), 0.0);
    for (std::size_t k = 0; k < r.size(); ++k)
      if (valid[k]) s[k] = -2.0 * r[k] / static_cast<double>(n);
    st_.laplace_transpose(s, seeds[0]);
    return loss;
  }

private:
  const Grid* g_;
  const Mask* m_;
  grid::Stencils st_;
};

class DarcyLoss final : public train::PdeLoss {
public:
  DarcyLoss(const Grid& g, const Mask& m, double alpha, double beta)
      : g_(&g), m_(&m), alpha_(alpha), beta_(beta) {}

  double eval(const std::vector<Field>& fields,
              std::vector<Field>& seeds) override {
    std::vector<std::uint8_t> valid;
    const Field r = residual_darcy(fields[0], *g_, *m_, alpha_, beta_, &valid);
    std::size_t n = 0;
    const double loss = mean_sq(r, valid, &n);
    if (n == 0) return 0.0;
    const Grid& g = *g_;
    const double ihx2 = 1.0 / (g.hx * g.hx), ihy2 = 1.0 / (g.hy * g.hy);
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const std::size_t k = g.idx(i, j);
        if (!valid[k]) continue;
        const double s = 2.0 * r[k] / static_cast<double>(n);
        const double x = g.xs[i], y = g.ys[j];
        const double aE = darcy_a(x + 0.5 * g.hx, y, alpha_, beta_);
        const double aW = darcy_a(x - 0.5 * g.hx, y, alpha_, beta_);
        const double aN = darcy_a(x, y + 0.5 * g.hy, alpha_, beta_);
        const double aS = darcy_a(x, y - 0.5 * g.hy, alpha_, beta_);
        // dr/du_k = (aE+aW)/hx^2 + (aN+aS)/hy^2, dr/du_nbr = -a_nbr/h^2
        seeds[0][k] += s * ((aE + aW) * ihx2 + (aN + aS) * ihy2);
        seeds[0][k + 1] -= s * aE * ihx2;
        seeds[0][k - 1] -= s * aW * ihx2;
        seeds[0][k + g.nx] -= s * aN * ihy2;
        seeds[0][k - g.nx] -= s * aS * ihy2;
      }
    }
    return loss;
  }

private:
  const Grid* g_;
  const Mask* m_;
  double alpha_, beta_;
};

class NsLoss final : public train::PdeLoss {
public:
  NsLoss(const Grid& g, const Mask& m, double nu)
      : g_(&g), m_(&m), nu_(nu), st_(g, m, grid::MaskPolicy::inside_only) {}

  double eval(const std::vector<Field>& fields,
              std::vector<Field>& seeds) override {
    const Field& u = fields[0];
    const Field& v = fields[1];
    const NsParts p = ns_parts(u, v, fields[2], st_);
    const NsResidual r = ns_assemble(u, v, p, *g_, *m_, nu_);
    std::size_t nx = 0, ny = 0, nd = 0;
    const double lx = mean_sq(r.rx, r.valid_x, &nx);
    const double ly = mean_sq(r.ry, r.valid_y, &ny);
    const double ld = mean_sq(r.rdiv, r.valid_div, &nd);

    const std::size_t n = u.size();
    Field sx(n, 0.0), sy(n, 0.0), sd(n, 0.0), tmp(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (r.valid_x[k]) sx[k] = 2.0 * r.rx[k] / static_cast<double>(nx);
      if (r.valid_y[k]) sy[k] = 2.0 * r.ry[k] / static_cast<double>(ny);
      if (r.valid_div[k]) sd[k] = 2.0 * r.rdiv[k] / static_cast<double>(nd);
    }
    const double sq = std::sqrt(nu_);

    // x-momentum: -nu lap u + u dxu + v dyu + sq dxp
    for (std::size_t k = 0; k < n; ++k) tmp[k] = -nu_ * sx[k];
    st_.laplace_transpose(tmp, seeds[0]);
    for (std::size_t k = 0; k < n; ++k) seeds[0][k] += p.dxu[k] * sx[k];
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] * sx[k];
    st_.dx_transpose(tmp, seeds[0]);
    for (std::size_t k = 0; k < n; ++k) seeds[1][k] += p.dyu[k] * sx[k];
    for (std::size_t k = 0; k < n; ++k) tmp[k] = v[k] * sx[k];
    st_.dy_transpose(tmp, seeds[0]);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = sq * sx[k];
    st_.dx_transpose(tmp, seeds[2]);

    // y-momentum: -nu lap v + u dxv + v dyv + sq dyp
    for (std::size_t k = 0; k < n; ++k) tmp[k] = -nu_ * sy[k];
    st_.laplace_transpose(tmp, seeds[1]);
    for (std::size_t k = 0; k < n; ++k) seeds[0][k] += p.dxv[k] * sy[k];
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] * sy[k];
    st_.dx_transpose(tmp, seeds[1]);
    for (std::size_t k = 0; k < n; ++k) seeds[1][k] += p.dyv[k] * sy[k];
    for (std::size_t k = 0; k < n; ++k) tmp[k] = v[k] * sy[k];
    st_.dy_transpose(tmp, seeds[1]);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = sq * sy[k];
    st_.dy_transpose(tmp, seeds[2]);

    // continuity: dxu + dyv
    st_.dx_transpose(sd, seeds[0]);
    st_.dy_transpose(sd, seeds[1]);

    return lx + ly + ld;
  }

private:
  const Grid* g_;
  const Mask* m_;
  double nu_;
  grid::Stencils st_;
};

}  // namespace

std::unique_ptr<train::PdeLoss> make_pde_loss(ProblemKind kind, const Grid& g,
                                              const Mask& m, double alpha,
                                              double beta, double nu) {
  switch (kind) {
    case ProblemKind::poisson: return std::make_unique<PoissonLoss>(g, m);
    case ProblemKind::darcy:
      return std::make_unique<DarcyLoss>(g, m, alpha, beta);
    case ProblemKind::ns: return std::make_unique<NsLoss>(g, m, nu);
  }
  throw ConfigError("make_pde_loss: unknown problem kind");
}

// ---- metrics and diagnostics ---------------------------------------------------

double l2_error(const Field& pred, const Field& ref, const Mask& m) {
  double se = 0.0, sr = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!m.usable(k)) continue;
    const double d = pred[k] - ref[k];
    se += d * d;
    sr += ref[k] * ref[k];
  }
  if (sr == 0.0) throw ConfigError("l2_error: zero reference norm");
  return std::sqrt(se / sr);
}

std::vector<std::pair<double, double>> sample_parameters(int n,
                                                         std::uint64_t seed,
                                                         double lo, double hi) {
  std::mt19937_64 rng(seed);
  const auto u01 = [&rng] {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = lo + (hi - lo) * u01();
    const double b = lo + (hi - lo) * u01();
    out.emplace_back(a, b);
  }
  return out;
}

Diagnostics compute_diagnostics(const Field& u, const Field& v,
                                const Field& pt, const Grid& g,
                                const geom::DomainSpec& dom, double nu) {
  int cseg = -1;
  for (std::size_t i = 0; i < dom.segments.size(); ++i)
    if (!dom.segments[i].is_line()) {
      cseg = static_cast<int>(i);
      break;
    }
  if (cseg < 0)
    throw ConfigError("compute_diagnostics: domain has no circle segment");
  const Circle& c = dom.segments[cseg].circle();
  const double R = c.radius;
  const double d = 2.0 * std::min(g.hx, g.hy);
  const double sq = std::sqrt(nu);

  // Surface pressure by radial quadratic extrapolation from R+d, R+2d, R+3d.
  const auto surface_p = [&](double theta) {
    const Point2 dir{std::cos(theta), std::sin(theta)};
    double f[3];
    for (int s = 1; s <= 3; ++s)
      f[s - 1] = grid::sample_bilinear(pt, g, c.center + (R + s * d) * dir);
    return sq * (3.0 * f[0] - 3.0 * f[1] + f[2]);
  };

  Diagnostics out;
  out.delta_p = surface_p(kPi) - surface_p(0.0);

  const int ns = 360;
  double fd = 0.0, fl = 0.0;
  for (int k = 0; k < ns; ++k) {
    const double th = 2.0 * kPi * k / ns;
    const Point2 n{std::cos(th), std::sin(th)};  // into the fluid
    const Point2 t{n.y, -n.x};
    double ut[2];
    for (int s = 1; s <= 2; ++s) {
      const Point2 p = c.center + (R + s * d) * n;
      ut[s - 1] = grid::sample_bilinear(u, g, p) * t.x +
                  grid::sample_bilinear(v, g, p) * t.y;
    }
    // One-sided derivative along +n anchored at the no-slip surface value 0.
    const double dutdn = (4.0 * ut[0] - ut[1]) / (2.0 * d);
    const double ps = surface_p(th);
    fd += nu * dutdn * n.y - ps * n.x;
    fl += -(nu * dutdn * n.x + ps * n.y);
  }
  const double ds = R * 2.0 * kPi / ns;
  fd *= ds;
  fl *= ds;
  const double ubar = 0.2;  // Turek 2D-1 mean inflow velocity
  const double diam = 2.0 * R;
  out.c_d = 2.0 * fd / (ubar * ubar * diam);
  out.c_l = 2.0 * fl / (ubar * ubar * diam);
  return out;
}

// ---- field I/O and rendering ---------------------------------------------------

void write_field_csv(const std::string& path, const Field& f, const Grid& g,
                     const Mask& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "x,y,value,usable\n";
  out.precision(17);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      out << g.xs[i] << ',' << g.ys[j] << ',' << f[k] << ','
          << (m.usable(k) ? 1 : 0) << "\n";
    }
}

namespace {

std::array<std::uint8_t, 3> viridis(double t) {
  static constexpr double stops[8][3] = {
      {68, 1, 84},    {70, 50, 127},  {54, 92, 141},  {39, 127, 142},
      {31, 161, 135}, {74, 194, 109}, {159, 218, 58}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 7.0;
  const int i = std::min(static_cast<int>(t), 6);
  const double w = t - i;
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<std::uint8_t>(
        std::lround((1.0 - w) * stops[i][c] + w * stops[i + 1][c]));
  return rgb;
}

}  // namespace

void write_heatmap_png(const std::string& path, const Field& f, const Grid& g,
                       const Mask& m) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!m.usable(k)) continue;
    if (first || f[k] < lo) lo = f[k];
    if (first || f[k] > hi) hi = f[k];
    first = false;
  }
  if (first || hi <= lo) hi = lo + 1.0;

  const int maxdim = std::max(g.nx, g.ny);
  const int scale = std::max(1, (440 + maxdim - 1) / maxdim);
  const int w = g.nx * scale, h = g.ny * scale;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3, 220);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (!m.usable(k)) continue;
      const auto col = viridis((f[k] - lo) / (hi - lo));
      for (int sj = 0; sj < scale; ++sj) {
        const int py = (g.ny - 1 - j) * scale + sj;  // top row = max y
        for (int si = 0; si < scale; ++si) {
          const std::size_t px =
              (static_cast<std::size_t>(py) * w + i * scale + si) * 3;
          rgb[px] = col[0];
          rgb[px + 1] = col[1];
          rgb[px + 2] = col[2];
        }
      }
    }
  }
  png::write_rgb(path, w, h, rgb);
}

std::vector<Field> load_ns_reference(const std::string& path, const Grid& g) {
  std::ifstream f(path);
  if (!f) throw ConfigError("reference: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("x,y,u,v,p", 0) != 0)
    throw ConfigError("reference: bad header in " + path);
  std::vector<Field> fields(3, Field(g.size(), 0.0));
  std::size_t k = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (k >= g.size())
      throw ConfigError("reference: too many rows in " + path);
    double x, y, u, v, p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &x, &y, &u, &v, &p) !=
        5)
      throw ConfigError("reference: malformed row in " + path);
    const int i = static_cast<int>(k) % g.nx, j = static_cast<int>(k) / g.nx;
    if (std::abs(x - g.xs[i]) > 1e-9 || std::abs(y - g.ys[j]) > 1e-9)
      throw ConfigError("reference: grid mismatch in " + path);
    fields[0][k] = u;
    fields[1][k] = v;
    fields[2][k] = p;
    ++k;
  }
  if (k != g.size())
    throw ConfigError("reference: row count mismatch in " + path);
  return fields;
}

// ---- orchestration -------------------------------------------------------------

namespace {

ProblemSpec resolve_spec(const RunOptions& opt) {
  if (!opt.spec_path.empty()) return load_problem_spec(opt.spec_path);
  switch (problem_from_name(opt.problem)) {
    case ProblemKind::poisson: return builtin_poisson();
    case ProblemKind::darcy: return builtin_darcy();
    case ProblemKind::ns: return builtin_ns();
  }
  throw ConfigError("unknown problem: " + opt.problem);
}

std::string csv_num(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

int run(const RunOptions& opt) {
  try {
    const ProblemSpec spec = resolve_spec(opt);
    int nx = spec.training.nx, ny = spec.training.ny;
    if (opt.full && spec.full_nx > 0) {
      nx = spec.full_nx;
      ny = spec.full_ny;
    }
    if (opt.nx > 0 && opt.ny > 0) {
      nx = opt.nx;
      ny = opt.ny;
    }
    const int epochs = opt.epochs > 0 ? opt.epochs : spec.training.epochs;
    const double lr0 = opt.lr0 > 0.0 ? opt.lr0 : spec.training.lr0;

    std::filesystem::create_directories(opt.out_dir);
    std::ofstream results(opt.out_dir + "/results.csv");
    results << "problem,mode,alpha,beta,seed,nx,ny,epochs,final_loss,"
               "l2_u,l2_v,l2_p,delta_p,c_d,c_l,wall_s\n";

    std::vector<std::pair<double, double>> pairs;
    if (spec.kind == ProblemKind::darcy && opt.pairs > 0)
      pairs = sample_parameters(opt.pairs, opt.seed, opt.pair_lo, opt.pair_hi);
    else
      pairs = {{spec.alpha, spec.beta}};

    const Grid g = Grid::make(nx, ny, spec.domain.box);
    const Mask mask = grid::build_mask(g, spec.domain);
    const auto ss = structure::build(opt.mode, spec.domain);
    const auto& names = spec.domain.component_names;

    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      const auto [alpha, beta] = pairs[pi];
      const auto pde = make_pde_loss(spec.kind, g, mask, alpha, beta, spec.nu);

      std::vector<Field> ref;
      if (!spec.reference.empty()) {
        for (const auto& e : spec.reference) {
          const auto prog = expr::compile(e);
          Field rf(g.size(), 0.0);
          for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
              rf[g.idx(i, j)] = prog.eval(g.xs[i], g.ys[j], alpha, beta);
          ref.push_back(std::move(rf));
        }
      } else if (!spec.reference_csv.empty()) {
        try {
          ref = load_ns_reference(spec.reference_csv, g);
          // The CSV stores physical pressure; the trained third component is
          // the scaled pressure p / sqrt(nu).
          if (ref.size() == 3 && spec.nu > 0.0)
            for (double& v : ref[2]) v /= std::sqrt(spec.nu);
        } catch (const ConfigError& e) {
          std::cerr << "note: reference unavailable (" << e.what()
                    << "); error columns will be blank\n";
        }
      }
      train::ErrorFn err;
      if (!ref.empty())
        err = [&ref, &mask](const std::vector<Field>& fields) {
          std::vector<double> es;
          for (std::size_t c = 0; c < ref.size(); ++c)
            es.push_back(l2_error(fields[c], ref[c], mask));
          return es;
        };

      train::TrainConfig cfg;
      cfg.epochs = epochs;
      cfg.lr0 = lr0;
      cfg.milestone = spec.training.milestone;
      cfg.seed = opt.seed;
      cfg.alpha = alpha;
      cfg.beta = beta;

      const auto t0 = std::chrono::steady_clock::now();
      const auto res = train::train(ss, g, mask, *pde, cfg, err);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();

      std::string rname = opt.problem + "_" +
                          std::string(structure::mode_name(opt.mode));
      if (pairs.size() > 1) rname += "_pair" + std::to_string(pi);
      const std::string dir = opt.out_dir + "/" + rname;
      std::filesystem::create_directories(dir);
      train::write_losses_csv(dir + "/losses.csv", res.report, names);
      for (int c = 0; c < spec.domain.n_components; ++c) {
        write_field_csv(dir + "/field_" + names[c] + ".csv", res.fields[c], g,
                        mask);
        write_heatmap_png(dir + "/field_" + names[c] + ".png", res.fields[c],
                          g, mask);
      }
      train::save_checkpoint(dir + "/checkpoint.bin", res.ansatz, ss.hash());

      std::vector<double> errs;
      if (!ref.empty())
        for (std::size_t c = 0; c < ref.size(); ++c)
          errs.push_back(l2_error(res.fields[c], ref[c], mask));

      Diagnostics diag;
      const bool is_ns = spec.kind == ProblemKind::ns;
      if (is_ns)
        diag = compute_diagnostics(res.fields[0], res.fields[1], res.fields[2],
                                   g, spec.domain, spec.nu);

      const bool is_darcy = spec.kind == ProblemKind::darcy;
      results << opt.problem << ',' << structure::mode_name(opt.mode) << ','
              << (is_darcy ? csv_num(alpha) : "") << ','
              << (is_darcy ? csv_num(beta) : "") << ',' << opt.seed << ',' << nx
              << ',' << ny << ',' << epochs << ','
              << csv_num(res.final_loss.total) << ','
              << (!errs.empty() ? csv_num(errs[0]) : "") << ','
              << (errs.size() > 1 ? csv_num(errs[1]) : "") << ','
              << (errs.size() > 2 ? csv_num(errs[2]) : "") << ','
              << (is_ns ? csv_num(diag.delta_p) : "") << ','
              << (is_ns ? csv_num(diag.c_d) : "") << ','
              << (is_ns ? csv_num(diag.c_l) : "") << ',' << csv_num(wall)
              << "\n";
      results.flush();

      std::cout << rname << ": final loss " << res.final_loss.total;
      if (!errs.empty()) {
        std::cout << ", rel l2";
        for (std::size_t c = 0; c < errs.size(); ++c)
          std::cout << ' ' << names[c] << '=' << errs[c];
      }
      if (is_ns)
        std::cout << ", delta_p=" << diag.delta_p << " c_d=" << diag.c_d
                  << " c_l=" << diag.c_l
                  << " (published reference 0.1175 / 5.5795 / 0.0106)";
      if (res.report.diverged) std::cout << "  [DIVERGED]";
      std::cout << " (" << wall << " s)\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run_verify(const RunOptions& opt) {
  try {
    const ProblemSpec spec = resolve_spec(opt);
    const auto ss = structure::build(opt.mode, spec.domain);
    structure::VerifyOptions vo;
    if (spec.kind == ProblemKind::ns)
      vo.grids = {{221, 42}, {441, 83}, {881, 165}};
    vo.alpha = spec.alpha != 0.0 ? spec.alpha : 2.0;
    vo.beta = spec.beta != 0.0 ? spec.beta : 3.0;
    const auto report = structure::verify_bc(ss, vo);
    std::cout << report.summary();
    return report.pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace hardbc::bench
