#pragma once
// Solution structures: expression DAGs over geometric primitives, slot
// functions and finite-difference gradient nodes, assembled so that the
// configured boundary conditions hold exactly for ANY smooth slot functions
// (exact modes), or partially / not at all with penalty rows (semi-weak /
// weak modes).
//
// A structure is immutable after construction and safe to share across
// threads; evaluation state lives in grid::StructureEvaluator.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hardbc/expr.hpp"
#include "hardbc/geometry.hpp"

namespace hardbc::structure {

using geom::ConfigError;

struct FieldFn;
using FieldPtr = std::shared_ptr<const FieldFn>;

/// One node of the field DAG.
struct FieldFn {
  enum class Op : std::uint8_t {
    constant,      // value
    coord_x,       // x
    coord_y,       // y
    data,          // expression of (x, y, alpha, beta)
    phi,           // distance to segment `seg` (squared when flagged)
    phi_bar,       // normalized signed distance of segment `seg`
    phibar_gx,     // d(phi_bar)/dx (analytic)
    phibar_gy,     // d(phi_bar)/dy (analytic)
    phitrue_gx,    // zone-wise gradient of the true distance (legacy)
    phitrue_gy,
    phi_point,     // distance to intersection point `point`
    weight,        // transfinite weight of segment `seg` within `subset`
    slot,          // slot function value, index `slot`
    add, sub, mul, div, neg,
    prod,          // n-ary product
    ipow,          // kids[0] ^ ipow (integer >= 1)
    grad_x,        // FD x-derivative of kids[0] over the evaluation grid
    grad_y,        // FD y-derivative of kids[0]
    proj,          // kids[0] evaluated at the line-projected point N_seg(x)
  };

  Op op{};
  double value = 0.0;
  int seg = -1;
  int point = -1;
  int slot = -1;
  int pw = 1;
  expr::Expr ex;
  std::vector<int> subset;  // weight: participating segment indices (sorted)
  std::vector<FieldPtr> kids;
};

// ---- node constructors ------------------------------------------------------
FieldPtr f_const(double v);
FieldPtr f_x();
FieldPtr f_y();
FieldPtr f_data(expr::Expr e);
FieldPtr f_phi(int seg);
FieldPtr f_phi_bar(int seg);
FieldPtr f_phibar_gx(int seg);
FieldPtr f_phibar_gy(int seg);
FieldPtr f_phitrue_gx(int seg);
FieldPtr f_phitrue_gy(int seg);
FieldPtr f_phi_point(int point);
/// plain_mu forces weight exponent 1 for every subset member (semi-weak).
FieldPtr f_weight(int seg, std::vector<int> subset, bool plain_mu = false);
FieldPtr f_slot(int slot);
FieldPtr f_add(FieldPtr a, FieldPtr b);
FieldPtr f_sub(FieldPtr a, FieldPtr b);
FieldPtr f_mul(FieldPtr a, FieldPtr b);
FieldPtr f_div(FieldPtr a, FieldPtr b);
FieldPtr f_neg(FieldPtr a);
FieldPtr f_prod(std::vector<FieldPtr> kids);
FieldPtr f_ipow(FieldPtr a, int k);
FieldPtr f_grad_x(FieldPtr a);
FieldPtr f_grad_y(FieldPtr a);
/// Child must be free of proj / grad / weight nodes (checked).
FieldPtr f_proj(int seg, FieldPtr a);

[[nodiscard]] bool is_zero(const FieldPtr& p);
[[nodiscard]] bool depends_on_slots(const FieldPtr& p);

enum class Mode : std::uint8_t { glss, op, semi_weak, weak, legacy_sukumar };
[[nodiscard]] std::string_view mode_name(Mode m);
[[nodiscard]] Mode mode_from_name(std::string_view s);

/// A boundary-condition row enforced by penalty instead of by construction.
struct PenaltyRow {
  int seg = -1;
  int row = -1;
};

struct SolutionStructure {
  Mode mode = Mode::glss;
  geom::DomainSpec domain;
  std::vector<std::string> slot_names;
  std::vector<FieldPtr> components;  // one DAG root per solution component
  std::vector<PenaltyRow> penalty_rows;

  [[nodiscard]] int n_slots() const { return static_cast<int>(slot_names.size()); }
  [[nodiscard]] int n_components() const {
    return static_cast<int>(components.size());
  }
  /// Deterministic JSON debug dump (slot table + DAG).
  [[nodiscard]] std::string dump_json() const;
  /// FNV-1a hash of the dump (checkpoint compatibility stamp).
  [[nodiscard]] std::uint64_t hash() const;
};

struct BuildOptions {
  /// Include the corner interface term phi_A*phi_B*Psi_bar unconditionally
  /// (as opposed to the default span rule).
  bool psi_bar_always = false;
};

// ---- builders ----------------------------------------------------------------
SolutionStructure build_scalar_glss(const geom::DomainSpec& dom,
                                    const BuildOptions& opt = {});
SolutionStructure build_scalar_op(const geom::DomainSpec& dom,
                                  const BuildOptions& opt = {});
SolutionStructure build_system_glss(const geom::DomainSpec& dom,
                                    const BuildOptions& opt = {});
SolutionStructure build_system_op(const geom::DomainSpec& dom,
                                  const BuildOptions& opt = {});
SolutionStructure build_semi_weak(const geom::DomainSpec& dom);
SolutionStructure build_weak(const geom::DomainSpec& dom);
SolutionStructure build_legacy_sukumar(const geom::DomainSpec& dom);
/// Dispatch by mode and domain arity.
SolutionStructure build(Mode mode, const geom::DomainSpec& dom,
                        const BuildOptions& opt = {});

// ---- exposed construction helpers (unit-tested pieces of the builders) ------

/// Grows a named slot table; returns the new slot's index.
class SlotTable {
public:
  int add(std::string name);
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

private:
  std::vector<std::string> names_;
};

/// Dirichlet local: the data itself, plus phi_bar * fresh slot when the
/// segment's weight factor phi^mu has vanishing gradient on the segment.
FieldPtr local_dirichlet(const geom::DomainSpec& dom, int seg, SlotTable& slots);

/// GLSS Robin local for a scalar row:
///   u_i = psi - phi_bar * (grad phi_bar . grad psi) + phi_bar * (c*psi - h).
FieldPtr local_robin_glss(const geom::DomainSpec& dom, int seg, FieldPtr psi);

/// Scalar interface functions Psi_i for every non-Dirichlet segment
/// (corner-interpolated, with point slots shared across segments); entries for
/// Dirichlet segments are null.
std::vector<FieldPtr> resolve_intersections_scalar(const geom::DomainSpec& dom,
                                                   SlotTable& slots,
                                                   const BuildOptions& opt = {});

/// Transfinite interpolation weights at a point, including the boundary
/// bypass (on-segment -> unit vector, intersection -> chosen incident segment).
std::vector<double> weights(const geom::DomainSpec& dom, geom::Point2 p);

/// Weights restricted to a subset of segments (entries ordered like `subset`).
/// plain_mu forces exponent 1 regardless of the segments' mu. `cls` must be
/// the classification of p against dom.
std::vector<double> weights_subset(const geom::DomainSpec& dom,
                                   const std::vector<int>& subset, bool plain_mu,
                                   geom::Point2 p, const geom::Classification& cls);

/// Orthogonal projection onto the segment's line (the OP normalizer).
geom::Point2 normalizer(geom::Point2 p, const geom::SegmentSpec& seg);

}  // namespace hardbc::structure
