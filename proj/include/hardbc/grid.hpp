#pragma once
// Uniform tensor grids over the domain bounding box, node classification
// masks, mask-aware finite-difference stencils, and evaluation of solution
// structures (forward values and reverse-mode gradients with respect to the
// slot-function samples).

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hardbc/geometry.hpp"
#include "hardbc/structure.hpp"

namespace hardbc::grid {

using geom::Point2;

struct Grid {
  int nx = 0, ny = 0;
  std::array<double, 4> box{};  // x0, x1, y0, y1
  double hx = 0.0, hy = 0.0;
  std::vector<double> xs, ys;

  static Grid make(int nx, int ny, const std::array<double, 4>& box);

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  }
  [[nodiscard]] std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(j) * nx + i;
  }
  [[nodiscard]] Point2 point(int i, int j) const { return {xs[i], ys[j]}; }
  [[nodiscard]] std::vector<Point2> points() const;
};

using Field = std::vector<double>;

/// Per-node classification of a grid against a domain.
struct Mask {
  std::vector<geom::Classification> cls;
  std::size_t n_inside = 0, n_outside = 0, n_boundary = 0;

  [[nodiscard]] const geom::Classification& at(std::size_t k) const {
    return cls[k];
  }
  [[nodiscard]] bool usable(std::size_t k) const {
    return cls[k].cls != geom::NodeClass::outside;
  }
};

Mask build_mask(const Grid& g, const geom::DomainSpec& dom);

/// Whether stencils may reach across nodes outside the domain.
enum class MaskPolicy : std::uint8_t {
  full_box,     // use every node of the bounding box
  inside_only,  // runs of non-outside nodes; a boundary node ends its run
};

/// Precomputed per-node, per-axis stencil reach. A first derivative needs
/// reach >= 2 on one side or >= 1 on both; a second derivative needs
/// (1,1), or 3 on one side. Nodes without enough reach are marked invalid.
class Stencils {
public:
  Stencils(const Grid& g, const Mask& m, MaskPolicy policy);

  /// d/dx and d/dy, second order (centered or 3-point one-sided).
  void dx(const Field& f, Field& out, std::vector<std::uint8_t>* valid) const;
  void dy(const Field& f, Field& out, std::vector<std::uint8_t>* valid) const;
  /// d2/dx2 + d2/dy2, second order (centered or 4-point one-sided).
  void laplace(const Field& f, Field& out,
               std::vector<std::uint8_t>* valid) const;
  /// Transpose of dx/dy: accumulates seed^T * D into `acc`.
  void dx_transpose(const Field& seed, Field& acc) const;
  void dy_transpose(const Field& seed, Field& acc) const;
  void laplace_transpose(const Field& seed, Field& acc) const;

  [[nodiscard]] const Grid& grid() const { return *g_; }
  /// Reach (capped at 3) toward -x, +x, -y, +y from node k.
  [[nodiscard]] std::array<std::uint8_t, 4> reach(std::size_t k) const;

private:
  const Grid* g_;
  std::vector<std::uint8_t> ext_;  // 4 entries per node: -x, +x, -y, +y
};

// Convenience wrappers used by losses and diagnostics.
struct GradResult {
  Field fx, fy;
  std::vector<std::uint8_t> valid;  // both components valid
};
GradResult fd_grad(const Field& f, const Stencils& st);
Field fd_laplace(const Field& f, const Stencils& st,
                 std::vector<std::uint8_t>* valid = nullptr);
Field fd_div(const Field& fx, const Field& fy, const Stencils& st,
             std::vector<std::uint8_t>* valid = nullptr);

/// Bilinear interpolation of a grid field (clamped to the box).
double sample_bilinear(const Field& f, const Grid& g, Point2 p);

/// Outward-normal derivative samples of a field on a straight segment:
/// one-sided 3-point difference into the domain at each on-segment node.
/// Nodes whose inward ray lacks two usable steps are skipped.
struct NormalDerivative {
  std::vector<std::size_t> nodes;  // grid indices of evaluated nodes
  std::vector<double> value;       // du/dn, n = outward
};
NormalDerivative normal_derivative(const Field& f, const Grid& g, const Mask& m,
                                   const geom::DomainSpec& dom, int seg);

/// Linear-operator form of normal_derivative (for reverse-mode penalties):
/// du/dn at nodes[i] = sum_t coef[i][t] * f[taps[i][t]], taps[i][0] = nodes[i].
struct NormalDerivativeOp {
  std::vector<std::size_t> nodes;
  std::vector<std::array<std::size_t, 3>> taps;
  std::vector<std::array<double, 3>> coef;
};
NormalDerivativeOp normal_derivative_op(const Grid& g, const Mask& m,
                                        const geom::DomainSpec& dom, int seg);

/// Outward-normal derivative of a field at circle boundary points, via
/// radial samples r = R + 2h, 4h, 6h (outside-domain circles sample inward
/// automatically through the signed offset).
std::vector<double> normal_derivative_circle(const Field& f, const Grid& g,
                                             const geom::DomainSpec& dom,
                                             int seg,
                                             const std::vector<double>& thetas);

// ---- structure evaluation -----------------------------------------------------

/// Slot sample sets: values[ctx][slot] is a flat array over the context's
/// points (context 0 = grid nodes; one extra context per projected segment).
using SlotValues = std::vector<std::vector<Field>>;

struct EvalContexts {
  std::vector<std::vector<Point2>> points;
  std::vector<int> proj_segment;  // -1 for context 0
};

/// Evaluates a solution structure over a grid. Slot-independent subtrees are
/// folded into constant fields at construction; forward/backward touch only
/// the slot-dependent remainder. Structure-internal gradient nodes use
/// full-box stencils; loss-side derivatives are taken by the caller with
/// inside-only stencils.
class StructureEvaluator {
public:
  StructureEvaluator(const structure::SolutionStructure& ss, const Grid& g,
                     const Mask& m);

  [[nodiscard]] const EvalContexts& contexts() const { return ctx_; }
  [[nodiscard]] int n_slots() const;
  [[nodiscard]] const structure::SolutionStructure& structure() const {
    return *ss_;
  }
  [[nodiscard]] SlotValues zero_slots() const;
  /// usage[ctx][slot]: whether a slot's samples are read in that context.
  [[nodiscard]] std::vector<std::vector<std::uint8_t>> slot_usage() const;

  /// Re-folds slot-independent subtrees for new problem parameters.
  void set_parameters(double alpha, double beta);

  /// Component fields on the grid.
  const std::vector<Field>& forward(const SlotValues& slots, bool retain = true);
  /// Reverse sweep: seeds[j] = dL/d(component j) on the grid; returns
  /// dL/d(slot samples), same shape as SlotValues.
  SlotValues backward(const std::vector<Field>& seeds) const;

private:
  struct NodeEval;  // defined in grid.cpp
  const structure::SolutionStructure* ss_;
  const Grid* g_;
  const Mask* m_;
  EvalContexts ctx_;
  Stencils full_box_;
  std::vector<std::shared_ptr<NodeEval>> nodes_;  // topological order
  std::vector<int> roots_;                        // node id per component
  std::vector<Field> out_;
  double alpha_ = 0.0, beta_ = 0.0;
  bool retained_ = false;

  void eval_node(NodeEval& n, int ctx, const SlotValues* slots);
};

/// Pointwise structure evaluation with functional slots (verification paths).
/// Gradient nodes are realized as bilinearly sampled full-box FD fields over
/// the backing grid.
class PointEvaluator {
public:
  using SlotFn = std::function<double(Point2)>;
  PointEvaluator(const structure::SolutionStructure& ss, const Grid& backing,
                 std::vector<SlotFn> slots, double alpha = 0.0,
                 double beta = 0.0);
  /// Values of all components at p.
  std::vector<double> eval(Point2 p) const;

private:
  const structure::SolutionStructure* ss_;
  Grid g_;
  std::vector<SlotFn> slots_;
  double alpha_ = 0.0, beta_ = 0.0;
  mutable std::map<const structure::FieldFn*, std::pair<Field, Field>> grad_cache_;
  double value(const structure::FieldPtr& n, Point2 p, int proj_seg) const;
  Field node_grid_values(const structure::FieldPtr& n) const;
};

}  // namespace hardbc::grid
