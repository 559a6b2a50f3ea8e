#pragma once
// Trainable ansatz and full-batch training loop: a small dense network
// produces every slot function of a solution structure, reverse mode chains
// loss gradients through the structure DAG and the FD stencils back to the
// network parameters, and Adam with a milestone-halving schedule updates them.
//
// The PDE-residual part of the loss is pluggable (see bench for the shipped
// Poisson / Darcy / Navier-Stokes residuals); the boundary-condition penalty
// part is assembled here from the structure's penalty rows (exact modes have
// none, semi-weak penalizes Robin rows, weak penalizes every non-free row).

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hardbc/grid.hpp"
#include "hardbc/structure.hpp"

namespace hardbc::train {

using grid::Field;

/// Differentiable mean-squared PDE residual over the grid: eval() returns the
/// loss value and ADDS its gradient with respect to the component fields into
/// `seeds` (one field per component, preallocated by the caller).
class PdeLoss {
public:
  virtual ~PdeLoss() = default;
  virtual double eval(const std::vector<Field>& fields,
                      std::vector<Field>& seeds) = 0;
};

/// Per-batch activation cache written by Ansatz::forward and read by
/// Ansatz::backward. act[l] is layer l's post-activation matrix, stored flat
/// column-major (width x n_points); act[0] holds the normalized inputs.
struct MlpCache {
  std::size_t n_points = 0;
  std::vector<std::vector<double>> act;
};

/// Dense network ansatz: 2 inputs (x, y affinely mapped to [-1,1]^2 from the
/// domain box), tanh hidden layers, linear outputs -- one per slot of the
/// target structure. All parameters live in one flat vector, layer by layer
/// (column-major weight matrix, then bias), Xavier-uniform initialized with
/// zero biases from a deterministic 53-bit mt19937_64 stream.
class Ansatz {
public:
  Ansatz(int n_outputs, const std::array<double, 4>& box, std::uint64_t seed,
         int hidden_layers = 4, int hidden_width = 64);

  [[nodiscard]] const std::vector<int>& layers() const { return layers_; }
  [[nodiscard]] int n_outputs() const { return layers_.back(); }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::array<double, 4> box() const { return box_; }
  [[nodiscard]] std::size_t n_params() const { return params_.size(); }
  [[nodiscard]] const std::vector<double>& params() const { return params_; }
  [[nodiscard]] std::vector<double>& params() { return params_; }

  /// Evaluates every output at a batch of points: out[slot][i] = value at
  /// pts[i] (resized here); intermediate activations land in `cache`.
  void forward(const std::vector<geom::Point2>& pts, MlpCache& cache,
               std::vector<Field>& out) const;
  /// Chains dL/d(outputs) through a cached batch and accumulates
  /// dL/d(params) into `grad` (must already have size n_params()).
  void backward(const MlpCache& cache, const std::vector<Field>& out_grads,
                std::vector<double>& grad) const;

private:
  std::vector<int> layers_;  // {2, width, ..., width, n_outputs}
  std::array<double, 4> box_{};
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
};

/// Standard Adam with bias correction.
class Adam {
public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(std::vector<double>& params, const std::vector<double>& grad,
            double lr);

private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainConfig {
  int epochs = 1000;
  double lr0 = 2.5e-3;
  int milestone = 200;  // learning rate halves every `milestone` epochs
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t seed = 0;
  double pde_weight = 1.0, bc_weight = 1.0;
  int hidden_layers = 4, hidden_width = 64;
  double alpha = 0.0, beta = 0.0;  // problem parameters bound into BC data
  double divergence_abort = 1e12;
};

/// Weighted loss contributions: `pde` and `bc` already include the configured
/// pde_weight / bc_weight factors, so total == pde + bc.
struct LossParts {
  double total = 0.0, pde = 0.0, bc = 0.0;
};

struct EpochRow {
  int epoch = 0;
  double loss_total = 0.0, loss_pde = 0.0, loss_bc = 0.0;
  std::vector<double> err_l2;  // per component; empty without a reference
};

struct LossReport {
  std::vector<EpochRow> rows;
  bool diverged = false;
};

/// Optional per-epoch error metric against a reference (one value per
/// component), evaluated on the current component fields.
using ErrorFn = std::function<std::vector<double>(const std::vector<Field>&)>;

struct TrainResult {
  Ansatz ansatz;
  LossReport report;
  std::vector<Field> fields;  // component fields at the final parameters
  LossParts final_loss;       // loss at the final parameters
};

/// One training run: owns the structure evaluator, the boundary-condition
/// penalty assembly, the ansatz and the Adam state.
class Trainer {
public:
  Trainer(const structure::SolutionStructure& ss, const grid::Grid& g,
          const grid::Mask& m, PdeLoss& pde, TrainConfig cfg);
  ~Trainer();  // out of line: Penalty is incomplete here

  /// Full loss at the current parameters. When `grad` is non-null it is
  /// resized to n_params and filled (not accumulated). Throws on a non-finite
  /// loss. Component fields stay accessible through fields().
  LossParts evaluate(std::vector<double>* grad);

  /// Full training loop; stops early (diverged flag) when the total loss
  /// exceeds cfg.divergence_abort.
  TrainResult run(const ErrorFn& err = {});

  [[nodiscard]] Ansatz& ansatz() { return ansatz_; }
  [[nodiscard]] const std::vector<Field>& fields() const { return fields_; }
  [[nodiscard]] const grid::StructureEvaluator& evaluator() const {
    return se_;
  }

private:
  struct Penalty;  // one penalized BC row, precompiled

  TrainConfig cfg_;
  PdeLoss* pde_;
  structure::SolutionStructure ss_;  // owned copy; se_ points into it
  grid::StructureEvaluator se_;
  std::vector<std::vector<std::uint8_t>> usage_;
  std::vector<std::uint8_t> ctx_used_;
  Ansatz ansatz_;
  Adam adam_;
  std::vector<Penalty> penalties_;
  std::size_t n_penalty_samples_ = 0;

  grid::SlotValues slots_;
  std::vector<MlpCache> caches_;
  std::vector<Field> fields_;
  std::vector<Field> seeds_;
};

/// Convenience wrapper: construct a Trainer and run it.
TrainResult train(const structure::SolutionStructure& ss, const grid::Grid& g,
                  const grid::Mask& m, PdeLoss& pde, const TrainConfig& cfg,
                  const ErrorFn& err = {});

/// losses.csv: epoch, loss_total, loss_pde, loss_bc, err_<component>...
void write_losses_csv(const std::string& path, const LossReport& report,
                      const std::vector<std::string>& components);

// ---- checkpoints -------------------------------------------------------------
// Layout: magic "HBC1", u32 header length, JSON header {layers, seed,
// structure_hash, n_params}, then the raw little-endian parameter doubles.

void save_checkpoint(const std::string& path, const Ansatz& a,
                     std::uint64_t structure_hash);

/// Throws geom::ConfigError on bad magic, malformed header, or (when
/// `expect_structure_hash` is nonzero) a structure-hash mismatch.
Ansatz load_checkpoint(const std::string& path,
                       const std::array<double, 4>& box,
                       std::uint64_t expect_structure_hash = 0);

}  // namespace hardbc::train
