#pragma once
// Empirical boundary-condition verification: evaluates a solution structure
// with randomly drawn polynomial slot functions and checks that Dirichlet
// rows hold to rounding accuracy at boundary nodes (and at off-grid sample
// points of closed curves), and that Robin row residuals shrink at second
// order across a grid ladder.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hardbc/grid.hpp"
#include "hardbc/structure.hpp"

namespace hardbc::structure {

struct VerifyOptions {
  std::vector<std::pair<int, int>> grids{{51, 51}, {101, 101}, {201, 201}};
  int trials = 25;
  std::uint64_t seed = 1234;
  /// Fraction of a straight segment's length excluded at each end when
  /// measuring Robin residuals. Blending weights are smooth on open segments
  /// but their higher derivatives blow up approaching corners, so finite
  /// difference residuals converge only outside fixed corner neighborhoods.
  double corner_margin = 0.10;
  double dirichlet_tol = 1e-10;
  double robin_order_min = 1.9;   // required on the finest grid pair
  double coarse_order_min = 1.0;  // required on every coarser pair
  double alpha = 0.0, beta = 0.0;
  int circle_samples = 360;
};

struct RowReport {
  int seg = -1, row = -1;
  bool dirichlet = false;
  double max_residual = 0.0;   // over all grids / sample points / trials
  std::vector<double> ladder;  // Robin: max residual per ladder grid
  double order = 0.0;          // Robin: finest-pair convergence order
  int points = 0;              // nodes/samples inspected on the finest grid
};

struct VerifyReport {
  bool pass = false;
  double max_dirichlet_residual = 0.0;
  double min_robin_order = 99.0;
  std::vector<RowReport> rows;
  [[nodiscard]] std::string summary() const;
};

VerifyReport verify_bc(const SolutionStructure& ss, const VerifyOptions& opt = {});

/// Random dense polynomials of total degree <= 3 in box-normalized
/// coordinates (box mapped to [-1, 1]^2), coefficients U[-1, 1].
std::vector<grid::PointEvaluator::SlotFn> random_poly_slots(
    int n_slots, std::mt19937_64& rng, const std::array<double, 4>& box);

}  // namespace hardbc::structure
