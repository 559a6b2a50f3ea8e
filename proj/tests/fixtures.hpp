#pragma once
// Shared domain fixtures for tests: the three benchmark domains (delegating
// to the shipped problem definitions) plus small synthetic variants.

#include <string>
#include <vector>

#include "hardbc/bench.hpp"
#include "hardbc/expr.hpp"
#include "hardbc/geometry.hpp"

namespace fixtures {

using hardbc::expr::parse;
using namespace hardbc::geom;

inline BcRow dirichlet_row(const std::string& g, std::vector<double> b = {1.0}) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::dirichlet;
  r.g = parse(g);
  return r;
}

inline BcRow robin_row(const std::string& c, const std::string& h,
                       std::vector<double> b = {1.0}) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::robin;
  r.c = {parse(c)};
  r.h = parse(h);
  return r;
}

inline BcRow free_row(std::vector<double> b) {
  BcRow r;
  r.b = std::move(b);
  r.kind = BcKind::free;
  return r;
}

/// Unit square, homogeneous Neumann everywhere (scalar Poisson demo).
inline DomainSpec poisson_square() {
  return hardbc::bench::builtin_poisson().domain;
}

/// L-shaped Darcy domain at unit scale, mixed Dirichlet/Neumann/Robin.
inline DomainSpec darcy_lshape() {
  return hardbc::bench::builtin_darcy().domain;
}

/// Turek 2D-1 channel with cylinder, 3 components (u, v, p-tilde).
inline DomainSpec ns_turek() { return hardbc::bench::builtin_ns().domain; }

/// L-shape in the 4x-scaled coordinate frame (classification examples).
inline DomainSpec lshape_scaled4() {
  DomainSpec d;
  d.box = {0, 4, 0, 4};
  const Point2 A{0, 0}, B{4, 0}, C{4, 2}, D{2, 2}, E{2, 4}, F{0, 4};
  auto seg = [](const std::string& name, Point2 a, Point2 b) {
    SegmentSpec s;
    s.name = name;
    s.curve = Line{a, b};
    s.rows = {dirichlet_row("0")};
    return s;
  };
  d.segments = {seg("G1", F, A), seg("G2", A, B), seg("G3", B, C),
                seg("G4", C, D), seg("G5", D, E), seg("G6", E, F)};
  d.intersections = {{"A", A, {0, 1}}, {"B", B, {1, 2}}, {"C", C, {2, 3}},
                     {"D", D, {3, 4}}, {"E", E, {4, 5}}, {"F", F, {5, 0}}};
  return d;
}

/// Unit square with named per-edge scalar rows (for structure tests).
inline DomainSpec square_with_rows(BcRow bottom, BcRow right, BcRow top,
                                   BcRow left) {
  DomainSpec d;
  d.box = {0, 1, 0, 1};
  const Point2 A{0, 0}, B{1, 0}, C{1, 1}, D{0, 1};
  auto seg = [](const std::string& name, Point2 a, Point2 b, BcRow row) {
    SegmentSpec s;
    s.name = name;
    s.curve = Line{a, b};
    s.rows = {std::move(row)};
    return s;
  };
  d.segments = {seg("G1", A, B, std::move(bottom)), seg("G2", B, C, std::move(right)),
                seg("G3", C, D, std::move(top)), seg("G4", D, A, std::move(left))};
  d.intersections = {{"A", A, {3, 0}}, {"B", B, {0, 1}}, {"C", C, {1, 2}},
                     {"D", D, {2, 3}}};
  return d;
}

}  // namespace fixtures
