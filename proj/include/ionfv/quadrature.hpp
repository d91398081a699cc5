#pragma once

#include <array>
#include <functional>
#include <vector>

#include "ionfv/geometry.hpp"

namespace ionfv {

struct Mesh;  // mesh.hpp

enum class DomainKind { Triangle, Edge };

/// Fixed quadrature rule on the reference triangle (barycentric points,
/// weights summing to 1/2) or the reference edge [0,1] (weights summing to 1).
/// Rules are exact for polynomials up to `degree`.
struct QuadratureRule {
  DomainKind kind;
  int degree;
  std::vector<std::array<double, 3>> tri_points;  // barycentric, Triangle only
  std::vector<double> edge_points;                // t in [0,1], Edge only
  std::vector<double> weights;
};

/// Default degrees used by scheme-level cell means and edge dofs.
inline constexpr int kDefaultTriangleDegree = 8;
inline constexpr int kDefaultEdgeDegree = 9;
inline constexpr int kMaxQuadratureDegree = 30;

/// Returns a cached rule exact to the requested polynomial degree.
/// Throws std::invalid_argument for degree < 0 or degree > kMaxQuadratureDegree.
const QuadratureRule& get_rule(DomainKind kind, int degree);

/// Gauss-Legendre points/weights on [0,1] (exact to degree 2n-1).
void gauss_legendre_01(int n, std::vector<double>& points, std::vector<double>& weights);

using CellFn = std::function<double(Vec2)>;

double integrate_cell(const Mesh& mesh, int cell, const QuadratureRule& rule, const CellFn& f);
double integrate_edge(const Mesh& mesh, int edge, const QuadratureRule& rule, const CellFn& f);

/// L^p norm over a set of cells; `p = inf` (use lp_inf below) is evaluated as a
/// max over the per-cell sampling lattice, a documented lower approximation for
/// the piecewise-polynomial integrands it is applied to.
inline constexpr double lp_inf = -1.0;  // sentinel for the max-norm branch

double lp_norm(const Mesh& mesh, const std::vector<int>& cells, double p, const CellFn& f,
               int degree = kDefaultTriangleDegree);
double lp_norm_all(const Mesh& mesh, double p, const CellFn& f,
                   int degree = kDefaultTriangleDegree);

/// Max of |f| over the 4th-order barycentric lattice (15 points, includes the
/// triangle's vertices) of one cell.
double cell_lattice_max(const Mesh& mesh, int cell, const CellFn& f);
/// Min of f over the same lattice (used for positivity checks).
double cell_lattice_min(const Mesh& mesh, int cell, const CellFn& f);
/// Max of |f| over uniformly spaced points of an edge (endpoints included).
double edge_lattice_max(const Mesh& mesh, int edge, const CellFn& f, int samples = 9);

/// The 15 physical lattice points of a cell.
std::vector<Vec2> cell_lattice_points(const Mesh& mesh, int cell);

/// Jump and average of a (vector-valued) trace pair at a point of an edge,
/// exactly per the definitions used throughout: for an interior edge
/// jump = f_K.n_K + f_L.n_L and avg = (f_K + f_L)/2; for a boundary edge the
/// one-sided trace is used.
struct JumpAverage {
  double jump;
  Vec2 average;
};
JumpAverage edge_jump_average(Vec2 trace_K, Vec2 trace_L, bool boundary, Vec2 normal_K);

}  // namespace ionfv
