#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ionfv/fvsolver.hpp"
#include "ionfv/mesh.hpp"

namespace ionfv {

/// Conforming bubble-enriched piecewise polynomial: on each cell
/// w|_K = q + p * b_K with q, p linear and b_K = 27 l1 l2 l3 the element
/// bubble (value 1 at the barycenter). Coefficients are stored in the vertex
/// (barycentric) basis. Traces on edges are affine (b_K vanishes on them), so
/// shared vertex values make the global function C0.
struct MorleyFunction {
  const Mesh* mesh = nullptr;
  std::vector<std::array<double, 3>> q;
  std::vector<std::array<double, 3>> p;

  double value(int cell, Vec2 x) const;
  Vec2 gradient(int cell, Vec2 x) const;
  /// Quadratic per cell: Delta(q + p b_K) = p Delta b_K + 2 grad p . grad b_K.
  double laplacian(int cell, Vec2 x) const;
};

/// a*f + b*g on the shared mesh.
MorleyFunction morley_axpy(double a, const MorleyFunction& f, double b, const MorleyFunction& g);

enum class MorleyEval { Value, Gradient, Laplacian };

/// Point evaluation with cell lookup; throws std::domain_error if the point
/// lies outside all cells. Scalar results return in `scalar`, the gradient in
/// `vec`.
void evaluate_morley(const MorleyFunction& w, Vec2 point, MorleyEval what, double& scalar,
                     Vec2& vec);

struct UnisolvenceError : std::runtime_error {
  int cell;
  explicit UnisolvenceError(int cell_, const std::string& what)
      : std::runtime_error(what), cell(cell_) {}
};

using DirichletPin = std::function<double(int component)>;

/// Morley-type reconstruction with unweighted flux dofs: per cell the local
/// 6x6 system fixes the three vertex values (weighted interpolation of cell
/// values, or the Dirichlet pin) and the three edge normal-flux integrals
/// int_sigma dw/dn dS = target. `edge_flux_targets` holds one value per edge,
/// oriented with respect to edge.cell_K; the opposite side uses the negative
/// (conservativity is a precondition).
MorleyFunction reconstruct_potential_like(const Mesh& mesh, const VertexWeights& weights,
                                          const std::vector<double>& cell_values,
                                          const std::vector<double>& edge_flux_targets,
                                          const DirichletPin& dirichlet);

/// Same with u0-weighted flux rows int_sigma u0_hat dw/dn dS = target.
/// Requires u0_hat > 0 on every closed cell (checked on the sampling lattice);
/// a violation throws UnisolvenceError naming the cell.
MorleyFunction reconstruct_species(const Mesh& mesh, const VertexWeights& weights,
                                   const MorleyFunction& u0_hat,
                                   const std::vector<double>& cell_values,
                                   const std::vector<double>& edge_flux_targets,
                                   const DirichletPin& dirichlet);

/// Per-cell constant A^j: the discrete Laplacian of the initial solvent data
/// for j = 0, the negative time difference quotient for j > 0.
std::vector<double> discrete_A(const Scheme& scheme, const Trajectory& traj, int j);

/// Piecewise-linear-in-time sequence of Morley functions.
struct SpaceTimeReconstruction {
  const Mesh* mesh = nullptr;
  std::vector<double> times;
  std::vector<MorleyFunction> steps;

  bool empty() const { return steps.empty(); }
  /// Interval index j >= 1 with t in [t_{j-1}, t_j]; throws for t outside.
  int interval(double t) const;
  /// Interpolation weights (l_{j-1}, l_j) at t in interval j.
  std::pair<double, double> interpolation_weights(int j, double t) const;
  /// Materialized linear interpolant at time t.
  MorleyFunction at_time(double t) const;
  /// Constant-in-t time derivative on interval j: (step_j - step_{j-1})/tau_j.
  MorleyFunction time_derivative(int j) const;

  double value(double t, int cell, Vec2 x) const;
  Vec2 gradient(double t, int cell, Vec2 x) const;
};

/// The full reconstruction stack of a trajectory.
struct ReconstructionSet {
  SpaceTimeReconstruction u0;
  std::vector<SpaceTimeReconstruction> species;  // index i-1 for species i
  SpaceTimeReconstruction phi;                   // empty when the potential is off
  std::vector<std::vector<double>> A;            // [step][cell]
  bool has_potential = false;
};

ReconstructionSet build_reconstructions(const Scheme& scheme, const VertexWeights& weights,
                                        const Trajectory& traj);

}  // namespace ionfv
