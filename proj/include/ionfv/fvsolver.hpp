#pragma once

#include <Eigen/Sparse>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ionfv/mesh.hpp"

namespace ionfv {

using SpaceTimeFn = std::function<double(Vec2, double)>;

/// Model data for the cross-diffusion ion transport system. All species share
/// the charge z and diffusion coefficient D = 1.
struct ModelParams {
  int n_species = 1;
  double z = 0.0;      // charge (equal across species)
  double beta = 1.0;   // inverse thermal voltage
  double lambda = 1.0; // permittivity
  SpaceTimeFn permanent_charge;            // f(x) (t ignored); empty = 0
  std::vector<SpaceTimeFn> sources;        // s_i(x,t), i = 1..n; empty = none
  SpaceTimeFn potential_source;            // extra Poisson right-hand side

  /// The Poisson row is assembled only when it can contribute; for z = 0 with
  /// no charges/sources the potential decouples completely (and the row would
  /// be singular on pure-Neumann meshes), so it is skipped and Phi = 0.
  bool potential_enabled() const {
    return z != 0.0 || static_cast<bool>(permanent_charge) ||
           static_cast<bool>(potential_source);
  }
  void validate() const;
};

/// Constant-per-component Dirichlet data: species values (index 0 = solvent)
/// and the potential.
struct BoundaryData {
  std::vector<std::vector<double>> species;  // [component][0..n]
  std::vector<double> phi;                   // [component]
  void validate(int n_species, int component_count) const;
};

/// Cell values at one time level. u[0] is the solvent fraction, maintained as
/// u_0 = 1 - sum u_i exactly.
struct FVState {
  int step = 0;
  double time = 0.0;
  std::vector<std::vector<double>> u;  // [species 0..n][cell]
  std::vector<double> phi;

  void enforce_volume_filling();
};

struct Trajectory {
  std::vector<FVState> states;

  int last() const { return static_cast<int>(states.size()) - 1; }
  double time(int j) const { return states[j].time; }
  /// Step length of step j (the interval (t_{j-1}, t_j]), j >= 1.
  double tau(int j) const { return states[j].time - states[j - 1].time; }
};

/// (a-b)/(ln a - ln b) with a series branch near a = b; lies between min(a,b)
/// and max(a,b). Throws std::domain_error for non-positive arguments.
double log_mean(double a, double b);
/// Partial derivatives of log_mean, matching its near-equal branch.
void log_mean_derivatives(double a, double b, double& da, double& db);

/// Edge value u_{i,sigma}: Neumann copy / Dirichlet component constant /
/// log-mean on interior edges. `field` holds per-cell values of species i.
double edge_value(const Mesh& mesh, const std::vector<double>& field,
                  const std::vector<double>& dirichlet_values, int edge, int cell);

/// Two-point flux F_sigma^K(w) = (|sigma|/d_sigma)(w_K - w_L); Neumann 0;
/// Dirichlet (|sigma|/d_sigma)(w_K - w_D) with the component constant.
double tpfa_flux(const Mesh& mesh, const std::vector<double>& field,
                 const std::vector<double>& dirichlet_values, int edge, int cell);

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class SchemeAssembler;

/// Implicit cell-centered scheme for the coupled system. Unknowns per cell are
/// u_1..u_n (u_0 eliminated algebraically) plus Phi when the potential is
/// enabled.
class Scheme {
 public:
  Scheme(const Mesh& mesh, ModelParams params, BoundaryData boundary);
  ~Scheme();

  const Mesh& mesh() const { return mesh_; }
  const ModelParams& params() const { return params_; }
  const BoundaryData& boundary() const { return boundary_; }

  /// Dirichlet constants of species i (i = 0..n) per component, resp. of Phi.
  std::vector<double> dirichlet_species(int i) const;
  const std::vector<double>& dirichlet_phi() const { return boundary_.phi; }

  /// Cell means of the initial fields by triangle quadrature (degree 8);
  /// u_0 from the volume-filling identity; Phi^0 by solving the Poisson row.
  FVState project_initial(const std::vector<SpaceTimeFn>& initial_species) const;

  /// Initial values sampled at the collocation points (the TPFA-consistent
  /// choice: the scheme's unknowns approximate point values at x_K, and
  /// cell-mean data carries an O(1) discrete-Laplacian misfit into the
  /// step-0 estimators on meshes whose centroids sit off the circumcenters).
  FVState initial_state_at_collocation(const std::vector<SpaceTimeFn>& initial_species) const;

  /// Residual and exact analytic Jacobian of the implicit step system at the
  /// trial state. Rows/unknowns are blocked per cell: [u_1..u_n, (phi)].
  void assemble_step_system(const FVState& prev, const FVState& trial, double tau,
                            Eigen::VectorXd& residual, Eigen::SparseMatrix<double>& jacobian) const;
  void assemble_residual(const FVState& prev, const FVState& trial, double tau,
                         Eigen::VectorXd& residual) const;

  /// The independently assembled solvent equation (the scheme's summed form);
  /// one value per cell.
  std::vector<double> assemble_solvent_row(const FVState& prev, const FVState& trial,
                                           double tau) const;

  /// Damped Newton step: residual max-norm tolerance 1e-10, step halving until
  /// the iterate keeps all species strictly positive and the residual norm
  /// decreases, at most 50 iterations x 30 halvings.
  struct NewtonOptions {
    double tolerance = 1e-10;
    int max_iterations = 50;
    int max_halvings = 30;
  };
  FVState newton_advance(const FVState& prev, double tau, const NewtonOptions& opt) const;
  FVState newton_advance(const FVState& prev, double tau) const {
    return newton_advance(prev, tau, NewtonOptions{});
  }

  Trajectory run_trajectory(const FVState& initial, const std::vector<double>& times) const;

  int block_size() const { return params_.n_species + (params_.potential_enabled() ? 1 : 0); }
  int n_unknowns() const { return block_size() * static_cast<int>(mesh_.cells.size()); }

  /// Cell mean of a space-time function at time t (degree-8 quadrature).
  double cell_mean(int cell, const SpaceTimeFn& f, double t) const;

 private:
  FVState make_initial(const std::vector<SpaceTimeFn>& initial_species, bool at_collocation) const;

  const Mesh& mesh_;
  ModelParams params_;
  BoundaryData boundary_;
  std::vector<std::vector<double>> dirichlet_species_;  // [i][component]
};

}  // namespace ionfv
