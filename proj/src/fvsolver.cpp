#include "ionfv/fvsolver.hpp"

#include <Eigen/SparseLU>
#include <cmath>

#include "ionfv/quadrature.hpp"

namespace ionfv {

void ModelParams::validate() const {
  if (n_species < 1) throw std::invalid_argument("ModelParams: n_species must be >= 1");
  if (lambda <= 0.0) throw std::invalid_argument("ModelParams: lambda must be positive");
  if (beta <= 0.0) throw std::invalid_argument("ModelParams: beta must be positive");
  if (!sources.empty() && static_cast<int>(sources.size()) != n_species)
    throw std::invalid_argument("ModelParams: sources must have one entry per species");
}

void BoundaryData::validate(int n_species, int component_count) const {
  if (static_cast<int>(species.size()) != component_count)
    throw std::invalid_argument("BoundaryData: one species row per Dirichlet component required");
  for (const auto& row : species) {
    if (static_cast<int>(row.size()) != n_species + 1)
      throw std::invalid_argument("BoundaryData: species rows must hold v_0..v_n");
    double sum = 0.0;
    for (double v : row) {
      if (v < 0.0 || v > 1.0)
        throw std::invalid_argument("BoundaryData: species values must lie in [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("BoundaryData: boundary values must sum to 1 (volume filling)");
  }
  if (!phi.empty() && static_cast<int>(phi.size()) != component_count)
    throw std::invalid_argument("BoundaryData: phi must have one value per component");
}

void FVState::enforce_volume_filling() {
  for (size_t k = 0; k < u[0].size(); ++k) {
    double s = 0.0;
    for (size_t i = 1; i < u.size(); ++i) s += u[i][k];
    u[0][k] = 1.0 - s;
  }
}

namespace {
constexpr double kLogMeanSwitch = 1e-10;  // |a-b| <= switch*max(a,b) -> series
}

double log_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) throw std::domain_error("log_mean: arguments must be positive");
  double d = a - b;
  if (std::abs(d) <= kLogMeanSwitch * std::max(a, b)) {
    double m = 0.5 * (a + b);
    return m - d * d / (12.0 * m);
  }
  return d / (std::log(a) - std::log(b));
}

void log_mean_derivatives(double a, double b, double& da, double& db) {
  if (a <= 0.0 || b <= 0.0) throw std::domain_error("log_mean: arguments must be positive");
  double d = a - b;
  if (std::abs(d) <= kLogMeanSwitch * std::max(a, b)) {
    double m = 0.5 * (a + b);
    da = 0.5 - d / (6.0 * m);
    db = 0.5 + d / (6.0 * m);
    return;
  }
  double L = std::log(a) - std::log(b);
  da = (L - d / a) / (L * L);
  db = (-L + d / b) / (L * L);
}

double edge_value(const Mesh& mesh, const std::vector<double>& field,
                  const std::vector<double>& dirichlet_values, int edge, int cell) {
  const Edge& e = mesh.edges[edge];
  switch (e.kind) {
    case EdgeKind::Neumann:
      return field[cell];
    case EdgeKind::Dirichlet:
      return dirichlet_values[e.dirichlet_component];
    case EdgeKind::Interior:
      return log_mean(field[cell], field[mesh.neighbor(edge, cell)]);
    default:
      throw std::logic_error("edge_value: untagged boundary edge");
  }
}

double tpfa_flux(const Mesh& mesh, const std::vector<double>& field,
                 const std::vector<double>& dirichlet_values, int edge, int cell) {
  const Edge& e = mesh.edges[edge];
  double t = e.length / e.d_sigma;
  switch (e.kind) {
    case EdgeKind::Neumann:
      return 0.0;
    case EdgeKind::Dirichlet:
      return t * (field[cell] - dirichlet_values[e.dirichlet_component]);
    case EdgeKind::Interior:
      return t * (field[cell] - field[mesh.neighbor(edge, cell)]);
    default:
      throw std::logic_error("tpfa_flux: untagged boundary edge");
  }
}

Scheme::Scheme(const Mesh& mesh, ModelParams params, BoundaryData boundary)
    : mesh_(mesh), params_(std::move(params)), boundary_(std::move(boundary)) {
  params_.validate();
  boundary_.validate(params_.n_species, mesh_.dirichlet_component_count);
  if (boundary_.phi.empty()) boundary_.phi.assign(mesh_.dirichlet_component_count, 0.0);
  dirichlet_species_.resize(params_.n_species + 1);
  for (int i = 0; i <= params_.n_species; ++i) {
    dirichlet_species_[i].resize(mesh_.dirichlet_component_count);
    for (int c = 0; c < mesh_.dirichlet_component_count; ++c)
      dirichlet_species_[i][c] = boundary_.species[c][i];
  }
}

Scheme::~Scheme() = default;

std::vector<double> Scheme::dirichlet_species(int i) const { return dirichlet_species_[i]; }

double Scheme::cell_mean(int cell, const SpaceTimeFn& f, double t) const {
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  return integrate_cell(mesh_, cell, rule, [&](Vec2 x) { return f(x, t); }) /
         mesh_.cells[cell].area;
}

namespace {

struct EdgeScratch {
  // Edge quantity y with partial derivatives with respect to the cell values
  // of one field on both sides.
  double value = 0.0;
  double dK = 0.0;
  double dL = 0.0;
};

EdgeScratch edge_value_d(const Mesh& mesh, const std::vector<double>& field,
                         const std::vector<double>& dirichlet, int edge, int K) {
  const Edge& e = mesh.edges[edge];
  EdgeScratch s;
  switch (e.kind) {
    case EdgeKind::Neumann:
      s.value = field[K];
      s.dK = 1.0;
      break;
    case EdgeKind::Dirichlet:
      s.value = dirichlet[e.dirichlet_component];
      break;
    default: {
      int L = mesh.neighbor(edge, K);
      s.value = log_mean(field[K], field[L]);
      log_mean_derivatives(field[K], field[L], s.dK, s.dL);
    }
  }
  return s;
}

EdgeScratch tpfa_flux_d(const Mesh& mesh, const std::vector<double>& field,
                        const std::vector<double>& dirichlet, int edge, int K) {
  const Edge& e = mesh.edges[edge];
  double t = e.length / e.d_sigma;
  EdgeScratch s;
  switch (e.kind) {
    case EdgeKind::Neumann:
      break;
    case EdgeKind::Dirichlet:
      s.value = t * (field[K] - dirichlet[e.dirichlet_component]);
      s.dK = t;
      break;
    default:
      s.value = t * (field[K] - field[mesh.neighbor(edge, K)]);
      s.dK = t;
      s.dL = -t;
  }
  return s;
}

}  // namespace

void Scheme::assemble_residual(const FVState& prev, const FVState& trial, double tau,
                               Eigen::VectorXd& residual) const {
  Eigen::SparseMatrix<double> scratch;
  assemble_step_system(prev, trial, tau, residual, scratch);
}

void Scheme::assemble_step_system(const FVState& prev, const FVState& trial, double tau,
                                  Eigen::VectorXd& residual,
                                  Eigen::SparseMatrix<double>& jacobian) const {
  const int n = params_.n_species;
  const bool pot = params_.potential_enabled();
  const int B = block_size();
  const int ncell = static_cast<int>(mesh_.cells.size());
  const double bz = params_.beta * params_.z;
  const double lam2 = params_.lambda * params_.lambda;

  for (int i = 0; i <= n; ++i)
    for (int K = 0; K < ncell; ++K)
      if (trial.u[i][K] <= 0.0)
        throw SolverError("assemble_step_system: non-positive species value (species " +
                          std::to_string(i) + ", cell " + std::to_string(K) + ")");

  residual.setZero(n_unknowns());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(n_unknowns()) * (B + 4));

  auto idx = [&](int cell, int comp) { return cell * B + comp; };  // comp n = phi

  // --- edge fluxes -------------------------------------------------------
  for (int ei = 0; ei < static_cast<int>(mesh_.edges.size()); ++ei) {
    const Edge& e = mesh_.edges[ei];
    if (e.kind == EdgeKind::Neumann) continue;  // all fluxes vanish
    int K = e.cell_K;
    int L = e.cell_L;  // -1 on Dirichlet edges
    bool interior = !e.boundary();

    EdgeScratch u0s = edge_value_d(mesh_, trial.u[0], dirichlet_species_[0], ei, K);
    EdgeScratch F0 = tpfa_flux_d(mesh_, trial.u[0], dirichlet_species_[0], ei, K);
    EdgeScratch Fphi;
    if (pot) Fphi = tpfa_flux_d(mesh_, trial.phi, boundary_.phi, ei, K);

    // Poisson row: + lambda^2 F_K(phi) on K, mirrored on L.
    if (pot) {
      residual[idx(K, n)] += lam2 * Fphi.value;
      trips.emplace_back(idx(K, n), idx(K, n), lam2 * Fphi.dK);
      if (interior) {
        trips.emplace_back(idx(K, n), idx(L, n), lam2 * Fphi.dL);
        residual[idx(L, n)] -= lam2 * Fphi.value;
        trips.emplace_back(idx(L, n), idx(K, n), -lam2 * Fphi.dK);
        trips.emplace_back(idx(L, n), idx(L, n), -lam2 * Fphi.dL);
      }
    }

    for (int i = 1; i <= n; ++i) {
      EdgeScratch uis = edge_value_d(mesh_, trial.u[i], dirichlet_species_[i], ei, K);
      EdgeScratch Fi = tpfa_flux_d(mesh_, trial.u[i], dirichlet_species_[i], ei, K);

      // G = u0s*F(u_i) - uis*F(u_0) + beta*z*u0s*uis*F(phi)
      double G = u0s.value * Fi.value - uis.value * F0.value;
      if (pot) G += bz * u0s.value * uis.value * Fphi.value;

      residual[idx(K, i - 1)] += G;
      if (interior) residual[idx(L, i - 1)] -= G;

      // derivatives w.r.t. u_m (m = 1..n) on both sides; u_0 carries -1 per species
      for (int m = 1; m <= n; ++m) {
        double dK = -u0s.dK * Fi.value - uis.value * (-F0.dK);
        if (pot) dK += bz * (-u0s.dK) * uis.value * Fphi.value;
        if (m == i) {
          dK += u0s.value * Fi.dK + uis.dK * (-F0.value);
          if (pot) dK += bz * u0s.value * uis.dK * Fphi.value;
        }
        if (dK != 0.0) {
          trips.emplace_back(idx(K, i - 1), idx(K, m - 1), dK);
          if (interior) trips.emplace_back(idx(L, i - 1), idx(K, m - 1), -dK);
        }
        if (interior) {
          double dL = -u0s.dL * Fi.value - uis.value * (-F0.dL);
          if (pot) dL += bz * (-u0s.dL) * uis.value * Fphi.value;
          if (m == i) {
            dL += u0s.value * Fi.dL + uis.dL * (-F0.value);
            if (pot) dL += bz * u0s.value * uis.dL * Fphi.value;
          }
          if (dL != 0.0) {
            trips.emplace_back(idx(K, i - 1), idx(L, m - 1), dL);
            trips.emplace_back(idx(L, i - 1), idx(L, m - 1), -dL);
          }
        }
      }
      if (pot) {
        double c = bz * u0s.value * uis.value;
        trips.emplace_back(idx(K, i - 1), idx(K, n), c * Fphi.dK);
        if (interior) {
          trips.emplace_back(idx(K, i - 1), idx(L, n), c * Fphi.dL);
          trips.emplace_back(idx(L, i - 1), idx(K, n), -c * Fphi.dK);
          trips.emplace_back(idx(L, i - 1), idx(L, n), -c * Fphi.dL);
        }
      }
    }
  }

  // --- cell terms ---------------------------------------------------------
  const double t_new = prev.time + tau;
  for (int K = 0; K < ncell; ++K) {
    double area = mesh_.cells[K].area;
    for (int i = 1; i <= n; ++i) {
      double src = 0.0;
      if (!params_.sources.empty() && params_.sources[i - 1])
        src = cell_mean(K, params_.sources[i - 1], t_new);
      residual[idx(K, i - 1)] += area * (trial.u[i][K] - prev.u[i][K]) / tau - area * src;
      trips.emplace_back(idx(K, i - 1), idx(K, i - 1), area / tau);
    }
    if (pot) {
      double rhs = params_.z * (1.0 - trial.u[0][K]);
      if (params_.permanent_charge) rhs += cell_mean(K, params_.permanent_charge, t_new);
      if (params_.potential_source) rhs += cell_mean(K, params_.potential_source, t_new);
      residual[idx(K, n)] -= area * rhs;
      // d(1-u0)/du_m = +1
      for (int m = 1; m <= n; ++m)
        trips.emplace_back(idx(K, n), idx(K, m - 1), -area * params_.z);
    }
  }

  jacobian.resize(n_unknowns(), n_unknowns());
  jacobian.setFromTriplets(trips.begin(), trips.end());
}

std::vector<double> Scheme::assemble_solvent_row(const FVState& prev, const FVState& trial,
                                                 double tau) const {
  const int n = params_.n_species;
  const bool pot = params_.potential_enabled();
  const double t_new = prev.time + tau;
  std::vector<double> rows(mesh_.cells.size(), 0.0);
  for (int K = 0; K < static_cast<int>(mesh_.cells.size()); ++K) {
    double area = mesh_.cells[K].area;
    double r = area * (trial.u[0][K] - prev.u[0][K]) / tau;
    for (int k = 0; k < 3; ++k) {
      int ei = mesh_.cells[K].edges[k];
      double F0 = tpfa_flux(mesh_, trial.u[0], dirichlet_species_[0], ei, K);
      double u0s = edge_value(mesh_, trial.u[0], dirichlet_species_[0], ei, K);
      double weight = u0s;
      double zsum = 0.0;
      for (int i = 1; i <= n; ++i) {
        double uis = edge_value(mesh_, trial.u[i], dirichlet_species_[i], ei, K);
        weight += uis;
        zsum += params_.z * uis;
      }
      r += F0 * weight;
      if (pot) {
        double Fphi = tpfa_flux(mesh_, trial.phi, boundary_.phi, ei, K);
        r -= params_.beta * u0s * zsum * Fphi;
      }
    }
    if (!params_.sources.empty()) {
      double src = 0.0;
      for (int i = 1; i <= n; ++i)
        if (params_.sources[i - 1]) src += cell_mean(K, params_.sources[i - 1], t_new);
      r += area * src;
    }
    rows[K] = r;
  }
  return rows;
}

FVState Scheme::project_initial(const std::vector<SpaceTimeFn>& initial_species) const {
  return make_initial(initial_species, false);
}

FVState Scheme::initial_state_at_collocation(
    const std::vector<SpaceTimeFn>& initial_species) const {
  return make_initial(initial_species, true);
}

FVState Scheme::make_initial(const std::vector<SpaceTimeFn>& initial_species,
                             bool at_collocation) const {
  const int n = params_.n_species;
  if (static_cast<int>(initial_species.size()) != n)
    throw std::invalid_argument("project_initial: one initial field per species expected");
  const int ncell = static_cast<int>(mesh_.cells.size());

  FVState s;
  s.step = 0;
  s.time = 0.0;
  s.u.assign(n + 1, std::vector<double>(ncell, 0.0));
  s.phi.assign(ncell, 0.0);
  for (int i = 1; i <= n; ++i)
    for (int K = 0; K < ncell; ++K)
      s.u[i][K] = at_collocation ? initial_species[i - 1](mesh_.cells[K].collocation, 0.0)
                                 : cell_mean(K, initial_species[i - 1], 0.0);
  s.enforce_volume_filling();
  for (int i = 0; i <= n; ++i)
    for (int K = 0; K < ncell; ++K)
      if (s.u[i][K] <= 0.0)
        throw SolverError("project_initial: non-positive cell mean (species " +
                          std::to_string(i) + ")");

  if (params_.potential_enabled()) {
    // Linear Poisson solve at the initial concentrations.
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(ncell);
    const double lam2 = params_.lambda * params_.lambda;
    for (int ei = 0; ei < static_cast<int>(mesh_.edges.size()); ++ei) {
      const Edge& e = mesh_.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      double t = lam2 * e.length / e.d_sigma;
      trips.emplace_back(e.cell_K, e.cell_K, t);
      if (e.boundary()) {
        rhs[e.cell_K] += t * boundary_.phi[e.dirichlet_component];
      } else {
        trips.emplace_back(e.cell_K, e.cell_L, -t);
        trips.emplace_back(e.cell_L, e.cell_L, t);
        trips.emplace_back(e.cell_L, e.cell_K, -t);
      }
    }
    for (int K = 0; K < ncell; ++K) {
      double r = params_.z * (1.0 - s.u[0][K]);
      if (params_.permanent_charge) r += cell_mean(K, params_.permanent_charge, 0.0);
      if (params_.potential_source) r += cell_mean(K, params_.potential_source, 0.0);
      rhs[K] += mesh_.cells[K].area * r;
    }
    Eigen::SparseMatrix<double> A(ncell, ncell);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() != Eigen::Success)
      throw SolverError("project_initial: singular Poisson system");
    Eigen::VectorXd phi = lu.solve(rhs);
    for (int K = 0; K < ncell; ++K) s.phi[K] = phi[K];
  }
  return s;
}

FVState Scheme::newton_advance(const FVState& prev, double tau, const NewtonOptions& opt) const {
  const int n = params_.n_species;
  const bool pot = params_.potential_enabled();
  const int B = block_size();
  const int ncell = static_cast<int>(mesh_.cells.size());

  FVState trial = prev;
  trial.step = prev.step + 1;
  trial.time = prev.time + tau;

  Eigen::VectorXd residual;
  Eigen::SparseMatrix<double> J;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool analyzed = false;

  assemble_step_system(prev, trial, tau, residual, J);
  double rnorm = residual.lpNorm<Eigen::Infinity>();

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if (rnorm <= opt.tolerance) return trial;
    if (!analyzed) {
      lu.analyzePattern(J);
      analyzed = true;
    }
    lu.factorize(J);
    if (lu.info() != Eigen::Success) throw SolverError("newton_advance: singular Jacobian");
    Eigen::VectorXd dx = lu.solve(-residual);

    double alpha = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= opt.max_halvings; ++halving, alpha *= 0.5) {
      FVState cand = trial;
      for (int K = 0; K < ncell; ++K) {
        for (int i = 1; i <= n; ++i) cand.u[i][K] = trial.u[i][K] + alpha * dx[K * B + i - 1];
        if (pot) cand.phi[K] = trial.phi[K] + alpha * dx[K * B + n];
      }
      cand.enforce_volume_filling();
      bool positive = true;
      for (int i = 0; i <= n && positive; ++i)
        for (int K = 0; K < ncell; ++K)
          if (cand.u[i][K] <= 0.0) {
            positive = false;
            break;
          }
      if (!positive) continue;
      Eigen::VectorXd cand_res;
      Eigen::SparseMatrix<double> cand_J;
      assemble_step_system(prev, cand, tau, cand_res, cand_J);
      double cnorm = cand_res.lpNorm<Eigen::Infinity>();
      if (cnorm < rnorm || cnorm <= opt.tolerance) {
        trial = std::move(cand);
        residual.swap(cand_res);
        J.swap(cand_J);
        rnorm = cnorm;
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw SolverError("newton_advance: damping failed (residual " + std::to_string(rnorm) +
                        "), positivity unrecoverable or no descent");
  }
  if (rnorm <= opt.tolerance) return trial;
  throw SolverError("newton_advance: no convergence after " +
                    std::to_string(opt.max_iterations) +
                    " iterations (residual max-norm " + std::to_string(rnorm) + ")");
}

Trajectory Scheme::run_trajectory(const FVState& initial, const std::vector<double>& times) const {
  if (times.empty() || std::abs(times.front() - initial.time) > 1e-14)
    throw std::invalid_argument("run_trajectory: time grid must start at the initial time");
  for (size_t j = 1; j < times.size(); ++j)
    if (times[j] <= times[j - 1])
      throw std::invalid_argument("run_trajectory: time grid must be strictly increasing");

  Trajectory traj;
  traj.states.push_back(initial);
  traj.states.front().step = 0;
  for (size_t j = 1; j < times.size(); ++j) {
    double tau = times[j] - times[j - 1];
    try {
      traj.states.push_back(newton_advance(traj.states.back(), tau));
    } catch (const SolverError& err) {
      throw SolverError("step " + std::to_string(j) + ": " + err.what());
    }
  }
  return traj;
}

}  // namespace ionfv
