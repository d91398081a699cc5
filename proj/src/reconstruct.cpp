#include "ionfv/reconstruct.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "ionfv/quadrature.hpp"

namespace ionfv {

namespace {

inline double bubble(const std::array<double, 3>& l) { return 27.0 * l[0] * l[1] * l[2]; }

inline Vec2 bubble_gradient(const std::array<double, 3>& l, const std::array<Vec2, 3>& g) {
  return 27.0 * (l[1] * l[2] * g[0] + l[0] * l[2] * g[1] + l[0] * l[1] * g[2]);
}

inline double bubble_laplacian(const std::array<double, 3>& l, const std::array<Vec2, 3>& g) {
  return 54.0 * (l[2] * g[0].dot(g[1]) + l[1] * g[0].dot(g[2]) + l[0] * g[1].dot(g[2]));
}

}  // namespace

double MorleyFunction::value(int cell, Vec2 x) const {
  auto l = mesh->barycentric(cell, x);
  const auto& qc = q[cell];
  const auto& pc = p[cell];
  double qv = qc[0] * l[0] + qc[1] * l[1] + qc[2] * l[2];
  double pv = pc[0] * l[0] + pc[1] * l[1] + pc[2] * l[2];
  return qv + pv * bubble(l);
}

Vec2 MorleyFunction::gradient(int cell, Vec2 x) const {
  auto l = mesh->barycentric(cell, x);
  auto g = mesh->barycentric_gradients(cell);
  const auto& qc = q[cell];
  const auto& pc = p[cell];
  Vec2 gq = qc[0] * g[0] + qc[1] * g[1] + qc[2] * g[2];
  Vec2 gp = pc[0] * g[0] + pc[1] * g[1] + pc[2] * g[2];
  double pv = pc[0] * l[0] + pc[1] * l[1] + pc[2] * l[2];
  return gq + pv * bubble_gradient(l, g) + bubble(l) * gp;
}

double MorleyFunction::laplacian(int cell, Vec2 x) const {
  auto l = mesh->barycentric(cell, x);
  auto g = mesh->barycentric_gradients(cell);
  const auto& pc = p[cell];
  Vec2 gp = pc[0] * g[0] + pc[1] * g[1] + pc[2] * g[2];
  double pv = pc[0] * l[0] + pc[1] * l[1] + pc[2] * l[2];
  return pv * bubble_laplacian(l, g) + 2.0 * gp.dot(bubble_gradient(l, g));
}

MorleyFunction morley_axpy(double a, const MorleyFunction& f, double b, const MorleyFunction& g) {
  MorleyFunction out;
  out.mesh = f.mesh;
  out.q.resize(f.q.size());
  out.p.resize(f.p.size());
  for (size_t c = 0; c < f.q.size(); ++c)
    for (int k = 0; k < 3; ++k) {
      out.q[c][k] = a * f.q[c][k] + b * g.q[c][k];
      out.p[c][k] = a * f.p[c][k] + b * g.p[c][k];
    }
  return out;
}

void evaluate_morley(const MorleyFunction& w, Vec2 point, MorleyEval what, double& scalar,
                     Vec2& vec) {
  int cell = w.mesh->locate(point);
  if (cell < 0) throw std::domain_error("evaluate_morley: point outside all cells");
  switch (what) {
    case MorleyEval::Value:
      scalar = w.value(cell, point);
      break;
    case MorleyEval::Gradient:
      vec = w.gradient(cell, point);
      break;
    case MorleyEval::Laplacian:
      scalar = w.laplacian(cell, point);
      break;
  }
}

namespace {

// Shared local assembly: vertex rows are explicit, the flux rows reduce to a
// 3x3 system for p because the bubble vanishes on edges:
//   int_sigma weight*(grad q + p grad b_K + b_K grad p).n = target
//   => sum_i p_i int_sigma weight*lambda_i*(grad b_K.n) = target - (grad q.n) int_sigma weight.
MorleyFunction reconstruct_impl(const Mesh& mesh, const VertexWeights& weights,
                                const std::vector<double>& cell_values,
                                const std::vector<double>& edge_flux_targets,
                                const DirichletPin& dirichlet, const MorleyFunction* weight_fn) {
  if (cell_values.size() != mesh.cells.size())
    throw std::invalid_argument("reconstruct: one value per cell expected");
  if (edge_flux_targets.size() != mesh.edges.size())
    throw std::invalid_argument("reconstruct: one flux target per edge expected");

  // Vertex values: weighted interpolation, Dirichlet pins override.
  std::vector<double> vertex_value(mesh.vertices.size(), 0.0);
  for (size_t vi = 0; vi < mesh.vertices.size(); ++vi) {
    const Vertex& v = mesh.vertices[vi];
    if (v.kind == VertexKind::Dirichlet) {
      vertex_value[vi] = dirichlet(v.dirichlet_component);
    } else {
      double s = 0.0;
      for (auto [cell, w] : weights.stencil[vi]) s += w * cell_values[cell];
      vertex_value[vi] = s;
    }
  }

  MorleyFunction out;
  out.mesh = &mesh;
  out.q.resize(mesh.cells.size());
  out.p.resize(mesh.cells.size());

  const QuadratureRule& erule = get_rule(DomainKind::Edge, kDefaultEdgeDegree);

  for (int ci = 0; ci < static_cast<int>(mesh.cells.size()); ++ci) {
    const Cell& K = mesh.cells[ci];
    auto g = mesh.barycentric_gradients(ci);
    for (int k = 0; k < 3; ++k) out.q[ci][k] = vertex_value[K.v[k]];
    Vec2 grad_q = out.q[ci][0] * g[0] + out.q[ci][1] * g[1] + out.q[ci][2] * g[2];

    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k) {
      int ei = K.edges[k];
      const Edge& e = mesh.edges[ei];
      Vec2 n = mesh.normal(ei, ci);
      double target = (e.cell_K == ci) ? edge_flux_targets[ei] : -edge_flux_targets[ei];

      Vec2 p0 = mesh.vertices[e.v[0]].pos;
      Vec2 p1 = mesh.vertices[e.v[1]].pos;
      double weight_int = 0.0;
      std::array<double, 3> row{0.0, 0.0, 0.0};
      for (size_t qi = 0; qi < erule.weights.size(); ++qi) {
        double t = erule.edge_points[qi];
        Vec2 x = p0 * (1.0 - t) + p1 * t;
        auto l = mesh.barycentric(ci, x);
        double wgt = weight_fn ? weight_fn->value(ci, x) : 1.0;
        double gbn = bubble_gradient(l, g).dot(n);
        double scale = erule.weights[qi] * e.length;
        weight_int += scale * wgt;
        for (int i = 0; i < 3; ++i) row[i] += scale * wgt * l[i] * gbn;
      }
      for (int i = 0; i < 3; ++i) M(k, i) = row[i];
      rhs(k) = target - grad_q.dot(n) * weight_int;
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(M);
    if (!lu.isInvertible())
      throw UnisolvenceError(ci, "reconstruct: singular local system on cell " +
                                     std::to_string(ci));
    Eigen::Vector3d pc = lu.solve(rhs);
    for (int k = 0; k < 3; ++k) out.p[ci][k] = pc(k);
  }
  return out;
}

}  // namespace

MorleyFunction reconstruct_potential_like(const Mesh& mesh, const VertexWeights& weights,
                                          const std::vector<double>& cell_values,
                                          const std::vector<double>& edge_flux_targets,
                                          const DirichletPin& dirichlet) {
  return reconstruct_impl(mesh, weights, cell_values, edge_flux_targets, dirichlet, nullptr);
}

MorleyFunction reconstruct_species(const Mesh& mesh, const VertexWeights& weights,
                                   const MorleyFunction& u0_hat,
                                   const std::vector<double>& cell_values,
                                   const std::vector<double>& edge_flux_targets,
                                   const DirichletPin& dirichlet) {
  for (int ci = 0; ci < static_cast<int>(mesh.cells.size()); ++ci) {
    double mn = cell_lattice_min(mesh, ci, [&](Vec2 x) { return u0_hat.value(ci, x); });
    if (mn <= 0.0)
      throw UnisolvenceError(
          ci, "reconstruct_species: solvent reconstruction not positive on cell " +
                  std::to_string(ci) + " (lattice min " + std::to_string(mn) + ")");
  }
  return reconstruct_impl(mesh, weights, cell_values, edge_flux_targets, dirichlet, &u0_hat);
}

std::vector<double> discrete_A(const Scheme& scheme, const Trajectory& traj, int j) {
  const Mesh& mesh = scheme.mesh();
  const int n = scheme.params().n_species;
  std::vector<double> A(mesh.cells.size(), 0.0);
  if (j > 0) {
    double tau = traj.tau(j);
    for (size_t K = 0; K < mesh.cells.size(); ++K)
      A[K] = -(traj.states[j].u[0][K] - traj.states[j - 1].u[0][K]) / tau;
    return A;
  }
  const FVState& s = traj.states[0];
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      int ei = mesh.cells[K].edges[k];
      double F0 = tpfa_flux(mesh, s.u[0], scheme.dirichlet_species(0), ei, K);
      double w = edge_value(mesh, s.u[0], scheme.dirichlet_species(0), ei, K);
      for (int i = 1; i <= n; ++i)
        w += edge_value(mesh, s.u[i], scheme.dirichlet_species(i), ei, K);
      sum += w * F0;
    }
    A[K] = sum / mesh.cells[K].area;
  }
  return A;
}

int SpaceTimeReconstruction::interval(double t) const {
  if (times.size() < 2) throw std::domain_error("reconstruction has no time interval");
  double t0 = times.front(), tJ = times.back();
  double tol = 1e-12 * std::max(1.0, std::abs(tJ));
  if (t < t0 - tol || t > tJ + tol)
    throw std::domain_error("time outside the reconstruction interval");
  for (size_t j = 1; j < times.size(); ++j)
    if (t <= times[j] + tol) return static_cast<int>(j);
  return static_cast<int>(times.size()) - 1;
}

std::pair<double, double> SpaceTimeReconstruction::interpolation_weights(int j, double t) const {
  double tau = times[j] - times[j - 1];
  double lj = (t - times[j - 1]) / tau;
  return {1.0 - lj, lj};
}

MorleyFunction SpaceTimeReconstruction::at_time(double t) const {
  int j = interval(t);
  auto [l0, l1] = interpolation_weights(j, t);
  return morley_axpy(l0, steps[j - 1], l1, steps[j]);
}

MorleyFunction SpaceTimeReconstruction::time_derivative(int j) const {
  double tau = times[j] - times[j - 1];
  return morley_axpy(-1.0 / tau, steps[j - 1], 1.0 / tau, steps[j]);
}

double SpaceTimeReconstruction::value(double t, int cell, Vec2 x) const {
  int j = interval(t);
  auto [l0, l1] = interpolation_weights(j, t);
  return l0 * steps[j - 1].value(cell, x) + l1 * steps[j].value(cell, x);
}

Vec2 SpaceTimeReconstruction::gradient(double t, int cell, Vec2 x) const {
  int j = interval(t);
  auto [l0, l1] = interpolation_weights(j, t);
  return l0 * steps[j - 1].gradient(cell, x) + l1 * steps[j].gradient(cell, x);
}

ReconstructionSet build_reconstructions(const Scheme& scheme, const VertexWeights& weights,
                                        const Trajectory& traj) {
  const Mesh& mesh = scheme.mesh();
  const int n = scheme.params().n_species;
  const bool pot = scheme.params().potential_enabled();
  const int nedge = static_cast<int>(mesh.edges.size());

  ReconstructionSet out;
  out.has_potential = pot;
  out.u0.mesh = &mesh;
  out.species.resize(n);
  for (auto& s : out.species) s.mesh = &mesh;
  if (pot) out.phi.mesh = &mesh;

  auto pin_for = [&](const std::vector<double>& comps) {
    return [&comps](int c) { return comps[c]; };
  };
  std::vector<std::vector<double>> dir(n + 1);
  for (int i = 0; i <= n; ++i) dir[i] = scheme.dirichlet_species(i);

  for (int j = 0; j <= traj.last(); ++j) {
    const FVState& s = traj.states[j];
    // Edge data, oriented with respect to edge.cell_K. The reconstruction's
    // normal-flux integrals take the value -F (the TPFA difference F
    // approximates minus the outward normal flux).
    std::vector<double> target_u0(nedge, 0.0), target_phi(nedge, 0.0);
    std::vector<std::vector<double>> target_i(n, std::vector<double>(nedge, 0.0));
    for (int ei = 0; ei < nedge; ++ei) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      int K = e.cell_K;
      double F0 = tpfa_flux(mesh, s.u[0], dir[0], ei, K);
      double w = edge_value(mesh, s.u[0], dir[0], ei, K);
      std::vector<double> uis(n);
      for (int i = 1; i <= n; ++i) {
        uis[i - 1] = edge_value(mesh, s.u[i], dir[i], ei, K);
        w += uis[i - 1];
      }
      target_u0[ei] = -F0 * w;
      if (pot) target_phi[ei] = -tpfa_flux(mesh, s.phi, scheme.dirichlet_phi(), ei, K);
      for (int i = 1; i <= n; ++i) {
        double Fi = tpfa_flux(mesh, s.u[i], dir[i], ei, K);
        double u0s = edge_value(mesh, s.u[0], dir[0], ei, K);
        target_i[i - 1][ei] = -u0s * Fi;
      }
    }

    out.u0.times.push_back(s.time);
    out.u0.steps.push_back(
        reconstruct_potential_like(mesh, weights, s.u[0], target_u0, pin_for(dir[0])));
    if (pot) {
      out.phi.times.push_back(s.time);
      out.phi.steps.push_back(reconstruct_potential_like(mesh, weights, s.phi, target_phi,
                                                         pin_for(scheme.dirichlet_phi())));
    }
    for (int i = 1; i <= n; ++i) {
      out.species[i - 1].times.push_back(s.time);
      out.species[i - 1].steps.push_back(reconstruct_species(
          mesh, weights, out.u0.steps.back(), s.u[i], target_i[i - 1], pin_for(dir[i])));
    }
    out.A.push_back(discrete_A(scheme, traj, j));
  }
  return out;
}

}  // namespace ionfv
