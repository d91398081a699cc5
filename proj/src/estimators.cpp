#include "ionfv/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ionfv/quadrature.hpp"

namespace ionfv {

void ConstantsLedger::validate() const {
  if (q <= d) throw std::invalid_argument("ConstantsLedger: q must exceed d");
  double th = theta();
  if (!(th > 0.0 && th < 1.0)) throw std::invalid_argument("ConstantsLedger: theta not in (0,1)");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("ConstantsLedger: gamma must lie in (0,1]");
  if (p_star != 1.0 && p_star != 2.0)
    throw std::invalid_argument("ConstantsLedger: p_star must be 1 (max-norm branch) or 2");
  if (q_tilde <= 2.0) throw std::invalid_argument("ConstantsLedger: q_tilde must exceed 2");
}

namespace {

// Gradient jump [grad w].n_K at a point of an edge (one-sided on the boundary).
double gradient_jump(const MorleyFunction& w, const Edge& e, Vec2 x) {
  Vec2 gK = w.gradient(e.cell_K, x);
  if (e.boundary()) return gK.dot(e.normal_K);
  Vec2 gL = w.gradient(e.cell_L, x);
  return (gK - gL).dot(e.normal_K);
}

double edge_sq_integral(const Mesh& mesh, int edge, const QuadratureRule& rule,
                        const CellFn& f) {
  return integrate_edge(mesh, edge, rule, [&](Vec2 x) {
    double v = f(x);
    return v * v;
  });
}

// Shared structure of eta_S / eta_dot_S: cell misfit ||A + Delta U||, jump
// terms over non-Dirichlet edges.
double eta_S_core(const Mesh& mesh, const ConstantsLedger& lg, const MorleyFunction& U,
                  const std::vector<double>& A, QDual q_dual) {
  const QuadratureRule& crule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  const QuadratureRule& erule = get_rule(DomainKind::Edge, kDefaultEdgeDegree);
  const double npart = lg.n_partial;

  if (q_dual == QDual::Two) {
    const double capp = lg.c_app(2.0);
    double S = 0.0;
    for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
      double h = mesh.cells[K].diameter;
      double cell = integrate_cell(mesh, K, crule, [&](Vec2 x) {
        double r = A[K] + U.laplacian(K, x);
        return r * r;
      });
      double jumps = 0.0;
      for (int ei : mesh.cells[K].edges) {
        const Edge& e = mesh.edges[ei];
        if (e.kind == EdgeKind::Dirichlet) continue;
        jumps += edge_sq_integral(mesh, ei, erule,
                                  [&](Vec2 x) { return gradient_jump(U, e, x); });
      }
      S += lg.c_P2 * lg.c_P2 * h * h * cell + capp * capp * npart / 4.0 * h * jumps;
    }
    return std::sqrt(2.0) * std::sqrt(S);
  }

  const double capp1 = lg.c_app(1.0);
  double m = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
    double h = mesh.cells[K].diameter;
    double cell = cell_lattice_max(mesh, K, [&](Vec2 x) { return A[K] + U.laplacian(K, x); });
    double jumps = 0.0;
    for (int ei : mesh.cells[K].edges) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Dirichlet) continue;
      jumps += edge_lattice_max(mesh, ei, [&](Vec2 x) { return gradient_jump(U, e, x); });
    }
    m = std::max(m, lg.c_P1 * h * cell + 0.5 * capp1 * jumps);
  }
  return m;
}

}  // namespace

double eta_S(const Mesh& mesh, const ConstantsLedger& lg, const MorleyFunction& u0_hat,
             const std::vector<double>& A, QDual q_dual) {
  return eta_S_core(mesh, lg, u0_hat, A, q_dual);
}

double eta_T_inf(const Mesh& mesh, const std::vector<double>& A_prev,
                 const std::vector<double>& A_cur, const MorleyFunction& u0_prev,
                 const MorleyFunction& u0_cur, double tau, int time_samples) {
  if (time_samples < 2) throw std::invalid_argument("eta_T_inf: need at least 2 time samples");
  MorleyFunction dudt = morley_axpy(-1.0 / tau, u0_prev, 1.0 / tau, u0_cur);
  double acc = 0.0;
  for (int s = 0; s < time_samples; ++s) {
    double l1 = static_cast<double>(s) / (time_samples - 1);  // l_j(t)
    double l0 = 1.0 - l1;
    double norm = 0.0;
    for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
      double c = -l0 * A_prev[K] - l1 * A_cur[K];
      norm = std::max(norm, cell_lattice_max(mesh, K, [&](Vec2 x) {
                        return c - dudt.value(K, x);
                      }));
    }
    double w = (s == 0 || s == time_samples - 1) ? 0.5 : 1.0;
    acc += w * norm;
  }
  return acc * tau / (time_samples - 1);
}

double eta_dot_S(const Mesh& mesh, const ConstantsLedger& lg, const std::vector<double>& A_prev,
                 const std::vector<double>& A_cur, const MorleyFunction& u0_prev,
                 const MorleyFunction& u0_cur, double tau, QDual q_dual) {
  MorleyFunction dU = morley_axpy(-1.0, u0_prev, 1.0, u0_cur);
  std::vector<double> dA(A_cur.size());
  for (size_t k = 0; k < dA.size(); ++k) dA[k] = A_cur[k] - A_prev[k];
  return eta_S_core(mesh, lg, dU, dA, q_dual) / tau;
}

double assemble_heat_max(double e0_inf, const std::vector<double>& eta_T_steps,
                         const std::vector<double>& eta_dot_steps,
                         const std::vector<double>& eta_S_levels, const std::vector<double>& taus,
                         double c_green) {
  double total = e0_inf;
  for (double v : eta_T_steps) total += v;
  for (size_t j = 0; j < eta_dot_steps.size(); ++j) total += taus[j] * eta_dot_steps[j] * c_green;
  double m = 0.0;
  for (double v : eta_S_levels) m = std::max(m, v);
  return total + m * c_green;
}

// --- residual triplets -------------------------------------------------------

namespace {

// Per-cell time difference quotients of the piecewise constant FV fields.
std::vector<double> cell_dudt(const Trajectory& traj, int field, int j) {
  double tau = traj.tau(j);
  const auto& cur = traj.states[j].u[field];
  const auto& prev = traj.states[j - 1].u[field];
  std::vector<double> d(cur.size());
  for (size_t k = 0; k < d.size(); ++k) d[k] = (cur[k] - prev[k]) / tau;
  return d;
}

std::vector<double> source_means(const Scheme& scheme, int species, double t) {
  const Mesh& mesh = scheme.mesh();
  std::vector<double> s(mesh.cells.size(), 0.0);
  const auto& sources = scheme.params().sources;
  if (sources.empty() || !sources[species - 1]) return s;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
    s[K] = scheme.cell_mean(K, sources[species - 1], t);
  return s;
}

struct TripletWork {
  TripletWork(const Mesh& mesh_, const ConstantsLedger& lg_) : mesh(mesh_), lg(lg_) {}
  const Mesh& mesh;
  const ConstantsLedger& lg;
  // vector field w(cell, x) whose element divergence/jumps drive R_S and R_T
  std::function<Vec2(int, Vec2)> field_cur, field_prev;
  std::function<double(int, Vec2)> div_cur;
  // mismatch density m(cell, edge, x) for R_R's edge term
  std::function<double(int, int, Vec2)> mismatch;
  // L2 part of R_R: || dt(recon) - dt(cells) ||
  std::function<double(int, Vec2)> dt_recon_minus_cells;
  std::vector<double> elem_const;  // dudt_K - src_K per cell
  int cell_degree = kDefaultTriangleDegree;
  int edge_degree = kDefaultEdgeDegree;
  int rt_degree = kDefaultTriangleDegree;
};

ResidualTriplet run_triplet(const TripletWork& w) {
  const Mesh& mesh = w.mesh;
  const ConstantsLedger& lg = w.lg;
  const QuadratureRule& crule = get_rule(DomainKind::Triangle, w.cell_degree);
  const QuadratureRule& erule = get_rule(DomainKind::Edge, w.edge_degree);
  const QuadratureRule& rtrule = get_rule(DomainKind::Triangle, w.rt_degree);
  const QuadratureRule& l2rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  const double capp2 = lg.c_app(2.0);

  ResidualTriplet out;
  double rs2 = 0.0, rt2 = 0.0, rr_l2 = 0.0, rr_edge = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
    double h = mesh.cells[K].diameter;
    double cell = integrate_cell(mesh, K, crule, [&](Vec2 x) {
      double r = w.elem_const[K] - w.div_cur(K, x);
      return r * r;
    });
    double jumps = 0.0;
    double mm = 0.0;
    for (int ei : mesh.cells[K].edges) {
      const Edge& e = mesh.edges[ei];
      if (e.kind != EdgeKind::Dirichlet) {
        jumps += edge_sq_integral(mesh, ei, erule, [&](Vec2 x) {
          Vec2 fK = w.field_cur(e.cell_K, x);
          Vec2 fL = e.boundary() ? Vec2{} : w.field_cur(e.cell_L, x);
          return edge_jump_average(fK, fL, e.boundary(), e.normal_K).jump;
        });
      }
      if (e.kind != EdgeKind::Neumann)
        mm += edge_sq_integral(mesh, ei, erule, [&](Vec2 x) { return w.mismatch(K, ei, x); });
    }
    rs2 += lg.c_P2 * lg.c_P2 * h * h * cell + lg.n_partial / 4.0 * capp2 * capp2 * h * jumps;
    rr_edge += h * mm;
    rt2 += integrate_cell(mesh, K, rtrule, [&](Vec2 x) {
      Vec2 d = w.field_cur(K, x) - w.field_prev(K, x);
      return d.dot(d);
    });
    rr_l2 += integrate_cell(mesh, K, l2rule, [&](Vec2 x) {
      double d = w.dt_recon_minus_cells(K, x);
      return d * d;
    });
  }
  out.R_S = std::sqrt(2.0) * std::sqrt(rs2);
  out.R_T = std::sqrt(rt2);
  out.R_R = lg.c_F * std::sqrt(rr_l2) +
            0.5 * capp2 * std::sqrt(lg.n_partial) * std::sqrt(rr_edge);
  return out;
}

// Average of grad w across an edge at x ({.} is one-sided on the boundary).
Vec2 grad_average(const MorleyFunction& w, const Edge& e, Vec2 x) {
  Vec2 gK = w.gradient(e.cell_K, x);
  if (e.boundary()) return gK;
  return (gK + w.gradient(e.cell_L, x)) * 0.5;
}

}  // namespace

ResidualTriplet residual_triplet_reduced(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int species, int j,
                                         const ConstantsLedger& lg) {
  const Mesh& mesh = scheme.mesh();
  const MorleyFunction& u0 = recs.u0.steps[j];
  const MorleyFunction& u0p = recs.u0.steps[j - 1];
  const MorleyFunction& ui = recs.species[species - 1].steps[j];
  const MorleyFunction& uip = recs.species[species - 1].steps[j - 1];
  double tau = traj.tau(j);
  double t_j = traj.time(j);

  std::vector<double> dudt = cell_dudt(traj, species, j);
  std::vector<double> src = source_means(scheme, species, t_j);
  std::vector<double> dir0 = scheme.dirichlet_species(0);
  std::vector<double> diri = scheme.dirichlet_species(species);
  const auto& u_cells = traj.states[j].u;

  TripletWork w{mesh, lg};
  w.elem_const.resize(mesh.cells.size());
  for (size_t K = 0; K < mesh.cells.size(); ++K) w.elem_const[K] = dudt[K] - src[K];
  w.field_cur = [&](int c, Vec2 x) {
    return u0.value(c, x) * ui.gradient(c, x) - ui.value(c, x) * u0.gradient(c, x);
  };
  w.field_prev = [&](int c, Vec2 x) {
    return u0p.value(c, x) * uip.gradient(c, x) - uip.value(c, x) * u0p.gradient(c, x);
  };
  w.div_cur = [&](int c, Vec2 x) {
    return u0.value(c, x) * ui.laplacian(c, x) - ui.value(c, x) * u0.laplacian(c, x);
  };
  w.mismatch = [&](int K, int ei, Vec2 x) {
    const Edge& e = mesh.edges[ei];
    double F0 = tpfa_flux(mesh, u_cells[0], dir0, ei, K);
    double uis = edge_value(mesh, u_cells[species], diri, ei, K);
    return ui.value(K, x) * grad_average(u0, e, x).dot(mesh.normal(ei, K)) +
           uis * F0 / e.length;
  };
  MorleyFunction dt_ui = morley_axpy(-1.0 / tau, uip, 1.0 / tau, ui);
  w.dt_recon_minus_cells = [&](int c, Vec2 x) { return dt_ui.value(c, x) - dudt[c]; };
  w.cell_degree = 12;
  w.edge_degree = kDefaultEdgeDegree;
  w.rt_degree = 14;
  return run_triplet(w);
}

ResidualTriplet residual_triplet_general(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int species, int j,
                                         const ConstantsLedger& lg) {
  const Mesh& mesh = scheme.mesh();
  const ModelParams& mp = scheme.params();
  const double bz = mp.beta * mp.z;
  const MorleyFunction& u0 = recs.u0.steps[j];
  const MorleyFunction& u0p = recs.u0.steps[j - 1];
  const MorleyFunction& ui = recs.species[species - 1].steps[j];
  const MorleyFunction& uip = recs.species[species - 1].steps[j - 1];
  const MorleyFunction* phi = recs.has_potential ? &recs.phi.steps[j] : nullptr;
  const MorleyFunction* phip = recs.has_potential ? &recs.phi.steps[j - 1] : nullptr;
  double tau = traj.tau(j);
  double t_j = traj.time(j);

  std::vector<double> dudt = cell_dudt(traj, species, j);
  std::vector<double> src = source_means(scheme, species, t_j);
  std::vector<double> dir0 = scheme.dirichlet_species(0);
  std::vector<double> diri = scheme.dirichlet_species(species);
  const auto& u_cells = traj.states[j].u;
  const auto& phi_cells = traj.states[j].phi;

  auto drift = [&](const MorleyFunction& U0, const MorleyFunction& Ui, const MorleyFunction* Phi,
                   int c, Vec2 x) {
    Vec2 f = U0.value(c, x) * Ui.gradient(c, x) - Ui.value(c, x) * U0.gradient(c, x);
    if (Phi && bz != 0.0) f += bz * Ui.value(c, x) * U0.value(c, x) * Phi->gradient(c, x);
    return f;
  };

  TripletWork w{mesh, lg};
  w.elem_const.resize(mesh.cells.size());
  for (size_t K = 0; K < mesh.cells.size(); ++K) w.elem_const[K] = dudt[K] - src[K];
  w.field_cur = [&](int c, Vec2 x) { return drift(u0, ui, phi, c, x); };
  w.field_prev = [&](int c, Vec2 x) { return drift(u0p, uip, phip, c, x); };
  w.div_cur = [&](int c, Vec2 x) {
    double d = u0.value(c, x) * ui.laplacian(c, x) - ui.value(c, x) * u0.laplacian(c, x);
    if (phi && bz != 0.0) {
      Vec2 grad_prod = ui.value(c, x) * u0.gradient(c, x) + u0.value(c, x) * ui.gradient(c, x);
      d += bz * (grad_prod.dot(phi->gradient(c, x)) +
                 ui.value(c, x) * u0.value(c, x) * phi->laplacian(c, x));
    }
    return d;
  };
  w.mismatch = [&](int K, int ei, Vec2 x) {
    const Edge& e = mesh.edges[ei];
    double F0 = tpfa_flux(mesh, u_cells[0], dir0, ei, K);
    double uis = edge_value(mesh, u_cells[species], diri, ei, K);
    Vec2 avg = grad_average(u0, e, x);
    double scheme_flux = F0;
    if (phi && bz != 0.0) {
      double u0s = edge_value(mesh, u_cells[0], dir0, ei, K);
      double Fphi = tpfa_flux(mesh, phi_cells, scheme.dirichlet_phi(), ei, K);
      scheme_flux -= bz * u0s * Fphi;
      // average of grad u0_hat - beta z u0_hat grad phi_hat
      Vec2 aK = u0.gradient(e.cell_K, x) -
                bz * u0.value(e.cell_K, x) * phi->gradient(e.cell_K, x);
      if (e.boundary()) {
        avg = aK;
      } else {
        Vec2 aL = u0.gradient(e.cell_L, x) -
                  bz * u0.value(e.cell_L, x) * phi->gradient(e.cell_L, x);
        avg = (aK + aL) * 0.5;
      }
    }
    return ui.value(K, x) * avg.dot(mesh.normal(ei, K)) + uis * scheme_flux / e.length;
  };
  MorleyFunction dt_ui = morley_axpy(-1.0 / tau, uip, 1.0 / tau, ui);
  w.dt_recon_minus_cells = [&](int c, Vec2 x) { return dt_ui.value(c, x) - dudt[c]; };
  w.cell_degree = 20;
  w.edge_degree = 11;
  w.rt_degree = 22;
  return run_triplet(w);
}

ResidualTriplet residual_triplet_solvent(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int j,
                                         const ConstantsLedger& lg) {
  const Mesh& mesh = scheme.mesh();
  const ModelParams& mp = scheme.params();
  const int n = mp.n_species;
  const double bz = mp.beta * mp.z;
  const MorleyFunction& u0 = recs.u0.steps[j];
  const MorleyFunction& u0p = recs.u0.steps[j - 1];
  const MorleyFunction* phi = recs.has_potential ? &recs.phi.steps[j] : nullptr;
  const MorleyFunction* phip = recs.has_potential ? &recs.phi.steps[j - 1] : nullptr;
  double tau = traj.tau(j);
  double t_j = traj.time(j);

  std::vector<double> dudt = cell_dudt(traj, 0, j);
  // solvent source is -sum_i s_i
  std::vector<double> src(mesh.cells.size(), 0.0);
  for (int i = 1; i <= n; ++i) {
    auto si = source_means(scheme, i, t_j);
    for (size_t K = 0; K < src.size(); ++K) src[K] -= si[K];
  }
  std::vector<double> dir0 = scheme.dirichlet_species(0);
  const auto& u_cells = traj.states[j].u;
  const auto& phi_cells = traj.states[j].phi;

  auto drift = [&](const MorleyFunction& U0, const MorleyFunction* Phi, int c, Vec2 x) {
    Vec2 f = U0.gradient(c, x);
    if (Phi && bz != 0.0) {
      double v = U0.value(c, x);
      f = f - bz * v * (1.0 - v) * Phi->gradient(c, x);
    }
    return f;
  };

  TripletWork w{mesh, lg};
  w.elem_const.resize(mesh.cells.size());
  for (size_t K = 0; K < mesh.cells.size(); ++K) w.elem_const[K] = dudt[K] - src[K];
  w.field_cur = [&](int c, Vec2 x) { return drift(u0, phi, c, x); };
  w.field_prev = [&](int c, Vec2 x) { return drift(u0p, phip, c, x); };
  w.div_cur = [&](int c, Vec2 x) {
    double d = u0.laplacian(c, x);
    if (phi && bz != 0.0) {
      double v = u0.value(c, x);
      Vec2 gv = u0.gradient(c, x);
      // div(u0(1-u0) grad phi) = (1-2 u0) grad u0 . grad phi + u0(1-u0) lap phi
      d -= bz * ((1.0 - 2.0 * v) * gv.dot(phi->gradient(c, x)) +
                 v * (1.0 - v) * phi->laplacian(c, x));
    }
    return d;
  };
  w.mismatch = [&](int K, int ei, Vec2 x) {
    if (!phi || bz == 0.0) return 0.0;
    const Edge& e = mesh.edges[ei];
    double u0s = edge_value(mesh, u_cells[0], dir0, ei, K);
    double Fphi = tpfa_flux(mesh, phi_cells, scheme.dirichlet_phi(), ei, K);
    double sum_uis = 0.0;
    for (int i = 1; i <= n; ++i)
      sum_uis += edge_value(mesh, u_cells[i], scheme.dirichlet_species(i), ei, K);
    Vec2 aK = u0.value(e.cell_K, x) * (1.0 - u0.value(e.cell_K, x)) *
              phi->gradient(e.cell_K, x);
    Vec2 avg = aK;
    if (!e.boundary()) {
      Vec2 aL = u0.value(e.cell_L, x) * (1.0 - u0.value(e.cell_L, x)) *
                phi->gradient(e.cell_L, x);
      avg = (aK + aL) * 0.5;
    }
    return bz * (avg.dot(mesh.normal(ei, K)) + u0s * sum_uis * Fphi / e.length);
  };
  MorleyFunction dt_u0 = morley_axpy(-1.0 / tau, u0p, 1.0 / tau, u0);
  w.dt_recon_minus_cells = [&](int c, Vec2 x) { return dt_u0.value(c, x) - dudt[c]; };
  w.cell_degree = 20;
  w.edge_degree = 11;
  w.rt_degree = 22;
  ResidualTriplet t = run_triplet(w);
  return t;
}

double eta_R_phi(const Scheme& scheme, const ReconstructionSet& recs, const Trajectory& traj,
                 int j, const ConstantsLedger& lg) {
  const Mesh& mesh = scheme.mesh();
  const ModelParams& mp = scheme.params();
  const double lam2 = mp.lambda * mp.lambda;
  const MorleyFunction& phi = recs.phi.steps[j];
  const MorleyFunction& u0 = recs.u0.steps[j];
  double t_j = traj.time(j);
  const auto& u0_cells = traj.states[j].u[0];

  const QuadratureRule& crule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  const QuadratureRule& erule = get_rule(DomainKind::Edge, kDefaultEdgeDegree);
  const double capp2 = lg.c_app(2.0);

  double S = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
    double h = mesh.cells[K].diameter;
    double rhs = mp.z * (1.0 - u0_cells[K]);
    if (mp.permanent_charge) rhs += scheme.cell_mean(K, mp.permanent_charge, t_j);
    if (mp.potential_source) rhs += scheme.cell_mean(K, mp.potential_source, t_j);
    rhs /= lam2;
    double cell = integrate_cell(mesh, K, crule, [&](Vec2 x) {
      double r = phi.laplacian(K, x) + rhs;
      return r * r;
    });
    double jumps = 0.0;
    for (int ei : mesh.cells[K].edges) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Dirichlet) continue;
      jumps += edge_sq_integral(mesh, ei, erule,
                                [&](Vec2 x) { return gradient_jump(phi, e, x); });
    }
    S += lg.c_P2 * lg.c_P2 * h * h * cell + capp2 * capp2 * h * lg.n_partial / 4.0 * jumps;
  }
  double mismatch = recon_minus_cells_l2(mesh, u0, u0_cells);
  return std::sqrt(2.0) * std::sqrt(S) + std::abs(mp.z) / lam2 * lg.c_F * mismatch;
}

// --- space-time norms --------------------------------------------------------

namespace {

double spatial_lq_norm(const Mesh& mesh, double qq, int degree,
                       const std::function<double(int, Vec2)>& magnitude) {
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, degree);
  double sum = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
    sum += integrate_cell(mesh, K, rule,
                          [&](Vec2 x) { return std::pow(magnitude(K, x), qq); });
  return std::pow(sum, 1.0 / qq);
}

}  // namespace

double xq_norm_gradient(const SpaceTimeReconstruction& rec, const ConstantsLedger& lg,
                        int samples_per_interval, int quad_degree) {
  const Mesh& mesh = *rec.mesh;
  double r = lg.time_exponent();
  double acc = 0.0;
  for (size_t j = 1; j < rec.times.size(); ++j) {
    double tau = rec.times[j] - rec.times[j - 1];
    double worst = 0.0;
    for (int s = 0; s < samples_per_interval; ++s) {
      double l1 = static_cast<double>(s) / (samples_per_interval - 1);
      MorleyFunction w = morley_axpy(1.0 - l1, rec.steps[j - 1], l1, rec.steps[j]);
      worst = std::max(worst, spatial_lq_norm(mesh, lg.q, quad_degree, [&](int K, Vec2 x) {
                         return w.gradient(K, x).norm();
                       }));
    }
    acc += tau * std::pow(worst, r);
  }
  return std::pow(acc, 1.0 / r);
}

double xq_norm_drift(const SpaceTimeReconstruction& u0, const SpaceTimeReconstruction& phi,
                     double z_beta, const ConstantsLedger& lg, int samples_per_interval,
                     int quad_degree) {
  const Mesh& mesh = *u0.mesh;
  double r = lg.time_exponent();
  double acc = 0.0;
  for (size_t j = 1; j < u0.times.size(); ++j) {
    double tau = u0.times[j] - u0.times[j - 1];
    double worst = 0.0;
    for (int s = 0; s < samples_per_interval; ++s) {
      double l1 = static_cast<double>(s) / (samples_per_interval - 1);
      MorleyFunction w0 = morley_axpy(1.0 - l1, u0.steps[j - 1], l1, u0.steps[j]);
      MorleyFunction wp = morley_axpy(1.0 - l1, phi.steps[j - 1], l1, phi.steps[j]);
      worst = std::max(worst, spatial_lq_norm(mesh, lg.q, quad_degree, [&](int K, Vec2 x) {
                         Vec2 F = w0.gradient(K, x) - z_beta * w0.value(K, x) * wp.gradient(K, x);
                         return F.norm();
                       }));
    }
    acc += tau * std::pow(worst, r);
  }
  return std::pow(acc, 1.0 / r);
}

double linf_lq_gradient(const SpaceTimeReconstruction& rec, double q_tilde, int quad_degree) {
  const Mesh& mesh = *rec.mesh;
  double worst = 0.0;
  auto eval = [&](const MorleyFunction& w) {
    return spatial_lq_norm(mesh, q_tilde, quad_degree,
                           [&](int K, Vec2 x) { return w.gradient(K, x).norm(); });
  };
  worst = std::max(worst, eval(rec.steps[0]));
  for (size_t j = 1; j < rec.times.size(); ++j) {
    MorleyFunction mid = morley_axpy(0.5, rec.steps[j - 1], 0.5, rec.steps[j]);
    worst = std::max({worst, eval(mid), eval(rec.steps[j])});
  }
  return worst;
}

double l2l2_gradient_sq(const SpaceTimeReconstruction& rec) {
  const Mesh& mesh = *rec.mesh;
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  auto grad_sq = [&](const MorleyFunction& w) {
    double s = 0.0;
    for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
      s += integrate_cell(mesh, K, rule, [&](Vec2 x) {
        Vec2 g = w.gradient(K, x);
        return g.dot(g);
      });
    return s;
  };
  double acc = 0.0;
  for (size_t j = 1; j < rec.times.size(); ++j) {
    double tau = rec.times[j] - rec.times[j - 1];
    MorleyFunction mid = morley_axpy(0.5, rec.steps[j - 1], 0.5, rec.steps[j]);
    // ||grad u(t)||^2 is quadratic in t: Simpson is exact.
    acc += tau / 6.0 * (grad_sq(rec.steps[j - 1]) + 4.0 * grad_sq(mid) + grad_sq(rec.steps[j]));
  }
  return acc;
}

double recon_minus_cells_l2(const Mesh& mesh, const MorleyFunction& w,
                            const std::vector<double>& cells) {
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  double s = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
    s += integrate_cell(mesh, K, rule, [&](Vec2 x) {
      double d = w.value(K, x) - cells[K];
      return d * d;
    });
  return std::sqrt(s);
}

// --- heat-equation totals ----------------------------------------------------

HeatH1Result heat_H1_estimator(const Scheme& scheme, const ReconstructionSet& recs,
                               const Trajectory& traj, const ConstantsLedger& lg,
                               double e0_l2sq) {
  const Mesh& mesh = scheme.mesh();
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  HeatH1Result out;
  out.bound = 2.0 * e0_l2sq;
  for (int j = 1; j <= traj.last(); ++j) {
    double tau = traj.tau(j);
    double s2 = eta_S(mesh, lg, recs.u0.steps[j], recs.A[j], QDual::Two);
    std::vector<double> dudt = cell_dudt(traj, 0, j);
    MorleyFunction dt_hat = recs.u0.time_derivative(j);
    double coup = 0.0, gd = 0.0;
    for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K) {
      coup += integrate_cell(mesh, K, rule, [&](Vec2 x) {
        double d = dt_hat.value(K, x) - dudt[K];
        return d * d;
      });
      gd += integrate_cell(mesh, K, rule, [&](Vec2 x) {
        Vec2 g = recs.u0.steps[j].gradient(K, x) - recs.u0.steps[j - 1].gradient(K, x);
        return g.dot(g);
      });
    }
    coup = lg.c_F * std::sqrt(coup);
    gd = std::sqrt(gd);
    out.step_eta_S2.push_back(s2);
    out.step_coupling.push_back(coup);
    out.step_grad_diff.push_back(gd);
    double term = s2 + coup + gd;
    out.bound += tau * term * term;
  }
  return out;
}

double heat_max_estimator(const Scheme& scheme, const ReconstructionSet& recs,
                          const Trajectory& traj, const ConstantsLedger& lg, double e0_linf) {
  const Mesh& mesh = scheme.mesh();
  QDual branch = (lg.p_star == 1.0) ? QDual::Inf : QDual::Two;
  std::vector<double> etaS, etaT, etaDot, taus;
  for (int j = 0; j <= traj.last(); ++j)
    etaS.push_back(eta_S(mesh, lg, recs.u0.steps[j], recs.A[j], branch));
  for (int j = 1; j <= traj.last(); ++j) {
    double tau = traj.tau(j);
    taus.push_back(tau);
    etaT.push_back(eta_T_inf(mesh, recs.A[j - 1], recs.A[j], recs.u0.steps[j - 1],
                             recs.u0.steps[j], tau));
    etaDot.push_back(eta_dot_S(mesh, lg, recs.A[j - 1], recs.A[j], recs.u0.steps[j - 1],
                               recs.u0.steps[j], tau, branch));
  }
  return assemble_heat_max(e0_linf, etaT, etaDot, etaS, taus, lg.c_green);
}

// --- assembled reports -------------------------------------------------------

namespace {

double gronwall_exponent(const ConstantsLedger& lg, double x_norm, bool with_gamma) {
  double th = lg.theta();
  double e = 2.0 * std::pow(lg.c_G, 2.0 / (1.0 - th)) *
             std::pow(1.0 + lg.c_F * lg.c_F, th / (1.0 - th)) * lg.mu() *
             std::pow(x_norm, 2.0 / (1.0 - th));
  if (with_gamma) e /= std::pow(lg.gamma, (1.0 + th) / (1.0 - th));
  return e;
}

}  // namespace

EstimatorReport compute_report_reduced(const Scheme& scheme, const ReconstructionSet& recs,
                                       const Trajectory& traj, const ConstantsLedger& lg,
                                       const InitialErrors& e0) {
  lg.validate();
  const Mesh& mesh = scheme.mesh();
  const int n = scheme.params().n_species;
  const int J = traj.last();
  QDual branch = (lg.p_star == 1.0) ? QDual::Inf : QDual::Two;

  EstimatorReport rep;
  rep.ledger = lg;
  rep.e0_linf_u0 = e0.linf_u0;
  rep.e0_l2sq_u0 = e0.l2sq_u0;
  rep.e0_l2sq_ui = e0.l2sq_ui;

  for (int j = 1; j <= J; ++j) rep.taus.push_back(traj.tau(j));
  for (int j = 0; j <= J; ++j) {
    rep.eta_S_q.push_back(eta_S(mesh, lg, recs.u0.steps[j], recs.A[j], branch));
    rep.eta_S_2.push_back(eta_S(mesh, lg, recs.u0.steps[j], recs.A[j], QDual::Two));
  }
  HeatH1Result h1 = heat_H1_estimator(scheme, recs, traj, lg, e0.l2sq_u0);
  for (int j = 1; j <= J; ++j) {
    double tau = traj.tau(j);
    rep.eta_T.push_back(eta_T_inf(mesh, recs.A[j - 1], recs.A[j], recs.u0.steps[j - 1],
                                  recs.u0.steps[j], tau));
    rep.eta_dot.push_back(eta_dot_S(mesh, lg, recs.A[j - 1], recs.A[j], recs.u0.steps[j - 1],
                                    recs.u0.steps[j], tau, branch));
    double two_term = rep.eta_S_2[j] + h1.step_grad_diff[j - 1];
    rep.eta2_step.push_back(lg.eta2_form == Eta2Form::TwoTerm
                                ? two_term
                                : two_term + h1.step_coupling[j - 1]);
  }
  rep.eta_R_species.resize(n);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= J; ++j)
      rep.eta_R_species[i - 1].push_back(
          residual_triplet_reduced(scheme, recs, traj, i, j, lg).sum());

  rep.eta_inf_J = assemble_heat_max(e0.linf_u0, rep.eta_T, rep.eta_dot, rep.eta_S_q, rep.taus,
                                    lg.c_green);
  rep.eta_2J_bound = h1.bound;
  rep.eta_2J = std::sqrt(h1.bound);

  rep.xq_grad_u0 = xq_norm_gradient(recs.u0, lg);
  for (int i = 1; i <= n; ++i)
    rep.l2l2_grad_ui_sq.push_back(l2l2_gradient_sq(recs.species[i - 1]));

  double exp_factor = std::exp(gronwall_exponent(lg, rep.xq_grad_u0, true));
  for (int i = 1; i <= n; ++i) {
    double resid = 0.0;
    for (int j = 1; j <= J; ++j) {
      double ri = rep.eta_R_species[i - 1][j - 1];
      double e2 = rep.eta2_step[j - 1];
      resid += rep.taus[j - 1] * (ri * ri + e2 * e2);
    }
    double pre = 2.0 * e0.l2sq_ui[i - 1] + 12.0 / lg.gamma * e0.l2sq_u0 +
                 12.0 / lg.gamma * resid +
                 12.0 / lg.gamma * rep.l2l2_grad_ui_sq[i - 1] * rep.eta_inf_J * rep.eta_inf_J;
    rep.eta_2iJ_bound.push_back(pre * exp_factor);
    rep.eta_2iJ.push_back(std::sqrt(pre * exp_factor));
  }
  return rep;
}

EstimatorReport compute_report_general(const Scheme& scheme, const ReconstructionSet& recs,
                                       const Trajectory& traj, const ConstantsLedger& lg,
                                       const InitialErrors& e0) {
  lg.validate();
  const ModelParams& mp = scheme.params();
  const int n = mp.n_species;
  const int J = traj.last();
  const double zb = mp.z * mp.beta;
  const double lam2 = mp.lambda * mp.lambda;

  EstimatorReport rep;
  rep.ledger = lg;
  rep.e0_linf_u0 = e0.linf_u0;
  rep.e0_l2sq_u0 = e0.l2sq_u0;
  rep.e0_l2sq_ui = e0.l2sq_ui;
  for (int j = 1; j <= J; ++j) rep.taus.push_back(traj.tau(j));

  rep.eta_R_species.resize(n);
  for (int j = 1; j <= J; ++j) {
    rep.eta_R_phi_steps.push_back(eta_R_phi(scheme, recs, traj, j, lg));
    rep.eta_R_solvent.push_back(residual_triplet_solvent(scheme, recs, traj, j, lg).sum());
    for (int i = 1; i <= n; ++i)
      rep.eta_R_species[i - 1].push_back(
          residual_triplet_general(scheme, recs, traj, i, j, lg).sum());
  }

  rep.xq_grad_u0 = xq_norm_gradient(recs.u0, lg);
  rep.xq_grad_phi = xq_norm_gradient(recs.phi, lg);
  rep.xq_F = xq_norm_drift(recs.u0, recs.phi, zb, lg);
  rep.linf_lq_grad_phi = linf_lq_gradient(recs.phi, lg.q_tilde);
  for (int i = 1; i <= n; ++i)
    rep.linf_lq_grad_ui.push_back(linf_lq_gradient(recs.species[i - 1], lg.q_tilde));

  // (i) solvent bound
  double resid0 = 0.0;
  for (int j = 1; j <= J; ++j) {
    double rphi = rep.eta_R_phi_steps[j - 1];
    double r0 = rep.eta_R_solvent[j - 1];
    resid0 += rep.taus[j - 1] * (zb * zb / 4.0 * rphi * rphi + 4.0 * r0 * r0);
  }
  double e0arg = gronwall_exponent(lg, rep.xq_grad_phi, false) +
                 lg.c_F * lg.c_F * std::pow(mp.z, 4) * mp.beta * mp.beta /
                     (8.0 * lam2 * lam2) * lg.T;
  rep.eta_2J_bound = (2.0 * e0.l2sq_u0 + resid0) * std::exp(e0arg);
  rep.eta_2J = std::sqrt(rep.eta_2J_bound);

  // (ii) potential bound
  double phisum = 0.0;
  for (int j = 1; j <= J; ++j)
    phisum += rep.taus[j - 1] * rep.eta_R_phi_steps[j - 1] * rep.eta_R_phi_steps[j - 1];
  rep.eta_phiJ_bound = lg.c_F * lg.c_F * std::abs(mp.z) / lam2 * rep.eta_2J_bound + phisum;
  rep.eta_phiJ = std::sqrt(rep.eta_phiJ_bound);

  // (iii) species bounds
  double exp_i = std::exp(gronwall_exponent(lg, rep.xq_F, true));
  double coupling = (1.0 + lg.c_S * std::sqrt(1.0 + lg.c_F)) * std::abs(zb) *
                        rep.linf_lq_grad_phi +
                    lg.c_F * mp.z * mp.z * mp.beta / lam2;
  for (int i = 1; i <= n; ++i) {
    double resid = 0.0;
    for (int j = 1; j <= J; ++j) {
      double rphi = rep.eta_R_phi_steps[j - 1];
      double ri = rep.eta_R_species[i - 1][j - 1];
      resid += rep.taus[j - 1] * (zb * zb * rphi * rphi + ri * ri);
    }
    double gi = rep.linf_lq_grad_ui[i - 1];
    double pre = 2.0 * e0.l2sq_ui[i - 1] +
                 12.0 / lg.gamma * rep.eta_2J_bound *
                     (gi * gi + 2.0 * coupling * coupling) +
                 12.0 / lg.gamma * lg.c_F * lg.c_F * resid;
    rep.eta_2iJ_bound.push_back(pre * exp_i);
    rep.eta_2iJ.push_back(std::sqrt(pre * exp_i));
  }
  return rep;
}

}  // namespace ionfv
