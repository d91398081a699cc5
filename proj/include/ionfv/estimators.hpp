#pragma once

#include <cmath>
#include <vector>

#include "ionfv/reconstruct.hpp"

namespace ionfv {

enum class QDual { Two, Inf };
enum class Eta2Form { TwoTerm, ThreeTerm };

/// Every constant entering the estimators, with the convex-domain defaults of
/// the experiments (unit square, q = 42, p* = 1 / C_Green = 1 max-norm branch).
struct ConstantsLedger {
  double q = 42.0;        // exponent of the X(q) norms
  double q_tilde = 2.1;   // gradient integrability exponent
  double p_star = 1.0;    // Green's function exponent (1 -> q_dual = inf)
  double c_green = 1.0;   // C_{Green,p*}
  double c_G = 1.02;      // Gagliardo-Nirenberg constant
  double c_S = 12.02;     // Sobolev constant
  double c_F = std::sqrt(2.0) / M_PI;  // C_{F,2,Gamma_D}, diam(Omega)/pi default
  double c_P2 = 1.0 / M_PI;            // per-cell Poincare factor, L2
  double c_P1 = 0.5;                   // per-cell Poincare factor, L1
  double c_cti = 2.0;                  // multiplicative trace constant
  double gamma = 0.3;                  // lower solvent bound
  double n_partial = 3.0;              // max edges per cell
  int d = 2;
  double T = 1.0;  // final time (enters the general-model exponential)
  Eta2Form eta2_form = Eta2Form::TwoTerm;

  double p() const { return 2.0 * q / (q - 2.0); }
  double theta() const { return d / 2.0 - d / p(); }
  double mu() const {
    double th = theta();
    return 0.5 * (1.0 - th) * std::pow(1.0 / (2.0 * (1.0 + th)), (th + 1.0) / (th - 1.0));
  }
  double c_app(double pp) const {
    double cp = (pp == 1.0) ? c_P1 : c_P2;
    return c_cti * (std::pow(cp, 1.0 - 1.0 / pp) + cp);
  }
  double time_exponent() const { return 2.0 * q / (q - d); }  // X(q) outer exponent
  void validate() const;
};

// --- heat-equation branch (elliptic reconstruction) -------------------------

/// Elliptic estimator eta_{S,q}^j from the cell misfit A^j + Delta u0_hat^j and
/// the gradient jumps over non-Dirichlet edges.
double eta_S(const Mesh& mesh, const ConstantsLedger& lg, const MorleyFunction& u0_hat,
             const std::vector<double>& A, QDual q_dual);

/// Temporal estimator: time integral of the L-infinity norm of
/// R(t) = -l_{j-1}A^{j-1} - l_j A^j - (u0^j - u0^{j-1})/tau, by the composite
/// trapezoidal rule with `time_samples` points. The 2-point endpoint rule
/// over-estimates: t -> ||R(t)||_inf is convex (R is affine in t pointwise).
double eta_T_inf(const Mesh& mesh, const std::vector<double>& A_prev,
                 const std::vector<double>& A_cur, const MorleyFunction& u0_prev,
                 const MorleyFunction& u0_cur, double tau, int time_samples = 2);

/// Rate estimator: the eta_S structure applied to step differences, times 1/tau.
double eta_dot_S(const Mesh& mesh, const ConstantsLedger& lg, const std::vector<double>& A_prev,
                 const std::vector<double>& A_cur, const MorleyFunction& u0_prev,
                 const MorleyFunction& u0_cur, double tau, QDual q_dual);

/// max-norm total: e0 + sum eta_T + sum tau*eta_dot*C_Green + max eta_S*C_Green.
double assemble_heat_max(double e0_inf, const std::vector<double>& eta_T_steps,
                         const std::vector<double>& eta_dot_steps,
                         const std::vector<double>& eta_S_levels, const std::vector<double>& taus,
                         double c_green);

struct HeatH1Result {
  double bound = 0.0;                   // on sup ||e||^2 + int ||grad e||^2
  std::vector<double> step_eta_S2;      // j = 1..J
  std::vector<double> step_coupling;    // C_F || dt u0_hat - dt u0_h ||
  std::vector<double> step_grad_diff;   // || grad(u0^j - u0^{j-1}) ||
};

// --- residual branch ---------------------------------------------------------

struct ResidualTriplet {
  double R_S = 0.0;
  double R_T = 0.0;
  double R_R = 0.0;
  double sum() const { return R_S + R_T + R_R; }
};

ResidualTriplet residual_triplet_reduced(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int species, int j,
                                         const ConstantsLedger& lg);

ResidualTriplet residual_triplet_general(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int species, int j,
                                         const ConstantsLedger& lg);

/// (R_T0, R_S0, R_R0) for the solvent drift equation of the general model.
ResidualTriplet residual_triplet_solvent(const Scheme& scheme, const ReconstructionSet& recs,
                                         const Trajectory& traj, int j,
                                         const ConstantsLedger& lg);

/// Potential residual eta_{R,Phi}^j (lambda^2-normalized, as it enters the
/// totals).
double eta_R_phi(const Scheme& scheme, const ReconstructionSet& recs, const Trajectory& traj,
                 int j, const ConstantsLedger& lg);

// --- space-time norms --------------------------------------------------------

/// ||grad u||_{X(q)} with X(q) = L^{2q/(q-d)}(0,T;L^q): spatial L^q norms
/// sampled at interval endpoints and midpoint, per-interval max, outer time
/// integral. A documented over-sampling approximation for fields quadratic in t.
double xq_norm_gradient(const SpaceTimeReconstruction& rec, const ConstantsLedger& lg,
                        int samples_per_interval = 3, int quad_degree = 12);

/// ||F||_{X(q)} with the drift field F = grad u0 - u0 z beta grad phi.
double xq_norm_drift(const SpaceTimeReconstruction& u0, const SpaceTimeReconstruction& phi,
                     double z_beta, const ConstantsLedger& lg, int samples_per_interval = 3,
                     int quad_degree = 12);

/// max_t ||grad u(t)||_{L^qt} over step endpoints and midpoints.
double linf_lq_gradient(const SpaceTimeReconstruction& rec, double q_tilde, int quad_degree = 12);

/// int_0^T ||grad u(t)||^2 dt, exact (per-interval Simpson of a quadratic).
double l2l2_gradient_sq(const SpaceTimeReconstruction& rec);

/// ||u0_hat^j - u0_h^j||_{L2} (reconstruction vs piecewise constants).
double recon_minus_cells_l2(const Mesh& mesh, const MorleyFunction& w,
                            const std::vector<double>& cells);

// --- assembled report --------------------------------------------------------

struct EstimatorReport {
  ConstantsLedger ledger;
  std::vector<double> taus;     // tau_j, j = 1..J
  std::vector<double> eta_S_q;  // j = 0..J, the ledger's q_dual branch
  std::vector<double> eta_S_2;  // j = 0..J, L2 branch
  std::vector<double> eta_T;    // j = 1..J
  std::vector<double> eta_dot;  // j = 1..J
  std::vector<double> eta2_step;                    // per ledger.eta2_form, j = 1..J
  std::vector<std::vector<double>> eta_R_species;   // [i-1][j-1]
  std::vector<double> eta_R_phi_steps;              // j = 1..J (general)
  std::vector<double> eta_R_solvent;                // j = 1..J (general)

  double e0_linf_u0 = 0.0;
  double e0_l2sq_u0 = 0.0;
  std::vector<double> e0_l2sq_ui;

  double eta_inf_J = 0.0;   // reduced: max-norm solvent bound (not squared)
  double eta_2J_bound = 0.0;  // bound on the squared solvent quantity
  double eta_2J = 0.0;        // reported square root
  std::vector<double> eta_2iJ_bound;
  std::vector<double> eta_2iJ;
  double eta_phiJ_bound = 0.0;
  double eta_phiJ = 0.0;

  double xq_grad_u0 = 0.0;
  double xq_grad_phi = 0.0;
  double xq_F = 0.0;
  std::vector<double> linf_lq_grad_ui;
  double linf_lq_grad_phi = 0.0;
  std::vector<double> l2l2_grad_ui_sq;
};

struct InitialErrors {
  double linf_u0 = 0.0;               // ||u0_hat^0 - v_0^0||_inf
  double l2sq_u0 = 0.0;               // ||u0_hat^0 - v_0^0||^2
  std::vector<double> l2sq_ui;        // per species
};

EstimatorReport compute_report_reduced(const Scheme& scheme, const ReconstructionSet& recs,
                                       const Trajectory& traj, const ConstantsLedger& lg,
                                       const InitialErrors& e0);

EstimatorReport compute_report_general(const Scheme& scheme, const ReconstructionSet& recs,
                                       const Trajectory& traj, const ConstantsLedger& lg,
                                       const InitialErrors& e0);

HeatH1Result heat_H1_estimator(const Scheme& scheme, const ReconstructionSet& recs,
                               const Trajectory& traj, const ConstantsLedger& lg,
                               double e0_l2sq);

double heat_max_estimator(const Scheme& scheme, const ReconstructionSet& recs,
                          const Trajectory& traj, const ConstantsLedger& lg, double e0_linf);

}  // namespace ionfv
