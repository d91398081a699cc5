#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ionfv/estimators.hpp"

namespace ionfv::bench {

/// Closed-form space-time scalar field with the derivatives the benchmark
/// machinery needs. All functions take (t, point).
struct FieldEval {
  std::function<double(double, Vec2)> value, dt, dx, dy, lap;
};

/// A manufactured benchmark: closed-form fields, hand-derived source terms,
/// boundary/initial data, and the solvent lower bound gamma. Construction
/// self-validates the derivative chains by complex-step differentiation and
/// rejects a case whose rebuilt sources disagree beyond 1e-8.
struct ManufacturedCase {
  std::string name;
  int n_species = 0;
  double T = 1.0;
  double gamma = 0.0;
  bool has_potential = false;
  ModelParams params;              // sources wired to the closed forms
  std::vector<FieldEval> species;  // v_1..v_n
  FieldEval solvent;               // v_0 = 1 - sum v_i
  FieldEval psi;                   // electric potential (general case)
  GammaDSpec gamma_d;              // Dirichlet sides of the unit square

  BoundaryData boundary_for(const Mesh& mesh) const;
  std::vector<SpaceTimeFn> initial_fields() const;
};

/// Known names: "reduced_s7", "general_s7".
ManufacturedCase manufactured_case(const std::string& name, double beta_override = 0.0,
                                   double lambda_override = 0.0);

struct TrueErrors {
  double max_l2_u0 = 0.0;               // max_t ||v_0 - u0_hat||
  double grad_l2_u0 = 0.0;              // ||grad(v_0 - u0_hat)||_{L2([0,T]xOmega)}
  std::vector<double> max_l2_ui;        // per species
  std::vector<double> energy_ui;        // ||sqrt(v_0) grad(v_i - ui_hat)||_{L2 L2}
  double grad_l2_phi = 0.0;             // ||grad(Psi - phi_hat)||
};

TrueErrors true_error(const ManufacturedCase& mc, const ReconstructionSet& recs,
                      const Trajectory& traj);

/// Errors of a reconstruction measured against externally supplied fields
/// (used by the identity/perturbation tests).
TrueErrors true_error_fields(const std::vector<FieldEval>& species, const FieldEval& solvent,
                             const FieldEval* psi, const ReconstructionSet& recs,
                             const Trajectory& traj);

/// EOC(a,h;i) = log(a(i+1)/a(i)) / log(h(i+1)/h(i)). Throws for non-positive
/// values or fewer than two levels.
std::vector<double> eoc(const std::vector<double>& values, const std::vector<double>& widths);

struct StudyConfig {
  std::string case_name = "reduced_s7";
  int level_min = 2;
  int level_max = 5;
  ConstantsLedger ledger;
  bool gamma_overridden = false;
  double beta_override = 0.0;    // 0 = keep the case value
  double lambda_override = 0.0;  // 0 = keep the case value
  double T = 1.0;
  bool T_overridden = false;
  std::string out_dir = ".";
  bool write_trajectories = false;
};

/// Key-value config with sections [model], [constants], [time], [output];
/// '#' and ';' start comments. Unknown keys are an error.
StudyConfig parse_config_file(const std::string& path);
void apply_config_entry(StudyConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value);

struct StudyRow {
  int level = 0;
  double h = 0.0, tau = 0.0;
  EstimatorReport report;
  TrueErrors errors;
  double ei0 = 0.0;
  std::vector<double> ei_i;
  double ei_phi = 0.0;
  double seconds = 0.0;
};

struct StudyReport {
  std::string case_name;
  bool has_potential = false;
  int n_species = 0;
  std::vector<StudyRow> rows;
};

/// One benchmark level: mesh/solve/reconstruct/estimate/true errors.
StudyRow run_level(const ManufacturedCase& mc, int level, const ConstantsLedger& ledger,
                   const std::string& traj_dir = "");

StudyReport run_convergence_study(const StudyConfig& cfg);

void write_csv(const StudyReport& report, std::ostream& out);
void write_markdown(const StudyReport& report, std::ostream& out);

/// Trajectory store: `mesh.txt`, `meta.txt` and one `step_NNNN.txt` per time
/// level whose rows are `u_1 ... u_n phi` per cell (documented column order).
void save_trajectory(const std::string& dir, const Mesh& mesh, const ManufacturedCase& mc,
                     int level, const Trajectory& traj);

struct StoredTrajectory {
  Mesh mesh;
  std::string case_name;
  int level = 0;
  Trajectory traj;
};

StoredTrajectory load_trajectory(const std::string& dir);

/// Re-runs estimation and true errors on a stored trajectory.
StudyRow estimate_stored(const std::string& dir, const ConstantsLedger& ledger);

}  // namespace ionfv::bench
