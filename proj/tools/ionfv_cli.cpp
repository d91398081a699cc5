#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ionfv/bench.hpp"

namespace {

int cmd_run(const std::string& case_name, const std::string& levels, const std::string& config,
            const std::string& out_dir, bool write_traj) {
  using namespace ionfv::bench;
  StudyConfig cfg;
  if (!config.empty()) cfg = parse_config_file(config);
  if (!case_name.empty()) cfg.case_name = case_name;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (write_traj) cfg.write_trajectories = true;
  auto dots = levels.find("..");
  if (dots == std::string::npos) {
    cfg.level_min = cfg.level_max = std::stoi(levels);
  } else {
    cfg.level_min = std::stoi(levels.substr(0, dots));
    cfg.level_max = std::stoi(levels.substr(dots + 2));
  }

  std::filesystem::create_directories(cfg.out_dir);
  StudyReport rep = run_convergence_study(cfg);

  std::string base = cfg.out_dir + "/" + rep.case_name;
  {
    std::ofstream csv(base + ".csv");
    write_csv(rep, csv);
  }
  {
    std::ofstream md(base + ".md");
    write_markdown(rep, md);
  }
  write_markdown(rep, std::cout);
  std::cout << "wrote " << base << ".csv and " << base << ".md\n";
  return 0;
}

int cmd_validate_mesh(const std::string& path) {
  ionfv::Mesh mesh = ionfv::load_mesh_file(path);
  auto violations = ionfv::validate_admissibility(mesh);
  std::cout << "vertices " << mesh.vertices.size() << " cells " << mesh.cells.size() << " edges "
            << mesh.edges.size() << "\n";
  if (violations.empty()) {
    std::cout << "mesh is admissible\n";
    return 0;
  }
  for (const auto& v : violations) std::cout << "violation: " << v.detail << "\n";
  return 1;
}

int cmd_estimate(const std::string& dir, const std::string& config) {
  using namespace ionfv::bench;
  StudyConfig cfg;
  if (!config.empty()) cfg = parse_config_file(config);
  ionfv::ConstantsLedger lg = cfg.ledger;
  if (!cfg.gamma_overridden) lg.gamma = 0.0;  // take the case value
  StudyRow row = estimate_stored(dir, lg);

  StudyReport rep;
  rep.case_name = "stored:" + dir;
  rep.n_species = static_cast<int>(row.ei_i.size());
  rep.has_potential = row.errors.grad_l2_phi > 0.0 || !row.report.eta_R_phi_steps.empty();
  rep.rows.push_back(row);
  write_csv(rep, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite volume solver and a posteriori error estimators for the "
               "volume-filling ion transport system"};
  app.require_subcommand(1);

  std::string case_name, levels = "0..3", config, out_dir, mesh_path, traj_dir;
  bool write_traj = false;

  auto* run = app.add_subcommand("run", "run a manufactured-solution convergence study");
  run->add_option("--case", case_name, "reduced_s7 or general_s7");
  run->add_option("--levels", levels, "refinement range A..B (h = tau = 2^-i-1)");
  run->add_option("--config", config, "config file ([model]/[constants]/[time]/[output])");
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--write-trajectories", write_traj, "store per-step cell values");

  auto* vm = app.add_subcommand("validate-mesh", "check a mesh file for admissibility");
  vm->add_option("file", mesh_path, "plain-text mesh file")->required();

  auto* est = app.add_subcommand("estimate", "re-run estimation on a stored trajectory");
  est->add_option("--trajectory", traj_dir, "trajectory directory")->required();
  est->add_option("--config", config, "config file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(case_name, levels, config, out_dir, write_traj);
    if (vm->parsed()) return cmd_validate_mesh(mesh_path);
    if (est->parsed()) return cmd_estimate(traj_dir, config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
