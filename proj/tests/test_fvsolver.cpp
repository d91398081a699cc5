#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <sstream>

#include "ionfv/fvsolver.hpp"
#include "ionfv/quadrature.hpp"

using namespace ionfv;

namespace {

Mesh two_cell_mesh(bool with_dirichlet = false) {
  // Two acute isoceles triangles over the shared horizontal edge; admissible.
  std::string tag_a = with_dirichlet ? "2" : "1";
  std::istringstream in(
      "vertices 4 cells 2\n"
      "0 0 " + tag_a + "\n1 0 1\n0.5 0.8 " + tag_a + "\n0.5 -0.8 1\n"
      "0 1 2\n0 3 1\n");
  return load_mesh(in);
}

FVState random_state(const Mesh& mesh, int n_species, bool with_phi, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.1, 0.25);
  FVState s;
  s.u.assign(n_species + 1, std::vector<double>(mesh.cells.size(), 0.0));
  s.phi.assign(mesh.cells.size(), 0.0);
  for (int i = 1; i <= n_species; ++i)
    for (auto& v : s.u[i]) v = uni(rng);
  s.enforce_volume_filling();
  if (with_phi)
    for (auto& v : s.phi) v = uni(rng) - 0.2;
  return s;
}

BoundaryData flat_boundary(int n_species, int components, double phi_val = 0.0) {
  BoundaryData bd;
  bd.species.assign(components, {});
  for (auto& row : bd.species) {
    row.assign(n_species + 1, 0.0);
    double each = 0.15;
    double sum = 0.0;
    for (int i = 1; i <= n_species; ++i) {
      row[i] = each;
      sum += each;
    }
    row[0] = 1.0 - sum;
  }
  bd.phi.assign(components, phi_val);
  return bd;
}

}  // namespace

TEST_CASE("log_mean values and stability") {
  CHECK(log_mean(0.7, 0.7) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(log_mean(1.0, std::exp(1.0)) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
  // series branch oracle: (a+b)/2 - (a-b)^2/(12*mean)
  double a = 1.0, b = 1.0 + 1e-14;
  CHECK(std::abs(log_mean(a, b) - (1.0 + 5e-15)) <= 1e-15);
  CHECK_THROWS_AS(log_mean(-1.0, 2.0), std::domain_error);
  CHECK_THROWS_AS(log_mean(1.0, 0.0), std::domain_error);
}

TEST_CASE("log_mean bounds, symmetry, and derivative consistency") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uni(1e-3, 2.0);
  for (int k = 0; k < 200; ++k) {
    double a = uni(rng), b = uni(rng);
    double lm = log_mean(a, b);
    CHECK(lm >= std::min(a, b) - 1e-15);
    CHECK(lm <= std::max(a, b) + 1e-15);
    CHECK(lm == doctest::Approx(log_mean(b, a)).epsilon(1e-14));
    double da, db;
    log_mean_derivatives(a, b, da, db);
    double h = 1e-7 * std::max(1.0, std::abs(a));
    double fd = (log_mean(a + h, b) - log_mean(a - h, b)) / (2 * h);
    CHECK(da == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("edge values per kind") {
  Mesh mesh = two_cell_mesh(true);  // one Dirichlet edge (component 0)
  std::vector<double> field = {0.3, 0.45};
  std::vector<double> dirichlet = {0.1};
  int d_edge = -1, n_edge = -1, i_edge = -1;
  for (int e = 0; e < static_cast<int>(mesh.edges.size()); ++e) {
    if (mesh.edges[e].kind == EdgeKind::Dirichlet) d_edge = e;
    if (mesh.edges[e].kind == EdgeKind::Neumann && n_edge < 0) n_edge = e;
    if (mesh.edges[e].kind == EdgeKind::Interior) i_edge = e;
  }
  REQUIRE(d_edge >= 0);
  REQUIRE(n_edge >= 0);
  REQUIRE(i_edge >= 0);
  CHECK(edge_value(mesh, field, dirichlet, d_edge, mesh.edges[d_edge].cell_K) ==
        doctest::Approx(0.1));
  int ncell = mesh.edges[n_edge].cell_K;
  CHECK(edge_value(mesh, field, dirichlet, n_edge, ncell) == doctest::Approx(field[ncell]));
  std::vector<double> f2 = {0.2, 0.4};
  CHECK(edge_value(mesh, f2, dirichlet, i_edge, mesh.edges[i_edge].cell_K) ==
        doctest::Approx(0.2 / std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("tpfa flux formula and conservativity") {
  // literal example: |sigma| = 0.1, d = 0.05, w_K = 1, w_L = 0 -> 2
  Mesh tiny;
  tiny.vertices.resize(2);
  tiny.cells.resize(2);
  Edge e;
  e.v = {0, 1};
  e.kind = EdgeKind::Interior;
  e.length = 0.1;
  e.d_sigma = 0.05;
  e.cell_K = 0;
  e.cell_L = 1;
  tiny.edges.push_back(e);
  std::vector<double> w = {1.0, 0.0};
  CHECK(tpfa_flux(tiny, w, {}, 0, 0) == doctest::Approx(2.0));
  CHECK(tpfa_flux(tiny, w, {}, 0, 1) == doctest::Approx(-2.0));

  Mesh mesh = build_structured_mesh(3, GammaDSpec{true, true, false, false});
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> field(mesh.cells.size());
  for (auto& v : field) v = uni(rng);
  std::vector<double> dir = {0.3, 0.7};
  for (int ei = 0; ei < static_cast<int>(mesh.edges.size()); ++ei) {
    const Edge& edge = mesh.edges[ei];
    if (edge.kind == EdgeKind::Neumann) CHECK(tpfa_flux(mesh, field, dir, ei, edge.cell_K) == 0.0);
    if (edge.kind == EdgeKind::Interior) {
      double fK = tpfa_flux(mesh, field, dir, ei, edge.cell_K);
      double fL = tpfa_flux(mesh, field, dir, ei, edge.cell_L);
      CHECK(fK == doctest::Approx(-fL).epsilon(1e-14));
      if (field[edge.cell_K] == field[edge.cell_L]) CHECK(fK == 0.0);
    }
  }
}

TEST_CASE("project_initial: cell means, volume filling, positivity guard") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 2;
  BoundaryData bd = flat_boundary(2, 2);
  Scheme scheme(mesh, mp, bd);

  SUBCASE("constants project to themselves") {
    auto c1 = [](Vec2, double) { return 0.2; };
    auto c2 = [](Vec2, double) { return 0.3; };
    FVState s = scheme.project_initial({c1, c2});
    for (double v : s.u[1]) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
    for (double v : s.u[0]) CHECK(v == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("v = x preserves the global mean 1/2") {
    auto vx = [](Vec2 p, double) { return 0.5 * p.x + 0.1; };
    auto c2 = [](Vec2, double) { return 0.2; };
    FVState s = scheme.project_initial({vx, c2});
    double mass = 0.0;
    for (size_t K = 0; K < mesh.cells.size(); ++K) mass += mesh.cells[K].area * s.u[1][K];
    CHECK(mass == doctest::Approx(0.5 * 0.5 + 0.1).epsilon(1e-12));
  }
  SUBCASE("x^2 mean matches the exact edge-midpoint formula per cell") {
    auto vxx = [](Vec2 p, double) { return 0.2 + 0.4 * p.x * p.x; };
    auto c2 = [](Vec2, double) { return 0.2; };
    FVState s = scheme.project_initial({vxx, c2});
    for (size_t K = 0; K < mesh.cells.size(); ++K) {
      // midpoint rule is exact for quadratics on triangles
      const Cell& c = mesh.cells[K];
      Vec2 a = mesh.vertices[c.v[0]].pos, b = mesh.vertices[c.v[1]].pos,
           d = mesh.vertices[c.v[2]].pos;
      auto f = [&](Vec2 p) { return 0.2 + 0.4 * p.x * p.x; };
      double exact = (f((a + b) * 0.5) + f((a + d) * 0.5) + f((b + d) * 0.5)) / 3.0;
      CHECK(s.u[1][K] == doctest::Approx(exact).epsilon(1e-13));
    }
  }
  SUBCASE("non-positive means are rejected") {
    auto bad = [](Vec2 p, double) { return p.x - 0.6; };
    auto c2 = [](Vec2, double) { return 0.2; };
    CHECK_THROWS_AS(scheme.project_initial({bad, c2}), SolverError);
  }
}

TEST_CASE("constant state with matching Dirichlet data is a steady state (z = 0)") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 2;
  BoundaryData bd = flat_boundary(2, 2);
  Scheme scheme(mesh, mp, bd);
  auto c1 = [](Vec2, double) { return 0.15; };
  FVState prev = scheme.project_initial({c1, c1});

  Eigen::VectorXd r;
  Eigen::SparseMatrix<double> J;
  scheme.assemble_step_system(prev, prev, 0.1, r, J);
  CHECK(r.lpNorm<Eigen::Infinity>() <= 1e-14);

  FVState next = scheme.newton_advance(prev, 0.1);
  for (size_t K = 0; K < mesh.cells.size(); ++K)
    CHECK(next.u[1][K] == doctest::Approx(prev.u[1][K]).epsilon(1e-12));
}

TEST_CASE("volume filling holds exactly along a trajectory") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 2;
  Scheme scheme(mesh, mp, flat_boundary(2, 2));
  auto f1 = [](Vec2 p, double) { return 0.15 + 0.05 * p.x; };
  auto f2 = [](Vec2 p, double) { return 0.15 - 0.03 * p.x; };
  FVState init = scheme.project_initial({f1, f2});
  std::vector<double> times = {0.0, 0.25, 0.5};
  Trajectory traj = scheme.run_trajectory(init, times);
  for (const FVState& s : traj.states)
    for (size_t K = 0; K < mesh.cells.size(); ++K) {
      double sum = s.u[0][K] + s.u[1][K] + s.u[2][K];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("summed species rows reproduce the solvent equation row by row") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 3;
  mp.z = 1.0;
  mp.beta = 0.8;
  mp.lambda = 1.2;
  BoundaryData bd = flat_boundary(3, 2, 0.25);
  Scheme scheme(mesh, mp, bd);

  FVState prev = random_state(mesh, 3, true, 11);
  FVState cur = random_state(mesh, 3, true, 12);
  double tau = 0.2;
  Eigen::VectorXd r;
  Eigen::SparseMatrix<double> J;
  scheme.assemble_step_system(prev, cur, tau, r, J);
  std::vector<double> solvent = scheme.assemble_solvent_row(prev, cur, tau);

  int B = scheme.block_size();
  for (size_t K = 0; K < mesh.cells.size(); ++K) {
    double sum = 0.0;
    for (int i = 1; i <= 3; ++i) sum += r[static_cast<int>(K) * B + i - 1];
    CHECK(std::abs(sum + solvent[K]) <= 1e-13);
  }
}

TEST_CASE("analytic Jacobian matches central finite differences") {
  Mesh mesh = two_cell_mesh(true);
  ModelParams mp;
  mp.n_species = 2;
  mp.z = 1.0;
  mp.beta = 0.9;
  mp.lambda = 0.8;
  BoundaryData bd = flat_boundary(2, 1, 0.3);
  Scheme scheme(mesh, mp, bd);

  FVState prev = random_state(mesh, 2, true, 21);
  FVState cur = random_state(mesh, 2, true, 22);
  double tau = 0.05;

  Eigen::VectorXd r0;
  Eigen::SparseMatrix<double> J;
  scheme.assemble_step_system(prev, cur, tau, r0, J);
  Eigen::MatrixXd Jd = Eigen::MatrixXd(J);

  int B = scheme.block_size();
  int N = scheme.n_unknowns();
  double h = 1e-6;
  for (int col = 0; col < N; ++col) {
    auto perturb = [&](double eps) {
      FVState s = cur;
      int K = col / B, comp = col % B;
      if (comp < 2)
        s.u[comp + 1][K] += eps;
      else
        s.phi[K] += eps;
      s.enforce_volume_filling();
      Eigen::VectorXd r;
      Eigen::SparseMatrix<double> scratch;
      scheme.assemble_step_system(prev, s, tau, r, scratch);
      return r;
    };
    Eigen::VectorXd fd = (perturb(h) - perturb(-h)) / (2.0 * h);
    for (int row = 0; row < N; ++row) {
      double scale = std::max({1.0, std::abs(fd[row]), std::abs(Jd(row, col))});
      CHECK(std::abs(Jd(row, col) - fd[row]) <= 1e-5 * scale);
    }
  }
}

TEST_CASE("one implicit step matches a hand-coded dense nonlinear solve") {
  // Independent oracle: the 2-cell system written out by hand (own edge loop
  // and formulas), solved by dense Newton with finite-difference Jacobian.
  Mesh mesh = two_cell_mesh(true);
  ModelParams mp;
  mp.n_species = 2;
  mp.z = 1.0;
  mp.beta = 0.9;
  mp.lambda = 0.8;
  BoundaryData bd = flat_boundary(2, 1, 0.3);
  Scheme scheme(mesh, mp, bd);
  FVState prev = random_state(mesh, 2, true, 31);
  double tau = 0.1;

  auto hand_residual = [&](const Eigen::VectorXd& x) {
    // unknowns: [u1_K, u2_K, phi_K, u1_L, u2_L, phi_L] with K = cell 0
    Eigen::VectorXd r = Eigen::VectorXd::Zero(6);
    double u1[2] = {x[0], x[3]}, u2[2] = {x[1], x[4]}, ph[2] = {x[2], x[5]};
    double u0[2] = {1.0 - u1[0] - u2[0], 1.0 - u1[1] - u2[1]};
    double lam2 = mp.lambda * mp.lambda;
    for (int c = 0; c < 2; ++c) {
      double area = mesh.cells[c].area;
      r[3 * c + 0] = area * (u1[c] - prev.u[1][c]) / tau;
      r[3 * c + 1] = area * (u2[c] - prev.u[2][c]) / tau;
      r[3 * c + 2] = -area * mp.z * (u1[c] + u2[c]);
    }
    for (int ei = 0; ei < static_cast<int>(mesh.edges.size()); ++ei) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      double t = e.length / e.d_sigma;
      int K = e.cell_K;
      double F1, F2, F0, Fp, s1, s2, s0;
      if (e.kind == EdgeKind::Dirichlet) {
        F1 = t * (u1[K] - 0.15);
        F2 = t * (u2[K] - 0.15);
        F0 = t * (u0[K] - 0.7);
        Fp = t * (ph[K] - 0.3);
        s1 = 0.15;
        s2 = 0.15;
        s0 = 0.7;
      } else {
        int L = e.cell_L;
        F1 = t * (u1[K] - u1[L]);
        F2 = t * (u2[K] - u2[L]);
        F0 = t * (u0[K] - u0[L]);
        Fp = t * (ph[K] - ph[L]);
        auto lm = [](double a, double b) {
          return a == b ? a : (a - b) / (std::log(a) - std::log(b));
        };
        s1 = lm(u1[K], u1[L]);
        s2 = lm(u2[K], u2[L]);
        s0 = lm(u0[K], u0[L]);
      }
      double G1 = s0 * F1 - s1 * F0 + mp.beta * mp.z * s0 * s1 * Fp;
      double G2 = s0 * F2 - s2 * F0 + mp.beta * mp.z * s0 * s2 * Fp;
      r[3 * K + 0] += G1;
      r[3 * K + 1] += G2;
      r[3 * K + 2] += lam2 * Fp;
      if (!e.boundary()) {
        int L = e.cell_L;
        r[3 * L + 0] -= G1;
        r[3 * L + 1] -= G2;
        r[3 * L + 2] -= lam2 * Fp;
      }
    }
    return r;
  };

  // dense Newton with FD Jacobian
  Eigen::VectorXd x(6);
  x << prev.u[1][0], prev.u[2][0], prev.phi[0], prev.u[1][1], prev.u[2][1], prev.phi[1];
  for (int it = 0; it < 60; ++it) {
    Eigen::VectorXd r = hand_residual(x);
    if (r.lpNorm<Eigen::Infinity>() < 1e-13) break;
    Eigen::MatrixXd Jd(6, 6);
    for (int c = 0; c < 6; ++c) {
      Eigen::VectorXd xp = x, xm = x;
      double h = 1e-7;
      xp[c] += h;
      xm[c] -= h;
      Jd.col(c) = (hand_residual(xp) - hand_residual(xm)) / (2 * h);
    }
    x -= Jd.fullPivLu().solve(r);
  }
  CHECK(hand_residual(x).lpNorm<Eigen::Infinity>() <= 1e-12);

  FVState next = scheme.newton_advance(prev, tau);
  CHECK(std::abs(next.u[1][0] - x[0]) <= 1e-9);
  CHECK(std::abs(next.u[2][0] - x[1]) <= 1e-9);
  CHECK(std::abs(next.phi[0] - x[2]) <= 1e-9);
  CHECK(std::abs(next.u[1][1] - x[3]) <= 1e-9);
  CHECK(std::abs(next.u[2][1] - x[4]) <= 1e-9);
  CHECK(std::abs(next.phi[1] - x[5]) <= 1e-9);
}

TEST_CASE("update norm scales linearly with the step size") {
  Mesh mesh = build_structured_mesh(4, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 1;
  BoundaryData bd;
  bd.species = {{0.8, 0.2}, {0.7, 0.3}};
  bd.phi = {0.0, 0.0};
  Scheme scheme(mesh, mp, bd);
  // a genuinely non-steady smooth state so the first update is O(tau)
  auto f = [](Vec2 p, double) { return 0.2 + 0.1 * p.x + 0.05 * p.x * (1.0 - p.x); };
  FVState init = scheme.project_initial({f});

  auto update_norm = [&](double tau) {
    FVState next = scheme.newton_advance(init, tau);
    double m = 0.0;
    for (size_t K = 0; K < mesh.cells.size(); ++K)
      m = std::max(m, std::abs(next.u[1][K] - init.u[1][K]));
    return m;
  };
  // steps small enough that tau * lambda_max(diffusion) << 1 on this mesh
  double r = update_norm(1e-4) / update_norm(1e-5);
  CHECK(r > 8.0);
  CHECK(r < 12.0);
}

TEST_CASE("pure-Neumann configuration conserves discrete mass") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{});  // all sides Neumann
  ModelParams mp;
  mp.n_species = 2;  // z = 0: potential row is skipped, fluxes decouple
  Scheme scheme(mesh, mp, flat_boundary(2, 0));
  auto f1 = [](Vec2 p, double) { return 0.2 + 0.1 * p.x; };
  auto f2 = [](Vec2 p, double) { return 0.25 - 0.08 * p.y; };
  FVState init = scheme.project_initial({f1, f2});

  // telescoping flux sum at an arbitrary positive state
  FVState cur = random_state(mesh, 2, false, 41);
  Eigen::VectorXd r;
  Eigen::SparseMatrix<double> J;
  scheme.assemble_step_system(init, cur, 0.25, r, J);
  int B = scheme.block_size();
  for (int i = 1; i <= 2; ++i) {
    double flux_sum = 0.0;
    for (size_t K = 0; K < mesh.cells.size(); ++K) {
      double time_term = mesh.cells[K].area * (cur.u[i][K] - init.u[i][K]) / 0.25;
      flux_sum += r[static_cast<int>(K) * B + i - 1] - time_term;
    }
    CHECK(std::abs(flux_sum) <= 1e-13);
  }

  std::vector<double> times = {0.0, 0.25, 0.5, 0.75, 1.0};
  Scheme::NewtonOptions opt;
  opt.tolerance = 1e-13;
  Trajectory traj;
  traj.states.push_back(init);
  for (int j = 1; j < 5; ++j) traj.states.push_back(scheme.newton_advance(traj.states.back(), 0.25, opt));
  for (int i = 0; i <= 2; ++i) {
    double mass0 = 0.0;
    for (size_t K = 0; K < mesh.cells.size(); ++K) mass0 += mesh.cells[K].area * init.u[i][K];
    for (const FVState& s : traj.states) {
      double mass = 0.0;
      for (size_t K = 0; K < mesh.cells.size(); ++K) mass += mesh.cells[K].area * s.u[i][K];
      CHECK(std::abs(mass - mass0) <= 1e-10);
    }
  }
}

TEST_CASE("run_trajectory bookkeeping") {
  Mesh mesh = build_structured_mesh(2, GammaDSpec{true, true, false, false});
  ModelParams mp;
  mp.n_species = 1;
  BoundaryData bd;
  bd.species = {{0.85, 0.15}, {0.85, 0.15}};
  bd.phi = {0.0, 0.0};
  Scheme scheme(mesh, mp, bd);
  auto c = [](Vec2, double) { return 0.15; };
  FVState init = scheme.project_initial({c});

  SUBCASE("zero steps returns only the initial state") {
    Trajectory traj = scheme.run_trajectory(init, {0.0});
    CHECK(traj.states.size() == 1);
  }
  SUBCASE("constant data stays constant over steps") {
    Trajectory traj = scheme.run_trajectory(init, {0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(traj.states.size() == 5);
    for (const FVState& s : traj.states)
      for (size_t K = 0; K < mesh.cells.size(); ++K)
        CHECK(s.u[1][K] == doctest::Approx(0.15).epsilon(1e-11));
  }
  SUBCASE("non-increasing grids are rejected") {
    CHECK_THROWS_AS(scheme.run_trajectory(init, {0.0, 0.5, 0.5}), std::invalid_argument);
  }
}
