#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ionfv/quadrature.hpp"
#include "ionfv/reconstruct.hpp"

using namespace ionfv;

namespace {

GammaDSpec left_right() {
  GammaDSpec g;
  g.left = g.right = true;
  return g;
}

// Independent edge quadrature: 401-point composite Simpson.
double simpson_edge(const Mesh& mesh, int edge, const std::function<double(Vec2)>& f) {
  const Edge& e = mesh.edges[edge];
  Vec2 a = mesh.vertices[e.v[0]].pos, b = mesh.vertices[e.v[1]].pos;
  int n = 400;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    double t = static_cast<double>(i) / n;
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * f(a * (1.0 - t) + b * t);
  }
  return acc * e.length / (3.0 * n);
}

std::vector<double> random_targets(const Mesh& mesh, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> t(mesh.edges.size());
  for (auto& v : t) v = uni(rng);
  return t;
}

}  // namespace

TEST_CASE("constants reproduce exactly") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  const double c = 0.42;
  std::vector<double> values(mesh.cells.size(), c);
  std::vector<double> targets(mesh.edges.size(), 0.0);
  MorleyFunction f =
      reconstruct_potential_like(mesh, w, values, targets, [&](int) { return c; });
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    Vec2 p{uni(rng), uni(rng)};
    int cell = mesh.locate(p);
    REQUIRE(cell >= 0);
    CHECK(std::abs(f.value(cell, p) - c) <= 1e-13);
    CHECK(f.gradient(cell, p).norm() <= 1e-12);
    CHECK(std::abs(f.laplacian(cell, p)) <= 1e-11);
  }
}

TEST_CASE("global affine data is reproduced exactly") {
  // g is affine with a per-component-constant Dirichlet trace.
  auto g = [](Vec2 p) { return 0.3 + 0.7 * p.x; };
  Vec2 grad_g{0.7, 0.0};
  Mesh mesh = build_structured_mesh(3, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  std::vector<double> values(mesh.cells.size());
  for (size_t K = 0; K < mesh.cells.size(); ++K) values[K] = g(mesh.cells[K].collocation);
  std::vector<double> targets(mesh.edges.size());
  for (size_t e = 0; e < mesh.edges.size(); ++e)
    targets[e] = grad_g.dot(mesh.edges[e].normal_K) * mesh.edges[e].length;
  auto pin = [&](int comp) { return comp == 0 ? g({0.0, 0.0}) : g({1.0, 0.0}); };
  MorleyFunction f = reconstruct_potential_like(mesh, w, values, targets, pin);

  std::mt19937 rng(9);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Vec2 p{uni(rng), uni(rng)};
    int cell = mesh.locate(p);
    CHECK(std::abs(f.value(cell, p) - g(p)) <= 1e-11);
    CHECK((f.gradient(cell, p) - grad_g).norm() <= 1e-10);
  }
}

TEST_CASE("dof round trip: targets and vertex values are reproduced") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> uni(0.2, 1.0);
  std::vector<double> values(mesh.cells.size());
  for (auto& v : values) v = uni(rng);
  std::vector<double> targets = random_targets(mesh, 18);
  const double pin_value = 0.55;
  MorleyFunction f =
      reconstruct_potential_like(mesh, w, values, targets, [&](int) { return pin_value; });

  for (int ci = 0; ci < static_cast<int>(mesh.cells.size()); ++ci) {
    // vertex dofs
    for (int k = 0; k < 3; ++k) {
      int vid = mesh.cells[ci].v[k];
      Vec2 a = mesh.vertices[vid].pos;
      double expected = pin_value;
      if (mesh.vertices[vid].kind != VertexKind::Dirichlet) {
        expected = 0.0;
        for (auto [cell, weight] : w.stencil[vid]) expected += weight * values[cell];
      }
      CHECK(std::abs(f.value(ci, a) - expected) <= 1e-12);
    }
    // flux dofs by independent quadrature
    for (int ei : mesh.cells[ci].edges) {
      Vec2 n = mesh.normal(ei, ci);
      double target = (mesh.edges[ei].cell_K == ci) ? targets[ei] : -targets[ei];
      double integral =
          simpson_edge(mesh, ei, [&](Vec2 x) { return f.gradient(ci, x).dot(n); });
      CHECK(std::abs(integral - target) <= 1e-10 * std::max(1.0, std::abs(target)));
    }
  }
}

TEST_CASE("C0 conformity and Dirichlet traces") {
  Mesh mesh = build_structured_mesh(3, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> uni(0.2, 0.8);
  std::vector<double> values(mesh.cells.size());
  for (auto& v : values) v = uni(rng);
  std::vector<double> targets = random_targets(mesh, 24);
  const double pin0 = 0.6, pin1 = 0.35;
  MorleyFunction f = reconstruct_potential_like(mesh, w, values, targets,
                                                [&](int c) { return c == 0 ? pin0 : pin1; });
  for (int ei = 0; ei < static_cast<int>(mesh.edges.size()); ++ei) {
    const Edge& e = mesh.edges[ei];
    Vec2 a = mesh.vertices[e.v[0]].pos, b = mesh.vertices[e.v[1]].pos;
    for (int s = 0; s < 5; ++s) {
      double t = s / 4.0;
      Vec2 p = a * (1.0 - t) + b * t;
      if (e.kind == EdgeKind::Interior)
        CHECK(std::abs(f.value(e.cell_K, p) - f.value(e.cell_L, p)) <= 1e-12);
      if (e.kind == EdgeKind::Dirichlet)
        CHECK(std::abs(f.value(e.cell_K, p) - (e.dirichlet_component == 0 ? pin0 : pin1)) <=
              1e-12);
    }
  }
}

TEST_CASE("species reconstruction: weight-1 reduction and constants") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  MorleyFunction one;
  one.mesh = &mesh;
  one.q.assign(mesh.cells.size(), {1.0, 1.0, 1.0});
  one.p.assign(mesh.cells.size(), {0.0, 0.0, 0.0});

  std::mt19937 rng(31);
  std::uniform_real_distribution<double> uni(0.2, 1.0);
  std::vector<double> values(mesh.cells.size());
  for (auto& v : values) v = uni(rng);
  std::vector<double> targets = random_targets(mesh, 32);
  auto pin = [](int) { return 0.5; };

  MorleyFunction a = reconstruct_potential_like(mesh, w, values, targets, pin);
  MorleyFunction b = reconstruct_species(mesh, w, one, values, targets, pin);
  for (size_t c = 0; c < mesh.cells.size(); ++c)
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(a.q[c][k] - b.q[c][k]) <= 1e-12);
      CHECK(std::abs(a.p[c][k] - b.p[c][k]) <= 1e-11);
    }

  SUBCASE("constant with zero weighted targets stays constant") {
    std::vector<double> cv(mesh.cells.size(), 0.3);
    std::vector<double> zt(mesh.edges.size(), 0.0);
    MorleyFunction f = reconstruct_species(mesh, w, one, cv, zt, [](int) { return 0.3; });
    Vec2 p{0.4, 0.6};
    int cell = mesh.locate(p);
    CHECK(f.value(cell, p) == doctest::Approx(0.3).epsilon(1e-13));
  }
}

TEST_CASE("species reconstruction with a weighted dof round trip") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  // a positive, non-trivial solvent reconstruction as the weight
  MorleyFunction u0;
  u0.mesh = &mesh;
  u0.q.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  u0.p.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  std::mt19937 rng(33);
  std::uniform_real_distribution<double> uni(0.4, 0.9);
  std::vector<double> vertex_vals(mesh.vertices.size());
  for (auto& v : vertex_vals) v = uni(rng);
  for (size_t c = 0; c < mesh.cells.size(); ++c)
    for (int k = 0; k < 3; ++k) u0.q[c][k] = vertex_vals[mesh.cells[c].v[k]];

  std::vector<double> values(mesh.cells.size());
  for (auto& v : values) v = uni(rng);
  std::vector<double> targets = random_targets(mesh, 34);
  MorleyFunction f = reconstruct_species(mesh, w, u0, values, targets, [](int) { return 0.5; });

  for (int ci = 0; ci < static_cast<int>(mesh.cells.size()); ++ci)
    for (int ei : mesh.cells[ci].edges) {
      Vec2 n = mesh.normal(ei, ci);
      double target = (mesh.edges[ei].cell_K == ci) ? targets[ei] : -targets[ei];
      double integral = simpson_edge(mesh, ei, [&](Vec2 x) {
        return u0.value(ci, x) * f.gradient(ci, x).dot(n);
      });
      CHECK(std::abs(integral - target) <= 1e-10 * std::max(1.0, std::abs(target)));
    }
}

TEST_CASE("non-positive solvent weight is a unisolvence error naming the cell") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  MorleyFunction u0;
  u0.mesh = &mesh;
  u0.q.assign(mesh.cells.size(), {0.5, 0.5, 0.5});
  u0.p.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  u0.q[3] = {0.5, -0.2, 0.5};  // negative corner on cell 3
  std::vector<double> values(mesh.cells.size(), 0.3);
  std::vector<double> targets(mesh.edges.size(), 0.0);
  try {
    reconstruct_species(mesh, w, u0, values, targets, [](int) { return 0.3; });
    FAIL("expected UnisolvenceError");
  } catch (const UnisolvenceError& e) {
    CHECK(e.cell == 3);
  }
}

TEST_CASE("morley evaluation: bubble peak, laplacian vs finite differences") {
  Mesh mesh = build_structured_mesh(1, left_right());
  MorleyFunction f;
  f.mesh = &mesh;
  f.q.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  f.p.assign(mesh.cells.size(), {1.0, 1.0, 1.0});  // p == 1: f = b_K per cell

  const Cell& K = mesh.cells[0];
  Vec2 bary = (mesh.vertices[K.v[0]].pos + mesh.vertices[K.v[1]].pos +
               mesh.vertices[K.v[2]].pos) / 3.0;
  CHECK(f.value(0, bary) == doctest::Approx(1.0).epsilon(1e-13));

  std::mt19937 rng(41);
  std::uniform_real_distribution<double> uni(0.3, 0.7);
  MorleyFunction g;
  g.mesh = &mesh;
  g.q.assign(mesh.cells.size(), {0.2, -0.4, 0.9});
  g.p.assign(mesh.cells.size(), {0.8, 0.1, -0.5});
  for (int k = 0; k < 5; ++k) {
    std::array<double, 3> l = {uni(rng), uni(rng), 0.0};
    double s = l[0] + l[1];
    l[0] /= s * 1.5;
    l[1] /= s * 1.5;
    l[2] = 1.0 - l[0] - l[1];
    Vec2 p = mesh.point_from_barycentric(0, l);
    double h = 1e-5;
    double fd = (g.value(0, {p.x + h, p.y}) + g.value(0, {p.x - h, p.y}) +
                 g.value(0, {p.x, p.y + h}) + g.value(0, {p.x, p.y - h}) - 4.0 * g.value(0, p)) /
                (h * h);
    double lap = g.laplacian(0, p);
    CHECK(std::abs(lap - fd) <= 1e-5 * std::max(1.0, std::abs(lap)));
  }

  SUBCASE("point outside all cells is an error") {
    double s;
    Vec2 v;
    CHECK_THROWS_AS(evaluate_morley(g, {2.0, 2.0}, MorleyEval::Value, s, v), std::domain_error);
  }
}

TEST_CASE("time interpolation weights and derivative") {
  Mesh mesh = build_structured_mesh(1, left_right());
  SpaceTimeReconstruction rec;
  rec.mesh = &mesh;
  rec.times = {0.0, 0.5};
  MorleyFunction f0, f1;
  f0.mesh = f1.mesh = &mesh;
  f0.q.assign(mesh.cells.size(), {1.0, 1.0, 1.0});
  f0.p.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  f1.q.assign(mesh.cells.size(), {2.0, 2.0, 2.0});
  f1.p.assign(mesh.cells.size(), {0.0, 0.0, 0.0});
  rec.steps = {f0, f1};

  Vec2 p{0.4, 0.4};
  int cell = mesh.locate(p);
  CHECK(rec.value(0.5, cell, p) == doctest::Approx(2.0));
  CHECK(rec.value(0.0, cell, p) == doctest::Approx(1.0));
  CHECK(rec.value(0.25, cell, p) == doctest::Approx(1.5));
  MorleyFunction dt = rec.time_derivative(1);
  CHECK(dt.value(cell, p) == doctest::Approx(2.0));  // (2-1)/0.5
  for (double t : {0.1, 0.3, 0.45}) {
    auto [l0, l1] = rec.interpolation_weights(1, t);
    CHECK(l0 + l1 == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(rec.interval(0.7), std::domain_error);
}

TEST_CASE("discrete_A: constant trajectories, linear growth, and the j=0 hand case") {
  std::istringstream in(
      "vertices 4 cells 2\n"
      "0 0 2\n1 0 1\n0.5 0.8 2\n0.5 -0.8 1\n"
      "0 1 2\n0 3 1\n");
  Mesh mesh = load_mesh(in);
  ModelParams mp;
  mp.n_species = 1;
  BoundaryData bd;
  bd.species = {{0.85, 0.15}};
  bd.phi = {0.0};
  Scheme scheme(mesh, mp, bd);

  Trajectory traj;
  FVState s0;
  s0.time = 0.0;
  s0.u = {{0.7, 0.6}, {0.3, 0.4}};
  s0.phi = {0.0, 0.0};
  FVState s1 = s0;
  s1.step = 1;
  s1.time = 0.5;
  traj.states = {s0, s1};

  SUBCASE("constant solvent gives A = 0 for j > 0") {
    auto A = discrete_A(scheme, traj, 1);
    CHECK(A[0] == doctest::Approx(0.0));
    CHECK(A[1] == doctest::Approx(0.0));
  }
  SUBCASE("linear-in-time solvent gives A = -slope") {
    traj.states[1].u[0] = {0.7 + 0.5 * 0.2, 0.6 + 0.5 * 0.2};
    auto A = discrete_A(scheme, traj, 1);
    CHECK(A[0] == doctest::Approx(-0.2).epsilon(1e-13));
    CHECK(A[1] == doctest::Approx(-0.2).epsilon(1e-13));
  }
  SUBCASE("j = 0 matches the hand-assembled flux sum on two cells") {
    // By hand: only the interior edge and cell 0's Dirichlet edge carry flux.
    auto lm = [](double a, double b) { return (a - b) / (std::log(a) - std::log(b)); };
    double w_int = lm(0.7, 0.6) + lm(0.3, 0.4);
    int interior = -1, dirichlet = -1;
    for (int e = 0; e < static_cast<int>(mesh.edges.size()); ++e) {
      if (mesh.edges[e].kind == EdgeKind::Interior) interior = e;
      if (mesh.edges[e].kind == EdgeKind::Dirichlet) dirichlet = e;
    }
    const Edge& ei = mesh.edges[interior];
    const Edge& ed = mesh.edges[dirichlet];
    double F_int_K = ei.length / ei.d_sigma * (0.7 - 0.6);
    double F_dir = ed.length / ed.d_sigma * (0.7 - 0.85);
    double w_dir = 0.85 + 0.15;
    double A0_expected = (w_int * F_int_K + w_dir * F_dir) / mesh.cells[0].area;
    double A1_expected = (w_int * -F_int_K) / mesh.cells[1].area;

    auto A = discrete_A(scheme, traj, 0);
    CHECK(A[0] == doctest::Approx(A0_expected).epsilon(1e-13));
    CHECK(A[1] == doctest::Approx(A1_expected).epsilon(1e-13));
  }
}

TEST_CASE("full pipeline reconstruction is conforming on a solved trajectory") {
  Mesh mesh = build_structured_mesh(2, left_right());
  VertexWeights w = vertex_interpolation_weights(mesh);
  ModelParams mp;
  mp.n_species = 2;
  BoundaryData bd;
  bd.species = {{0.7, 0.15, 0.15}, {0.7, 0.15, 0.15}};
  bd.phi = {0.0, 0.0};
  Scheme scheme(mesh, mp, bd);
  auto f1 = [](Vec2 p, double) { return 0.15 + 0.1 * p.x * (1.0 - p.x); };
  auto f2 = [](Vec2 p, double) { return 0.15 - 0.05 * p.x * (1.0 - p.x); };
  FVState init = scheme.project_initial({f1, f2});
  Trajectory traj = scheme.run_trajectory(init, {0.0, 0.25, 0.5});
  ReconstructionSet recs = build_reconstructions(scheme, w, traj);

  const QuadratureRule& erule = get_rule(DomainKind::Edge, 9);
  for (int j = 0; j <= traj.last(); ++j) {
    const MorleyFunction& u0 = recs.u0.steps[j];
    for (int eidx = 0; eidx < static_cast<int>(mesh.edges.size()); ++eidx) {
      const Edge& e = mesh.edges[eidx];
      if (e.kind == EdgeKind::Interior) {
        double fK = integrate_edge(mesh, eidx, erule,
                                   [&](Vec2 x) { return u0.gradient(e.cell_K, x).dot(e.normal_K); });
        double fL = integrate_edge(mesh, eidx, erule, [&](Vec2 x) {
          return u0.gradient(e.cell_L, x).dot(e.normal_K * -1.0);
        });
        CHECK(std::abs(fK + fL) <= 1e-11 * std::max(1.0, std::abs(fK)));
      }
      if (e.kind == EdgeKind::Neumann) {
        double flux = integrate_edge(mesh, eidx, erule,
                                     [&](Vec2 x) { return u0.gradient(e.cell_K, x).dot(e.normal_K); });
        CHECK(std::abs(flux) <= 1e-11);
      }
    }
  }
}
