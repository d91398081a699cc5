#include "ionfv/bench.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ionfv/quadrature.hpp"

namespace ionfv::bench {

namespace {

using cplx = std::complex<double>;
constexpr double kCsStep = 1e-100;  // complex-step size (no cancellation)

// Derivative cross-check by complex-step differentiation: for analytic f,
// Im f(x + ih)/h = f'(x) up to O(h^2).
template <class F, class DF>
void check_derivative(const F& f, const DF& df, int var, const std::string& label) {
  std::mt19937 rng(1234u + static_cast<unsigned>(var));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    double t = uni(rng), x = uni(rng), y = uni(rng);
    cplx a[3] = {t, x, y};
    a[var] += cplx(0.0, kCsStep);
    double cs = f(a[0], a[1], a[2]).imag() / kCsStep;
    double ref = df(cplx(t), cplx(x), cplx(y)).real();
    if (std::abs(cs - ref) > 1e-8 * (1.0 + std::abs(ref)))
      throw std::logic_error("manufactured case: derivative check failed for " + label);
  }
}

template <class V, class DT, class DX, class DY, class DXX, class DYY>
void check_field(const V& v, const DT& dt, const DX& dx, const DY& dy, const DXX& dxx,
                 const DYY& dyy, const std::string& label) {
  check_derivative(v, dt, 0, label + ".dt");
  check_derivative(v, dx, 1, label + ".dx");
  check_derivative(v, dy, 2, label + ".dy");
  check_derivative(dx, dxx, 1, label + ".dxx");
  check_derivative(dy, dyy, 2, label + ".dyy");
}

template <class V, class DT, class DX, class DY, class DXX, class DYY>
FieldEval wrap_field(V v, DT dt, DX dx, DY dy, DXX dxx, DYY dyy) {
  FieldEval f;
  f.value = [v](double t, Vec2 p) { return v(cplx(t), cplx(p.x), cplx(p.y)).real(); };
  f.dt = [dt](double t, Vec2 p) { return dt(cplx(t), cplx(p.x), cplx(p.y)).real(); };
  f.dx = [dx](double t, Vec2 p) { return dx(cplx(t), cplx(p.x), cplx(p.y)).real(); };
  f.dy = [dy](double t, Vec2 p) { return dy(cplx(t), cplx(p.x), cplx(p.y)).real(); };
  f.lap = [dxx, dyy](double t, Vec2 p) {
    cplx ct(t), cx(p.x), cy(p.y);
    return (dxx(ct, cx, cy) + dyy(ct, cx, cy)).real();
  };
  return f;
}

FieldEval derive_solvent(const std::vector<FieldEval>& species) {
  auto sum = [species](auto which, double t, Vec2 p) {
    double s = 0.0;
    for (const auto& f : species) s += which(f)(t, p);
    return s;
  };
  FieldEval f;
  f.value = [sum](double t, Vec2 p) {
    return 1.0 - sum([](const FieldEval& g) { return g.value; }, t, p);
  };
  f.dt = [sum](double t, Vec2 p) {
    return -sum([](const FieldEval& g) { return g.dt; }, t, p);
  };
  f.dx = [sum](double t, Vec2 p) {
    return -sum([](const FieldEval& g) { return g.dx; }, t, p);
  };
  f.dy = [sum](double t, Vec2 p) {
    return -sum([](const FieldEval& g) { return g.dy; }, t, p);
  };
  f.lap = [sum](double t, Vec2 p) {
    return -sum([](const FieldEval& g) { return g.lap; }, t, p);
  };
  return f;
}

// s_i = dt v_i - div(v_0 grad v_i - v_i grad v_0 + beta z v_0 v_i grad Psi)
SpaceTimeFn make_source(const FieldEval& vi, const FieldEval& v0, const FieldEval* psi,
                        double beta_z) {
  FieldEval psi_copy = psi ? *psi : FieldEval{};
  bool with_psi = psi != nullptr && beta_z != 0.0;
  return [vi, v0, psi_copy, with_psi, beta_z](Vec2 p, double t) {
    double div = v0.value(t, p) * vi.lap(t, p) - vi.value(t, p) * v0.lap(t, p);
    if (with_psi) {
      double gpx = psi_copy.dx(t, p), gpy = psi_copy.dy(t, p);
      double prod_x = vi.value(t, p) * v0.dx(t, p) + v0.value(t, p) * vi.dx(t, p);
      double prod_y = vi.value(t, p) * v0.dy(t, p) + v0.value(t, p) * vi.dy(t, p);
      div += beta_z * (prod_x * gpx + prod_y * gpy +
                       v0.value(t, p) * vi.value(t, p) * psi_copy.lap(t, p));
    }
    return vi.dt(t, p) - div;
  };
}

double lattice_infimum_solvent(const FieldEval& v0, double T) {
  double inf = std::numeric_limits<double>::infinity();
  const int nt = 51, nx = 201, ny = 21;
  for (int it = 0; it < nt; ++it)
    for (int ix = 0; ix < nx; ++ix)
      for (int iy = 0; iy < ny; ++iy) {
        double t = T * it / (nt - 1.0);
        Vec2 p{ix / (nx - 1.0), iy / (ny - 1.0)};
        inf = std::min(inf, v0.value(t, p));
      }
  return inf;
}

ManufacturedCase build_reduced(double beta, double lambda) {
  // u = x(1-x) shared; gaussian envelopes with phi' = -c(x-x0), phi'' = -c.
  auto u = [](cplx x) { return x * (1.0 - x); };
  auto up = [](cplx x) { return 1.0 - 2.0 * x; };
  auto gauss = [](cplx x, double c, double x0) { return std::exp(-c * (x - x0) * (x - x0)); };
  // g = u * e^phi: g' = w(u' + u phi'), g'' = w(u'' + 2u' phi' + u(phi'' + phi'^2))
  auto genv = [u, gauss](cplx x, double c, double x0) { return u(x) * gauss(x, c, x0); };
  auto genv_p = [u, up, gauss](cplx x, double c, double x0) {
    cplx ph = -2.0 * c * (x - x0);
    return gauss(x, c, x0) * (up(x) + u(x) * ph);
  };
  auto genv_pp = [u, up, gauss](cplx x, double c, double x0) {
    cplx ph = -2.0 * c * (x - x0);
    return gauss(x, c, x0) * (-2.0 + 2.0 * up(x) * ph + u(x) * (-2.0 * c + ph * ph));
  };

  auto v1 = [genv](cplx t, cplx x, cplx) { return 0.1 + 0.1 * x + t * genv(x, 20.0, 0.0); };
  auto v1_dt = [genv](cplx, cplx x, cplx) { return genv(x, 20.0, 0.0); };
  auto v1_dx = [genv_p](cplx t, cplx x, cplx) { return 0.1 + t * genv_p(x, 20.0, 0.0); };
  auto v1_dxx = [genv_pp](cplx t, cplx x, cplx) { return t * genv_pp(x, 20.0, 0.0); };
  auto zero = [](cplx, cplx, cplx) { return cplx(0.0); };

  auto m = [u](cplx x) { return u(x) * std::sin(x); };
  auto mp = [u, up](cplx x) { return up(x) * std::sin(x) + u(x) * std::cos(x); };
  auto mpp = [u, up](cplx x) {
    return -2.0 * std::sin(x) + 2.0 * up(x) * std::cos(x) - u(x) * std::sin(x);
  };
  auto v2 = [m](cplx t, cplx x, cplx) {
    return 0.1 - 0.05 * x - 0.5 * (1.0 - std::cos(t)) * m(x);
  };
  auto v2_dt = [m](cplx t, cplx x, cplx) { return -0.5 * std::sin(t) * m(x); };
  auto v2_dx = [mp](cplx t, cplx x, cplx) {
    return -0.05 - 0.5 * (1.0 - std::cos(t)) * mp(x);
  };
  auto v2_dxx = [mpp](cplx t, cplx x, cplx) { return -0.5 * (1.0 - std::cos(t)) * mpp(x); };

  auto v3 = [genv](cplx t, cplx x, cplx) { return 0.2 + 0.1 * x + t * genv(x, 20.0, 0.5); };
  auto v3_dt = [genv](cplx, cplx x, cplx) { return genv(x, 20.0, 0.5); };
  auto v3_dx = [genv_p](cplx t, cplx x, cplx) { return 0.1 + t * genv_p(x, 20.0, 0.5); };
  auto v3_dxx = [genv_pp](cplx t, cplx x, cplx) { return t * genv_pp(x, 20.0, 0.5); };

  check_field(v1, v1_dt, v1_dx, zero, v1_dxx, zero, "reduced.v1");
  check_field(v2, v2_dt, v2_dx, zero, v2_dxx, zero, "reduced.v2");
  check_field(v3, v3_dt, v3_dx, zero, v3_dxx, zero, "reduced.v3");

  ManufacturedCase mc;
  mc.name = "reduced_s7";
  mc.n_species = 3;
  mc.T = 1.0;
  mc.gamma = 0.3;
  mc.has_potential = false;
  mc.gamma_d.left = mc.gamma_d.right = true;
  mc.species.push_back(wrap_field(v1, v1_dt, v1_dx, zero, v1_dxx, zero));
  mc.species.push_back(wrap_field(v2, v2_dt, v2_dx, zero, v2_dxx, zero));
  mc.species.push_back(wrap_field(v3, v3_dt, v3_dx, zero, v3_dxx, zero));
  mc.solvent = derive_solvent(mc.species);

  mc.params.n_species = 3;
  mc.params.z = 0.0;
  mc.params.beta = beta > 0.0 ? beta : 1.0;
  mc.params.lambda = lambda > 0.0 ? lambda : 1.0;
  for (int i = 0; i < 3; ++i)
    mc.params.sources.push_back(make_source(mc.species[i], mc.solvent, nullptr, 0.0));
  return mc;
}

ManufacturedCase build_general(double beta, double lambda) {
  double be = beta > 0.0 ? beta : 1.0;
  double la = lambda > 0.0 ? lambda : 1.0;
  const double z = 1.0;

  auto u = [](cplx x) { return x * (1.0 - x); };
  auto up = [](cplx x) { return 1.0 - 2.0 * x; };
  auto theta = [](cplx y) {
    return y * y * y * y / 3.0 - 2.0 * y * y * y / 3.0 + y * y / 3.0 + 47.0 / 48.0;
  };
  auto theta_p = [](cplx y) { return (4.0 * y * y * y - 6.0 * y * y + 2.0 * y) / 3.0; };
  auto theta_pp = [](cplx y) { return (12.0 * y * y - 12.0 * y + 2.0) / 3.0; };
  auto gauss = [](cplx x) { return std::exp(-100.0 * (x - 0.5) * (x - 0.5)); };
  auto G = [u, gauss](cplx x) { return u(x) * gauss(x); };
  auto Gp = [u, up, gauss](cplx x) {
    cplx ph = -200.0 * (x - 0.5);
    return gauss(x) * (up(x) + u(x) * ph);
  };
  auto Gpp = [u, up, gauss](cplx x) {
    cplx ph = -200.0 * (x - 0.5);
    return gauss(x) * (-2.0 + 2.0 * up(x) * ph + u(x) * (-200.0 + ph * ph));
  };

  auto v1 = [theta, G](cplx t, cplx x, cplx y) { return 0.1 + t * t * theta(y) * G(x); };
  auto v1_dt = [theta, G](cplx t, cplx x, cplx y) { return 2.0 * t * theta(y) * G(x); };
  auto v1_dx = [theta, Gp](cplx t, cplx x, cplx y) { return t * t * theta(y) * Gp(x); };
  auto v1_dy = [theta_p, G](cplx t, cplx x, cplx y) { return t * t * theta_p(y) * G(x); };
  auto v1_dxx = [theta, Gpp](cplx t, cplx x, cplx y) { return t * t * theta(y) * Gpp(x); };
  auto v1_dyy = [theta_pp, G](cplx t, cplx x, cplx y) { return t * t * theta_pp(y) * G(x); };

  auto C = [u](cplx x) { return u(x) * std::cos(x); };
  auto Cp = [u, up](cplx x) { return up(x) * std::cos(x) - u(x) * std::sin(x); };
  auto Cpp = [u, up](cplx x) {
    return -2.0 * std::cos(x) - 2.0 * up(x) * std::sin(x) - u(x) * std::cos(x);
  };
  auto v2 = [theta, C](cplx t, cplx x, cplx y) {
    return 0.2 * x + 0.1 * (1.0 - x) - 0.5 * std::sin(t) * theta(y) * C(x);
  };
  auto v2_dt = [theta, C](cplx t, cplx x, cplx y) {
    return -0.5 * std::cos(t) * theta(y) * C(x);
  };
  auto v2_dx = [theta, Cp](cplx t, cplx x, cplx y) {
    return cplx(0.1) - 0.5 * std::sin(t) * theta(y) * Cp(x);
  };
  auto v2_dy = [theta_p, C](cplx t, cplx x, cplx y) {
    return -0.5 * std::sin(t) * theta_p(y) * C(x);
  };
  auto v2_dxx = [theta, Cpp](cplx t, cplx x, cplx y) {
    return -0.5 * std::sin(t) * theta(y) * Cpp(x);
  };
  auto v2_dyy = [theta_pp, C](cplx t, cplx x, cplx y) {
    return -0.5 * std::sin(t) * theta_pp(y) * C(x);
  };

  auto v3 = [theta, G](cplx t, cplx x, cplx y) { return 0.2 - 0.1 * x - 0.55 * t * theta(y) * G(x); };
  auto v3_dt = [theta, G](cplx, cplx x, cplx y) { return -0.55 * theta(y) * G(x); };
  auto v3_dx = [theta, Gp](cplx t, cplx x, cplx y) {
    return cplx(-0.1) - 0.55 * t * theta(y) * Gp(x);
  };
  auto v3_dy = [theta_p, G](cplx t, cplx x, cplx y) { return -0.55 * t * theta_p(y) * G(x); };
  auto v3_dxx = [theta, Gpp](cplx t, cplx x, cplx y) { return -0.55 * t * theta(y) * Gpp(x); };
  auto v3_dyy = [theta_pp, G](cplx t, cplx x, cplx y) { return -0.55 * t * theta_pp(y) * G(x); };

  // Psi = k x(x-1)(5x^2 - 2.6x - 2.4 + t(x^2-x)) theta(y); note b_t = x^2-x = a.
  const double k = 2.5 / 3.0;
  auto a_ = [](cplx x) { return x * x - x; };
  auto b_ = [a_](cplx t, cplx x) { return 5.0 * x * x - 2.6 * x - 2.4 + t * a_(x); };
  auto P = [a_, b_](cplx t, cplx x) { return a_(x) * b_(t, x); };
  auto P_x = [a_, b_](cplx t, cplx x) {
    cplx ap = 2.0 * x - 1.0;
    cplx bx = 10.0 * x - 2.6 + t * ap;
    return ap * b_(t, x) + a_(x) * bx;
  };
  auto P_xx = [a_, b_](cplx t, cplx x) {
    cplx ap = 2.0 * x - 1.0;
    cplx bx = 10.0 * x - 2.6 + t * ap;
    return 2.0 * b_(t, x) + 2.0 * ap * bx + a_(x) * (10.0 + 2.0 * t);
  };
  auto psi = [theta, P, k](cplx t, cplx x, cplx y) { return k * P(t, x) * theta(y); };
  auto psi_dt = [theta, a_, k](cplx, cplx x, cplx y) {
    return k * a_(x) * a_(x) * theta(y);
  };
  auto psi_dx = [theta, P_x, k](cplx t, cplx x, cplx y) { return k * P_x(t, x) * theta(y); };
  auto psi_dy = [theta_p, P, k](cplx t, cplx x, cplx y) { return k * P(t, x) * theta_p(y); };
  auto psi_dxx = [theta, P_xx, k](cplx t, cplx x, cplx y) { return k * P_xx(t, x) * theta(y); };
  auto psi_dyy = [theta_pp, P, k](cplx t, cplx x, cplx y) { return k * P(t, x) * theta_pp(y); };

  check_field(v1, v1_dt, v1_dx, v1_dy, v1_dxx, v1_dyy, "general.v1");
  check_field(v2, v2_dt, v2_dx, v2_dy, v2_dxx, v2_dyy, "general.v2");
  check_field(v3, v3_dt, v3_dx, v3_dy, v3_dxx, v3_dyy, "general.v3");
  check_field(psi, psi_dt, psi_dx, psi_dy, psi_dxx, psi_dyy, "general.psi");

  ManufacturedCase mc;
  mc.name = "general_s7";
  mc.n_species = 3;
  mc.T = 1.0;
  mc.has_potential = true;
  mc.gamma_d.left = mc.gamma_d.right = true;
  mc.species.push_back(wrap_field(v1, v1_dt, v1_dx, v1_dy, v1_dxx, v1_dyy));
  mc.species.push_back(wrap_field(v2, v2_dt, v2_dx, v2_dy, v2_dxx, v2_dyy));
  mc.species.push_back(wrap_field(v3, v3_dt, v3_dx, v3_dy, v3_dxx, v3_dyy));
  mc.solvent = derive_solvent(mc.species);
  mc.psi = wrap_field(psi, psi_dt, psi_dx, psi_dy, psi_dxx, psi_dyy);

  mc.params.n_species = 3;
  mc.params.z = z;
  mc.params.beta = be;
  mc.params.lambda = la;
  for (int i = 0; i < 3; ++i)
    mc.params.sources.push_back(make_source(mc.species[i], mc.solvent, &mc.psi, be * z));
  // The manufactured potential does not solve the Poisson equation exactly;
  // the mismatch is injected symmetrically into the scheme and estimator.
  {
    FieldEval psi_f = mc.psi;
    FieldEval v0 = mc.solvent;
    double lam2 = la * la;
    mc.params.potential_source = [psi_f, v0, lam2, z](Vec2 p, double t) {
      return -lam2 * psi_f.lap(t, p) - z * (1.0 - v0.value(t, p));
    };
  }
  mc.gamma = lattice_infimum_solvent(mc.solvent, mc.T) - 1e-6;
  if (mc.gamma <= 0.0)
    throw std::logic_error("general_s7: manufactured solvent not bounded away from zero");
  return mc;
}

}  // namespace

ManufacturedCase manufactured_case(const std::string& name, double beta_override,
                                   double lambda_override) {
  if (name == "reduced_s7") return build_reduced(beta_override, lambda_override);
  if (name == "general_s7") return build_general(beta_override, lambda_override);
  throw std::invalid_argument("unknown manufactured case: " + name);
}

BoundaryData ManufacturedCase::boundary_for(const Mesh& mesh) const {
  // Components are numbered left, right (the benchmark Dirichlet sides).
  BoundaryData bd;
  int comps = mesh.dirichlet_component_count;
  std::vector<Vec2> sample(comps, Vec2{0.0, 0.5});
  if (comps >= 2) sample[1] = Vec2{1.0, 0.5};
  bd.species.resize(comps);
  bd.phi.resize(comps, 0.0);
  for (int c = 0; c < comps; ++c) {
    bd.species[c].resize(n_species + 1);
    bd.species[c][0] = solvent.value(0.0, sample[c]);
    for (int i = 1; i <= n_species; ++i) bd.species[c][i] = species[i - 1].value(0.0, sample[c]);
    if (has_potential) bd.phi[c] = psi.value(0.0, sample[c]);
  }
  // Guard: the data must be constant in time and per component.
  for (int c = 0; c < comps; ++c)
    for (int i = 1; i <= n_species; ++i) {
      double late = species[i - 1].value(0.7 * T, sample[c]);
      if (std::abs(late - bd.species[c][i]) > 1e-12)
        throw std::logic_error("manufactured boundary data not constant in time");
    }
  for (const Vertex& v : mesh.vertices) {
    if (v.kind != VertexKind::Dirichlet) continue;
    for (int i = 1; i <= n_species; ++i) {
      double val = species[i - 1].value(0.0, v.pos);
      if (std::abs(val - bd.species[v.dirichlet_component][i]) > 1e-10)
        throw std::logic_error("manufactured boundary data not constant per component");
    }
  }
  return bd;
}

std::vector<SpaceTimeFn> ManufacturedCase::initial_fields() const {
  std::vector<SpaceTimeFn> init;
  for (const FieldEval& f : species)
    init.push_back([f](Vec2 p, double) { return f.value(0.0, p); });
  return init;
}

// --- true errors -------------------------------------------------------------

namespace {

double spatial_l2_diff(const Mesh& mesh, const FieldEval& exact, double t,
                       const MorleyFunction& recon) {
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  double s = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
    s += integrate_cell(mesh, K, rule, [&](Vec2 x) {
      double d = exact.value(t, x) - recon.value(K, x);
      return d * d;
    });
  return std::sqrt(s);
}

// int_K weight(t,x) |grad(exact - recon)|^2
double spatial_grad_diff_sq(const Mesh& mesh, const FieldEval& exact, double t,
                            const MorleyFunction& recon, const FieldEval* weight) {
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, kDefaultTriangleDegree);
  double s = 0.0;
  for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
    s += integrate_cell(mesh, K, rule, [&](Vec2 x) {
      Vec2 ge{exact.dx(t, x), exact.dy(t, x)};
      Vec2 d = ge - recon.gradient(K, x);
      double w = weight ? weight->value(t, x) : 1.0;
      return w * d.dot(d);
    });
  return s;
}

}  // namespace

TrueErrors true_error_fields(const std::vector<FieldEval>& species, const FieldEval& solvent,
                             const FieldEval* psi, const ReconstructionSet& recs,
                             const Trajectory& traj) {
  const Mesh& mesh = *recs.u0.mesh;
  const int n = static_cast<int>(species.size());
  const int J = traj.last();
  TrueErrors err;
  err.max_l2_ui.assign(n, 0.0);
  err.energy_ui.assign(n, 0.0);
  double grad_u0_sq = 0.0, grad_phi_sq = 0.0;
  std::vector<double> energy_sq(n, 0.0);

  auto max_update = [&](double t, const MorleyFunction& u0_t,
                        const std::vector<MorleyFunction>& ui_t) {
    err.max_l2_u0 = std::max(err.max_l2_u0, spatial_l2_diff(mesh, solvent, t, u0_t));
    for (int i = 0; i < n; ++i)
      err.max_l2_ui[i] = std::max(err.max_l2_ui[i], spatial_l2_diff(mesh, species[i], t, ui_t[i]));
  };

  for (int j = 1; j <= J; ++j) {
    double t0 = traj.time(j - 1), t1 = traj.time(j);
    double tau = t1 - t0;
    std::array<double, 3> ts = {t0, 0.5 * (t0 + t1), t1};
    std::array<double, 3> w = {tau / 6.0, 4.0 * tau / 6.0, tau / 6.0};  // Simpson
    for (int s = 0; s < 3; ++s) {
      double t = ts[s];
      MorleyFunction u0_t = recs.u0.at_time(t);
      std::vector<MorleyFunction> ui_t;
      for (int i = 0; i < n; ++i) ui_t.push_back(recs.species[i].at_time(t));
      if (j == 1 || s > 0) max_update(t, u0_t, ui_t);
      grad_u0_sq += w[s] * spatial_grad_diff_sq(mesh, solvent, t, u0_t, nullptr);
      for (int i = 0; i < n; ++i)
        energy_sq[i] += w[s] * spatial_grad_diff_sq(mesh, species[i], t, ui_t[i], &solvent);
      if (psi && recs.has_potential) {
        MorleyFunction phi_t = recs.phi.at_time(t);
        grad_phi_sq += w[s] * spatial_grad_diff_sq(mesh, *psi, t, phi_t, nullptr);
      }
    }
  }
  err.grad_l2_u0 = std::sqrt(grad_u0_sq);
  for (int i = 0; i < n; ++i) err.energy_ui[i] = std::sqrt(energy_sq[i]);
  err.grad_l2_phi = std::sqrt(grad_phi_sq);
  return err;
}

TrueErrors true_error(const ManufacturedCase& mc, const ReconstructionSet& recs,
                      const Trajectory& traj) {
  return true_error_fields(mc.species, mc.solvent, mc.has_potential ? &mc.psi : nullptr, recs,
                           traj);
}

std::vector<double> eoc(const std::vector<double>& values, const std::vector<double>& widths) {
  if (values.size() != widths.size() || values.size() < 2)
    throw std::invalid_argument("eoc: need matching sequences with at least two levels");
  std::vector<double> out;
  for (size_t i = 0; i + 1 < values.size(); ++i) {
    if (values[i] <= 0.0 || values[i + 1] <= 0.0 || widths[i] <= 0.0 || widths[i + 1] <= 0.0)
      throw std::invalid_argument("eoc: values and widths must be positive");
    out.push_back(std::log(values[i + 1] / values[i]) / std::log(widths[i + 1] / widths[i]));
  }
  return out;
}

// --- study driver ------------------------------------------------------------

StudyRow run_level(const ManufacturedCase& mc, int level, const ConstantsLedger& ledger,
                   const std::string& traj_dir) {
  auto t_start = std::chrono::steady_clock::now();
  int n = 1 << (level + 1);
  double h = 1.0 / n;
  Mesh mesh = build_structured_mesh(n, mc.gamma_d);
  VertexWeights weights = vertex_interpolation_weights(mesh);
  Scheme scheme(mesh, mc.params, mc.boundary_for(mesh));

  // The benchmark starts from collocation-point values: the scheme's unknowns
  // carry point-value semantics under the orthogonality condition, and
  // cell-mean data would put an O(1) floor under the step-0 elliptic
  // estimator on this mesh family (centroids off the circumcenters at the
  // boundary halves).
  FVState init = scheme.initial_state_at_collocation(mc.initial_fields());
  int steps = static_cast<int>(std::lround(mc.T / h));
  if (steps < 1) steps = 1;
  double tau = mc.T / steps;
  std::vector<double> times;
  for (int j = 0; j <= steps; ++j) times.push_back(j * tau);
  Trajectory traj = scheme.run_trajectory(init, times);
  ReconstructionSet recs = build_reconstructions(scheme, weights, traj);

  InitialErrors e0;
  {
    const Mesh& m = mesh;
    double worst = 0.0;
    for (int K = 0; K < static_cast<int>(m.cells.size()); ++K)
      worst = std::max(worst, cell_lattice_max(m, K, [&](Vec2 x) {
                         return recs.u0.steps[0].value(K, x) - mc.solvent.value(0.0, x);
                       }));
    e0.linf_u0 = worst;
    double l2 = spatial_l2_diff(m, mc.solvent, 0.0, recs.u0.steps[0]);
    e0.l2sq_u0 = l2 * l2;
    for (int i = 1; i <= mc.n_species; ++i) {
      double e = spatial_l2_diff(m, mc.species[i - 1], 0.0, recs.species[i - 1].steps[0]);
      e0.l2sq_ui.push_back(e * e);
    }
  }

  StudyRow row;
  row.level = level;
  row.h = h;
  row.tau = tau;
  row.report = mc.has_potential ? compute_report_general(scheme, recs, traj, ledger, e0)
                                : compute_report_reduced(scheme, recs, traj, ledger, e0);
  row.errors = true_error(mc, recs, traj);

  const TrueErrors& te = row.errors;
  row.ei0 = std::sqrt(te.max_l2_u0 * te.max_l2_u0 + te.grad_l2_u0 * te.grad_l2_u0) /
            row.report.eta_2J;
  for (int i = 0; i < mc.n_species; ++i)
    row.ei_i.push_back(std::sqrt(te.max_l2_ui[i] * te.max_l2_ui[i] +
                                 te.energy_ui[i] * te.energy_ui[i]) /
                       row.report.eta_2iJ[i]);
  if (mc.has_potential) row.ei_phi = te.grad_l2_phi / row.report.eta_phiJ;

  if (!traj_dir.empty()) save_trajectory(traj_dir, mesh, mc, level, traj);
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return row;
}

StudyReport run_convergence_study(const StudyConfig& cfg) {
  if (cfg.level_min < 0 || cfg.level_max < cfg.level_min)
    throw std::invalid_argument("run_convergence_study: bad level range");
  ManufacturedCase mc = manufactured_case(cfg.case_name, cfg.beta_override, cfg.lambda_override);
  if (cfg.T_overridden) {
    if (cfg.T <= 0.0) throw std::invalid_argument("run_convergence_study: T must be positive");
    mc.T = cfg.T;
  }
  ConstantsLedger lg = cfg.ledger;
  lg.T = mc.T;
  if (!cfg.gamma_overridden) lg.gamma = mc.gamma;
  lg.validate();

  StudyReport rep;
  rep.case_name = mc.name;
  rep.has_potential = mc.has_potential;
  rep.n_species = mc.n_species;
  for (int level = cfg.level_min; level <= cfg.level_max; ++level) {
    std::string tdir;
    if (cfg.write_trajectories)
      tdir = cfg.out_dir + "/traj_" + mc.name + "_L" + std::to_string(level);
    try {
      rep.rows.push_back(run_level(mc, level, lg, tdir));
    } catch (const std::exception& e) {
      throw std::runtime_error("level " + std::to_string(level) + ": " + e.what());
    }
  }
  return rep;
}

// --- reports -----------------------------------------------------------------

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << std::scientific << v;
  return ss.str();
}

std::vector<double> column_eoc(const StudyReport& rep, const std::function<double(const StudyRow&)>& get) {
  std::vector<double> vals, hs;
  for (const auto& r : rep.rows) {
    vals.push_back(get(r));
    hs.push_back(r.h);
  }
  std::vector<double> out(rep.rows.size(), std::numeric_limits<double>::quiet_NaN());
  if (rep.rows.size() >= 2) {
    auto e = eoc(vals, hs);
    for (size_t i = 0; i < e.size(); ++i) out[i] = e[i];
  }
  return out;
}

std::string eoc_str(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream ss;
  ss << std::setprecision(3) << v;
  return ss.str();
}

}  // namespace

void write_csv(const StudyReport& rep, std::ostream& out) {
  const int n = rep.n_species;
  out << "i,h,tau,eta2J,eocEta2J";
  if (!rep.has_potential) out << ",etaInfJ,eocEtaInfJ";
  for (int i = 1; i <= n; ++i) out << ",eta2iJ_" << i << ",eocEta2iJ_" << i;
  if (rep.has_potential) out << ",etaPhiJ,eocEtaPhiJ";
  out << ",errU0Max,errU0Grad";
  for (int i = 1; i <= n; ++i) out << ",errMax_" << i << ",errEnergy_" << i;
  if (rep.has_potential) out << ",errPhiGrad";
  out << ",EI0";
  for (int i = 1; i <= n; ++i) out << ",EI_" << i;
  if (rep.has_potential) out << ",EIPhi";
  out << ",seconds\n";

  auto e2 = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_2J; });
  std::vector<std::vector<double>> ei(n);
  for (int i = 0; i < n; ++i)
    ei[i] = column_eoc(rep, [i](const StudyRow& r) { return r.report.eta_2iJ[i]; });
  std::vector<double> einf, ephi;
  if (!rep.has_potential)
    einf = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_inf_J; });
  else
    ephi = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_phiJ; });

  for (size_t r = 0; r < rep.rows.size(); ++r) {
    const StudyRow& row = rep.rows[r];
    out << row.level << "," << fmt(row.h) << "," << fmt(row.tau) << "," << fmt(row.report.eta_2J)
        << "," << eoc_str(e2[r]);
    if (!rep.has_potential) out << "," << fmt(row.report.eta_inf_J) << "," << eoc_str(einf[r]);
    for (int i = 0; i < n; ++i)
      out << "," << fmt(row.report.eta_2iJ[i]) << "," << eoc_str(ei[i][r]);
    if (rep.has_potential) out << "," << fmt(row.report.eta_phiJ) << "," << eoc_str(ephi[r]);
    out << "," << fmt(row.errors.max_l2_u0) << "," << fmt(row.errors.grad_l2_u0);
    for (int i = 0; i < n; ++i)
      out << "," << fmt(row.errors.max_l2_ui[i]) << "," << fmt(row.errors.energy_ui[i]);
    if (rep.has_potential) out << "," << fmt(row.errors.grad_l2_phi);
    out << "," << fmt(row.ei0);
    for (int i = 0; i < n; ++i) out << "," << fmt(row.ei_i[i]);
    if (rep.has_potential) out << "," << fmt(row.ei_phi);
    out << "," << std::fixed << std::setprecision(2) << row.seconds << std::defaultfloat << "\n";
  }
}

void write_markdown(const StudyReport& rep, std::ostream& out) {
  out << "## " << rep.case_name << "\n\n";
  if (!rep.has_potential) {
    out << "| i | eta_2^J | EOC | eta_inf^J | EOC | eta_2^{1,J} | EOC | EI_0 | EI_1 |\n";
    out << "|---|---------|-----|-----------|-----|-------------|-----|------|------|\n";
  } else {
    out << "| i | eta_2^J | EOC | eta_2^{1,J} | EOC | eta_Phi^J | EOC | EI_0 | EI_1 | EI_Phi |\n";
    out << "|---|---------|-----|-------------|-----|-----------|-----|------|------|--------|\n";
  }
  auto e2 = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_2J; });
  auto e1 = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_2iJ[0]; });
  std::vector<double> extra;
  if (!rep.has_potential)
    extra = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_inf_J; });
  else
    extra = column_eoc(rep, [](const StudyRow& r) { return r.report.eta_phiJ; });
  for (size_t r = 0; r < rep.rows.size(); ++r) {
    const StudyRow& row = rep.rows[r];
    std::ostringstream ss;
    ss << std::setprecision(4);
    if (!rep.has_potential) {
      ss << "| " << row.level << " | " << row.report.eta_2J << " | " << eoc_str(e2[r]) << " | "
         << row.report.eta_inf_J << " | " << eoc_str(extra[r]) << " | " << row.report.eta_2iJ[0]
         << " | " << eoc_str(e1[r]) << " | " << row.ei0 << " | " << row.ei_i[0] << " |\n";
    } else {
      ss << "| " << row.level << " | " << row.report.eta_2J << " | " << eoc_str(e2[r]) << " | "
         << row.report.eta_2iJ[0] << " | " << eoc_str(e1[r]) << " | " << row.report.eta_phiJ
         << " | " << eoc_str(extra[r]) << " | " << row.ei0 << " | " << row.ei_i[0] << " | "
         << row.ei_phi << " |\n";
    }
    out << ss.str();
  }
  if (!rep.rows.empty()) {
    const ConstantsLedger& lg = rep.rows.front().report.ledger;
    out << "\nconstants: q=" << lg.q << " qtilde=" << lg.q_tilde << " pstar=" << lg.p_star
        << " C_Green=" << lg.c_green << " C_G=" << lg.c_G << " C_S=" << lg.c_S
        << " C_F=" << lg.c_F << " C_P2=" << lg.c_P2 << " C_P1=" << lg.c_P1
        << " C_cti=" << lg.c_cti << " gamma=" << lg.gamma << " N_b=" << lg.n_partial
        << " eta2j=" << (lg.eta2_form == Eta2Form::TwoTerm ? "two_term" : "three_term") << "\n";
  }
  out << "\n";
}

// --- config ------------------------------------------------------------------

void apply_config_entry(StudyConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value) {
  auto num = [&]() { return std::stod(value); };
  if (section == "model") {
    if (key == "beta") cfg.beta_override = num();
    else if (key == "lambda") cfg.lambda_override = num();
    else if (key == "case") cfg.case_name = value;
    else throw std::invalid_argument("config: unknown [model] key " + key);
  } else if (section == "constants") {
    ConstantsLedger& lg = cfg.ledger;
    if (key == "q") lg.q = num();
    else if (key == "qtilde") lg.q_tilde = num();
    else if (key == "pstar") lg.p_star = num();
    else if (key == "cgreen") lg.c_green = num();
    else if (key == "cg") lg.c_G = num();
    else if (key == "cs") lg.c_S = num();
    else if (key == "cf") lg.c_F = num();
    else if (key == "cp2") lg.c_P2 = num();
    else if (key == "cp1") lg.c_P1 = num();
    else if (key == "ccti") lg.c_cti = num();
    else if (key == "npartial") lg.n_partial = num();
    else if (key == "gamma") {
      lg.gamma = num();
      cfg.gamma_overridden = true;
    } else if (key == "eta2j_form") {
      if (value == "two_term") lg.eta2_form = Eta2Form::TwoTerm;
      else if (value == "three_term") lg.eta2_form = Eta2Form::ThreeTerm;
      else throw std::invalid_argument("config: eta2j_form must be two_term or three_term");
    } else {
      throw std::invalid_argument("config: unknown [constants] key " + key);
    }
  } else if (section == "time") {
    if (key == "t" || key == "T") {
      cfg.T = num();
      cfg.T_overridden = true;
    } else {
      throw std::invalid_argument("config: unknown [time] key " + key);
    }
  } else if (section == "output") {
    if (key == "dir") cfg.out_dir = value;
    else if (key == "write_trajectories") cfg.write_trajectories = (value == "true" || value == "1");
    else throw std::invalid_argument("config: unknown [output] key " + key);
  } else {
    throw std::invalid_argument("config: unknown section [" + section + "]");
  }
}

StudyConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  StudyConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) + ": bad section");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

// --- trajectory store ----------------------------------------------------------

void save_trajectory(const std::string& dir, const Mesh& mesh, const ManufacturedCase& mc,
                     int level, const Trajectory& traj) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream m(dir + "/mesh.txt");
    save_mesh(mesh, m);
  }
  {
    std::ofstream meta(dir + "/meta.txt");
    meta << "case " << mc.name << "\n";
    meta << "level " << level << "\n";
    meta << "n_species " << mc.n_species << "\n";
    meta << "T " << std::setprecision(17) << mc.T << "\n";
    meta << "steps " << traj.states.size() << "\n";
    meta << "has_potential " << (mc.has_potential ? 1 : 0) << "\n";
  }
  for (size_t j = 0; j < traj.states.size(); ++j) {
    std::ostringstream name;
    name << dir << "/step_" << std::setw(4) << std::setfill('0') << j << ".txt";
    std::ofstream s(name.str());
    s << std::setprecision(17);
    s << "# t u_1 .. u_n phi per cell\n";
    s << "t " << traj.states[j].time << "\n";
    const FVState& st = traj.states[j];
    for (size_t K = 0; K < mesh.cells.size(); ++K) {
      for (int i = 1; i <= mc.n_species; ++i) s << st.u[i][K] << " ";
      s << st.phi[K] << "\n";
    }
  }
}

StoredTrajectory load_trajectory(const std::string& dir) {
  StoredTrajectory out;
  out.mesh = load_mesh_file(dir + "/mesh.txt");
  int n_species = 0, steps = 0;
  {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw std::runtime_error("cannot open " + dir + "/meta.txt");
    std::string key;
    while (meta >> key) {
      if (key == "case") meta >> out.case_name;
      else if (key == "level") meta >> out.level;
      else if (key == "n_species") meta >> n_species;
      else if (key == "steps") meta >> steps;
      else {
        std::string skip;
        meta >> skip;
      }
    }
  }
  if (n_species < 1 || steps < 1) throw std::runtime_error("bad trajectory meta in " + dir);
  int ncell = static_cast<int>(out.mesh.cells.size());
  for (int j = 0; j < steps; ++j) {
    std::ostringstream name;
    name << dir << "/step_" << std::setw(4) << std::setfill('0') << j << ".txt";
    std::ifstream s(name.str());
    if (!s) throw std::runtime_error("cannot open " + name.str());
    std::string line;
    FVState st;
    st.step = j;
    st.u.assign(n_species + 1, std::vector<double>(ncell, 0.0));
    st.phi.assign(ncell, 0.0);
    int cell = 0;
    while (std::getline(s, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string first;
      ss >> first;
      if (first == "t") {
        ss >> st.time;
        continue;
      }
      if (cell >= ncell) throw std::runtime_error("too many rows in " + name.str());
      st.u[1][cell] = std::stod(first);
      for (int i = 2; i <= n_species; ++i) ss >> st.u[i][cell];
      ss >> st.phi[cell];
      ++cell;
    }
    if (cell != ncell) throw std::runtime_error("missing rows in " + name.str());
    st.enforce_volume_filling();
    out.traj.states.push_back(std::move(st));
  }
  return out;
}

StudyRow estimate_stored(const std::string& dir, const ConstantsLedger& ledger) {
  StoredTrajectory stored = load_trajectory(dir);
  ManufacturedCase mc = manufactured_case(stored.case_name);
  ConstantsLedger lg = ledger;
  lg.T = mc.T;
  if (lg.gamma <= 0.0) lg.gamma = mc.gamma;

  const Mesh& mesh = stored.mesh;
  VertexWeights weights = vertex_interpolation_weights(mesh);
  Scheme scheme(mesh, mc.params, mc.boundary_for(mesh));
  ReconstructionSet recs = build_reconstructions(scheme, weights, stored.traj);

  InitialErrors e0;
  {
    double worst = 0.0;
    for (int K = 0; K < static_cast<int>(mesh.cells.size()); ++K)
      worst = std::max(worst, cell_lattice_max(mesh, K, [&](Vec2 x) {
                         return recs.u0.steps[0].value(K, x) - mc.solvent.value(0.0, x);
                       }));
    e0.linf_u0 = worst;
    double l2 = spatial_l2_diff(mesh, mc.solvent, 0.0, recs.u0.steps[0]);
    e0.l2sq_u0 = l2 * l2;
    for (int i = 1; i <= mc.n_species; ++i) {
      double e = spatial_l2_diff(mesh, mc.species[i - 1], 0.0, recs.species[i - 1].steps[0]);
      e0.l2sq_ui.push_back(e * e);
    }
  }

  StudyRow row;
  row.level = stored.level;
  row.h = 1.0 / (1 << (stored.level + 1));
  row.tau = stored.traj.states.size() > 1 ? stored.traj.tau(1) : 0.0;
  row.report = mc.has_potential ? compute_report_general(scheme, recs, stored.traj, lg, e0)
                                : compute_report_reduced(scheme, recs, stored.traj, lg, e0);
  row.errors = true_error(mc, recs, stored.traj);
  row.ei0 = std::sqrt(row.errors.max_l2_u0 * row.errors.max_l2_u0 +
                      row.errors.grad_l2_u0 * row.errors.grad_l2_u0) /
            row.report.eta_2J;
  for (int i = 0; i < mc.n_species; ++i)
    row.ei_i.push_back(std::sqrt(row.errors.max_l2_ui[i] * row.errors.max_l2_ui[i] +
                                 row.errors.energy_ui[i] * row.errors.energy_ui[i]) /
                       row.report.eta_2iJ[i]);
  if (mc.has_potential) row.ei_phi = row.errors.grad_l2_phi / row.report.eta_phiJ;
  return row;
}

}  // namespace ionfv::bench
