#include "ionfv/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "ionfv/mesh.hpp"

namespace ionfv {

void gauss_legendre_01(int n, std::vector<double>& points, std::vector<double>& weights) {
  // Nodes of P_n on [-1,1] by Newton iteration, then mapped to [0,1].
  points.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));  // Chebyshev-like initial guess
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    points[i] = 0.5 * (1.0 - x);  // descending x gives ascending t
    weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
}

namespace {

QuadratureRule make_edge_rule(int degree) {
  QuadratureRule rule;
  rule.kind = DomainKind::Edge;
  rule.degree = degree;
  int n = degree / 2 + 1;  // exact to 2n-1 >= degree
  gauss_legendre_01(n, rule.edge_points, rule.weights);
  return rule;
}

// Collapsed (Duffy) product rule: with y = (1-x)u the integral over the
// reference triangle becomes int_0^1 int_0^1 f(x,(1-x)u) (1-x) du dx. For f of
// total degree d the integrand has degree <= d+1 in x and <= d in u.
QuadratureRule make_triangle_rule(int degree) {
  QuadratureRule rule;
  rule.kind = DomainKind::Triangle;
  rule.degree = degree;
  int nx = (degree + 1) / 2 + 1;
  int nu = degree / 2 + 1;
  std::vector<double> px, wx, pu, wu;
  gauss_legendre_01(nx, px, wx);
  gauss_legendre_01(nu, pu, wu);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < nu; ++j) {
      double x = px[i];
      double y = (1.0 - x) * pu[j];
      rule.tri_points.push_back({1.0 - x - y, x, y});
      rule.weights.push_back(wx[i] * wu[j] * (1.0 - x));
    }
  }
  return rule;
}

}  // namespace

const QuadratureRule& get_rule(DomainKind kind, int degree) {
  if (degree < 0 || degree > kMaxQuadratureDegree)
    throw std::invalid_argument("quadrature degree " + std::to_string(degree) +
                                " unsupported (max " + std::to_string(kMaxQuadratureDegree) + ")");
  static std::mutex mutex;
  static std::map<std::pair<int, int>, QuadratureRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto key = std::make_pair(static_cast<int>(kind), degree);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache
             .emplace(key, kind == DomainKind::Edge ? make_edge_rule(degree)
                                                    : make_triangle_rule(degree))
             .first;
  }
  return it->second;
}

double integrate_cell(const Mesh& mesh, int cell, const QuadratureRule& rule, const CellFn& f) {
  const Cell& K = mesh.cells[cell];
  Vec2 a = mesh.vertices[K.v[0]].pos;
  Vec2 b = mesh.vertices[K.v[1]].pos;
  Vec2 c = mesh.vertices[K.v[2]].pos;
  double sum = 0.0;
  for (size_t q = 0; q < rule.weights.size(); ++q) {
    const auto& l = rule.tri_points[q];
    Vec2 p = a * l[0] + b * l[1] + c * l[2];
    sum += rule.weights[q] * f(p);
  }
  return sum * (K.area / 0.5);
}

double integrate_edge(const Mesh& mesh, int edge, const QuadratureRule& rule, const CellFn& f) {
  const Edge& e = mesh.edges[edge];
  Vec2 a = mesh.vertices[e.v[0]].pos;
  Vec2 b = mesh.vertices[e.v[1]].pos;
  double sum = 0.0;
  for (size_t q = 0; q < rule.weights.size(); ++q) {
    double t = rule.edge_points[q];
    Vec2 p = a * (1.0 - t) + b * t;
    sum += rule.weights[q] * f(p);
  }
  return sum * e.length;
}

double lp_norm(const Mesh& mesh, const std::vector<int>& cells, double p, const CellFn& f,
               int degree) {
  if (p == lp_inf) {
    double m = 0.0;
    for (int c : cells) m = std::max(m, cell_lattice_max(mesh, c, f));
    return m;
  }
  if (p < 1.0) throw std::invalid_argument("lp_norm: p must be >= 1");
  const QuadratureRule& rule = get_rule(DomainKind::Triangle, degree);
  double sum = 0.0;
  for (int c : cells)
    sum += integrate_cell(mesh, c, rule, [&](Vec2 x) { return std::pow(std::abs(f(x)), p); });
  return std::pow(sum, 1.0 / p);
}

double lp_norm_all(const Mesh& mesh, double p, const CellFn& f, int degree) {
  std::vector<int> cells(mesh.cells.size());
  for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  return lp_norm(mesh, cells, p, f, degree);
}

std::vector<Vec2> cell_lattice_points(const Mesh& mesh, int cell) {
  const Cell& K = mesh.cells[cell];
  Vec2 a = mesh.vertices[K.v[0]].pos;
  Vec2 b = mesh.vertices[K.v[1]].pos;
  Vec2 c = mesh.vertices[K.v[2]].pos;
  std::vector<Vec2> pts;
  pts.reserve(16);
  for (int i = 0; i <= 4; ++i)
    for (int j = 0; j <= 4 - i; ++j) {
      double l1 = i / 4.0, l2 = j / 4.0;
      pts.push_back(a * l1 + b * l2 + c * (1.0 - l1 - l2));
    }
  pts.push_back((a + b + c) / 3.0);  // the bubble's peak
  return pts;
}

double cell_lattice_max(const Mesh& mesh, int cell, const CellFn& f) {
  double m = 0.0;
  for (Vec2 p : cell_lattice_points(mesh, cell)) m = std::max(m, std::abs(f(p)));
  return m;
}

double cell_lattice_min(const Mesh& mesh, int cell, const CellFn& f) {
  double m = std::numeric_limits<double>::infinity();
  for (Vec2 p : cell_lattice_points(mesh, cell)) m = std::min(m, f(p));
  return m;
}

double edge_lattice_max(const Mesh& mesh, int edge, const CellFn& f, int samples) {
  const Edge& e = mesh.edges[edge];
  Vec2 a = mesh.vertices[e.v[0]].pos;
  Vec2 b = mesh.vertices[e.v[1]].pos;
  double m = 0.0;
  for (int i = 0; i < samples; ++i) {
    double t = (samples == 1) ? 0.5 : static_cast<double>(i) / (samples - 1);
    m = std::max(m, std::abs(f(a * (1.0 - t) + b * t)));
  }
  return m;
}

JumpAverage edge_jump_average(Vec2 trace_K, Vec2 trace_L, bool boundary, Vec2 normal_K) {
  if (boundary) return {trace_K.dot(normal_K), trace_K};
  // n_L = -n_K, so the jump is (f_K - f_L).n_K; swapping sides flips both
  // traces and the normal, leaving the jump invariant.
  return {(trace_K - trace_L).dot(normal_K), (trace_K + trace_L) * 0.5};
}

}  // namespace ionfv
