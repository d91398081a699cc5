#include "ionfv/mesh.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace ionfv {

double Mesh::total_area() const {
  double a = 0.0;
  for (const Cell& c : cells) a += c.area;
  return a;
}

Vec2 Mesh::normal(int edge, int cell) const {
  const Edge& e = edges[edge];
  return cell == e.cell_K ? e.normal_K : e.normal_K * -1.0;
}

int Mesh::neighbor(int edge, int cell) const {
  const Edge& e = edges[edge];
  return cell == e.cell_K ? e.cell_L : e.cell_K;
}

std::array<double, 3> Mesh::barycentric(int cell, Vec2 p) const {
  const Cell& K = cells[cell];
  Vec2 a = vertices[K.v[0]].pos;
  Vec2 b = vertices[K.v[1]].pos;
  Vec2 c = vertices[K.v[2]].pos;
  double det = (b - a).cross(c - a);
  double l1 = (b - p).cross(c - p) / det;
  double l2 = (c - p).cross(a - p) / det;
  return {l1, l2, 1.0 - l1 - l2};
}

std::array<Vec2, 3> Mesh::barycentric_gradients(int cell) const {
  const Cell& K = cells[cell];
  Vec2 a = vertices[K.v[0]].pos;
  Vec2 b = vertices[K.v[1]].pos;
  Vec2 c = vertices[K.v[2]].pos;
  double det = (b - a).cross(c - a);
  // grad lambda_i is the inward-scaled normal of the opposite edge.
  Vec2 g1 = Vec2{b.y - c.y, c.x - b.x} / det;
  Vec2 g2 = Vec2{c.y - a.y, a.x - c.x} / det;
  Vec2 g3 = Vec2{a.y - b.y, b.x - a.x} / det;
  return {g1, g2, g3};
}

Vec2 Mesh::point_from_barycentric(int cell, const std::array<double, 3>& l) const {
  const Cell& K = cells[cell];
  return vertices[K.v[0]].pos * l[0] + vertices[K.v[1]].pos * l[1] + vertices[K.v[2]].pos * l[2];
}

int Mesh::locate(Vec2 p, double tol) const {
  for (size_t c = 0; c < cells.size(); ++c) {
    auto l = barycentric(static_cast<int>(c), p);
    if (l[0] >= -tol && l[1] >= -tol && l[2] >= -tol) return static_cast<int>(c);
  }
  return -1;
}

namespace {

Vec2 circumcenter(Vec2 a, Vec2 b, Vec2 c) {
  double d = 2.0 * ((b - a).cross(c - a));
  double a2 = a.dot(a), b2 = b.dot(b), c2 = c.dot(c);
  double ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
  double uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
  return {ux, uy};
}

// Builds edges, orientation, areas, circumcenters, d_sigma and boundary tags
// (from vertex tags) for a vertex/cell soup.
void finalize_mesh(Mesh& mesh) {
  std::map<std::pair<int, int>, int> edge_of;
  for (size_t ci = 0; ci < mesh.cells.size(); ++ci) {
    Cell& K = mesh.cells[ci];
    Vec2 a = mesh.vertices[K.v[0]].pos;
    Vec2 b = mesh.vertices[K.v[1]].pos;
    Vec2 c = mesh.vertices[K.v[2]].pos;
    double twice = (b - a).cross(c - a);
    if (twice < 0.0) {  // enforce counter-clockwise orientation
      std::swap(K.v[1], K.v[2]);
      std::swap(b, c);
      twice = -twice;
    }
    K.area = 0.5 * twice;
    K.diameter = std::max({(b - a).norm(), (c - a).norm(), (c - b).norm()});
    K.collocation = circumcenter(a, b, c);
    for (int k = 0; k < 3; ++k) {
      int v0 = K.v[(k + 1) % 3];
      int v1 = K.v[(k + 2) % 3];
      auto key = std::minmax(v0, v1);
      auto it = edge_of.find(key);
      if (it == edge_of.end()) {
        Edge e;
        e.v = {key.first, key.second};
        e.cell_K = static_cast<int>(ci);
        mesh.edges.push_back(e);
        it = edge_of.emplace(key, static_cast<int>(mesh.edges.size()) - 1).first;
      } else {
        mesh.edges[it->second].cell_L = static_cast<int>(ci);
      }
      K.edges[k] = it->second;
    }
  }
  for (Edge& e : mesh.edges) {
    Vec2 p0 = mesh.vertices[e.v[0]].pos;
    Vec2 p1 = mesh.vertices[e.v[1]].pos;
    e.length = (p1 - p0).norm();
    e.midpoint = (p0 + p1) * 0.5;
    // outward normal of K: perpendicular to the edge, away from K's third vertex
    const Cell& K = mesh.cells[e.cell_K];
    Vec2 t = (p1 - p0) / e.length;
    Vec2 n{t.y, -t.x};
    int opp = -1;
    for (int vid : K.v)
      if (vid != e.v[0] && vid != e.v[1]) opp = vid;
    if (n.dot(mesh.vertices[opp].pos - e.midpoint) > 0.0) n = n * -1.0;
    e.normal_K = n;
    if (!e.boundary()) {
      e.kind = EdgeKind::Interior;
      e.d_sigma = (mesh.cells[e.cell_L].collocation - K.collocation).norm();
    } else {
      e.d_sigma = std::abs((K.collocation - p0).dot(n));
      const Vertex& a = mesh.vertices[e.v[0]];
      const Vertex& b = mesh.vertices[e.v[1]];
      if (a.kind == VertexKind::Dirichlet && b.kind == VertexKind::Dirichlet &&
          a.dirichlet_component == b.dirichlet_component) {
        e.kind = EdgeKind::Dirichlet;
        e.dirichlet_component = a.dirichlet_component;
      } else if (a.kind != VertexKind::Interior && b.kind != VertexKind::Interior) {
        e.kind = EdgeKind::Neumann;
      } else {
        e.kind = EdgeKind::Untagged;
      }
    }
  }
  int comps = 0;
  for (const Vertex& v : mesh.vertices)
    if (v.kind == VertexKind::Dirichlet) comps = std::max(comps, v.dirichlet_component + 1);
  mesh.dirichlet_component_count = comps;
  mesh.max_edges_per_cell = 3;
}

}  // namespace

Mesh build_structured_mesh(int n, const GammaDSpec& gamma_d) {
  if (n < 1) throw std::invalid_argument("build_structured_mesh: n must be >= 1");
  Mesh mesh;
  mesh.expected_domain_area = 1.0;
  const double h = 1.0 / n;

  // Dirichlet components numbered in order left, right, bottom, top.
  int next = 0;
  int comp_left = gamma_d.left ? next++ : -1;
  int comp_right = gamma_d.right ? next++ : -1;
  int comp_bottom = gamma_d.bottom ? next++ : -1;
  int comp_top = gamma_d.top ? next++ : -1;

  auto classify = [&](Vec2 p) -> Vertex {
    Vertex v;
    v.pos = p;
    const double eps = 1e-12;
    bool on_left = p.x < eps, on_right = p.x > 1.0 - eps;
    bool on_bottom = p.y < eps, on_top = p.y > 1.0 - eps;
    if (!(on_left || on_right || on_bottom || on_top)) return v;
    // Corners shared by Gamma_D and Gamma_N are tagged Dirichlet.
    if (on_left && comp_left >= 0) {
      v.kind = VertexKind::Dirichlet;
      v.dirichlet_component = comp_left;
    } else if (on_right && comp_right >= 0) {
      v.kind = VertexKind::Dirichlet;
      v.dirichlet_component = comp_right;
    } else if (on_bottom && comp_bottom >= 0) {
      v.kind = VertexKind::Dirichlet;
      v.dirichlet_component = comp_bottom;
    } else if (on_top && comp_top >= 0) {
      v.kind = VertexKind::Dirichlet;
      v.dirichlet_component = comp_top;
    } else {
      v.kind = VertexKind::Neumann;
    }
    return v;
  };

  // Vertex rows: even rows at x = k*h (n+1 points), odd rows additionally
  // carry the boundary points x = 0 and x = 1 (n+2 points).
  std::vector<std::vector<int>> row_ids(n + 1);
  for (int r = 0; r <= n; ++r) {
    bool odd = (r % 2 == 1);
    std::vector<double> xs;
    if (!odd) {
      for (int k = 0; k <= n; ++k) xs.push_back(std::min(1.0, k * h));
    } else {
      xs.push_back(0.0);
      for (int k = 0; k < n; ++k) xs.push_back((k + 0.5) * h);
      xs.push_back(1.0);
    }
    for (double x : xs) {
      row_ids[r].push_back(static_cast<int>(mesh.vertices.size()));
      mesh.vertices.push_back(classify({x, std::min(1.0, r * h)}));
    }
  }

  auto add_cell = [&](int a, int b, int c) {
    Cell K;
    K.v = {a, b, c};
    mesh.cells.push_back(K);
  };

  for (int r = 0; r < n; ++r) {
    bool bottom_even = (r % 2 == 0);
    const auto& even_row = bottom_even ? row_ids[r] : row_ids[r + 1];
    const auto& odd_row = bottom_even ? row_ids[r + 1] : row_ids[r];
    // odd_row layout: [0] = left boundary, [1..n] = offset points, [n+1] = right boundary
    for (int k = 0; k < n; ++k)  // isoceles with base on the even row
      add_cell(even_row[k], even_row[k + 1], odd_row[k + 1]);
    for (int k = 0; k + 1 < n; ++k)  // isoceles with base on the odd row
      add_cell(odd_row[k + 1], odd_row[k + 2], even_row[k + 1]);
    // right-triangle halves closing the lateral boundaries
    add_cell(odd_row[0], odd_row[1], even_row[0]);
    add_cell(odd_row[n + 1], odd_row[n], even_row[n]);
  }

  finalize_mesh(mesh);
  auto violations = validate_admissibility(mesh);
  if (!violations.empty())
    throw std::runtime_error("build_structured_mesh: generated mesh is not admissible: " +
                             violations.front().detail);
  return mesh;
}

Mesh load_mesh(std::istream& in) {
  std::string line;
  int lineno = 0;
  auto next_tokens = [&](std::vector<std::string>& tokens) -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      tokens.clear();
      std::string t;
      while (ss >> t) tokens.push_back(t);
      if (!tokens.empty()) return true;
    }
    return false;
  };

  std::vector<std::string> tok;
  if (!next_tokens(tok)) throw MeshParseError(lineno, "empty file");
  if (tok.size() != 4 || tok[0] != "vertices" || tok[2] != "cells")
    throw MeshParseError(lineno, "expected header 'vertices N cells M'");
  int nv = 0, nc = 0;
  try {
    nv = std::stoi(tok[1]);
    nc = std::stoi(tok[3]);
  } catch (...) {
    throw MeshParseError(lineno, "bad counts in header");
  }
  if (nv < 3 || nc < 1) throw MeshParseError(lineno, "need at least 3 vertices and 1 cell");

  Mesh mesh;
  for (int i = 0; i < nv; ++i) {
    if (!next_tokens(tok)) throw MeshParseError(lineno, "unexpected end of vertex list");
    if (tok.size() != 3) throw MeshParseError(lineno, "expected 'x y tag'");
    Vertex v;
    int tag;
    try {
      v.pos = {std::stod(tok[0]), std::stod(tok[1])};
      tag = std::stoi(tok[2]);
    } catch (...) {
      throw MeshParseError(lineno, "bad vertex entry");
    }
    if (tag < 0) throw MeshParseError(lineno, "negative vertex tag");
    if (tag == 0)
      v.kind = VertexKind::Interior;
    else if (tag == 1)
      v.kind = VertexKind::Neumann;
    else {
      v.kind = VertexKind::Dirichlet;
      v.dirichlet_component = tag - 2;
    }
    mesh.vertices.push_back(v);
  }
  for (int i = 0; i < nc; ++i) {
    if (!next_tokens(tok)) throw MeshParseError(lineno, "unexpected end of cell list");
    if (tok.size() != 3) throw MeshParseError(lineno, "expected 'v0 v1 v2'");
    Cell K;
    try {
      for (int k = 0; k < 3; ++k) K.v[k] = std::stoi(tok[k]);
    } catch (...) {
      throw MeshParseError(lineno, "bad cell entry");
    }
    for (int k = 0; k < 3; ++k)
      if (K.v[k] < 0 || K.v[k] >= nv) throw MeshParseError(lineno, "vertex id out of range");
    if (K.v[0] == K.v[1] || K.v[1] == K.v[2] || K.v[0] == K.v[2])
      throw MeshParseError(lineno, "repeated vertex id in cell");
    mesh.cells.push_back(K);
  }
  finalize_mesh(mesh);
  return mesh;
}

Mesh load_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file: " + path);
  return load_mesh(in);
}

void save_mesh(const Mesh& mesh, std::ostream& out) {
  out << "vertices " << mesh.vertices.size() << " cells " << mesh.cells.size() << "\n";
  out.precision(17);
  for (const Vertex& v : mesh.vertices) {
    int tag = 0;
    if (v.kind == VertexKind::Neumann) tag = 1;
    if (v.kind == VertexKind::Dirichlet) tag = 2 + v.dirichlet_component;
    out << v.pos.x << " " << v.pos.y << " " << tag << "\n";
  }
  for (const Cell& c : mesh.cells) out << c.v[0] << " " << c.v[1] << " " << c.v[2] << "\n";
}

std::vector<AdmissibilityViolation> validate_admissibility(const Mesh& mesh) {
  std::vector<AdmissibilityViolation> out;
  double href = 0.0;
  for (const Cell& c : mesh.cells) href = std::max(href, c.diameter);

  for (size_t ci = 0; ci < mesh.cells.size(); ++ci) {
    auto l = mesh.barycentric(static_cast<int>(ci), mesh.cells[ci].collocation);
    double worst = std::min({l[0], l[1], l[2]});
    if (worst < -1e-12)
      out.push_back({ViolationKind::CollocationOutsideCell, static_cast<int>(ci), worst,
                     "collocation point outside cell " + std::to_string(ci)});
  }
  for (size_t ei = 0; ei < mesh.edges.size(); ++ei) {
    const Edge& e = mesh.edges[ei];
    if (e.d_sigma <= 1e-12 * href) {
      out.push_back({ViolationKind::NonpositiveDistance, static_cast<int>(ei), e.d_sigma,
                     "d_sigma = 0 on edge " + std::to_string(ei)});
      continue;
    }
    if (!e.boundary()) {
      Vec2 xK = mesh.cells[e.cell_K].collocation;
      Vec2 xL = mesh.cells[e.cell_L].collocation;
      Vec2 dir = (xL - xK) / e.d_sigma;
      double res = (dir - e.normal_K).norm();
      if (res > 1e-10)
        out.push_back({ViolationKind::Orthogonality, static_cast<int>(ei), res,
                       "orthogonality violated on edge " + std::to_string(ei)});
    } else if (e.kind == EdgeKind::Untagged) {
      out.push_back({ViolationKind::UntaggedBoundaryEdge, static_cast<int>(ei), 0.0,
                     "boundary edge " + std::to_string(ei) + " has no Dirichlet/Neumann tag"});
    }
  }
  // x_K != x_L for all pairs (global duplicate check)
  {
    std::vector<std::pair<Vec2, int>> pts;
    pts.reserve(mesh.cells.size());
    for (size_t ci = 0; ci < mesh.cells.size(); ++ci) pts.push_back({mesh.cells[ci].collocation, static_cast<int>(ci)});
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
      return a.first.x < b.first.x || (a.first.x == b.first.x && a.first.y < b.first.y);
    });
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
      if ((pts[i].first - pts[i + 1].first).norm() <= 1e-14 * std::max(1.0, href))
        out.push_back({ViolationKind::DuplicateCollocation, pts[i].second, 0.0,
                       "cells " + std::to_string(pts[i].second) + " and " +
                           std::to_string(pts[i + 1].second) + " share a collocation point"});
    }
  }
  if (mesh.expected_domain_area) {
    double rel =
        std::abs(mesh.total_area() - *mesh.expected_domain_area) / *mesh.expected_domain_area;
    if (rel > 1e-12)
      out.push_back({ViolationKind::AreaPartition, -1, rel,
                     "cell areas do not partition the domain area"});
  }
  return out;
}

VertexWeights vertex_interpolation_weights(const Mesh& mesh) {
  VertexWeights w;
  w.stencil.resize(mesh.vertices.size());
  std::vector<std::vector<int>> cells_of(mesh.vertices.size());
  for (size_t ci = 0; ci < mesh.cells.size(); ++ci)
    for (int vid : mesh.cells[ci].v) cells_of[vid].push_back(static_cast<int>(ci));

  for (size_t vi = 0; vi < mesh.vertices.size(); ++vi) {
    const Vertex& v = mesh.vertices[vi];
    if (v.kind == VertexKind::Dirichlet) continue;  // pinned to boundary data
    const auto& cs = cells_of[vi];
    int m = static_cast<int>(cs.size());
    if (m == 0) continue;
    // Minimize sum w^2 subject to C w = e with C = [1; x_L - a; y_L - a]:
    // w = C^T (C C^T)^{-1} e. A rank-deficient C C^T means the affine
    // reproduction constraints cannot be met.
    Eigen::MatrixXd C(3, m);
    for (int j = 0; j < m; ++j) {
      Vec2 d = mesh.cells[cs[j]].collocation - v.pos;
      C(0, j) = 1.0;
      C(1, j) = d.x;
      C(2, j) = d.y;
    }
    Eigen::Matrix3d G = C * C.transpose();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(G);
    lu.setThreshold(1e-10);
    if (lu.rank() < 3) throw DegenerateStencilError(static_cast<int>(vi));
    Eigen::Vector3d e(1.0, 0.0, 0.0);
    Eigen::VectorXd wv = C.transpose() * lu.solve(e);
    for (int j = 0; j < m; ++j) w.stencil[vi].push_back({cs[j], wv(j)});
  }
  return w;
}

}  // namespace ionfv
