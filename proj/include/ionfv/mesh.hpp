#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionfv/geometry.hpp"

namespace ionfv {

enum class VertexKind { Interior, Neumann, Dirichlet };

struct Vertex {
  Vec2 pos;
  VertexKind kind = VertexKind::Interior;
  int dirichlet_component = -1;
};

struct Cell {
  std::array<int, 3> v;      // vertex ids, counter-clockwise
  std::array<int, 3> edges;  // edge ids, edges[i] is opposite vertex i
  Vec2 collocation;          // x_K (circumcenter for generated meshes)
  double area = 0.0;         // |K|
  double diameter = 0.0;     // h_K, longest pairwise vertex distance
};

enum class EdgeKind { Interior, Neumann, Dirichlet, Untagged };

struct Edge {
  std::array<int, 2> v;
  EdgeKind kind = EdgeKind::Untagged;
  int dirichlet_component = -1;
  double length = 0.0;   // |sigma|
  double d_sigma = 0.0;  // dist(x_K,x_L) resp. dist(x_K,sigma)
  Vec2 midpoint;
  int cell_K = -1;
  int cell_L = -1;  // -1 on the boundary
  Vec2 normal_K;    // unit, outward from K; n_L = -n_K

  bool boundary() const { return cell_L < 0; }
};

/// Admissible cell-centered finite volume triangulation: triangles with
/// collocation points such that the segment joining neighbouring points is
/// orthogonal to the shared edge. Immutable after construction.
struct Mesh {
  std::vector<Vertex> vertices;
  std::vector<Cell> cells;
  std::vector<Edge> edges;
  int dirichlet_component_count = 0;
  int max_edges_per_cell = 3;  // N_boundary in the estimator constants
  std::optional<double> expected_domain_area;

  double total_area() const;

  /// Outward unit normal of `cell` on `edge`.
  Vec2 normal(int edge, int cell) const;
  /// The cell on the other side (-1 for boundary edges).
  int neighbor(int edge, int cell) const;

  /// Barycentric coordinates of a point with respect to a cell.
  std::array<double, 3> barycentric(int cell, Vec2 p) const;
  /// Gradients of the barycentric coordinate functions (constant per cell).
  std::array<Vec2, 3> barycentric_gradients(int cell) const;
  Vec2 point_from_barycentric(int cell, const std::array<double, 3>& l) const;

  /// Cell containing p (closure), or -1. Linear scan; test/CLI use only.
  int locate(Vec2 p, double tol = 1e-12) const;
};

struct MeshParseError : std::runtime_error {
  int line;
  MeshParseError(int line_, const std::string& msg)
      : std::runtime_error("mesh parse error (line " + std::to_string(line_) + "): " + msg),
        line(line_) {}
};

/// Sides of the unit square carrying Dirichlet data in the structured
/// generator; each selected side becomes its own boundary component, numbered
/// in the order below.
struct GammaDSpec {
  bool left = false;
  bool right = false;
  bool bottom = false;
  bool top = false;
};

/// Structured triangulation of the unit square with width h = 1/n: rows of
/// acute isoceles triangles (base h, height h) with alternate vertex rows
/// offset by h/2, closed at the lateral boundaries by right-triangle halves.
/// Collocation points are circumcenters; the pattern satisfies d_sigma > 0 and
/// exact orthogonality. Throws std::invalid_argument for n < 1 and
/// std::runtime_error if the generated mesh fails validate_admissibility.
Mesh build_structured_mesh(int n, const GammaDSpec& gamma_d);

/// Plain-text mesh format: header `vertices N cells M`, then N lines `x y tag`
/// (0 interior, 1 Neumann, 2+k Dirichlet component k), then M lines `v0 v1 v2`.
/// '#' starts a comment. Derived geometry (edges, areas, circumcenters,
/// d_sigma, normals) is computed here; admissibility is *not* checked.
Mesh load_mesh(std::istream& in);
Mesh load_mesh_file(const std::string& path);
void save_mesh(const Mesh& mesh, std::ostream& out);

enum class ViolationKind {
  CollocationOutsideCell,
  Orthogonality,
  NonpositiveDistance,
  DuplicateCollocation,
  UntaggedBoundaryEdge,
  AreaPartition,
};

struct AdmissibilityViolation {
  ViolationKind kind;
  int index;  // cell or edge id (-1 for global checks)
  double magnitude = 0.0;
  std::string detail;
};

/// Checks Def-2.1-style admissibility; violations are data, not errors.
std::vector<AdmissibilityViolation> validate_admissibility(const Mesh& mesh);

/// Per-vertex interpolation weights over adjacent cells: minimal l2-norm
/// weights under sum-to-one and affine-reproduction constraints.
/// Dirichlet-tagged vertices carry an empty stencil (their value is pinned to
/// boundary data during reconstruction).
struct VertexWeights {
  std::vector<std::vector<std::pair<int, double>>> stencil;  // per vertex: (cell, weight)
};

struct DegenerateStencilError : std::runtime_error {
  int vertex;
  explicit DegenerateStencilError(int vertex_)
      : std::runtime_error("degenerate interpolation stencil at vertex " +
                           std::to_string(vertex_)),
        vertex(vertex_) {}
};

VertexWeights vertex_interpolation_weights(const Mesh& mesh);

}  // namespace ionfv
