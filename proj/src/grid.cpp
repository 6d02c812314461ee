#include "dem/grid.hpp"

#include <algorithm>

namespace dem::grid {
namespace {

Real axis_coord(int i, int n, Real length) {
  // Endpoints are exact so face-selection predicates can compare with ==.
  if (i == 0) return 0.0;
  if (i == n - 1) return length;
  return length * static_cast<Real>(i) / static_cast<Real>(n - 1);
}

}  // namespace

NodeGrid build_grid(const Vec3i& dims, const Vec3& lengths) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2)
      fail(ErrorKind::InvalidDiscretization,
           "grid dims must be >= 2 per axis, got " + std::to_string(dims[a]));
    if (!(lengths[a] > 0.0))
      fail(ErrorKind::InvalidDiscretization,
           "grid lengths must be positive, got " + std::to_string(lengths[a]));
  }

  NodeGrid g;
  g.dims = dims;
  g.lengths = lengths;
  g.coords.resize(g.num_nodes(), 3);
  int row = 0;
  for (int k = 0; k < dims.z(); ++k)
    for (int j = 0; j < dims.y(); ++j)
      for (int i = 0; i < dims.x(); ++i, ++row) {
        g.coords(row, 0) = axis_coord(i, dims.x(), lengths.x());
        g.coords(row, 1) = axis_coord(j, dims.y(), lengths.y());
        g.coords(row, 2) = axis_coord(k, dims.z(), lengths.z());
      }
  return g;
}

namespace {

// Appends the boundary quads of one axis-aligned face of the node lattice.
// `fixed_axis` is the axis held at `fixed_idx`; (u_axis, v_axis) sweep the
// face so that u x v matches the outward normal.
void append_face_facets(const NodeGrid& g, int fixed_axis, bool at_max,
                        std::vector<Facet>* out) {
  const int u_axis = (fixed_axis + 1) % 3;
  const int v_axis = (fixed_axis + 2) % 3;
  const int fixed_idx = at_max ? g.dims[fixed_axis] - 1 : 0;

  Vec3 normal = Vec3::Zero();
  normal[fixed_axis] = at_max ? 1.0 : -1.0;
  const std::string tag =
      std::string(1, "xyz"[fixed_axis]) + (at_max ? "1" : "0");

  auto node_at = [&](int u, int v) {
    Vec3i idx;
    idx[fixed_axis] = fixed_idx;
    idx[u_axis] = u;
    idx[v_axis] = v;
    return g.node_index(idx.x(), idx.y(), idx.z());
  };

  for (int v = 0; v + 1 < g.dims[v_axis]; ++v)
    for (int u = 0; u + 1 < g.dims[u_axis]; ++u) {
      Facet f;
      if (at_max)
        f.nodes = {node_at(u, v), node_at(u + 1, v), node_at(u + 1, v + 1),
                   node_at(u, v + 1)};
      else  // reversed winding so the normal still points outward
        f.nodes = {node_at(u, v), node_at(u, v + 1), node_at(u + 1, v + 1),
                   node_at(u + 1, v)};
      f.normal = normal;
      f.tag = tag;
      out->push_back(std::move(f));
    }
}

}  // namespace

HexMesh build_hex_mesh(const NodeGrid& grid) {
  HexMesh m;
  m.grid = grid;
  const Vec3i& d = grid.dims;
  const int ne = (d.x() - 1) * (d.y() - 1) * (d.z() - 1);
  m.elements.resize(ne, 8);

  int e = 0;
  for (int k = 0; k + 1 < d.z(); ++k)
    for (int j = 0; j + 1 < d.y(); ++j)
      for (int i = 0; i + 1 < d.x(); ++i, ++e) {
        m.elements(e, 0) = grid.node_index(i, j, k);
        m.elements(e, 1) = grid.node_index(i + 1, j, k);
        m.elements(e, 2) = grid.node_index(i + 1, j + 1, k);
        m.elements(e, 3) = grid.node_index(i, j + 1, k);
        m.elements(e, 4) = grid.node_index(i, j, k + 1);
        m.elements(e, 5) = grid.node_index(i + 1, j, k + 1);
        m.elements(e, 6) = grid.node_index(i + 1, j + 1, k + 1);
        m.elements(e, 7) = grid.node_index(i, j + 1, k + 1);
      }

  for (int axis = 0; axis < 3; ++axis) {
    append_face_facets(grid, axis, false, &m.facets);
    append_face_facets(grid, axis, true, &m.facets);
  }
  return m;
}

std::vector<int> HexMesh::facets_with_tag(const std::string& tag) const {
  std::vector<int> out;
  for (int f = 0; f < static_cast<int>(facets.size()); ++f)
    if (facets[f].tag == tag) out.push_back(f);
  return out;
}

std::pair<Real, Vec3> facet_area_and_normal(const HexMesh& mesh, int facet_id) {
  if (facet_id < 0 || facet_id >= static_cast<int>(mesh.facets.size()))
    fail(ErrorKind::Lookup, "facet id out of range");
  const Facet& f = mesh.facets[facet_id];

  Eigen::Matrix<Real, 4, 3> X;
  for (int a = 0; a < 4; ++a) X.row(a) = mesh.grid.coords.row(f.nodes[a]);

  // Bilinear map x(xi,eta) = sum_a phi_a(xi,eta) X_a on [-1,1]^2.
  const Real gp = 1.0 / std::sqrt(3.0);
  Real area = 0.0;
  Vec3 normal_sum = Vec3::Zero();
  for (Real eta : {-gp, gp})
    for (Real xi : {-gp, gp}) {
      Eigen::Matrix<Real, 4, 2> dphi;
      const Real sx[4] = {-1, 1, 1, -1};
      const Real sy[4] = {-1, -1, 1, 1};
      for (int a = 0; a < 4; ++a) {
        dphi(a, 0) = 0.25 * sx[a] * (1 + sy[a] * eta);
        dphi(a, 1) = 0.25 * sy[a] * (1 + sx[a] * xi);
      }
      const Vec3 t_xi = X.transpose() * dphi.col(0);
      const Vec3 t_eta = X.transpose() * dphi.col(1);
      const Vec3 n = t_xi.cross(t_eta);
      area += n.norm();  // unit Gauss weights
      normal_sum += n;
    }
  return {area, normal_sum.normalized()};
}

}  // namespace dem::grid
