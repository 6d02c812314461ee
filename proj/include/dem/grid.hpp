#pragma once

#include <array>
#include <string>
#include <vector>

#include "dem/common.hpp"

namespace dem::grid {

/// Structured tensor-product node cloud over a box anchored at the origin.
/// Nodes are ordered x-fastest, then y, then z.
struct NodeGrid {
  Vec3i dims;     // nodes per axis, each >= 2
  Vec3 lengths;   // box edge lengths
  MatX3 coords;   // N x 3 positions, N = dims.prod()

  int num_nodes() const { return static_cast<int>(dims.cast<std::int64_t>().prod()); }

  Vec3 spacing() const {
    return {lengths.x() / (dims.x() - 1), lengths.y() / (dims.y() - 1),
            lengths.z() / (dims.z() - 1)};
  }

  int node_index(int i, int j, int k) const {
    return i + dims.x() * (j + dims.y() * k);
  }
};

/// A boundary quad. Nodes are ordered counterclockwise when seen from outside
/// the domain, so the bilinear map's cross product points along `normal`.
struct Facet {
  std::array<int, 4> nodes;
  Vec3 normal;       // outward unit normal
  std::string tag;   // one of x0, x1, y0, y1, z0, z1
};

/// Trilinear hexahedral discretization of a NodeGrid, with tagged boundary
/// facets. Element corners follow the standard VTK_HEXAHEDRON ordering:
/// bottom face (-,-,-),(+,-,-),(+,+,-),(-,+,-) then the same loop at +z.
struct HexMesh {
  NodeGrid grid;
  Eigen::Matrix<int, Eigen::Dynamic, 8, Eigen::RowMajor> elements;
  std::vector<Facet> facets;

  int num_elements() const { return static_cast<int>(elements.rows()); }

  /// Indices into `facets` carrying the given surface tag.
  std::vector<int> facets_with_tag(const std::string& tag) const;
};

NodeGrid build_grid(const Vec3i& dims, const Vec3& lengths);

HexMesh build_hex_mesh(const NodeGrid& grid);

/// Area and outward unit normal of one boundary facet, by 2x2 Gauss
/// integration of the bilinear map's surface element.
std::pair<Real, Vec3> facet_area_and_normal(const HexMesh& mesh, int facet_id);

}  // namespace dem::grid
