#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dem/common.hpp"
#include "dem/grid.hpp"

namespace dem::graph {

enum class EdgeWeight { Binary, Distance };

/// Radius graph over a node cloud, with the spectral operator used by the
/// Chebyshev convolution. Edges are undirected, stored once as (i, j) with
/// i < j in lexicographic order.
struct Graph {
  int n_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<Real> weights;  // Euclidean length per edge, in either mode
  SpMat adjacency;            // symmetric; entries 1 (Binary) or length (Distance)
  VecX degree;                // row sums of adjacency
  SpMat scaled_laplacian;     // L - I = -D^{-1/2} A D^{-1/2}
  bool has_isolated_nodes = false;
  std::vector<std::string> warnings;
};

/// Threshold radius used when none is given: the x-axis node spacing.
Real auto_radius(const grid::NodeGrid& grid);

/// Connects every pair of points with Euclidean distance <= r, where the
/// comparison carries a 1e-9 relative slack on r. Zero-degree nodes are
/// permitted; they set has_isolated_nodes and append a warning.
Graph build_graph(const MatX3& coords, Real r,
                  EdgeWeight mode = EdgeWeight::Binary);

/// Grid overload; r = nullopt selects auto_radius(grid).
Graph build_graph(const grid::NodeGrid& grid,
                  std::optional<Real> r = std::nullopt,
                  EdgeWeight mode = EdgeWeight::Binary);

/// -D^{-1/2} A D^{-1/2}, with the zero-degree convention D^{-1/2}_ii = 0
/// (isolated nodes get all-zero rows and columns).
SpMat scaled_laplacian(const SpMat& adjacency, const VecX& degree);

/// Chebyshev recursion Z^1 = X, Z^2 = L_hat X, Z^k = 2 L_hat Z^{k-1} - Z^{k-2}.
/// Returns `order` matrices.
std::vector<MatX> chebyshev_basis(const SpMat& l_hat, const MatX& X, int order);

}  // namespace dem::graph
