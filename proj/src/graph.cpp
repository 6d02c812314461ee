#include "dem/graph.hpp"

#include <algorithm>
#include <cmath>

namespace dem::graph {

Real auto_radius(const grid::NodeGrid& grid) {
  return grid.lengths.x() / static_cast<Real>(grid.dims.x() - 1);
}

Graph build_graph(const MatX3& coords, Real r, EdgeWeight mode) {
  if (!(r > 0.0))
    fail(ErrorKind::InvalidThreshold,
         "graph radius must be positive, got " + std::to_string(r));

  Graph g;
  g.n_nodes = static_cast<int>(coords.rows());
  const Real r_slack = r * (1.0 + 1e-9);
  const Real r2 = r_slack * r_slack;

  // Bin points into cells of edge r_slack; candidate neighbors then live in
  // the surrounding 3x3x3 block of cells.
  const Vec3 lo = coords.colwise().minCoeff();
  const Vec3 hi = coords.colwise().maxCoeff();
  Vec3i nc;
  for (int a = 0; a < 3; ++a)
    nc[a] = std::max(
        1, static_cast<int>(std::floor((hi[a] - lo[a]) / r_slack)) + 1);
  auto cell_of = [&](int row, int axis) {
    int c = static_cast<int>(std::floor((coords(row, axis) - lo[axis]) / r_slack));
    return std::clamp(c, 0, nc[axis] - 1);
  };
  std::vector<std::vector<int>> bins(
      static_cast<std::size_t>(nc.x()) * nc.y() * nc.z());
  auto bin_id = [&](int cx, int cy, int cz) {
    return cx + nc.x() * (cy + static_cast<std::size_t>(nc.y()) * cz);
  };
  for (int i = 0; i < g.n_nodes; ++i)
    bins[bin_id(cell_of(i, 0), cell_of(i, 1), cell_of(i, 2))].push_back(i);

  std::vector<int> partners;
  for (int i = 0; i < g.n_nodes; ++i) {
    partners.clear();
    const int cx = cell_of(i, 0), cy = cell_of(i, 1), cz = cell_of(i, 2);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int bx = cx + dx, by = cy + dy, bz = cz + dz;
          if (bx < 0 || by < 0 || bz < 0 || bx >= nc.x() || by >= nc.y() ||
              bz >= nc.z())
            continue;
          for (int j : bins[bin_id(bx, by, bz)])
            if (j > i &&
                (coords.row(j) - coords.row(i)).squaredNorm() <= r2)
              partners.push_back(j);
        }
    std::sort(partners.begin(), partners.end());
    for (int j : partners) {
      g.edges.emplace_back(i, j);
      g.weights.push_back((coords.row(j) - coords.row(i)).norm());
    }
  }

  std::vector<Eigen::Triplet<Real>> trip;
  trip.reserve(2 * g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [i, j] = g.edges[e];
    const Real a = mode == EdgeWeight::Binary ? 1.0 : g.weights[e];
    trip.emplace_back(i, j, a);
    trip.emplace_back(j, i, a);
  }
  g.adjacency.resize(g.n_nodes, g.n_nodes);
  g.adjacency.setFromTriplets(trip.begin(), trip.end());
  g.degree = g.adjacency * VecX::Ones(g.n_nodes);

  int isolated = 0;
  for (int i = 0; i < g.n_nodes; ++i)
    if (g.degree[i] == 0.0) ++isolated;
  if (isolated > 0) {
    g.has_isolated_nodes = true;
    g.warnings.push_back(std::to_string(isolated) +
                         " isolated node(s) at radius " + std::to_string(r));
  }

  g.scaled_laplacian = scaled_laplacian(g.adjacency, g.degree);
  return g;
}

Graph build_graph(const grid::NodeGrid& grid, std::optional<Real> r,
                  EdgeWeight mode) {
  return build_graph(grid.coords, r.value_or(auto_radius(grid)), mode);
}

SpMat scaled_laplacian(const SpMat& adjacency, const VecX& degree) {
  VecX dinv_sqrt(degree.size());
  for (Eigen::Index i = 0; i < degree.size(); ++i)
    dinv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;

  SpMat l_hat = adjacency;
  for (int k = 0; k < l_hat.outerSize(); ++k)
    for (SpMat::InnerIterator it(l_hat, k); it; ++it)
      it.valueRef() = -dinv_sqrt[it.row()] * it.value() * dinv_sqrt[it.col()];
  return l_hat;
}

std::vector<MatX> chebyshev_basis(const SpMat& l_hat, const MatX& X,
                                  int order) {
  if (order < 1)
    fail(ErrorKind::InvalidOrder,
         "chebyshev order must be >= 1, got " + std::to_string(order));
  if (X.rows() != l_hat.rows())
    fail(ErrorKind::Contract, "feature row count does not match graph size");

  std::vector<MatX> Z;
  Z.reserve(order);
  Z.push_back(X);
  if (order >= 2) Z.push_back(l_hat * X);
  for (int k = 3; k <= order; ++k)
    Z.push_back(2.0 * (l_hat * Z[k - 2]) - Z[k - 3]);
  return Z;
}

}  // namespace dem::graph
