#include "dem/assembly.hpp"

#include <cmath>

namespace dem::assembly {
namespace {

constexpr Real kSqrt3Inv = 0.5773502691896257;

// VTK hexahedron corner signs in natural coordinates.
constexpr int kSx[8] = {-1, 1, 1, -1, -1, 1, 1, -1};
constexpr int kSy[8] = {-1, -1, 1, 1, -1, -1, 1, 1};
constexpr int kSz[8] = {-1, -1, -1, -1, 1, 1, 1, 1};

Eigen::Matrix<Real, 8, 3> hex_dphi(const Vec3& xi) {
  Eigen::Matrix<Real, 8, 3> d;
  for (int a = 0; a < 8; ++a) {
    d(a, 0) = 0.125 * kSx[a] * (1 + kSy[a] * xi.y()) * (1 + kSz[a] * xi.z());
    d(a, 1) = 0.125 * kSy[a] * (1 + kSx[a] * xi.x()) * (1 + kSz[a] * xi.z());
    d(a, 2) = 0.125 * kSz[a] * (1 + kSx[a] * xi.x()) * (1 + kSy[a] * xi.y());
  }
  return d;
}

std::vector<std::pair<Vec3, Real>> volume_points(VolumeRule rule) {
  if (rule == VolumeRule::Gauss1) return {{Vec3::Zero(), 8.0}};
  std::vector<std::pair<Vec3, Real>> pts;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i)
        pts.push_back({Vec3((2 * i - 1) * kSqrt3Inv, (2 * j - 1) * kSqrt3Inv,
                            (2 * k - 1) * kSqrt3Inv),
                       1.0});
  return pts;
}

Mat3 gradu_from_row(const MatX& rows, Eigen::Index r) {
  Mat3 H;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) H(i, j) = rows(r, 3 * i + j);
  return H;
}

Real density(const Mat3& H, const materials::MaterialModel& mat) {
  if (const auto* le = std::get_if<materials::LinearElastic>(&mat))
    return materials::energy_linear(H, le->E, le->nu);
  const auto& nh = std::get<materials::NeoHookean>(mat);
  return materials::energy_neohookean(materials::deformation_gradient(H),
                                      nh.C10, nh.D1);
}

struct FaceSelector {
  int axis;       // 0..2
  int fixed_idx;  // 0 or dims[axis]-1
  int u_axis, v_axis;
};

FaceSelector parse_face_tag(const grid::NodeGrid& grid,
                            const std::string& tag) {
  if (tag.size() != 2 || tag[0] < 'x' || tag[0] > 'z' ||
      (tag[1] != '0' && tag[1] != '1'))
    fail(ErrorKind::InvalidBc, "unknown face tag '" + tag + "'");
  FaceSelector s;
  s.axis = tag[0] - 'x';
  s.fixed_idx = tag[1] == '1' ? grid.dims[s.axis] - 1 : 0;
  s.u_axis = (s.axis + 1) % 3;
  s.v_axis = (s.axis + 2) % 3;
  return s;
}

// Gradient stack layout: column 3i+j holds d(u_i)/d(x_j).
ad::NodeId stack_gradient_columns(ad::Program& prog,
                                  const std::array<ad::NodeId, 3>& du) {
  std::vector<ad::NodeId> cols;
  cols.reserve(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cols.push_back(prog.col(du[j], i));
  return prog.hstack(cols);
}

}  // namespace

GaussPointGradients shape_gradients(const grid::HexMesh& mesh, int element,
                                    VolumeRule rule) {
  if (element < 0 || element >= mesh.num_elements())
    fail(ErrorKind::Lookup, "element id out of range");
  Eigen::Matrix<Real, 8, 3> Xe;
  for (int a = 0; a < 8; ++a)
    Xe.row(a) = mesh.grid.coords.row(mesh.elements(element, a));

  GaussPointGradients out;
  for (const auto& [xi, w] : volume_points(rule)) {
    const Eigen::Matrix<Real, 8, 3> dphi = hex_dphi(xi);
    const Mat3 J = Xe.transpose() * dphi;  // J_ij = dx_i / dxi_j
    const Real det = J.determinant();
    if (!(det > 0.0))
      fail(ErrorKind::InvertedElement,
           "non-positive Jacobian in element " + std::to_string(element));
    out.G.push_back(dphi * J.inverse());
    out.det_j.push_back(det);
    out.weight.push_back(w);
  }
  return out;
}

SfOperators build_sf_operators(const grid::HexMesh& mesh, VolumeRule rule) {
  const int ngp = rule == VolumeRule::Gauss1 ? 1 : 8;
  const int n = mesh.grid.num_nodes();
  const int rows = mesh.num_elements() * ngp;

  SfOperators ops;
  ops.points_per_element = ngp;
  ops.weights.resize(rows);
  std::array<std::vector<Eigen::Triplet<Real>>, 3> trip;
  for (auto& t : trip) t.reserve(static_cast<std::size_t>(rows) * 8);

  for (int e = 0; e < mesh.num_elements(); ++e) {
    GaussPointGradients gp = shape_gradients(mesh, e, rule);
    for (int q = 0; q < ngp; ++q) {
      const int row = e * ngp + q;
      ops.weights[row] = gp.weight[q] * gp.det_j[q];
      for (int a = 0; a < 8; ++a) {
        const int node = mesh.elements(e, a);
        for (int j = 0; j < 3; ++j)
          trip[j].emplace_back(row, node, gp.G[q](a, j));
      }
    }
  }
  for (int j = 0; j < 3; ++j) {
    ops.G[j].resize(rows, n);
    ops.G[j].setFromTriplets(trip[j].begin(), trip[j].end());
    ops.G[j].makeCompressed();
  }
  return ops;
}

MatX sf_gradient_audit(const SfOperators& ops, const MatX& U) {
  MatX out(ops.G[0].rows(), 9);
  for (int j = 0; j < 3; ++j) {
    const MatX du = ops.G[j] * U;  // rows x 3, component i in column i
    for (int i = 0; i < 3; ++i) out.col(3 * i + j) = du.col(i);
  }
  return out;
}

Real internal_energy_sf(const MatX& U, const grid::HexMesh& mesh,
                        const materials::MaterialModel& mat, VolumeRule rule) {
  if (!U.allFinite())
    fail(ErrorKind::NonFiniteLoss, "non-finite nodal field");
  if (U.rows() != mesh.grid.num_nodes() || U.cols() != 3)
    fail(ErrorKind::Contract, "nodal field shape mismatch");

  std::vector<Real> terms;
  terms.reserve(static_cast<std::size_t>(mesh.num_elements()) * 8);
  Eigen::Matrix<Real, 8, 3> Ue;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    for (int a = 0; a < 8; ++a) Ue.row(a) = U.row(mesh.elements(e, a));
    GaussPointGradients gp = shape_gradients(mesh, e, rule);
    for (std::size_t q = 0; q < gp.G.size(); ++q) {
      const Mat3 H = Ue.transpose() * gp.G[q];
      terms.push_back(gp.weight[q] * gp.det_j[q] * density(H, mat));
    }
  }
  return pairwise_sum(std::span<const Real>(terms.data(), terms.size()));
}

MatX nodal_gradients_ad(const models::NetworkSpec& spec, const VecX& theta,
                        const graph::Graph* graph, const MatX& X,
                        std::optional<Real> dirichlet_lx) {
  MatX out(X.rows(), 9);
  for (int j = 0; j < 3; ++j) {
    MatX D = MatX::Zero(X.rows(), 3);
    D.col(j).setOnes();
    const MatX du = models::input_directional_derivative(spec, theta, graph, X,
                                                         D, dirichlet_lx);
    for (int i = 0; i < 3; ++i) out.col(3 * i + j) = du.col(i);
  }
  return out;
}

VecX axis_quadrature_weights(int n, Real length, AdScheme scheme,
                             const std::string& axis_name,
                             std::vector<std::string>* warnings) {
  if (n < 2) fail(ErrorKind::InvalidDiscretization, "axis needs >= 2 nodes");
  const Real h = length / (n - 1);
  VecX w(n);
  if (scheme == AdScheme::Simpson && n >= 3 && n % 2 == 1) {
    w.setConstant(2.0 * h / 3.0);
    for (int i = 1; i < n; i += 2) w[i] = 4.0 * h / 3.0;
    w[0] = w[n - 1] = h / 3.0;
    return w;
  }
  if (scheme == AdScheme::Simpson && warnings)
    warnings->push_back("simpson needs an odd node count on axis " +
                        axis_name + " (" + std::to_string(n) +
                        " nodes); using trapezoid there");
  w.setConstant(h);
  w[0] = w[n - 1] = 0.5 * h;
  return w;
}

VecX grid_quadrature_weights(const grid::NodeGrid& grid, AdScheme scheme,
                             std::vector<std::string>* warnings) {
  const VecX wx = axis_quadrature_weights(grid.dims.x(), grid.lengths.x(),
                                          scheme, "x", warnings);
  const VecX wy = axis_quadrature_weights(grid.dims.y(), grid.lengths.y(),
                                          scheme, "y", warnings);
  const VecX wz = axis_quadrature_weights(grid.dims.z(), grid.lengths.z(),
                                          scheme, "z", warnings);
  VecX w(grid.num_nodes());
  for (int k = 0; k < grid.dims.z(); ++k)
    for (int j = 0; j < grid.dims.y(); ++j)
      for (int i = 0; i < grid.dims.x(); ++i)
        w[grid.node_index(i, j, k)] = wx[i] * wy[j] * wz[k];
  return w;
}

Real integrate_nodal(const VecX& values, const grid::NodeGrid& grid,
                     AdScheme scheme, std::vector<std::string>* warnings) {
  if (values.size() != grid.num_nodes())
    fail(ErrorKind::Contract, "nodal value count mismatch");
  const VecX w = grid_quadrature_weights(grid, scheme, warnings);
  VecX prod = w.cwiseProduct(values);
  return pairwise_sum(prod);
}

Real internal_energy_ad(const MatX& gradu9,
                        const materials::MaterialModel& mat,
                        const grid::NodeGrid& grid, AdScheme scheme,
                        std::vector<std::string>* warnings) {
  if (gradu9.rows() != grid.num_nodes() || gradu9.cols() != 9)
    fail(ErrorKind::Contract, "gradient stack shape mismatch");
  VecX psi(gradu9.rows());
  for (Eigen::Index r = 0; r < gradu9.rows(); ++r)
    psi[r] = density(gradu_from_row(gradu9, r), mat);
  return integrate_nodal(psi, grid, scheme, warnings);
}

MatX face_traction_weights(const grid::NodeGrid& grid,
                           const TractionSpec& traction) {
  const FaceSelector s = parse_face_tag(grid, traction.tag);
  const VecX wu =
      axis_quadrature_weights(grid.dims[s.u_axis], grid.lengths[s.u_axis],
                              AdScheme::Trapezoid, "", nullptr);
  const VecX wv =
      axis_quadrature_weights(grid.dims[s.v_axis], grid.lengths[s.v_axis],
                              AdScheme::Trapezoid, "", nullptr);
  MatX W = MatX::Zero(grid.num_nodes(), 3);
  for (int v = 0; v < grid.dims[s.v_axis]; ++v)
    for (int u = 0; u < grid.dims[s.u_axis]; ++u) {
      Vec3i idx;
      idx[s.axis] = s.fixed_idx;
      idx[s.u_axis] = u;
      idx[s.v_axis] = v;
      W.row(grid.node_index(idx.x(), idx.y(), idx.z())) =
          wu[u] * wv[v] * traction.traction.transpose();
    }
  return W;
}

FacetOperators build_facet_operators(const grid::HexMesh& mesh,
                                     const TractionSpec& traction) {
  parse_face_tag(mesh.grid, traction.tag);  // validates the tag itself
  const std::vector<int> facets = mesh.facets_with_tag(traction.tag);
  if (facets.empty())
    fail(ErrorKind::InvalidBc,
         "no facets carry tag '" + traction.tag + "'");

  const int rows = static_cast<int>(facets.size()) * 4;
  FacetOperators ops;
  ops.weights.resize(rows, 3);
  std::vector<Eigen::Triplet<Real>> trip;
  trip.reserve(static_cast<std::size_t>(rows) * 4);

  constexpr int qsx[4] = {-1, 1, 1, -1};
  constexpr int qsy[4] = {-1, -1, 1, 1};
  int row = 0;
  for (int f : facets) {
    const auto& facet = mesh.facets[f];
    Eigen::Matrix<Real, 4, 3> Xf;
    for (int a = 0; a < 4; ++a)
      Xf.row(a) = mesh.grid.coords.row(facet.nodes[a]);
    for (int q = 0; q < 4; ++q, ++row) {
      const Real xi = qsx[q] * kSqrt3Inv;
      const Real eta = qsy[q] * kSqrt3Inv;
      Eigen::Matrix<Real, 4, 2> dphi;
      for (int a = 0; a < 4; ++a) {
        trip.emplace_back(row, facet.nodes[a],
                          0.25 * (1 + qsx[a] * xi) * (1 + qsy[a] * eta));
        dphi(a, 0) = 0.25 * qsx[a] * (1 + qsy[a] * eta);
        dphi(a, 1) = 0.25 * qsy[a] * (1 + qsx[a] * xi);
      }
      const Vec3 t_xi = Xf.transpose() * dphi.col(0);
      const Vec3 t_eta = Xf.transpose() * dphi.col(1);
      ops.weights.row(row) =
          t_xi.cross(t_eta).norm() * traction.traction.transpose();
    }
  }
  ops.B.resize(rows, mesh.grid.num_nodes());
  ops.B.setFromTriplets(trip.begin(), trip.end());
  ops.B.makeCompressed();
  return ops;
}

Real external_work_sf(const MatX& U, const grid::HexMesh& mesh,
                      const TractionSpec& traction) {
  FacetOperators ops = build_facet_operators(mesh, traction);
  MatX prod = ops.weights.cwiseProduct(ops.B * U);
  return pairwise_sum(std::span<const Real>(prod.data(), prod.size()));
}

Real external_work_ad(const MatX& U, const grid::NodeGrid& grid,
                      const TractionSpec& traction) {
  MatX prod = face_traction_weights(grid, traction).cwiseProduct(U);
  return pairwise_sum(std::span<const Real>(prod.data(), prod.size()));
}

TapedLoss build_loss(const grid::HexMesh& mesh, const graph::Graph* graph,
                     const LossConfig& cfg) {
  materials::validate(cfg.material);
  models::validate(cfg.network);
  if (cfg.tractions.empty())
    fail(ErrorKind::InvalidBc, "loss needs at least one traction");
  const grid::NodeGrid& g = mesh.grid;
  const bool needs_graph =
      cfg.network.kind == models::Backbone::Gcn && cfg.network.cheb_order > 1;
  if (needs_graph) {
    if (!graph)
      fail(ErrorKind::Contract, "gcn backbone with order > 1 needs a graph");
    if (graph->n_nodes != g.num_nodes())
      fail(ErrorKind::Contract, "graph size does not match the grid");
  }
  const SpMat* l_hat = needs_graph ? &graph->scaled_laplacian : nullptr;
  const Real lx = g.lengths.x();

  TapedLoss out;
  ad::Program& prog = out.program;

  if (cfg.mode == GradientMode::Sf) {
    auto net =
        models::build_taped_network(prog, cfg.network, l_hat, g.coords, lx, {});
    out.u = net.u;
    out.u_raw = net.u_raw;

    SfOperators ops = build_sf_operators(mesh, cfg.volume_rule);
    std::array<ad::NodeId, 3> du;
    for (int j = 0; j < 3; ++j)
      du[j] = prog.spmatmul(ops.G[j], net.u,
                            std::string("sf_gradient_") + "xyz"[j]);
    out.gradu9 = stack_gradient_columns(prog, du);
    ad::NodeId psi = materials::taped_energy(prog, out.gradu9, cfg.material);
    out.internal =
        prog.weighted_sum(psi, ops.weights, "internal_energy");

    ad::NodeId external = -1;
    for (const TractionSpec& traction : cfg.tractions) {
      FacetOperators fo = build_facet_operators(mesh, traction);
      ad::NodeId term = prog.weighted_sum(
          prog.spmatmul(fo.B, net.u, "facet_interp"), fo.weights,
          "external_work");
      external = external < 0 ? term : prog.add(external, term);
    }
    out.external = external;
  } else {
    std::vector<MatX> seeds;
    for (int j = 0; j < 3; ++j) {
      MatX D = MatX::Zero(g.num_nodes(), 3);
      D.col(j).setOnes();
      seeds.push_back(std::move(D));
    }
    auto net = models::build_taped_network(prog, cfg.network, l_hat, g.coords,
                                           lx, seeds);
    out.u = net.u;
    out.u_raw = net.u_raw;
    out.gradu9 =
        stack_gradient_columns(prog, {net.du[0], net.du[1], net.du[2]});
    ad::NodeId psi = materials::taped_energy(prog, out.gradu9, cfg.material);
    out.internal = prog.weighted_sum(
        psi, grid_quadrature_weights(g, cfg.ad_scheme, &out.warnings),
        "internal_energy");
    MatX w = MatX::Zero(g.num_nodes(), 3);
    for (const TractionSpec& traction : cfg.tractions)
      w += face_traction_weights(g, traction);
    out.external = prog.weighted_sum(net.u, w, "external_work");
  }

  out.loss = prog.sub(out.internal, out.external);
  prog.set_output(out.loss);
  return out;
}

Real demo_1d(Real delta_u, Demo1dScheme scheme) {
  auto u = [&](Real x) {
    return x + 0.5 * delta_u * (std::tanh(20.0 * (x - 0.5)) + 1.0);
  };
  auto du = [&](Real x) {
    const Real sech = 1.0 / std::cosh(20.0 * (x - 0.5));
    return 1.0 + 10.0 * delta_u * sech * sech;
  };
  if (scheme == Demo1dScheme::AdTrapezoid) {
    const Real f0 = 0.5 * du(0.0) * du(0.0);
    const Real f1 = 0.5 * du(1.0) * du(1.0);
    return 0.5 * (f0 + f1) - u(1.0);
  }
  const Real g = u(1.0) - u(0.0);  // one-point SF gradient of the unit bar
  return 0.5 * g * g - u(1.0);
}

}  // namespace dem::assembly
