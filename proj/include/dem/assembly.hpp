#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dem/ad.hpp"
#include "dem/common.hpp"
#include "dem/graph.hpp"
#include "dem/grid.hpp"
#include "dem/materials.hpp"
#include "dem/models.hpp"

namespace dem::assembly {

enum class VolumeRule { Gauss1, Gauss2x2x2 };
enum class AdScheme { Trapezoid, Simpson };
enum class GradientMode { Ad, Sf };
enum class Demo1dScheme { AdTrapezoid, SfGauss1 };

/// Constant traction over one tagged boundary face.
struct TractionSpec {
  std::string tag = "x1";
  Vec3 traction = Vec3::Zero();
};

/// Shape-function machinery of one hex element at each Gauss point:
/// G maps the 8 nodal values to the spatial gradient, weight is the
/// natural-coordinate Gauss weight.
struct GaussPointGradients {
  std::vector<Eigen::Matrix<Real, 8, 3>> G;
  std::vector<Real> det_j;
  std::vector<Real> weight;
};

GaussPointGradients shape_gradients(const grid::HexMesh& mesh, int element,
                                    VolumeRule rule);

/// Stacked sparse gradient operators for the whole mesh: G[j] * U gives
/// d(u)/d(x_j) at every Gauss point (rows ordered element-major, then point).
/// weights holds gauss_weight * det J per row.
struct SfOperators {
  std::array<SpMat, 3> G;
  VecX weights;
  int points_per_element = 0;
};

SfOperators build_sf_operators(const grid::HexMesh& mesh, VolumeRule rule);

/// Per-Gauss-point displacement gradients as rows [H11 H12 H13 H21 ... H33].
MatX sf_gradient_audit(const SfOperators& ops, const MatX& U);

/// Sum over elements and points of w * detJ * Psi(grad u). U is any nodal
/// field (the bypass hook the oracle and the property tests use).
Real internal_energy_sf(const MatX& U, const grid::HexMesh& mesh,
                        const materials::MaterialModel& mat, VolumeRule rule);

/// Per-node displacement gradients by three seeded tangent passes through
/// the network, rows laid out as in sf_gradient_audit. dirichlet_lx composes
/// the clamp ramp, including its product-rule term.
MatX nodal_gradients_ad(const models::NetworkSpec& spec, const VecX& theta,
                        const graph::Graph* graph, const MatX& X,
                        std::optional<Real> dirichlet_lx);

/// Composite 1D rule weights along one axis. Simpson falls back to trapezoid
/// on even node counts, recording a warning.
VecX axis_quadrature_weights(int n, Real length, AdScheme scheme,
                             const std::string& axis_name,
                             std::vector<std::string>* warnings);

/// Tensor-product nodal weights over the structured grid.
VecX grid_quadrature_weights(const grid::NodeGrid& grid, AdScheme scheme,
                             std::vector<std::string>* warnings);

/// Integral of a per-node scalar field under the tensor-product rule.
Real integrate_nodal(const VecX& values, const grid::NodeGrid& grid,
                     AdScheme scheme, std::vector<std::string>* warnings);

/// Tensor-product quadrature of Psi over nodal displacement gradients.
Real internal_energy_ad(const MatX& gradu9, const materials::MaterialModel& mat,
                        const grid::NodeGrid& grid, AdScheme scheme,
                        std::vector<std::string>* warnings);

/// Per-node work weights for the tagged face under the 2D trapezoid rule,
/// scaled by the traction: row i is w_i * t_bar (zero off the face).
MatX face_traction_weights(const grid::NodeGrid& grid,
                           const TractionSpec& traction);

/// Facet interpolation operator and gp work weights for the SF work term.
struct FacetOperators {
  SpMat B;       // (facets * 4) x n bilinear interpolation
  MatX weights;  // same rows x 3, area element times traction
};

FacetOperators build_facet_operators(const grid::HexMesh& mesh,
                                     const TractionSpec& traction);

Real external_work_sf(const MatX& U, const grid::HexMesh& mesh,
                      const TractionSpec& traction);
Real external_work_ad(const MatX& U, const grid::NodeGrid& grid,
                      const TractionSpec& traction);

struct LossConfig {
  models::NetworkSpec network;
  materials::MaterialModel material = materials::LinearElastic{1000.0, 0.3};
  GradientMode mode = GradientMode::Sf;
  VolumeRule volume_rule = VolumeRule::Gauss2x2x2;
  AdScheme ad_scheme = AdScheme::Trapezoid;
  std::vector<TractionSpec> tractions{TractionSpec{}};  // work terms are summed
};

/// The potential-energy loss as a self-contained program over theta.
struct TapedLoss {
  ad::Program program;
  ad::NodeId u = -1;         // clamped nodal displacements, n x 3
  ad::NodeId u_raw = -1;     // network output before the clamp
  ad::NodeId gradu9 = -1;    // gradient stack feeding the energy density
  ad::NodeId internal = -1;  // 1x1
  ad::NodeId external = -1;  // 1x1
  ad::NodeId loss = -1;      // internal - external, the program output
  std::vector<std::string> warnings;
};

TapedLoss build_loss(const grid::HexMesh& mesh, const graph::Graph* graph,
                     const LossConfig& cfg);

/// Two-node unit bar with the displacement ansatz
/// u(x) = x + (du/2)(tanh[20(x - 1/2)] + 1) under a unit end load.
Real demo_1d(Real delta_u, Demo1dScheme scheme);

}  // namespace dem::assembly
