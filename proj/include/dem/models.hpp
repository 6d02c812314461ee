#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dem/ad.hpp"
#include "dem/common.hpp"
#include "dem/graph.hpp"

namespace dem::models {

enum class Backbone { Mlp, Gcn };

struct NetworkSpec {
  Backbone kind = Backbone::Mlp;
  std::vector<int> layer_widths = {3, 16, 32, 64, 32, 16, 3};
  int cheb_order = 1;  // gcn only; 1 degenerates to a per-node map
  std::uint64_t seed = 0;
};

/// Enforces: >= 2 widths, first and last width 3, all widths >= 1, order >= 1.
void validate(const NetworkSpec& spec);

/// Flat parameter count. Layout per layer: the K weight blocks in Chebyshev
/// order (one block for mlp), column-major within a block, then the bias row.
int num_params(const NetworkSpec& spec);

/// Glorot-uniform weights with bound sqrt(6/(fan_in+fan_out)), zero biases,
/// drawn from the seeded generator in layout order. Same seed, same vector.
VecX init_params(const NetworkSpec& spec);

/// Plain forward evaluation, tanh on hidden layers, linear output. The graph
/// is consulted only when spec selects the gcn backbone with order >= 2.
MatX forward(const NetworkSpec& spec, const VecX& theta,
             const graph::Graph* graph, const MatX& X);
MatX mlp_forward(const NetworkSpec& spec, const VecX& theta, const MatX& X);
MatX gcn_forward(const NetworkSpec& spec, const VecX& theta,
                 const graph::Graph& graph, const MatX& X);

/// Hard Dirichlet clamp on the x = 0 plane: u = (X_x / lx) * u_raw rowwise.
MatX apply_dirichlet(const MatX& u_raw, const MatX& X, Real lx);

/// Jacobian-vector product (du/dX) * direction by a forward tangent sweep.
/// With dirichlet_lx set, differentiates the clamped composition, picking up
/// the product-rule term (direction_x / lx) * u_raw.
MatX input_directional_derivative(const NetworkSpec& spec, const VecX& theta,
                                  const graph::Graph* graph, const MatX& X,
                                  const MatX& direction,
                                  std::optional<Real> dirichlet_lx = {});

/// Handles into a Program after appending the network subgraph.
struct TapedNetwork {
  ad::NodeId u_raw;            // network output before the clamp
  ad::NodeId u;                // clamped output; equals u_raw without a clamp
  std::vector<ad::NodeId> du;  // tangent outputs, one per seed direction
};

/// Appends the forward pass and one taped tangent chain per seed to prog.
/// Parameters are created in the canonical layout, so init_params(spec)
/// matches the resulting program. l_hat may be null unless order >= 2.
TapedNetwork build_taped_network(ad::Program& prog, const NetworkSpec& spec,
                                 const SpMat* l_hat, const MatX& X,
                                 std::optional<Real> dirichlet_lx,
                                 const std::vector<MatX>& tangent_seeds);

}  // namespace dem::models
