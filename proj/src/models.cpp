#include "dem/models.hpp"

#include <cmath>

namespace dem::models {
namespace {

int blocks_per_layer(const NetworkSpec& spec) {
  return spec.kind == Backbone::Gcn ? spec.cheb_order : 1;
}

using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

}  // namespace

void validate(const NetworkSpec& spec) {
  const auto& w = spec.layer_widths;
  if (w.size() < 2)
    fail(ErrorKind::Contract, "network needs at least input and output widths");
  if (w.front() != 3 || w.back() != 3)
    fail(ErrorKind::Contract, "first and last layer widths must be 3");
  for (int width : w)
    if (width < 1) fail(ErrorKind::Contract, "layer widths must be >= 1");
  if (spec.cheb_order < 1)
    fail(ErrorKind::InvalidOrder, "chebyshev order must be >= 1");
}

int num_params(const NetworkSpec& spec) {
  const int K = blocks_per_layer(spec);
  int count = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l)
    count += K * spec.layer_widths[l] * spec.layer_widths[l + 1] +
             spec.layer_widths[l + 1];
  return count;
}

VecX init_params(const NetworkSpec& spec) {
  validate(spec);
  const int K = blocks_per_layer(spec);
  VecX theta(num_params(spec));
  Rng rng(spec.seed);
  int off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const int win = spec.layer_widths[l];
    const int wout = spec.layer_widths[l + 1];
    const Real bound = std::sqrt(6.0 / (win + wout));
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < win * wout; ++i)
        theta[off++] = rng.uniform(-bound, bound);
    for (int i = 0; i < wout; ++i) theta[off++] = 0.0;
  }
  return theta;
}

MatX forward(const NetworkSpec& spec, const VecX& theta,
             const graph::Graph* graph, const MatX& X) {
  const auto& w = spec.layer_widths;
  if (static_cast<int>(X.cols()) != w.front())
    fail(ErrorKind::Contract, "input feature count does not match the network");
  if (theta.size() != num_params(spec))
    fail(ErrorKind::Contract, "parameter vector length mismatch");
  const int K = blocks_per_layer(spec);
  if (K > 1) {
    if (!graph) fail(ErrorKind::Contract, "chebyshev order > 1 needs a graph");
    if (graph->n_nodes != X.rows())
      fail(ErrorKind::Contract, "graph size does not match input rows");
  }

  MatX H = X;
  int off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const int win = w[l], wout = w[l + 1];
    std::vector<MatX> Z;
    if (K == 1)
      Z.push_back(H);
    else
      Z = graph::chebyshev_basis(graph->scaled_laplacian, H, K);
    MatX S = MatX::Zero(H.rows(), wout);
    for (int k = 0; k < K; ++k) {
      S.noalias() +=
          Z[k] * Eigen::Map<const MatX>(theta.data() + off, win, wout);
      off += win * wout;
    }
    S.rowwise() += Eigen::Map<const RowVec>(theta.data() + off, wout);
    off += wout;
    H = (l + 2 < w.size()) ? MatX(S.array().tanh()) : std::move(S);
  }
  if (!H.allFinite())
    fail(ErrorKind::NonFiniteLoss, "non-finite network output");
  return H;
}

MatX mlp_forward(const NetworkSpec& spec, const VecX& theta, const MatX& X) {
  NetworkSpec s = spec;
  s.kind = Backbone::Mlp;
  return forward(s, theta, nullptr, X);
}

MatX gcn_forward(const NetworkSpec& spec, const VecX& theta,
                 const graph::Graph& graph, const MatX& X) {
  NetworkSpec s = spec;
  s.kind = Backbone::Gcn;
  return forward(s, theta, &graph, X);
}

MatX apply_dirichlet(const MatX& u_raw, const MatX& X, Real lx) {
  if (!(lx > 0.0)) fail(ErrorKind::InvalidBc, "domain length must be positive");
  if (u_raw.rows() != X.rows())
    fail(ErrorKind::Contract, "displacement and coordinate row counts differ");
  if (!(X.col(0).array() == 0.0).any())
    fail(ErrorKind::InvalidBc, "clamped plane x = 0 contains no nodes");
  return u_raw.array().colwise() * (X.col(0).array() / lx);
}

MatX input_directional_derivative(const NetworkSpec& spec, const VecX& theta,
                                  const graph::Graph* graph, const MatX& X,
                                  const MatX& direction,
                                  std::optional<Real> dirichlet_lx) {
  const auto& w = spec.layer_widths;
  if (direction.rows() != X.rows() || direction.cols() != X.cols())
    fail(ErrorKind::Contract, "direction shape does not match inputs");
  if (static_cast<int>(X.cols()) != w.front())
    fail(ErrorKind::Contract, "input feature count does not match the network");
  if (theta.size() != num_params(spec))
    fail(ErrorKind::Contract, "parameter vector length mismatch");
  const int K = blocks_per_layer(spec);
  if (K > 1 && !graph)
    fail(ErrorKind::Contract, "chebyshev order > 1 needs a graph");

  MatX H = X, dH = direction;
  int off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const int win = w[l], wout = w[l + 1];
    std::vector<MatX> Z, dZ;
    if (K == 1) {
      Z.push_back(H);
      dZ.push_back(dH);
    } else {
      Z = graph::chebyshev_basis(graph->scaled_laplacian, H, K);
      dZ = graph::chebyshev_basis(graph->scaled_laplacian, dH, K);
    }
    MatX S = MatX::Zero(H.rows(), wout);
    MatX dS = MatX::Zero(H.rows(), wout);
    for (int k = 0; k < K; ++k) {
      auto W = Eigen::Map<const MatX>(theta.data() + off, win, wout);
      off += win * wout;
      S.noalias() += Z[k] * W;
      dS.noalias() += dZ[k] * W;
    }
    S.rowwise() += Eigen::Map<const RowVec>(theta.data() + off, wout);
    off += wout;
    if (l + 2 < w.size()) {
      H = S.array().tanh();
      dH = (1.0 - H.array().square()) * dS.array();
    } else {
      H = std::move(S);
      dH = std::move(dS);
    }
  }

  if (dirichlet_lx) {
    const Real lx = *dirichlet_lx;
    if (X.cols() != 3)
      fail(ErrorKind::Contract, "dirichlet ramp expects coordinate inputs");
    MatX u = apply_dirichlet(H, X, lx);  // validates the clamp plane
    (void)u;
    return (dH.array().colwise() * (X.col(0).array() / lx)) +
           (H.array().colwise() * (direction.col(0).array() / lx));
  }
  return dH;
}

TapedNetwork build_taped_network(ad::Program& prog, const NetworkSpec& spec,
                                 const SpMat* l_hat, const MatX& X,
                                 std::optional<Real> dirichlet_lx,
                                 const std::vector<MatX>& tangent_seeds) {
  const auto& w = spec.layer_widths;
  if (static_cast<int>(X.cols()) != w.front())
    fail(ErrorKind::Contract, "input feature count does not match the network");
  const int n = static_cast<int>(X.rows());
  const int K = blocks_per_layer(spec);
  if (K > 1 && !l_hat)
    fail(ErrorKind::Contract, "chebyshev order > 1 needs a graph operator");
  if (K > 1 && (l_hat->rows() != n || l_hat->cols() != n))
    fail(ErrorKind::Contract, "graph operator size does not match input rows");

  // Chebyshev stack over a feature node; identical recursion for values and
  // tangents since the operator is linear.
  auto cheb = [&](ad::NodeId h) {
    std::vector<ad::NodeId> Z{h};
    if (K >= 2) Z.push_back(prog.spmatmul(*l_hat, h, "lhat_mul"));
    for (int k = 3; k <= K; ++k)
      Z.push_back(prog.sub(
          prog.scale(prog.spmatmul(*l_hat, Z[k - 2], "lhat_mul"), 2.0),
          Z[k - 3]));
    return Z;
  };

  ad::NodeId H = prog.constant(X, "X");
  std::vector<ad::NodeId> dH;
  for (const MatX& seed : tangent_seeds) {
    if (seed.rows() != X.rows() || seed.cols() != X.cols())
      fail(ErrorKind::Contract, "seed shape does not match inputs");
    dH.push_back(prog.constant(seed, "seed"));
  }

  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const int win = w[l], wout = w[l + 1];
    auto Z = cheb(H);
    std::vector<std::vector<ad::NodeId>> dZ;
    for (ad::NodeId d : dH) dZ.push_back(cheb(d));

    std::vector<ad::NodeId> W(K);
    for (int k = 0; k < K; ++k)
      W[k] = prog.param(win, wout,
                        "W" + std::to_string(l) + "_" + std::to_string(k));
    ad::NodeId b = prog.param(1, wout, "b" + std::to_string(l));

    ad::NodeId S = prog.matmul(Z[0], W[0]);
    for (int k = 1; k < K; ++k) S = prog.add(S, prog.matmul(Z[k], W[k]));
    S = prog.add_row(S, b);
    std::vector<ad::NodeId> dS(dH.size());
    for (std::size_t s = 0; s < dH.size(); ++s) {
      dS[s] = prog.matmul(dZ[s][0], W[0]);
      for (int k = 1; k < K; ++k)
        dS[s] = prog.add(dS[s], prog.matmul(dZ[s][k], W[k]));
    }

    if (l + 2 < w.size()) {
      ad::NodeId A = prog.tanh(S);
      H = A;
      if (!dH.empty()) {
        ad::NodeId gate = prog.sub(prog.constant(MatX::Ones(n, wout)),
                                   prog.hadamard(A, A));
        for (std::size_t s = 0; s < dH.size(); ++s)
          dH[s] = prog.hadamard(gate, dS[s]);
      }
    } else {
      H = S;
      dH = dS;
    }
  }

  TapedNetwork out;
  out.u_raw = H;
  if (dirichlet_lx) {
    const Real lx = *dirichlet_lx;
    if (!(lx > 0.0))
      fail(ErrorKind::InvalidBc, "domain length must be positive");
    if (X.cols() != 3)
      fail(ErrorKind::Contract, "dirichlet ramp expects coordinate inputs");
    if (!(X.col(0).array() == 0.0).any())
      fail(ErrorKind::InvalidBc, "clamped plane x = 0 contains no nodes");
    const int wout = w.back();
    MatX ramp = (X.col(0) / lx).replicate(1, wout);
    ad::NodeId ramp_node = prog.constant(std::move(ramp), "dirichlet_ramp");
    out.u = prog.hadamard(ramp_node, H);
    out.du.resize(dH.size());
    for (std::size_t s = 0; s < dH.size(); ++s) {
      MatX dramp =
          (tangent_seeds[s].col(0) / lx).replicate(1, wout);
      out.du[s] =
          prog.add(prog.hadamard(ramp_node, dH[s]),
                   prog.hadamard(prog.constant(std::move(dramp)), out.u_raw));
    }
  } else {
    out.u = H;
    out.du = dH;
  }
  return out;
}

}  // namespace dem::models
