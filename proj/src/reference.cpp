#include "dem/reference.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <deque>
#include <limits>
#include <vector>

#include "dem/training.hpp"

namespace dem::reference {

namespace {

// Precomputed shape-function data reused across the many oracle energy and
// gradient evaluations.
struct ElementData {
  std::vector<assembly::GaussPointGradients> gauss;  // one per element
};

ElementData precompute(const grid::HexMesh& mesh, assembly::VolumeRule rule) {
  ElementData data;
  data.gauss.reserve(mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e)
    data.gauss.push_back(assembly::shape_gradients(mesh, e, rule));
  return data;
}

// 6x24 strain-displacement matrix in Voigt order xx, yy, zz, xy, yz, zx with
// engineering shear strains.
Eigen::Matrix<Real, 6, 24> voigt_b(const Eigen::Matrix<Real, 8, 3>& G) {
  Eigen::Matrix<Real, 6, 24> B = Eigen::Matrix<Real, 6, 24>::Zero();
  for (int a = 0; a < 8; ++a) {
    const Real gx = G(a, 0), gy = G(a, 1), gz = G(a, 2);
    B(0, 3 * a + 0) = gx;
    B(1, 3 * a + 1) = gy;
    B(2, 3 * a + 2) = gz;
    B(3, 3 * a + 0) = gy;
    B(3, 3 * a + 1) = gx;
    B(4, 3 * a + 1) = gz;
    B(4, 3 * a + 2) = gy;
    B(5, 3 * a + 0) = gz;
    B(5, 3 * a + 2) = gx;
  }
  return B;
}

Eigen::Matrix<Real, 6, 6> voigt_d(const materials::LinearElastic& mat) {
  const Real mu = mat.E / (2.0 * (1.0 + mat.nu));
  const Real lambda =
      mat.E * mat.nu / ((1.0 + mat.nu) * (1.0 - 2.0 * mat.nu));
  Eigen::Matrix<Real, 6, 6> D = Eigen::Matrix<Real, 6, 6>::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) D(i, j) = lambda;
    D(i, i) = lambda + 2.0 * mu;
    D(i + 3, i + 3) = mu;
  }
  return D;
}

VecX gather_free(const VecX& full, const std::vector<int>& dof_map,
                 int n_free) {
  VecX v(n_free);
  for (std::size_t d = 0; d < dof_map.size(); ++d)
    if (dof_map[d] >= 0) v[dof_map[d]] = full[static_cast<int>(d)];
  return v;
}

MatX unflatten(const VecX& v, const std::vector<int>& dof_map, int n_nodes) {
  MatX u = MatX::Zero(n_nodes, 3);
  for (int i = 0; i < n_nodes; ++i)
    for (int c = 0; c < 3; ++c)
      if (int d = dof_map[3 * i + c]; d >= 0) u(i, c) = v[d];
  return u;
}

OracleSolution solve_linear(const grid::HexMesh& mesh,
                            const materials::LinearElastic& mat,
                            const assembly::TractionSpec& traction,
                            assembly::VolumeRule rule) {
  int n_free = 0;
  std::vector<int> dof_map = clamp_dof_map(mesh.grid, &n_free);
  const VecX f_full = assemble_load(mesh, traction);
  const VecX f = gather_free(f_full, dof_map, n_free);

  OracleSolution sol;
  if (f.norm() == 0.0) {
    sol.u_ref = MatX::Zero(mesh.grid.num_nodes(), 3);
    return sol;
  }

  SpMat K = assemble_stiffness(mesh, mat, dof_map, n_free, rule);
  Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(1e-10);
  cg.setMaxIterations(50000);
  cg.compute(K);
  VecX v = cg.solve(f);
  if (cg.info() != Eigen::Success)
    fail(ErrorKind::OracleFailure, "conjugate gradients did not converge");

  sol.u_ref = unflatten(v, dof_map, mesh.grid.num_nodes());
  sol.iterations = static_cast<int>(cg.iterations());
  sol.residual_norm = (K * v - f).norm() / f.norm();
  if (sol.residual_norm > 1e-8)
    fail(ErrorKind::OracleFailure, "linear solve residual above tolerance");
  const materials::MaterialModel model = mat;
  sol.energy = assembly::internal_energy_sf(sol.u_ref, mesh, model, rule) -
               assembly::external_work_sf(sol.u_ref, mesh, traction);
  return sol;
}

// Conjugate gradients on the finite-difference directional tangent
// (g(v + h w) - g(v)) / h, solving K dv = -g without forming K. Stops early
// on negative curvature and returns the best step found.
VecX newton_direction(const training::Objective& objective, const VecX& v,
                      const VecX& g) {
  const Real h_scale = std::sqrt(std::numeric_limits<Real>::epsilon()) *
                       (1.0 + v.norm());
  VecX g_probe(v.size());
  auto apply = [&](const VecX& w) -> VecX {
    const Real h = h_scale / std::max(w.norm(), 1e-300);
    objective(v + h * w, g_probe);
    return (g_probe - g) / h;
  };

  VecX x = VecX::Zero(v.size());
  VecX r = -g;
  VecX p = r;
  Real rr = r.squaredNorm();
  const Real target = 1e-12 * rr;
  for (int it = 0; it < 600 && rr > target; ++it) {
    VecX ap;
    try {
      ap = apply(p);
    } catch (const Error&) {
      break;
    }
    const Real pap = p.dot(ap);
    if (pap <= 0.0) {
      if (x.isZero()) x = r;  // fall back to steepest descent
      break;
    }
    const Real alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const Real rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return x;
}

// Drives the gradient below tol from a point where line-search minimization
// already plateaued. Accepts steps that shrink either the energy or the
// gradient norm.
bool newton_polish(const training::Objective& objective, VecX& v, Real tol,
                   Real* achieved) {
  VecX g(v.size());
  Real psi = objective(v, g);
  for (int it = 0; it < 40; ++it) {
    const Real gn = g.norm();
    *achieved = gn;
    if (gn <= tol) return true;
    const VecX dv = newton_direction(objective, v, g);
    bool accepted = false;
    Real t = 1.0;
    VecX g_new(v.size());
    for (int halving = 0; halving < 12; ++halving, t *= 0.5) {
      Real psi_new;
      try {
        psi_new = objective(v + t * dv, g_new);
      } catch (const Error&) {
        continue;
      }
      if (g_new.norm() < gn || psi_new < psi) {
        v += t * dv;
        g.swap(g_new);
        psi = psi_new;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  *achieved = g.norm();
  return g.norm() <= tol;
}

OracleSolution solve_neohookean(const grid::HexMesh& mesh,
                                const materials::NeoHookean& mat,
                                const assembly::TractionSpec& traction,
                                assembly::VolumeRule rule) {
  const int n_nodes = mesh.grid.num_nodes();
  int n_free = 0;
  std::vector<int> dof_map = clamp_dof_map(mesh.grid, &n_free);
  const VecX f_full = assemble_load(mesh, traction);
  const VecX f_target = gather_free(f_full, dof_map, n_free);
  const ElementData data = precompute(mesh, rule);
  const Real grad_tol = 1e-8 * std::max(1.0, f_target.norm());

  // Energy and hand-assembled gradient at a load fraction: the gradient is
  // the first Piola-Kirchhoff stress contracted with the shape-function
  // gradients, no taped differentiation anywhere.
  auto make_objective = [&](Real fraction) {
    return training::Objective([&, fraction](const VecX& v, VecX& g) -> Real {
      MatX u = unflatten(v, dof_map, n_nodes);
      MatX g_full = MatX::Zero(n_nodes, 3);
      std::vector<Real> terms;
      terms.reserve(data.gauss.size() * data.gauss[0].G.size());
      for (int e = 0; e < mesh.num_elements(); ++e) {
        Eigen::Matrix<Real, 8, 3> ue;
        for (int a = 0; a < 8; ++a) ue.row(a) = u.row(mesh.elements(e, a));
        const auto& gp = data.gauss[e];
        for (std::size_t q = 0; q < gp.G.size(); ++q) {
          const Real scale = gp.weight[q] * gp.det_j[q];
          Mat3 F = (ue.transpose() * gp.G[q] + Mat3::Identity()).eval();
          terms.push_back(scale *
                          materials::energy_neohookean(F, mat.C10, mat.D1));
          Mat3 P = materials::pk1_stress(F, mat.C10, mat.D1);
          Eigen::Matrix<Real, 8, 3> contrib = scale * (gp.G[q] * P.transpose());
          for (int a = 0; a < 8; ++a)
            g_full.row(mesh.elements(e, a)) += contrib.row(a);
        }
      }
      const VecX f = fraction * f_target;
      g.resize(n_free);
      for (int i = 0; i < n_nodes; ++i)
        for (int c = 0; c < 3; ++c)
          if (int d = dof_map[3 * i + c]; d >= 0) g[d] = g_full(i, c);
      g -= f;
      return pairwise_sum(terms) - f.dot(v);
    });
  };

  training::TrainConfig cfg;
  cfg.verbose = false;
  cfg.max_epochs = 100;
  cfg.inner_iters_per_epoch = 20;
  cfg.rel_loss_tol = 1e-12;  // exit at the line-search plateau
  cfg.grad_tol = grad_tol;

  VecX v = VecX::Zero(n_free);
  int total_updates = 0;
  Real achieved = 0.0;

  const int base_steps = 20;
  Real current = 0.0;
  std::deque<Real> pending;
  for (int k = 1; k <= base_steps; ++k)
    pending.push_back(static_cast<Real>(k) / base_steps);
  const Real min_increment = 1.0 / (base_steps * 16);

  while (!pending.empty()) {
    const Real next = pending.front();
    auto objective = make_objective(next);
    auto [v_new, report] = training::lbfgs_minimize(objective, v, cfg);
    total_updates += report.updates;

    bool ok = report.stop_reason != training::StopReason::NonFinite;
    Real g_norm = 0.0;
    if (ok) {
      try {
        ok = newton_polish(objective, v_new, grad_tol, &g_norm);
      } catch (const Error&) {
        ok = false;
      }
    }
    if (ok) {
      v = std::move(v_new);
      current = next;
      achieved = g_norm;
      pending.pop_front();
      continue;
    }
    if (next - current < min_increment)
      fail(ErrorKind::OracleFailure,
           "incremental solve stalled even with halved load steps");
    pending.push_front(0.5 * (current + next));
  }

  OracleSolution sol;
  sol.u_ref = unflatten(v, dof_map, n_nodes);
  sol.iterations = total_updates;
  sol.residual_norm = achieved / std::max(1.0, f_target.norm());
  const materials::MaterialModel model = mat;
  sol.energy = assembly::internal_energy_sf(sol.u_ref, mesh, model, rule) -
               assembly::external_work_sf(sol.u_ref, mesh, traction);
  return sol;
}

}  // namespace

std::vector<int> clamp_dof_map(const grid::NodeGrid& grid, int* n_free) {
  std::vector<int> dof_map(3 * grid.num_nodes(), -1);
  int next = 0;
  bool clamped = false;
  for (int i = 0; i < grid.num_nodes(); ++i) {
    if (grid.coords(i, 0) == 0.0) {
      clamped = true;
      continue;
    }
    for (int c = 0; c < 3; ++c) dof_map[3 * i + c] = next++;
  }
  if (!clamped)
    fail(ErrorKind::InvalidBc, "no nodes on the x = 0 clamp plane");
  if (n_free) *n_free = next;
  return dof_map;
}

SpMat assemble_stiffness(const grid::HexMesh& mesh,
                         const materials::LinearElastic& material,
                         const std::vector<int>& dof_map, int n_free,
                         assembly::VolumeRule rule) {
  const Eigen::Matrix<Real, 6, 6> D = voigt_d(material);
  std::vector<Eigen::Triplet<Real>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.num_elements()) * 24 * 24);

  for (int e = 0; e < mesh.num_elements(); ++e) {
    assembly::GaussPointGradients gp = assembly::shape_gradients(mesh, e, rule);
    Eigen::Matrix<Real, 24, 24> ke = Eigen::Matrix<Real, 24, 24>::Zero();
    for (std::size_t q = 0; q < gp.G.size(); ++q) {
      const Eigen::Matrix<Real, 6, 24> B = voigt_b(gp.G[q]);
      ke += (gp.weight[q] * gp.det_j[q]) * (B.transpose() * D * B);
    }
    for (int a = 0; a < 8; ++a)
      for (int i = 0; i < 3; ++i) {
        const int row = dof_map[3 * mesh.elements(e, a) + i];
        if (row < 0) continue;
        for (int b = 0; b < 8; ++b)
          for (int j = 0; j < 3; ++j) {
            const int col = dof_map[3 * mesh.elements(e, b) + j];
            if (col < 0) continue;
            triplets.emplace_back(row, col, ke(3 * a + i, 3 * b + j));
          }
      }
  }
  SpMat K(n_free, n_free);
  K.setFromTriplets(triplets.begin(), triplets.end());
  return K;
}

VecX assemble_load(const grid::HexMesh& mesh,
                   const assembly::TractionSpec& traction) {
  assembly::FacetOperators fo = assembly::build_facet_operators(mesh, traction);
  VecX f = VecX::Zero(3 * mesh.grid.num_nodes());
  for (int q = 0; q < fo.B.outerSize(); ++q)
    for (SpMat::InnerIterator it(fo.B, q); it; ++it)
      for (int c = 0; c < 3; ++c)
        f[3 * it.col() + c] += it.value() * fo.weights(it.row(), c);
  return f;
}

OracleSolution direct_minimize(const grid::HexMesh& mesh,
                               const materials::MaterialModel& material,
                               const assembly::TractionSpec& traction,
                               assembly::VolumeRule rule) {
  materials::validate(material);
  if (const auto* le = std::get_if<materials::LinearElastic>(&material))
    return solve_linear(mesh, *le, traction, rule);
  return solve_neohookean(mesh, std::get<materials::NeoHookean>(material),
                          traction, rule);
}

RdReport relative_difference(const MatX& u_nn, const MatX& u_ref) {
  if (u_nn.rows() != u_ref.rows() || u_nn.cols() != 3 || u_ref.cols() != 3)
    fail(ErrorKind::Contract, "fields must share an n x 3 layout");

  RdReport report;
  report.rd.resize(u_nn.rows(), 3);
  for (int c = 0; c < 3; ++c) {
    const Real scale = u_ref.col(c).cwiseAbs().maxCoeff();
    if (scale == 0.0) {
      report.absolute_mode[c] = true;
      report.rd.col(c) = (u_nn.col(c) - u_ref.col(c)).cwiseAbs();
    } else {
      report.rd.col(c) =
          (u_nn.col(c) - u_ref.col(c)).cwiseAbs() * (100.0 / scale);
    }
    report.component_mean[c] = report.rd.col(c).mean();
  }
  report.mean = report.rd.mean();
  return report;
}

Real fd_gradient_audit(const ad::Program& prog, const VecX& theta,
                       int n_probes, std::uint64_t seed) {
  if (n_probes <= 0) fail(ErrorKind::Contract, "need at least one probe");
  auto [value, grad] = ad::value_and_parameter_gradient(prog, theta);
  (void)value;

  Rng rng(seed);
  const Real eps = 1e-5;
  Real worst = 0.0;
  ad::Workspace ws;
  for (int p = 0; p < n_probes; ++p) {
    VecX dir(theta.size());
    for (int i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    dir /= dir.norm();
    const Real plus = prog.value(theta + eps * dir, ws);
    const Real minus = prog.value(theta - eps * dir, ws);
    const Real fd = (plus - minus) / (2.0 * eps);
    worst = std::max(worst,
                     std::abs(fd - grad.dot(dir)) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace dem::reference
