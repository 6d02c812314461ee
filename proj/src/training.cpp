#include "dem/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

#include "dem/assembly.hpp"

namespace dem::training {

namespace {

struct CurvaturePair {
  VecX s, y;
  Real rho;
};

// Two-loop recursion: applies the implicit inverse-Hessian estimate to the
// gradient. Returns the descent direction.
VecX lbfgs_direction(const VecX& grad, const std::deque<CurvaturePair>& hist) {
  VecX q = -grad;
  std::vector<Real> alpha(hist.size());
  for (int i = static_cast<int>(hist.size()) - 1; i >= 0; --i) {
    alpha[i] = hist[i].rho * hist[i].s.dot(q);
    q -= alpha[i] * hist[i].y;
  }
  const auto& last = hist.back();
  q *= last.s.dot(last.y) / last.y.squaredNorm();
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const Real beta = hist[i].rho * hist[i].y.dot(q);
    q += (alpha[i] - beta) * hist[i].s;
  }
  return q;
}

void check_config(const TrainConfig& cfg) {
  if (cfg.learning_rate <= 0 || cfg.max_epochs <= 0 ||
      cfg.inner_iters_per_epoch <= 0 || cfg.rel_loss_tol <= 0 ||
      cfg.history_size <= 0 || cfg.grad_tol < 0)
    fail(ErrorKind::Contract, "training config fields must be positive");
}

/// One point probed by the line search. An objective that throws marks the
/// probe non-finite instead of propagating.
struct Probe {
  VecX theta, grad;
  Real loss = 0.0;
  bool finite = false;
};

Probe probe_step(const Objective& objective, const VecX& theta,
                 const VecX& dir, Real t, bool* saw_finite) {
  Probe p;
  p.theta = theta + t * dir;
  p.grad.resize(theta.size());
  try {
    p.loss = objective(p.theta, p.grad);
    p.finite = true;
    *saw_finite = true;
  } catch (const Error&) {
  }
  return p;
}

constexpr Real kArmijo = 1e-4;
constexpr Real kCurvature = 0.9;

/// Strong-Wolfe search along a descent direction (bracket then bisecting
/// zoom). Probes that throw count as overshoots and shrink the bracket. When
/// no point meets the curvature condition the best sufficient-decrease point
/// is accepted; returns false only if not even that exists.
bool wolfe_search(const Objective& objective, const VecX& theta, Real loss0,
                  const VecX& grad0, const VecX& dir, Probe* out,
                  bool* saw_finite) {
  const Real dphi0 = grad0.dot(dir);

  auto armijo = [&](Real t, Real loss) {
    return loss <= loss0 + kArmijo * t * dphi0;
  };
  auto accept = [&](Probe& p) {
    *out = std::move(p);
    return true;
  };

  // Invariant: lo satisfies the sufficient-decrease condition (or is the
  // start point) and has the lowest probed loss; the minimizer lies between
  // lo and hi.
  Real t_lo = 0.0, t_hi = -1.0;
  Probe best;  // state at t_lo when t_lo > 0

  Real t_prev = 0.0, loss_prev = loss0;
  Real t = 1.0;
  Probe prev;
  bool bracketed = false;
  for (int i = 0; i < 12 && !bracketed; ++i, t *= 2.0) {
    Probe p = probe_step(objective, theta, dir, t, saw_finite);
    if (!p.finite || !armijo(t, p.loss) || (i > 0 && p.loss >= loss_prev)) {
      t_lo = t_prev;
      t_hi = t;
      if (t_prev > 0.0) best = std::move(prev);
      bracketed = true;
      break;
    }
    const Real dphi = p.grad.dot(dir);
    if (std::abs(dphi) <= -kCurvature * dphi0) return accept(p);
    if (dphi >= 0.0) {
      t_lo = t;
      t_hi = t_prev;
      best = std::move(p);
      bracketed = true;
      break;
    }
    t_prev = t;
    loss_prev = p.loss;
    prev = std::move(p);
  }
  if (!bracketed) {
    // Every expansion kept descending; settle for the furthest point.
    if (t_prev > 0.0) return accept(prev);
    return false;
  }

  for (int j = 0; j < 25; ++j) {
    const Real tm = 0.5 * (t_lo + t_hi);
    Probe p = probe_step(objective, theta, dir, tm, saw_finite);
    const Real ref = t_lo > 0.0 ? best.loss : loss0;
    if (!p.finite || !armijo(tm, p.loss) || p.loss >= ref) {
      t_hi = tm;
      continue;
    }
    const Real dphi = p.grad.dot(dir);
    if (std::abs(dphi) <= -kCurvature * dphi0) return accept(p);
    if (dphi * (t_hi - t_lo) >= 0.0) t_hi = t_lo;
    t_lo = tm;
    best = std::move(p);
  }
  if (t_lo > 0.0 && best.loss < loss0) return accept(best);
  return false;
}

}  // namespace

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::Converged: return "converged";
    case StopReason::NonFinite: return "non_finite";
  }
  return "unknown";
}

std::pair<VecX, TrainReport> lbfgs_minimize(const Objective& objective,
                                            VecX theta0,
                                            const TrainConfig& cfg) {
  check_config(cfg);
  const auto t_start = std::chrono::steady_clock::now();

  TrainReport report;
  VecX theta = std::move(theta0);
  VecX grad(theta.size());

  auto finish = [&](StopReason reason) {
    report.stop_reason = reason;
    report.diverged = reason == StopReason::NonFinite;
    report.wall_time =
        std::chrono::duration<Real>(std::chrono::steady_clock::now() - t_start)
            .count();
    return std::pair<VecX, TrainReport>{std::move(theta), std::move(report)};
  };

  Real loss;
  try {
    loss = objective(theta, grad);
  } catch (const Error&) {
    report.loss_history.push_back(std::numeric_limits<Real>::quiet_NaN());
    return finish(StopReason::NonFinite);
  }
  report.loss_history.push_back(loss);
  if (cfg.grad_tol > 0 && grad.norm() <= cfg.grad_tol)
    return finish(StopReason::Converged);

  std::deque<CurvaturePair> history;
  Real epoch_prev = loss;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (int iter = 0; iter < cfg.inner_iters_per_epoch; ++iter) {
      if (cfg.step_policy == StepPolicy::Fixed) {
        const VecX dir =
            history.empty() ? VecX(-grad) : lbfgs_direction(grad, history);

        // No line search: steps that increase the loss are accepted and left
        // for later curvature pairs to correct. Only the very first update is
        // damped, by the gradient's l1 norm, so a fresh network does not
        // overshoot before any curvature is known.
        Real t = cfg.learning_rate;
        if (report.updates == 0)
          t *= std::min(Real(1), Real(1) / grad.lpNorm<1>());

        VecX theta_next = theta + t * dir;
        VecX grad_next(theta.size());
        Real loss_next;
        try {
          loss_next = objective(theta_next, grad_next);
        } catch (const Error&) {
          return finish(StopReason::NonFinite);
        }
        if (!std::isfinite(loss_next) || !grad_next.allFinite())
          return finish(StopReason::NonFinite);

        VecX s = theta_next - theta;
        VecX y = grad_next - grad;
        const Real sy = s.dot(y);
        // Nonpositive or negligible curvature skips the pair but keeps the
        // existing history running.
        if (sy > 1e-10) {
          history.push_back({std::move(s), std::move(y), 1.0 / sy});
          while (static_cast<int>(history.size()) > cfg.history_size)
            history.pop_front();
        }

        theta = std::move(theta_next);
        grad = std::move(grad_next);
        loss = loss_next;
        report.loss_history.push_back(loss);
        ++report.updates;
        if (cfg.grad_tol > 0 && grad.norm() <= cfg.grad_tol) {
          ++report.epochs;
          return finish(StopReason::Converged);
        }
        continue;
      }

      bool gradient_step = history.empty();
      VecX dir = gradient_step ? VecX(-grad) : lbfgs_direction(grad, history);
      if (!gradient_step && dir.dot(grad) >= 0.0) {
        // The curvature estimate stopped being a descent model; drop it.
        history.clear();
        gradient_step = true;
        dir = -grad;
      }

      Probe next;
      bool accepted = false;
      bool saw_finite = false;
      if (!gradient_step) {
        accepted = wolfe_search(objective, theta, loss, grad, dir, &next,
                                &saw_finite);
        if (!accepted) {
          history.clear();  // retry the update as plain gradient descent
          gradient_step = true;
          dir = -grad;
        }
      }
      if (!accepted) {
        Real step = cfg.learning_rate;
        for (int halving = 0; halving <= 10; ++halving, step *= 0.5) {
          Probe p = probe_step(objective, theta, dir, step, &saw_finite);
          if (!p.finite) continue;  // non-finite trial: shorten the step
          if (p.loss <= loss) {
            next = std::move(p);
            accepted = true;
            break;
          }
        }
      }

      if (!accepted) {
        if (!saw_finite) return finish(StopReason::NonFinite);
        // No decrease found along the gradient either: stalled at a
        // stationary point. Record the unchanged loss and let the epoch
        // tolerance terminate the run.
        report.loss_history.push_back(loss);
        ++report.updates;
        continue;
      }

      VecX s = next.theta - theta;
      VecX y = next.grad - grad;
      const Real sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm())
        history.push_back({std::move(s), std::move(y), 1.0 / sy});
      while (static_cast<int>(history.size()) > cfg.history_size)
        history.pop_front();

      theta = std::move(next.theta);
      grad = std::move(next.grad);
      loss = next.loss;
      report.loss_history.push_back(loss);
      ++report.updates;
      if (cfg.grad_tol > 0 && grad.norm() <= cfg.grad_tol) {
        ++report.epochs;
        return finish(StopReason::Converged);
      }
    }

    ++report.epochs;
    const Real diff = std::abs(loss - epoch_prev);
    const Real rel = epoch_prev != 0.0
                         ? diff / std::abs(epoch_prev)
                         : (diff == 0.0 ? 0.0
                                        : std::numeric_limits<Real>::infinity());
    if (cfg.verbose)
      std::fprintf(stderr, "[train] epoch %d/%d loss=%.8g rel=%.3g\n",
                   epoch + 1, cfg.max_epochs, loss, rel);
    if (rel < cfg.rel_loss_tol) return finish(StopReason::Converged);
    epoch_prev = loss;
  }
  return finish(StopReason::MaxEpochs);
}

std::pair<VecX, TrainReport> lbfgs_minimize(const ad::Program& prog,
                                            VecX theta0,
                                            const TrainConfig& cfg) {
  ad::Workspace ws;
  Objective objective = [&prog, &ws](const VecX& theta, VecX& grad) {
    return prog.value_and_gradient(theta, grad, ws);
  };
  return lbfgs_minimize(objective, std::move(theta0), cfg);
}

std::pair<bool, Real> detect_localization(const MatX& u,
                                          const grid::HexMesh& mesh,
                                          Real threshold) {
  if (threshold <= 0)
    fail(ErrorKind::InvalidThreshold, "localization threshold must be positive");
  if (u.rows() != mesh.grid.num_nodes() || u.cols() != 3)
    fail(ErrorKind::Contract, "displacement field does not match the mesh");
  if (!u.allFinite())
    fail(ErrorKind::Contract, "displacement field must be finite");

  assembly::SfOperators ops =
      assembly::build_sf_operators(mesh, assembly::VolumeRule::Gauss2x2x2);
  MatX h = assembly::sf_gradient_audit(ops, u);
  Real metric = 0.0;
  for (int r = 0; r < h.rows(); ++r)
    metric = std::max(metric, h.row(r).norm());
  return {metric > threshold, metric};
}

}  // namespace dem::training
