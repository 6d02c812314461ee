#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dem/ad.hpp"
#include "dem/grid.hpp"

namespace dem::training {

/// Step acceptance policies for lbfgs_minimize.
///  - Fixed: every update moves learning_rate along the quasi-Newton
///    direction and is accepted even when the loss rises (the policy
///    deep-learning optimizers apply when no line search is configured).
///    Runs wander near flat minima instead of settling, which is what lets
///    an unstable objective eventually escape through a descent channel.
///  - Wolfe: steps are line-searched under the strong Wolfe conditions;
///    accepted updates never increase the loss, so runs converge and stop.
enum class StepPolicy { Fixed, Wolfe };

struct TrainConfig {
  Real learning_rate = 0.01;
  int max_epochs = 20;
  int inner_iters_per_epoch = 20;
  Real rel_loss_tol = 5e-5;
  int history_size = 10;
  StepPolicy step_policy = StepPolicy::Fixed;
  Real grad_tol = 0.0;  // extra stop on the gradient norm; 0 disables
  bool verbose = true;
};

enum class StopReason { MaxEpochs, Converged, NonFinite };

const char* to_string(StopReason reason);

struct TrainReport {
  std::vector<Real> loss_history;  // initial loss, then one entry per update
  Real wall_time = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;
  bool diverged = false;
  int epochs = 0;
  int updates = 0;
};

/// Writes the gradient at theta into grad and returns the loss. May throw
/// Error for points outside the objective's domain.
using Objective = std::function<Real(const VecX& theta, VecX& grad)>;

/// Limited-memory BFGS under the configured step policy.
///
/// Fixed policy: learning_rate times the two-loop direction per update, the
/// first update damped by the gradient's l1 norm, curvature pairs kept only
/// when s.y > 1e-10. An update whose loss or gradient leaves the finite
/// domain stops the run at the last accepted parameters and reports
/// divergence.
///
/// Wolfe policy: quasi-Newton steps are searched under the strong Wolfe
/// conditions starting at unit step; gradient-descent steps, used before any
/// curvature history exists and after a history reset, are scaled by the
/// learning rate and backtrack on failure. A loss that is non-finite in
/// every probed direction stops the run with the last finite parameters.
std::pair<VecX, TrainReport> lbfgs_minimize(const Objective& objective,
                                            VecX theta0,
                                            const TrainConfig& cfg = {});

std::pair<VecX, TrainReport> lbfgs_minimize(const ad::Program& prog,
                                            VecX theta0,
                                            const TrainConfig& cfg = {});

/// Largest Frobenius norm of the displacement gradient over all Gauss points,
/// computed with shape-function gradients regardless of how the field was
/// trained. Flags localized deformation when the metric exceeds the
/// threshold.
std::pair<bool, Real> detect_localization(const MatX& u,
                                          const grid::HexMesh& mesh,
                                          Real threshold = 5.0);

}  // namespace dem::training
