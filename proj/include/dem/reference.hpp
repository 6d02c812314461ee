#pragma once

#include <array>

#include "dem/assembly.hpp"

namespace dem::reference {

/// Ground truth for a beam problem: the same discrete shape-function energy
/// minimized directly over nodal displacements, with the x = 0 plane clamped.
struct OracleSolution {
  MatX u_ref;               // nodal displacements, zero rows on the clamp
  Real energy = 0.0;        // internal minus external at u_ref
  int iterations = 0;
  Real residual_norm = 0.0;  // equilibrium residual relative to the load
};

/// Linear elasticity solves K u = f by preconditioned conjugate gradients;
/// neo-hookean problems run incremental L-BFGS over twenty load steps with a
/// hand-assembled gradient (first Piola-Kirchhoff stress contracted with the
/// shape-function gradients).
OracleSolution direct_minimize(const grid::HexMesh& mesh,
                               const materials::MaterialModel& material,
                               const assembly::TractionSpec& traction,
                               assembly::VolumeRule rule =
                                   assembly::VolumeRule::Gauss2x2x2);

/// Global stiffness for the clamped-beam linear problem, free DOFs only.
/// dof_map maps 3*node+component to its row in the reduced system (-1 when
/// clamped).
SpMat assemble_stiffness(const grid::HexMesh& mesh,
                         const materials::LinearElastic& material,
                         const std::vector<int>& dof_map, int n_free,
                         assembly::VolumeRule rule);

/// Consistent nodal loads for a surface traction, full 3n layout.
VecX assemble_load(const grid::HexMesh& mesh,
                   const assembly::TractionSpec& traction);

/// 3*node+component -> free-DOF index, -1 on the clamped plane.
std::vector<int> clamp_dof_map(const grid::NodeGrid& grid, int* n_free);

/// Per-node percent differences against a reference field, normalized by the
/// largest reference magnitude of each component. Components whose reference
/// is identically zero fall back to absolute differences and are flagged.
struct RdReport {
  MatX rd;  // n x 3
  std::array<bool, 3> absolute_mode{false, false, false};
  Vec3 component_mean = Vec3::Zero();
  Real mean = 0.0;  // grand mean over nodes and components
};

RdReport relative_difference(const MatX& u_nn, const MatX& u_ref);

/// Worst relative mismatch between the taped gradient and central differences
/// along random unit directions.
Real fd_gradient_audit(const ad::Program& prog, const VecX& theta,
                       int n_probes, std::uint64_t seed = 0);

}  // namespace dem::reference
