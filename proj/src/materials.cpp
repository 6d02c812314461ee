#include "dem/materials.hpp"

namespace dem::materials {

void validate(const MaterialModel& mat) {
  if (const auto* le = std::get_if<LinearElastic>(&mat)) {
    if (!(le->E > 0.0))
      fail(ErrorKind::Contract, "Young's modulus must be positive");
    if (le->nu >= 0.5)
      fail(ErrorKind::IncompressibleLimit,
           "Poisson ratio 0.5 is the incompressible limit");
    if (le->nu <= -1.0)
      fail(ErrorKind::Contract, "Poisson ratio must exceed -1");
  } else {
    const auto& nh = std::get<NeoHookean>(mat);
    if (!(nh.C10 > 0.0)) fail(ErrorKind::Contract, "C10 must be positive");
    if (!(nh.D1 > 0.0)) fail(ErrorKind::Contract, "D1 must be positive");
  }
}

ad::NodeId taped_energy_linear(ad::Program& prog, ad::NodeId gradu9, Real E,
                               Real nu) {
  if (nu >= 0.5)
    fail(ErrorKind::IncompressibleLimit,
         "linear constitutive law undefined at nu >= 0.5");
  const Real mu = E / (2.0 * (1.0 + nu));
  const Real lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  // Psi = mu eps:eps + lambda/2 tr(eps)^2, the contracted form of
  // sigma:eps / 2.
  ad::NodeId eps = prog.scale(
      prog.add(gradu9, prog.permute_cols(gradu9, transpose3_perm())), 0.5);
  ad::NodeId tr = prog.trace3(eps);
  return prog.add(prog.scale(prog.frob_sq(eps), mu),
                  prog.scale(prog.hadamard(tr, tr), 0.5 * lambda));
}

ad::NodeId taped_energy_neohookean(ad::Program& prog, ad::NodeId gradu9,
                                   Real C10, Real D1) {
  const int n = prog.rows(gradu9);
  MatX identity_rows = MatX::Zero(n, 9);
  identity_rows.col(0).setOnes();
  identity_rows.col(4).setOnes();
  identity_rows.col(8).setOnes();
  ad::NodeId F = prog.add(gradu9, prog.constant(std::move(identity_rows)));
  ad::NodeId J = prog.det3(F, "det(F)");
  ad::NodeId I1_bar =
      prog.hadamard(prog.pow(J, -2.0 / 3.0, "det(F)^(-2/3)"), prog.frob_sq(F));
  ad::NodeId Jm1 = prog.shift(J, -1.0);
  return prog.add(prog.scale(prog.shift(I1_bar, -3.0), C10),
                  prog.scale(prog.hadamard(Jm1, Jm1), 1.0 / D1));
}

ad::NodeId taped_energy(ad::Program& prog, ad::NodeId gradu9,
                        const MaterialModel& mat) {
  validate(mat);
  if (const auto* le = std::get_if<LinearElastic>(&mat))
    return taped_energy_linear(prog, gradu9, le->E, le->nu);
  const auto& nh = std::get<NeoHookean>(mat);
  return taped_energy_neohookean(prog, gradu9, nh.C10, nh.D1);
}

}  // namespace dem::materials
