#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dem/reference.hpp"

using namespace dem;
using namespace dem::reference;

namespace {

const materials::MaterialModel kLe = materials::LinearElastic{1000.0, 0.3};
const materials::MaterialModel kNh = materials::NeoHookean{192.31, 0.0024};

MatX random_field(int n, Real amp, std::uint64_t seed) {
  Rng rng(seed);
  MatX u(n, 3);
  for (int i = 0; i < u.size(); ++i) u.data()[i] = rng.uniform(-amp, amp);
  return u;
}

VecX flatten(const MatX& u) {
  VecX v(3 * u.rows());
  for (int i = 0; i < u.rows(); ++i)
    for (int c = 0; c < 3; ++c) v[3 * i + c] = u(i, c);
  return v;
}

}  // namespace

TEST_CASE("zero traction gives the zero solution") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({4, 3, 3}, {4, 1, 1}));
  for (const auto& mat : {kLe, kNh}) {
    OracleSolution sol =
        direct_minimize(mesh, mat, {"x1", Vec3::Zero()});
    CHECK(sol.u_ref.isZero());
    CHECK(sol.energy == 0.0);
  }
}

TEST_CASE("clamp dof map") {
  grid::NodeGrid g = grid::build_grid({9, 4, 4}, {4, 1, 1});
  int n_free = 0;
  std::vector<int> map = clamp_dof_map(g, &n_free);
  CHECK(n_free == 3 * (144 - 16));
  for (int i = 0; i < g.num_nodes(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK((map[3 * i + c] >= 0) == (g.coords(i, 0) != 0.0));
}

TEST_CASE("quadratic energy identity: half u'Ku equals the assembled energy") {
  for (auto dims : {Vec3i{3, 3, 3}, Vec3i{4, 3, 2}}) {
    Vec3 lengths = dims[0] == 3 ? Vec3{1, 1, 1} : Vec3{2, 1, 0.5};
    grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid(dims, lengths));
    int n_free = 0;
    std::vector<int> dof_map = clamp_dof_map(mesh.grid, &n_free);
    SpMat K = assemble_stiffness(mesh, std::get<materials::LinearElastic>(kLe),
                                 dof_map, n_free,
                                 assembly::VolumeRule::Gauss2x2x2);

    MatX u = random_field(mesh.grid.num_nodes(), 0.05, 7);
    for (int i = 0; i < mesh.grid.num_nodes(); ++i)
      if (mesh.grid.coords(i, 0) == 0.0) u.row(i).setZero();

    VecX v(n_free);
    for (int i = 0; i < mesh.grid.num_nodes(); ++i)
      for (int c = 0; c < 3; ++c)
        if (int d = dof_map[3 * i + c]; d >= 0) v[d] = u(i, c);

    const Real quadratic = 0.5 * v.dot(K * v);
    const Real assembled = assembly::internal_energy_sf(
        u, mesh, kLe, assembly::VolumeRule::Gauss2x2x2);
    CHECK(quadratic == doctest::Approx(assembled).epsilon(1e-12));
  }
}

TEST_CASE("load vector reproduces the external work") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({5, 4, 3}, {4, 1, 1}));
  assembly::TractionSpec traction{"x1", Vec3(0.3, -2.5, 1.1)};
  VecX f = assemble_load(mesh, traction);
  MatX u = random_field(mesh.grid.num_nodes(), 0.5, 11);
  CHECK(f.dot(flatten(u)) ==
        doctest::Approx(assembly::external_work_sf(u, mesh, traction))
            .epsilon(1e-12));
}

TEST_CASE("coarse cantilever matches beam theory loosely") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({9, 4, 4}, {4, 1, 1}));
  OracleSolution sol = direct_minimize(mesh, kLe, {"x1", Vec3(0, -2.5, 0)});
  CHECK(sol.residual_norm < 1e-8);

  Real tip = 0.0;
  int count = 0;
  for (int i = 0; i < mesh.grid.num_nodes(); ++i)
    if (mesh.grid.coords(i, 0) == 4.0) {
      tip += sol.u_ref(i, 1);
      ++count;
    }
  tip /= count;
  // Euler-Bernoulli plus shear estimate for P = 2.5, L = 4, EI = 1000/12.
  CHECK(std::abs(-tip - 0.67) / 0.67 < 0.15);
  CHECK(sol.energy < 0.0);
}

TEST_CASE("reference energy for the pulled beam near -0.81") {
  grid::HexMesh mesh =
      grid::build_hex_mesh(grid::build_grid({37, 10, 10}, {4, 1, 1}));
  OracleSolution sol = direct_minimize(mesh, kLe, {"x1", Vec3(0, -2.5, 0)});
  CHECK(sol.residual_norm < 1e-8);
  CHECK(std::abs(sol.energy - (-0.81)) / 0.81 < 0.03);
}

TEST_CASE("neo-hookean oracle on a coarse beam") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({5, 3, 3}, {4, 1, 1}));

  OracleSolution sol = direct_minimize(mesh, kNh, {"x1", Vec3(0, -2.0, 0)});
  CHECK(sol.u_ref.allFinite());
  CHECK(sol.energy < 0.0);
  CHECK(sol.residual_norm <= 1e-8);

  // Tip bends toward the load.
  Real tip = 0.0;
  for (int i = 0; i < mesh.grid.num_nodes(); ++i)
    if (mesh.grid.coords(i, 0) == 4.0) tip += sol.u_ref(i, 1);
  CHECK(tip < 0.0);

  // Converged energies deepen monotonically with the load magnitude.
  Real prev = 0.0;
  for (Real t : {1.0, 2.0, 3.0}) {
    OracleSolution s = direct_minimize(mesh, kNh, {"x1", Vec3(0, -t, 0)});
    CHECK(s.energy < prev);
    prev = s.energy;
  }
}

TEST_CASE("neo-hookean linearizes to the elastic solution at small load") {
  // C10 = mu/2 and 2/D1 = bulk modulus for E = 1000, nu = 0.3, so at a tiny
  // load both materials should produce nearly the same field.
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({5, 3, 3}, {4, 1, 1}));
  assembly::TractionSpec traction{"x1", Vec3(0, -0.1, 0)};
  OracleSolution le = direct_minimize(mesh, kLe, traction);
  OracleSolution nh = direct_minimize(mesh, kNh, traction);
  RdReport rd = relative_difference(nh.u_ref, le.u_ref);
  CHECK(rd.mean < 5.0);
}

TEST_CASE("relative difference metric") {
  SUBCASE("identical fields give zeros") {
    MatX u = random_field(10, 1.0, 3);
    RdReport rd = relative_difference(u, u);
    CHECK(rd.rd.isZero());
    CHECK(rd.mean == 0.0);
    CHECK_FALSE(rd.absolute_mode[0]);
  }

  SUBCASE("single-node formula") {
    MatX nn = MatX::Zero(1, 3), ref = MatX::Zero(1, 3);
    nn(0, 1) = -0.9;
    ref(0, 1) = -1.0;
    RdReport rd = relative_difference(nn, ref);
    CHECK(rd.rd(0, 1) == doctest::Approx(10.0));
    CHECK_FALSE(rd.absolute_mode[1]);
    // x and z have zero reference: flagged absolute differences.
    CHECK(rd.absolute_mode[0]);
    CHECK(rd.absolute_mode[2]);
    CHECK(rd.rd(0, 0) == 0.0);
  }

  SUBCASE("zero reference component flags absolute mode") {
    MatX nn = MatX::Zero(4, 3), ref = MatX::Zero(4, 3);
    ref.col(1).setConstant(2.0);
    nn.col(2).setConstant(0.25);
    RdReport rd = relative_difference(nn, ref);
    CHECK(rd.absolute_mode[2]);
    CHECK_FALSE(rd.absolute_mode[1]);
    CHECK(rd.rd(0, 2) == doctest::Approx(0.25));
    CHECK(rd.component_mean[2] == doctest::Approx(0.25));
  }

  SUBCASE("mismatched shapes are rejected") {
    CHECK_THROWS_AS(relative_difference(MatX::Zero(3, 3), MatX::Zero(4, 3)),
                    Error);
  }
}

TEST_CASE("finite-difference audit of taped gradients") {
  SUBCASE("quadratic program") {
    ad::Program prog;
    MatX c(1, 4);
    c << 1, -2, 3, 0.5;
    auto p = prog.param(1, 4, "p");
    prog.set_output(prog.frob_sq(prog.sub(p, prog.constant(c))));
    VecX theta(4);
    theta << 0.3, 0.1, -0.2, 0.9;
    CHECK(fd_gradient_audit(prog, theta, 5) < 1e-9);
  }

  grid::HexMesh cube = grid::build_hex_mesh(grid::build_grid({3, 3, 3}, {1, 1, 1}));
  assembly::LossConfig cfg;
  cfg.network.layer_widths = {3, 4, 3};
  cfg.network.seed = 9;
  cfg.tractions = {{"x1", Vec3(0, -2.5, 0)}};

  SUBCASE("shape-function loss") {
    cfg.mode = assembly::GradientMode::Sf;
    assembly::TapedLoss tl = assembly::build_loss(cube, nullptr, cfg);
    CHECK(fd_gradient_audit(tl.program, models::init_params(cfg.network), 10) <
          1e-5);
  }

  SUBCASE("network-differentiation loss, nonlinear material") {
    cfg.mode = assembly::GradientMode::Ad;
    cfg.material = kNh;
    assembly::TapedLoss tl = assembly::build_loss(cube, nullptr, cfg);
    CHECK(fd_gradient_audit(tl.program,
                            0.5 * models::init_params(cfg.network), 10) < 1e-4);
  }

  SUBCASE("probe count validated") {
    ad::Program prog;
    prog.set_output(prog.frob_sq(prog.param(1, 1, "p")));
    CHECK_THROWS_AS(fd_gradient_audit(prog, VecX::Zero(1), 0), Error);
  }
}

TEST_CASE("material parameters are validated before solving") {
  grid::HexMesh mesh = grid::build_hex_mesh(grid::build_grid({3, 3, 3}, {1, 1, 1}));
  CHECK_THROWS_AS(direct_minimize(mesh, materials::NeoHookean{192.31, -1.0},
                                  {"x1", Vec3(0, -1, 0)}),
                  Error);
  CHECK_THROWS_AS(direct_minimize(mesh, materials::LinearElastic{1000.0, 0.5},
                                  {"x1", Vec3(0, -1, 0)}),
                  Error);
}
