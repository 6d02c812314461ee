#include "dem/vtk.hpp"

#include <cstdio>
#include <fstream>

#include "dem/assembly.hpp"

namespace dem::vtk {

namespace {

std::string fmt(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_fields(const std::string& path, const grid::HexMesh& mesh,
                  const MatX& u) {
  const grid::NodeGrid& g = mesh.grid;
  const int n = g.num_nodes();
  const int m = mesh.num_elements();
  if (u.rows() != n || u.cols() != 3)
    fail(ErrorKind::Contract, "vtk: field shape does not match the mesh");

  assembly::SfOperators ops =
      assembly::build_sf_operators(mesh, assembly::VolumeRule::Gauss1);
  MatX h = assembly::sf_gradient_audit(ops, u);  // one row per element

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Config, "vtk: cannot write " + path);

  out << "# vtk DataFile Version 3.0\n"
      << "displacement and strain fields\n"
      << "ASCII\n"
      << "DATASET UNSTRUCTURED_GRID\n";

  out << "POINTS " << n << " double\n";
  for (int i = 0; i < n; ++i)
    out << fmt(g.coords(i, 0)) << ' ' << fmt(g.coords(i, 1)) << ' '
        << fmt(g.coords(i, 2)) << '\n';

  out << "CELLS " << m << ' ' << 9 * m << '\n';
  for (int e = 0; e < m; ++e) {
    out << 8;
    for (int c = 0; c < 8; ++c) out << ' ' << mesh.elements(e, c);
    out << '\n';
  }

  out << "CELL_TYPES " << m << '\n';
  for (int e = 0; e < m; ++e) out << "12\n";

  out << "POINT_DATA " << n << '\n' << "VECTORS u double\n";
  for (int i = 0; i < n; ++i)
    out << fmt(u(i, 0)) << ' ' << fmt(u(i, 1)) << ' ' << fmt(u(i, 2)) << '\n';

  out << "CELL_DATA " << m << '\n' << "TENSORS grad_u double\n";
  for (int e = 0; e < m; ++e)
    for (int r = 0; r < 3; ++r)
      out << fmt(h(e, 3 * r + 0)) << ' ' << fmt(h(e, 3 * r + 1)) << ' '
          << fmt(h(e, 3 * r + 2)) << '\n';

  out << "SCALARS eps_11 double 1\n" << "LOOKUP_TABLE default\n";
  for (int e = 0; e < m; ++e) out << fmt(h(e, 0)) << '\n';

  if (!out) fail(ErrorKind::Config, "vtk: write failed for " + path);
}

}  // namespace dem::vtk
