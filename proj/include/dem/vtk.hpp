#pragma once

#include <string>

#include "dem/grid.hpp"

namespace dem::vtk {

/// Legacy ASCII unstructured-grid file: hex cells (type 12), point vectors
/// "u", cell tensors "grad_u" from one-point shape-function gradients, and
/// the axial strain "eps_11" as a cell scalar. Values print with %.17g so a
/// rewrite of the same field is byte-identical.
void write_fields(const std::string& path, const grid::HexMesh& mesh,
                  const MatX& u);

}  // namespace dem::vtk
