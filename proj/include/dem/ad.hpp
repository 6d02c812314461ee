#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dem/common.hpp"

namespace dem::ad {

using NodeId = int;

/// Closed operation vocabulary. Every loss in the library is a composition of
/// these, which is what keeps the reverse pass small and auditable.
enum class Op {
  Const,        // fixed matrix
  Param,        // view of a flat parameter segment, reshaped column-major
  MatMul,       // dense product A * B
  SpMatMul,     // fixed sparse operator times a dense node
  Add,          // A + B, same shape
  Sub,          // A - B, same shape
  AddRow,       // A + row broadcast of a 1 x cols node
  Hadamard,     // elementwise product
  Scale,        // fixed scalar times A
  Shift,        // A plus a fixed scalar, elementwise
  Tanh,         // elementwise tanh
  Pow,          // elementwise A^p, fixed real p, requires A > 0
  Col,          // single-column slice
  HStack,       // horizontal concatenation
  PermuteCols,  // fixed column permutation
  Sum,          // sum of all entries -> 1x1
  WeightedSum,  // <W, A> Frobenius inner product with fixed W -> 1x1
  Det3,         // per-row determinant of N x 9 row-major 3x3 blocks -> N x 1
  Trace3,       // per-row trace of N x 9 row-major 3x3 blocks -> N x 1
  FrobSq,       // per-row squared Euclidean norm -> N x 1
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::vector<NodeId> inputs;
  int rows = 0, cols = 0;
  Real scalar = 0.0;      // Scale factor, Shift offset, Pow exponent
  int index = 0;          // Col column
  int param_offset = -1;  // Param segment start in the flat vector
  std::vector<int> perm;  // PermuteCols: output col k reads input col perm[k]
  MatX dense;             // Const value or WeightedSum weights
  SpMat sparse;           // SpMatMul operator
  std::string tag;
  bool needs_grad = false;
};

/// Scratch buffers for one Program. A Workspace binds to the first Program it
/// evaluates and may be reused across evaluations of that Program; distinct
/// concurrent evaluations need distinct Workspaces.
struct Workspace {
  const void* bound_to = nullptr;
  std::vector<MatX> values;
  std::vector<MatX> adjoints;
};

/// A static computation graph for one scalar loss. Nodes are appended in
/// topological order by construction; evaluation replays them forward, the
/// gradient replays them backward. Evaluation is deterministic: reductions
/// use fixed-order pairwise summation.
class Program {
 public:
  NodeId constant(MatX value, std::string tag = {});
  /// Appends a parameter block of the given shape at the end of the flat
  /// vector; blocks are laid out in creation order, column-major within.
  NodeId param(int rows, int cols, std::string tag = {});
  NodeId matmul(NodeId a, NodeId b);
  NodeId spmatmul(SpMat op, NodeId b, std::string tag = {});
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId row);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId a, Real factor);
  NodeId shift(NodeId a, Real offset);
  NodeId tanh(NodeId a);
  NodeId pow(NodeId a, Real exponent, std::string tag = {});
  NodeId col(NodeId a, int column);
  NodeId hstack(const std::vector<NodeId>& parts);
  NodeId permute_cols(NodeId a, std::vector<int> perm);
  NodeId sum(NodeId a);
  NodeId weighted_sum(NodeId a, MatX weights, std::string tag = {});
  NodeId det3(NodeId a, std::string tag = {});
  NodeId trace3(NodeId a);
  NodeId frob_sq(NodeId a);

  /// Declares the 1x1 node whose entry is the loss.
  void set_output(NodeId id);

  int num_params() const { return n_params_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int rows(NodeId id) const { return at(id).rows; }
  int cols(NodeId id) const { return at(id).cols; }
  NodeId output() const { return output_; }

  Real value(const VecX& theta, Workspace& ws) const;
  Real value(const VecX& theta) const;
  /// Loss and d(loss)/d(theta) in one reverse sweep.
  Real value_and_gradient(const VecX& theta, VecX& grad, Workspace& ws) const;

  /// Forward evaluation only; leaves per-node values in ws for inspection.
  void forward(const VecX& theta, Workspace& ws) const;
  const MatX& node_value(NodeId id, const Workspace& ws) const;

 private:
  const Node& at(NodeId id) const;
  NodeId push(Node n);
  void bind(Workspace& ws) const;
  void check_shape(NodeId id, int rows, int cols, const char* where) const;

  std::vector<Node> nodes_;
  NodeId output_ = -1;
  int n_params_ = 0;
};

/// Convenience wrapper matching the engine contract's signature.
std::pair<Real, VecX> value_and_parameter_gradient(const Program& prog,
                                                   const VecX& theta);

/// Central finite differences of prog over theta; the oracle the gradient
/// tests compare against.
VecX finite_difference_gradient(const Program& prog, const VecX& theta,
                                Real step = 1e-5);

}  // namespace dem::ad
