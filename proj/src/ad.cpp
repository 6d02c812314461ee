#include "dem/ad.hpp"

#include <algorithm>
#include <cmath>

namespace dem::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::SpMatMul: return "spmatmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::AddRow: return "add_row";
    case Op::Hadamard: return "hadamard";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Tanh: return "tanh";
    case Op::Pow: return "pow";
    case Op::Col: return "col";
    case Op::HStack: return "hstack";
    case Op::PermuteCols: return "permute_cols";
    case Op::Sum: return "sum";
    case Op::WeightedSum: return "weighted_sum";
    case Op::Det3: return "det3";
    case Op::Trace3: return "trace3";
    case Op::FrobSq: return "frob_sq";
  }
  return "?";
}

const Node& Program::at(NodeId id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    fail(ErrorKind::Contract, "node id out of range");
  return nodes_[id];
}

NodeId Program::push(Node n) {
  if (n.tag.empty()) n.tag = op_name(n.op);
  for (NodeId in : n.inputs) n.needs_grad = n.needs_grad || at(in).needs_grad;
  if (n.op == Op::Param) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Program::check_shape(NodeId id, int r, int c, const char* where) const {
  const Node& n = at(id);
  if (n.rows != r || n.cols != c)
    fail(ErrorKind::Contract,
         std::string(where) + ": expected " + std::to_string(r) + "x" +
             std::to_string(c) + ", got " + std::to_string(n.rows) + "x" +
             std::to_string(n.cols));
}

NodeId Program::constant(MatX value, std::string tag) {
  Node n;
  n.op = Op::Const;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.dense = std::move(value);
  n.tag = std::move(tag);
  return push(std::move(n));
}

NodeId Program::param(int rows, int cols, std::string tag) {
  if (rows < 1 || cols < 1) fail(ErrorKind::Contract, "param shape invalid");
  Node n;
  n.op = Op::Param;
  n.rows = rows;
  n.cols = cols;
  n.param_offset = n_params_;
  n.tag = std::move(tag);
  n_params_ += rows * cols;
  return push(std::move(n));
}

NodeId Program::matmul(NodeId a, NodeId b) {
  if (at(a).cols != at(b).rows)
    fail(ErrorKind::Contract, "matmul inner dimensions disagree");
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a, b};
  n.rows = at(a).rows;
  n.cols = at(b).cols;
  return push(std::move(n));
}

NodeId Program::spmatmul(SpMat op, NodeId b, std::string tag) {
  if (static_cast<int>(op.cols()) != at(b).rows)
    fail(ErrorKind::Contract, "spmatmul inner dimensions disagree");
  Node n;
  n.op = Op::SpMatMul;
  n.inputs = {b};
  n.rows = static_cast<int>(op.rows());
  n.cols = at(b).cols;
  n.sparse = std::move(op);
  n.sparse.makeCompressed();
  n.tag = std::move(tag);
  return push(std::move(n));
}

NodeId Program::add(NodeId a, NodeId b) {
  check_shape(b, at(a).rows, at(a).cols, "add");
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

NodeId Program::sub(NodeId a, NodeId b) {
  check_shape(b, at(a).rows, at(a).cols, "sub");
  Node n;
  n.op = Op::Sub;
  n.inputs = {a, b};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

NodeId Program::add_row(NodeId a, NodeId row) {
  check_shape(row, 1, at(a).cols, "add_row");
  Node n;
  n.op = Op::AddRow;
  n.inputs = {a, row};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

NodeId Program::hadamard(NodeId a, NodeId b) {
  check_shape(b, at(a).rows, at(a).cols, "hadamard");
  Node n;
  n.op = Op::Hadamard;
  n.inputs = {a, b};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

NodeId Program::scale(NodeId a, Real factor) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Program::shift(NodeId a, Real offset) {
  Node n;
  n.op = Op::Shift;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  n.scalar = offset;
  return push(std::move(n));
}

NodeId Program::tanh(NodeId a) {
  Node n;
  n.op = Op::Tanh;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

NodeId Program::pow(NodeId a, Real exponent, std::string tag) {
  Node n;
  n.op = Op::Pow;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  n.scalar = exponent;
  n.tag = std::move(tag);
  return push(std::move(n));
}

NodeId Program::col(NodeId a, int column) {
  if (column < 0 || column >= at(a).cols)
    fail(ErrorKind::Contract, "col index out of range");
  Node n;
  n.op = Op::Col;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = 1;
  n.index = column;
  return push(std::move(n));
}

NodeId Program::hstack(const std::vector<NodeId>& parts) {
  if (parts.empty()) fail(ErrorKind::Contract, "hstack needs inputs");
  Node n;
  n.op = Op::HStack;
  n.inputs = parts;
  n.rows = at(parts[0]).rows;
  for (NodeId p : parts) {
    if (at(p).rows != n.rows)
      fail(ErrorKind::Contract, "hstack row counts disagree");
    n.cols += at(p).cols;
  }
  return push(std::move(n));
}

NodeId Program::permute_cols(NodeId a, std::vector<int> perm) {
  if (static_cast<int>(perm.size()) != at(a).cols)
    fail(ErrorKind::Contract, "permutation length mismatch");
  Node n;
  n.op = Op::PermuteCols;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  n.perm = std::move(perm);
  return push(std::move(n));
}

NodeId Program::sum(NodeId a) {
  Node n;
  n.op = Op::Sum;
  n.inputs = {a};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Program::weighted_sum(NodeId a, MatX weights, std::string tag) {
  check_shape(a, static_cast<int>(weights.rows()),
              static_cast<int>(weights.cols()), "weighted_sum");
  Node n;
  n.op = Op::WeightedSum;
  n.inputs = {a};
  n.rows = 1;
  n.cols = 1;
  n.dense = std::move(weights);
  n.tag = std::move(tag);
  return push(std::move(n));
}

NodeId Program::det3(NodeId a, std::string tag) {
  check_shape(a, at(a).rows, 9, "det3");
  Node n;
  n.op = Op::Det3;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = 1;
  n.tag = std::move(tag);
  return push(std::move(n));
}

NodeId Program::trace3(NodeId a) {
  check_shape(a, at(a).rows, 9, "trace3");
  Node n;
  n.op = Op::Trace3;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Program::frob_sq(NodeId a) {
  Node n;
  n.op = Op::FrobSq;
  n.inputs = {a};
  n.rows = at(a).rows;
  n.cols = 1;
  return push(std::move(n));
}

void Program::set_output(NodeId id) {
  if (at(id).rows != 1 || at(id).cols != 1)
    fail(ErrorKind::Contract, "output node must be 1x1");
  output_ = id;
}

void Program::bind(Workspace& ws) const {
  if (ws.bound_to == this) return;
  ws.bound_to = this;
  ws.values.assign(nodes_.size(), MatX());
  ws.adjoints.assign(nodes_.size(), MatX());
}

const MatX& Program::node_value(NodeId id, const Workspace& ws) const {
  at(id);
  return ws.values[id];
}

void Program::forward(const VecX& theta, Workspace& ws) const {
  if (output_ < 0) fail(ErrorKind::Contract, "program has no output");
  if (theta.size() != n_params_)
    fail(ErrorKind::Contract, "theta length " + std::to_string(theta.size()) +
                                  " does not match parameter count " +
                                  std::to_string(n_params_));
  bind(ws);

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    MatX& out = ws.values[i];
    auto in = [&](int k) -> const MatX& { return ws.values[n.inputs[k]]; };
    switch (n.op) {
      case Op::Const:
        if (out.rows() != n.rows || out.cols() != n.cols) out = n.dense;
        continue;  // fixed data, finiteness checked at construction time
      case Op::Param:
        out = Eigen::Map<const MatX>(theta.data() + n.param_offset, n.rows,
                                     n.cols);
        break;
      case Op::MatMul:
        out.noalias() = in(0) * in(1);
        break;
      case Op::SpMatMul:
        out.noalias() = n.sparse * in(0);
        break;
      case Op::Add:
        out = in(0) + in(1);
        break;
      case Op::Sub:
        out = in(0) - in(1);
        break;
      case Op::AddRow:
        out = in(0).rowwise() + in(1).row(0);
        break;
      case Op::Hadamard:
        out = in(0).cwiseProduct(in(1));
        break;
      case Op::Scale:
        out = n.scalar * in(0);
        break;
      case Op::Shift:
        out = in(0).array() + n.scalar;
        break;
      case Op::Tanh:
        out = in(0).array().tanh();
        break;
      case Op::Pow:
        if (!(in(0).array() > 0.0).all())
          fail(ErrorKind::NonFiniteLoss,
               "non-finite loss at op '" + n.tag +
                   "': fractional power of a non-positive base");
        out = in(0).array().pow(n.scalar);
        break;
      case Op::Col:
        out = in(0).col(n.index);
        break;
      case Op::HStack: {
        out.resize(n.rows, n.cols);
        int offset = 0;
        for (NodeId p : n.inputs) {
          out.middleCols(offset, nodes_[p].cols) = ws.values[p];
          offset += nodes_[p].cols;
        }
        break;
      }
      case Op::PermuteCols:
        out.resize(n.rows, n.cols);
        for (int c = 0; c < n.cols; ++c) out.col(c) = in(0).col(n.perm[c]);
        break;
      case Op::Sum:
        out.resize(1, 1);
        out(0, 0) =
            pairwise_sum(std::span<const Real>(in(0).data(), in(0).size()));
        break;
      case Op::WeightedSum: {
        MatX prod = n.dense.cwiseProduct(in(0));
        out.resize(1, 1);
        out(0, 0) =
            pairwise_sum(std::span<const Real>(prod.data(), prod.size()));
        break;
      }
      case Op::Det3: {
        const MatX& F = in(0);
        out = F.col(0).cwiseProduct(F.col(4).cwiseProduct(F.col(8)) -
                                    F.col(5).cwiseProduct(F.col(7))) -
              F.col(1).cwiseProduct(F.col(3).cwiseProduct(F.col(8)) -
                                    F.col(5).cwiseProduct(F.col(6))) +
              F.col(2).cwiseProduct(F.col(3).cwiseProduct(F.col(7)) -
                                    F.col(4).cwiseProduct(F.col(6)));
        break;
      }
      case Op::Trace3:
        out = in(0).col(0) + in(0).col(4) + in(0).col(8);
        break;
      case Op::FrobSq:
        out = in(0).rowwise().squaredNorm();
        break;
    }
    if (!out.allFinite())
      fail(ErrorKind::NonFiniteLoss,
           "non-finite values after op '" + n.tag + "'");
  }
}

Real Program::value(const VecX& theta, Workspace& ws) const {
  forward(theta, ws);
  return ws.values[output_](0, 0);
}

Real Program::value(const VecX& theta) const {
  Workspace ws;
  return value(theta, ws);
}

Real Program::value_and_gradient(const VecX& theta, VecX& grad,
                                 Workspace& ws) const {
  forward(theta, ws);
  grad.setZero(n_params_);
  if (!nodes_[output_].needs_grad) return ws.values[output_](0, 0);

  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].needs_grad)
      ws.adjoints[i].setZero(nodes_[i].rows, nodes_[i].cols);
  ws.adjoints[output_](0, 0) = 1.0;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    const MatX& adj = ws.adjoints[i];
    auto val = [&](int k) -> const MatX& { return ws.values[n.inputs[k]]; };
    auto push_to = [&](int k) -> MatX& { return ws.adjoints[n.inputs[k]]; };
    auto wants = [&](int k) { return nodes_[n.inputs[k]].needs_grad; };

    switch (n.op) {
      case Op::Const:
        break;
      case Op::Param:
        Eigen::Map<MatX>(grad.data() + n.param_offset, n.rows, n.cols) += adj;
        break;
      case Op::MatMul:
        if (wants(0)) push_to(0).noalias() += adj * val(1).transpose();
        if (wants(1)) push_to(1).noalias() += val(0).transpose() * adj;
        break;
      case Op::SpMatMul:
        if (wants(0)) push_to(0).noalias() += n.sparse.transpose() * adj;
        break;
      case Op::Add:
        if (wants(0)) push_to(0) += adj;
        if (wants(1)) push_to(1) += adj;
        break;
      case Op::Sub:
        if (wants(0)) push_to(0) += adj;
        if (wants(1)) push_to(1) -= adj;
        break;
      case Op::AddRow:
        if (wants(0)) push_to(0) += adj;
        if (wants(1)) push_to(1) += adj.colwise().sum();
        break;
      case Op::Hadamard:
        if (wants(0)) push_to(0) += adj.cwiseProduct(val(1));
        if (wants(1)) push_to(1) += adj.cwiseProduct(val(0));
        break;
      case Op::Scale:
        if (wants(0)) push_to(0) += n.scalar * adj;
        break;
      case Op::Shift:
        if (wants(0)) push_to(0) += adj;
        break;
      case Op::Tanh: {
        const MatX& y = ws.values[i];
        if (wants(0))
          push_to(0).array() += adj.array() * (1.0 - y.array().square());
        break;
      }
      case Op::Pow:
        // d(x^p)/dx = p x^{p-1} = p y / x, with x > 0 enforced forward.
        if (wants(0))
          push_to(0).array() += n.scalar * adj.array() *
                                ws.values[i].array() / val(0).array();
        break;
      case Op::Col:
        if (wants(0)) push_to(0).col(n.index) += adj;
        break;
      case Op::HStack: {
        int offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const int c = nodes_[n.inputs[k]].cols;
          if (wants(static_cast<int>(k)))
            ws.adjoints[n.inputs[k]] += adj.middleCols(offset, c);
          offset += c;
        }
        break;
      }
      case Op::PermuteCols:
        if (wants(0))
          for (int c = 0; c < n.cols; ++c)
            push_to(0).col(n.perm[c]) += adj.col(c);
        break;
      case Op::Sum:
        if (wants(0)) push_to(0).array() += adj(0, 0);
        break;
      case Op::WeightedSum:
        if (wants(0)) push_to(0) += adj(0, 0) * n.dense;
        break;
      case Op::Det3: {
        if (!wants(0)) break;
        // d det/dF is the cofactor matrix, rowwise on the 9 columns.
        const MatX& F = val(0);
        MatX& g = push_to(0);
        const auto a = F.col(0).array(), b = F.col(1).array(),
                   c = F.col(2).array(), d = F.col(3).array(),
                   e = F.col(4).array(), f = F.col(5).array(),
                   gg = F.col(6).array(), h = F.col(7).array(),
                   ii = F.col(8).array();
        const auto s = adj.col(0).array();
        g.col(0).array() += s * (e * ii - f * h);
        g.col(1).array() += s * (f * gg - d * ii);
        g.col(2).array() += s * (d * h - e * gg);
        g.col(3).array() += s * (c * h - b * ii);
        g.col(4).array() += s * (a * ii - c * gg);
        g.col(5).array() += s * (b * gg - a * h);
        g.col(6).array() += s * (b * f - c * e);
        g.col(7).array() += s * (c * d - a * f);
        g.col(8).array() += s * (a * e - b * d);
        break;
      }
      case Op::Trace3:
        if (wants(0)) {
          push_to(0).col(0) += adj;
          push_to(0).col(4) += adj;
          push_to(0).col(8) += adj;
        }
        break;
      case Op::FrobSq:
        if (wants(0))
          push_to(0).array() +=
              2.0 * (val(0).array().colwise() * adj.col(0).array());
        break;
    }
  }
  return ws.values[output_](0, 0);
}

std::pair<Real, VecX> value_and_parameter_gradient(const Program& prog,
                                                   const VecX& theta) {
  Workspace ws;
  VecX grad;
  Real loss = prog.value_and_gradient(theta, grad, ws);
  return {loss, std::move(grad)};
}

VecX finite_difference_gradient(const Program& prog, const VecX& theta,
                                Real step) {
  Workspace ws;
  VecX g(theta.size());
  VecX t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + step;
    const Real up = prog.value(t, ws);
    t[i] = theta[i] - step;
    const Real down = prog.value(t, ws);
    t[i] = theta[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace dem::ad
