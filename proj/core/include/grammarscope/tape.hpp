#pragma once

#include <string>
#include <vector>

#include "grammarscope/dense.hpp"

namespace grammarscope::num {

enum class OpKind {
  kInput,
  kParam,
  kMatMul,
  kAdd,
  kMultiply,
  kTanh,
  kSigmoid,
  kSoftmax,
  kLog,
  kConcat,
  kSlice,
  kMean,
  kSumSquares,
};

const char* op_name(OpKind k);

// Reverse-mode tape over an acyclic graph of DenseArrays. Nodes are created
// through the builder methods (shape-checked eagerly, values computed by
// forward()). Leaves can be re-bound with set_value and the graph re-run,
// which is what the training loops and the finite-difference checks do.
//
// add broadcasts a (1,n) row or a single-element scalar over the left
// operand; multiply broadcasts a single-element scalar. softmax is row-wise.
// concat joins along an axis; slice takes a contiguous index range of one
// axis. mean and sum_squares reduce to a scalar in fixed row-major order
// with a 64-bit accumulator.
template <typename S>
class TapeT {
 public:
  using Id = int;

  Id input(const std::string& name, DenseArrayT<S> value);
  Id param(const std::string& name, DenseArrayT<S> value);

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);
  Id multiply(Id a, Id b);
  Id tanh(Id a);
  Id sigmoid(Id a);
  Id softmax(Id a);
  Id log(Id a);
  Id concat(Id a, Id b, int axis = 1);
  Id slice(Id a, int axis, int start, int stop);
  Id mean(Id a);
  Id sum_squares(Id a);

  // Recomputes every node up to and including root, in creation order.
  const DenseArrayT<S>& forward(Id root);
  // Gradient of a scalar root w.r.t. every param (and intermediate).
  // Requires a prior forward() of the same root.
  void backward(Id root);

  const DenseArrayT<S>& value(Id id) const;
  const DenseArrayT<S>& grad(Id id) const;
  DenseArrayT<S>& mutable_value(Id id);  // leaves only, for optimizer updates
  void set_value(Id id, const DenseArrayT<S>& v);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  OpKind kind(Id id) const { return nodes_[check(id)].kind; }
  const std::string& name(Id id) const { return nodes_[check(id)].name; }
  std::vector<Id> params() const;

 private:
  struct Node {
    OpKind kind;
    std::string name;  // leaves only
    Id a = -1, b = -1;
    int axis = 0, start = 0, stop = 0;
    DenseArrayT<S> out;
    DenseArrayT<S> grad;
    bool needs_grad = false;
  };

  Id check(Id id) const;
  Id push(Node n);
  void compute(Node& n);
  std::string node_label(const Node& n, Id id) const;

  std::vector<Node> nodes_;
  Id last_forward_root_ = -1;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace grammarscope::num
