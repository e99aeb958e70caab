#include "grammarscope/tape.hpp"

#include <algorithm>
#include <cmath>

namespace grammarscope::num {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kMean: return "mean";
    case OpKind::kSumSquares: return "sum_squares";
  }
  return "?";
}

template <typename S>
std::string TapeT<S>::node_label(const Node& n, Id id) const {
  std::string s = "node " + std::to_string(id) + " (" + op_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::check(Id id) const {
  require(id >= 0 && id < static_cast<Id>(nodes_.size()), "tape: bad node id " + std::to_string(id));
  return id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::push(Node n) {
  if (n.kind != OpKind::kInput && n.kind != OpKind::kParam) {
    n.needs_grad = (n.a >= 0 && nodes_[n.a].needs_grad) || (n.b >= 0 && nodes_[n.b].needs_grad);
  }
  nodes_.push_back(std::move(n));
  last_forward_root_ = -1;
  return static_cast<Id>(nodes_.size()) - 1;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::input(const std::string& name, DenseArrayT<S> value) {
  Node n;
  n.kind = OpKind::kInput;
  n.name = name;
  n.out = std::move(value);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::param(const std::string& name, DenseArrayT<S> value) {
  Node n;
  n.kind = OpKind::kParam;
  n.name = name;
  n.out = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::matmul(Id a, Id b) {
  check(a);
  check(b);
  const auto& va = nodes_[a].out;
  const auto& vb = nodes_[b].out;
  require(va.rank() == 2 && vb.rank() == 2 && va.cols() == vb.rows(),
          std::string("matmul: incompatible dims ") + dims_str(va.dims) + "x" + dims_str(vb.dims) +
              " at node " + std::to_string(nodes_.size()));
  Node n;
  n.kind = OpKind::kMatMul;
  n.a = a;
  n.b = b;
  n.out = DenseArrayT<S>({va.rows(), vb.cols()});
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::add(Id a, Id b) {
  check(a);
  check(b);
  const auto& va = nodes_[a].out;
  const auto& vb = nodes_[b].out;
  const bool same = va.same_dims(vb);
  const bool row = va.rank() == 2 && vb.rank() == 2 && vb.rows() == 1 && vb.cols() == va.cols();
  const bool scalar = vb.is_scalar();
  require(same || row || scalar,
          "add: incompatible dims " + dims_str(va.dims) + "+" + dims_str(vb.dims) + " at node " +
              std::to_string(nodes_.size()));
  Node n;
  n.kind = OpKind::kAdd;
  n.a = a;
  n.b = b;
  n.out = DenseArrayT<S>(va.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::multiply(Id a, Id b) {
  check(a);
  check(b);
  const auto& va = nodes_[a].out;
  const auto& vb = nodes_[b].out;
  require(va.same_dims(vb) || vb.is_scalar() || va.is_scalar(),
          "multiply: incompatible dims " + dims_str(va.dims) + "*" + dims_str(vb.dims) + " at node " +
              std::to_string(nodes_.size()));
  Node n;
  n.kind = OpKind::kMultiply;
  n.a = a;
  n.b = b;
  n.out = DenseArrayT<S>(va.is_scalar() && !vb.is_scalar() ? vb.dims : va.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::tanh(Id a) {
  check(a);
  Node n;
  n.kind = OpKind::kTanh;
  n.a = a;
  n.out = DenseArrayT<S>(nodes_[a].out.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::sigmoid(Id a) {
  check(a);
  Node n;
  n.kind = OpKind::kSigmoid;
  n.a = a;
  n.out = DenseArrayT<S>(nodes_[a].out.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::softmax(Id a) {
  check(a);
  require(nodes_[a].out.rank() == 2, "softmax: rank-2 input required");
  Node n;
  n.kind = OpKind::kSoftmax;
  n.a = a;
  n.out = DenseArrayT<S>(nodes_[a].out.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::log(Id a) {
  check(a);
  Node n;
  n.kind = OpKind::kLog;
  n.a = a;
  n.out = DenseArrayT<S>(nodes_[a].out.dims);
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::concat(Id a, Id b, int axis) {
  check(a);
  check(b);
  const auto& va = nodes_[a].out;
  const auto& vb = nodes_[b].out;
  require(va.rank() == 2 && vb.rank() == 2 && (axis == 0 || axis == 1), "concat: rank-2, axis 0|1");
  if (axis == 1)
    require(va.rows() == vb.rows(), "concat: row mismatch at node " + std::to_string(nodes_.size()));
  else
    require(va.cols() == vb.cols(), "concat: col mismatch at node " + std::to_string(nodes_.size()));
  Node n;
  n.kind = OpKind::kConcat;
  n.a = a;
  n.b = b;
  n.axis = axis;
  n.out = axis == 1 ? DenseArrayT<S>({va.rows(), va.cols() + vb.cols()})
                    : DenseArrayT<S>({va.rows() + vb.rows(), va.cols()});
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::slice(Id a, int axis, int start, int stop) {
  check(a);
  const auto& va = nodes_[a].out;
  require(va.rank() == 2 && (axis == 0 || axis == 1), "slice: rank-2, axis 0|1");
  const int extent = axis == 0 ? va.rows() : va.cols();
  require(0 <= start && start < stop && stop <= extent,
          "slice: bad range [" + std::to_string(start) + "," + std::to_string(stop) + ") of " +
              std::to_string(extent) + " at node " + std::to_string(nodes_.size()));
  Node n;
  n.kind = OpKind::kSlice;
  n.a = a;
  n.axis = axis;
  n.start = start;
  n.stop = stop;
  n.out = axis == 0 ? DenseArrayT<S>({stop - start, va.cols()}) : DenseArrayT<S>({va.rows(), stop - start});
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::mean(Id a) {
  check(a);
  Node n;
  n.kind = OpKind::kMean;
  n.a = a;
  n.out = DenseArrayT<S>({1});
  return push(std::move(n));
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::sum_squares(Id a) {
  check(a);
  Node n;
  n.kind = OpKind::kSumSquares;
  n.a = a;
  n.out = DenseArrayT<S>({1});
  return push(std::move(n));
}

template <typename S>
void TapeT<S>::compute(Node& n) {
  const DenseArrayT<S>* a = n.a >= 0 ? &nodes_[n.a].out : nullptr;
  const DenseArrayT<S>* b = n.b >= 0 ? &nodes_[n.b].out : nullptr;
  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParam:
      break;
    case OpKind::kMatMul:
      gemm_nn(*a, *b, n.out, false);
      break;
    case OpKind::kAdd: {
      if (a->same_dims(*b)) {
        for (int64_t i = 0; i < a->size(); ++i) n.out.data[i] = a->data[i] + b->data[i];
      } else if (b->is_scalar()) {
        const S bv = b->data[0];
        for (int64_t i = 0; i < a->size(); ++i) n.out.data[i] = a->data[i] + bv;
      } else {  // row broadcast
        const int rows = a->rows(), cols = a->cols();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            n.out.data[static_cast<size_t>(r) * cols + c] =
                a->data[static_cast<size_t>(r) * cols + c] + b->data[c];
      }
      break;
    }
    case OpKind::kMultiply: {
      if (a->same_dims(*b)) {
        for (int64_t i = 0; i < a->size(); ++i) n.out.data[i] = a->data[i] * b->data[i];
      } else if (b->is_scalar()) {
        const S bv = b->data[0];
        for (int64_t i = 0; i < a->size(); ++i) n.out.data[i] = a->data[i] * bv;
      } else {  // a is scalar
        const S av = a->data[0];
        for (int64_t i = 0; i < b->size(); ++i) n.out.data[i] = av * b->data[i];
      }
      break;
    }
    case OpKind::kTanh:
      for (int64_t i = 0; i < a->size(); ++i) n.out.data[i] = static_cast<S>(std::tanh(static_cast<double>(a->data[i])));
      break;
    case OpKind::kSigmoid:
      for (int64_t i = 0; i < a->size(); ++i)
        n.out.data[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(a->data[i]))));
      break;
    case OpKind::kSoftmax: {
      const int rows = a->rows(), cols = a->cols();
      for (int r = 0; r < rows; ++r) {
        const S* in = a->data.data() + static_cast<size_t>(r) * cols;
        S* out = n.out.data.data() + static_cast<size_t>(r) * cols;
        double mx = static_cast<double>(in[0]);
        for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(in[c]));
        double z = 0.0;
        for (int c = 0; c < cols; ++c) z += std::exp(static_cast<double>(in[c]) - mx);
        for (int c = 0; c < cols; ++c)
          out[c] = static_cast<S>(std::exp(static_cast<double>(in[c]) - mx) / z);
      }
      break;
    }
    case OpKind::kLog:
      for (int64_t i = 0; i < a->size(); ++i) {
        require(a->data[i] > S(0), "log: non-positive input");
        n.out.data[i] = static_cast<S>(std::log(static_cast<double>(a->data[i])));
      }
      break;
    case OpKind::kConcat: {
      if (n.axis == 1) {
        const int rows = a->rows(), ca = a->cols(), cb = b->cols();
        for (int r = 0; r < rows; ++r) {
          S* out = n.out.data.data() + static_cast<size_t>(r) * (ca + cb);
          std::copy_n(a->data.data() + static_cast<size_t>(r) * ca, ca, out);
          std::copy_n(b->data.data() + static_cast<size_t>(r) * cb, cb, out + ca);
        }
      } else {
        std::copy(a->data.begin(), a->data.end(), n.out.data.begin());
        std::copy(b->data.begin(), b->data.end(), n.out.data.begin() + a->size());
      }
      break;
    }
    case OpKind::kSlice: {
      const int cols = a->cols();
      if (n.axis == 0) {
        std::copy_n(a->data.data() + static_cast<size_t>(n.start) * cols,
                    static_cast<size_t>(n.stop - n.start) * cols, n.out.data.data());
      } else {
        const int w = n.stop - n.start;
        for (int r = 0; r < a->rows(); ++r)
          std::copy_n(a->data.data() + static_cast<size_t>(r) * cols + n.start, w,
                      n.out.data.data() + static_cast<size_t>(r) * w);
      }
      break;
    }
    case OpKind::kMean: {
      double s = 0.0;
      for (int64_t i = 0; i < a->size(); ++i) s += static_cast<double>(a->data[i]);
      n.out.data[0] = static_cast<S>(s / static_cast<double>(a->size()));
      break;
    }
    case OpKind::kSumSquares: {
      double s = 0.0;
      for (int64_t i = 0; i < a->size(); ++i) {
        const double v = static_cast<double>(a->data[i]);
        s += v * v;
      }
      n.out.data[0] = static_cast<S>(s);
      break;
    }
  }
}

template <typename S>
const DenseArrayT<S>& TapeT<S>::forward(Id root) {
  check(root);
  for (Id i = 0; i <= root; ++i) compute(nodes_[i]);
  last_forward_root_ = root;
  return nodes_[root].out;
}

template <typename S>
void TapeT<S>::backward(Id root) {
  check(root);
  require(last_forward_root_ >= root, "backward: run forward first");
  const Node& r = nodes_[root];
  require(r.out.is_scalar(), "backward: root must be scalar, got " + dims_str(r.out.dims));

  for (Id i = 0; i <= root; ++i) {
    nodes_[i].grad = DenseArrayT<S>(nodes_[i].out.dims);
  }
  nodes_[root].grad.data[0] = S(1);

  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad && n.kind != OpKind::kInput && n.kind != OpKind::kParam) continue;
    const DenseArrayT<S>& g = n.grad;
    Node* an = n.a >= 0 ? &nodes_[n.a] : nullptr;
    Node* bn = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const bool need_a = an != nullptr && an->needs_grad;
    const bool need_b = bn != nullptr && bn->needs_grad;
    if (!need_a && !need_b) continue;
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kParam:
        break;
      case OpKind::kMatMul:
        if (need_a) gemm_nt(g, bn->out, an->grad, true);
        if (need_b) gemm_tn(an->out, g, bn->grad, true);
        break;
      case OpKind::kAdd: {
        if (need_a)
          for (int64_t i = 0; i < g.size(); ++i) an->grad.data[i] += g.data[i];
        if (need_b) {
          if (an->out.same_dims(bn->out)) {
            for (int64_t i = 0; i < g.size(); ++i) bn->grad.data[i] += g.data[i];
          } else if (bn->out.is_scalar()) {
            double s = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) s += static_cast<double>(g.data[i]);
            bn->grad.data[0] += static_cast<S>(s);
          } else {
            const int rows = an->out.rows(), cols = an->out.cols();
            for (int c = 0; c < cols; ++c) {
              double s = 0.0;
              for (int r = 0; r < rows; ++r) s += static_cast<double>(g.data[static_cast<size_t>(r) * cols + c]);
              bn->grad.data[c] += static_cast<S>(s);
            }
          }
        }
        break;
      }
      case OpKind::kMultiply: {
        const auto& va = an->out;
        const auto& vb = bn->out;
        if (va.same_dims(vb)) {
          if (need_a)
            for (int64_t i = 0; i < g.size(); ++i) an->grad.data[i] += g.data[i] * vb.data[i];
          if (need_b)
            for (int64_t i = 0; i < g.size(); ++i) bn->grad.data[i] += g.data[i] * va.data[i];
        } else if (vb.is_scalar()) {
          if (need_a)
            for (int64_t i = 0; i < g.size(); ++i) an->grad.data[i] += g.data[i] * vb.data[0];
          if (need_b) {
            double s = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) s += static_cast<double>(g.data[i]) * static_cast<double>(va.data[i]);
            bn->grad.data[0] += static_cast<S>(s);
          }
        } else {  // a scalar
          if (need_b)
            for (int64_t i = 0; i < g.size(); ++i) bn->grad.data[i] += g.data[i] * va.data[0];
          if (need_a) {
            double s = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) s += static_cast<double>(g.data[i]) * static_cast<double>(vb.data[i]);
            an->grad.data[0] += static_cast<S>(s);
          }
        }
        break;
      }
      case OpKind::kTanh:
        for (int64_t i = 0; i < g.size(); ++i) {
          const S y = n.out.data[i];
          an->grad.data[i] += g.data[i] * (S(1) - y * y);
        }
        break;
      case OpKind::kSigmoid:
        for (int64_t i = 0; i < g.size(); ++i) {
          const S y = n.out.data[i];
          an->grad.data[i] += g.data[i] * y * (S(1) - y);
        }
        break;
      case OpKind::kSoftmax: {
        const int rows = n.out.rows(), cols = n.out.cols();
        for (int r = 0; r < rows; ++r) {
          const S* y = n.out.data.data() + static_cast<size_t>(r) * cols;
          const S* gy = g.data.data() + static_cast<size_t>(r) * cols;
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += static_cast<double>(gy[c]) * static_cast<double>(y[c]);
          S* ga = an->grad.data.data() + static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c)
            ga[c] += static_cast<S>(static_cast<double>(y[c]) * (static_cast<double>(gy[c]) - dot));
        }
        break;
      }
      case OpKind::kLog:
        for (int64_t i = 0; i < g.size(); ++i) an->grad.data[i] += g.data[i] / an->out.data[i];
        break;
      case OpKind::kConcat: {
        if (n.axis == 1) {
          const int rows = an->out.rows(), ca = an->out.cols(), cb = bn->out.cols();
          for (int r = 0; r < rows; ++r) {
            const S* gr = g.data.data() + static_cast<size_t>(r) * (ca + cb);
            if (need_a) {
              S* ga = an->grad.data.data() + static_cast<size_t>(r) * ca;
              for (int c = 0; c < ca; ++c) ga[c] += gr[c];
            }
            if (need_b) {
              S* gb = bn->grad.data.data() + static_cast<size_t>(r) * cb;
              for (int c = 0; c < cb; ++c) gb[c] += gr[ca + c];
            }
          }
        } else {
          const int64_t na = an->out.size();
          if (need_a)
            for (int64_t i = 0; i < na; ++i) an->grad.data[i] += g.data[i];
          if (need_b)
            for (int64_t i = 0; i < bn->out.size(); ++i) bn->grad.data[i] += g.data[na + i];
        }
        break;
      }
      case OpKind::kSlice: {
        const int cols = an->out.cols();
        if (n.axis == 0) {
          for (int64_t i = 0; i < g.size(); ++i)
            an->grad.data[static_cast<size_t>(n.start) * cols + i] += g.data[i];
        } else {
          const int w = n.stop - n.start;
          for (int r = 0; r < an->out.rows(); ++r)
            for (int c = 0; c < w; ++c)
              an->grad.data[static_cast<size_t>(r) * cols + n.start + c] +=
                  g.data[static_cast<size_t>(r) * w + c];
        }
        break;
      }
      case OpKind::kMean: {
        const S gv = g.data[0] / static_cast<S>(an->out.size());
        for (int64_t i = 0; i < an->out.size(); ++i) an->grad.data[i] += gv;
        break;
      }
      case OpKind::kSumSquares: {
        const S gv = g.data[0];
        for (int64_t i = 0; i < an->out.size(); ++i) an->grad.data[i] += S(2) * an->out.data[i] * gv;
        break;
      }
    }
  }
}

template <typename S>
const DenseArrayT<S>& TapeT<S>::value(Id id) const {
  return nodes_[check(id)].out;
}

template <typename S>
const DenseArrayT<S>& TapeT<S>::grad(Id id) const {
  const Node& n = nodes_[check(id)];
  require(!n.grad.dims.empty(), "grad: run backward first");
  return n.grad;
}

template <typename S>
DenseArrayT<S>& TapeT<S>::mutable_value(Id id) {
  Node& n = nodes_[check(id)];
  require(n.kind == OpKind::kInput || n.kind == OpKind::kParam, "mutable_value: leaves only");
  return n.out;
}

template <typename S>
void TapeT<S>::set_value(Id id, const DenseArrayT<S>& v) {
  Node& n = nodes_[check(id)];
  require(n.kind == OpKind::kInput || n.kind == OpKind::kParam, "set_value: leaves only");
  require(n.out.same_dims(v), "set_value: dims mismatch for " + node_label(n, id));
  n.out = v;
}

template <typename S>
std::vector<typename TapeT<S>::Id> TapeT<S>::params() const {
  std::vector<Id> out;
  for (Id i = 0; i < static_cast<Id>(nodes_.size()); ++i)
    if (nodes_[i].kind == OpKind::kParam) out.push_back(i);
  return out;
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace grammarscope::num
