#include "spanqa/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

#include "spanqa/errors.hpp"
#include "spanqa/random.hpp"

namespace spanqa {

namespace {

using Storage = std::shared_ptr<std::vector<double>>;

Storage new_storage(std::size_t n, double fill = 0.0) {
  return std::make_shared<std::vector<double>>(n, fill);
}

// Split by sign so exp never overflows.
double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Fault {
  std::string op;
  double scale = 1.0;
};

Fault& fault() {
  static Fault f;
  return f;
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return to_string(a.shape()) + " and " + to_string(b.shape());
}

void require_rank(const Tensor& x, std::size_t rank, std::string_view op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
  }
}

bool is_one(const Tensor& t) { return t.size() == 1; }

#ifndef NDEBUG
void check_finite(std::string_view op, const std::vector<double>& v,
                  std::span<const Tensor> inputs) {
  for (const auto& in : inputs) {
    for (double x : in.values()) {
      if (!std::isfinite(x)) return;
    }
  }
  for (double x : v) {
    assert(std::isfinite(x) && "non-finite value produced from finite inputs");
    (void)op;
  }
}
#endif

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor() : shape_{1}, data_(new_storage(1)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_.empty() || std::find(shape_.begin(), shape_.end(), 0) != shape_.end()) {
    throw DimensionError("tensor shape must have positive dimensions, got " + to_string(shape_));
  }
  if (numel(shape_) != data_->size()) {
    throw DimensionError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                         " values, got " + std::to_string(data_->size()));
  }
}

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, std::vector<double>(numel(shape), fill)) {}

Tensor::Tensor(Shape shape, Storage storage) : shape_(std::move(shape)), data_(std::move(storage)) {
  if (shape_.empty() || numel(shape_) != data_->size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not match storage of " +
                         std::to_string(data_->size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::mutable_values() {
  if (graph_) throw GraphError("cannot mutate a tensor that belongs to a graph");
  return *data_;
}

double Tensor::item() const {
  if (data_->size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  return Tensor(shape_, std::vector<double>(*data_));
}

// ---- Graph ---------------------------------------------------------------

Tensor Graph::variable(const Tensor& value) {
  Tensor t(value.shape_, value.data_);
  t.graph_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{"variable", {}, value.shape_, nullptr, true});
  return t;
}

Tensor Graph::record(std::string_view op, Shape shape, Storage values,
                     std::span<const Tensor> inputs, BackwardFn backward) {
  Node node{op, {}, shape, std::move(backward), false};
  for (const auto& in : inputs) {
    if (in.graph_ == this) node.parents.push_back(in.node_);
  }
  Tensor t(std::move(shape), std::move(values));
  t.graph_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return t;
}

namespace {

class BufferSink : public GradSink {
 public:
  BufferSink(const Graph* graph, std::vector<std::vector<double>>& bufs) : graph_(graph), bufs_(bufs) {}

  double* slot(const Tensor& input) override {
    if (input.graph() != graph_) return nullptr;
    auto& b = bufs_.at(input.node());
    if (b.empty()) b.assign(input.size(), 0.0);
    return b.data();
  }

 private:
  const Graph* graph_;
  std::vector<std::vector<double>>& bufs_;
};

}  // namespace

Gradients Graph::backward(const Tensor& root) {
  if (root.graph_ != this) throw GraphError("backward root does not belong to this graph");
  if (root.size() != 1) {
    throw DimensionError("backward root must be scalar, got " + to_string(root.shape()));
  }
  std::vector<std::vector<double>> bufs(root.node_ + 1);
  bufs[root.node_].assign(1, 1.0);
  BufferSink sink(this, bufs);

  const Fault& f = fault();
  for (std::size_t k = root.node_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (bufs[k].empty() || !node.backward) continue;
    if (!f.op.empty() && f.op == node.op) {
      std::vector<double> scaled(bufs[k]);
      for (double& g : scaled) g *= f.scale;
      node.backward(scaled, sink);
    } else {
      node.backward(bufs[k], sink);
    }
    // Intermediate gradients are dead once propagated; freeing them roughly
    // halves peak memory on long recurrences.
    if (!node.is_variable) std::vector<double>().swap(bufs[k]);
  }

  Gradients out;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& node = nodes_[k];
    if (!node.is_variable) continue;
    if (k < bufs.size() && !bufs[k].empty()) {
      out.grads_.emplace(k, Tensor(node.shape, std::move(bufs[k])));
    } else {
      out.grads_.emplace(k, Tensor::zeros(node.shape));
    }
  }
  return out;
}

const Tensor& Gradients::of(const Tensor& t) const {
  if (!t.in_graph()) throw GraphError("gradient requested for a tensor outside the graph");
  auto it = grads_.find(t.node());
  if (it == grads_.end()) {
    throw GraphError("no gradient recorded for node " + std::to_string(t.node()));
  }
  return it->second;
}

Tensor make_result(std::string_view op, Shape shape, Storage values, std::span<const Tensor> inputs,
                   BackwardFn backward) {
#ifndef NDEBUG
  check_finite(op, *values, inputs);
#endif
  Graph* graph = nullptr;
  for (const auto& in : inputs) {
    if (!in.graph()) continue;
    if (graph && graph != in.graph()) throw GraphError(std::string(op) + ": inputs from two graphs");
    graph = in.graph();
  }
  if (!graph) return Tensor(std::move(shape), std::move(values));
  return graph->record(op, std::move(shape), std::move(values), inputs, std::move(backward));
}

namespace {

Tensor result(std::string_view op, Shape shape, Storage values, std::initializer_list<Tensor> inputs,
              BackwardFn backward) {
  return make_result(op, std::move(shape), std::move(values),
                     std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
}

}  // namespace

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shapes(a, b));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = new_storage(m * n);
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = out->data();
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return result("matmul", {m, n}, out, {a, b}, [a, b, m, k, n](std::span<const double> g, GradSink& sink) {
    const double* A = a.values().data();
    const double* B = b.values().data();
    if (double* ga = sink.slot(a)) {
      // dA = dC · Bᵀ
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gi[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (double* gb = sink.slot(b)) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gi[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = new_storage(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) (*out)[j * m + i] = v[i * n + j];
  return result("transpose", {n, m}, out, {a}, [a, m, n](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.slot(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    }
  });
}

// ---- elementwise ---------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(BinOp op, const Tensor& a, const Tensor& b) {
  static constexpr std::string_view names[] = {"add", "sub", "mul"};
  const auto name = names[static_cast<int>(op)];
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (is_one(b)) {
    shape = a.shape();
  } else if (is_one(a)) {
    shape = b.shape();
  } else {
    throw DimensionError(std::string(name) + ": shape mismatch " + shapes(a, b));
  }
  const std::size_t n = numel(shape);
  const std::size_t sa = a.size() == 1 ? 0 : 1, sb = b.size() == 1 ? 0 : 1;
  auto out = new_storage(n);
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = out->data();
  switch (op) {
    case BinOp::Add: for (std::size_t i = 0; i < n; ++i) C[i] = A[i * sa] + B[i * sb]; break;
    case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) C[i] = A[i * sa] - B[i * sb]; break;
    case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) C[i] = A[i * sa] * B[i * sb]; break;
  }
  return result(name, shape, out, {a, b}, [op, a, b, n, sa, sb](std::span<const double> g, GradSink& sink) {
    const double* A = a.values().data();
    const double* B = b.values().data();
    if (double* ga = sink.slot(a)) {
      if (op == BinOp::Mul) {
        for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * B[i * sb];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i];
      }
    }
    if (double* gb = sink.slot(b)) {
      switch (op) {
        case BinOp::Add: for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i]; break;
        case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) gb[i * sb] -= g[i]; break;
        case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * A[i * sa]; break;
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::Mul, a, b); }

Tensor tanh(const Tensor& x) {
  const auto v = x.values();
  auto out = new_storage(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) (*out)[i] = std::tanh(v[i]);
  return result("tanh", x.shape(), out, {x}, [x, y = out](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - (*y)[i] * (*y)[i]);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto v = x.values();
  auto out = new_storage(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) (*out)[i] = logistic(v[i]);
  return result("sigmoid", x.shape(), out, {x}, [x, y = out](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
    }
  });
}

Tensor relu(const Tensor& x) {
  const auto v = x.values();
  auto out = new_storage(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) (*out)[i] = v[i] > 0.0 ? v[i] : 0.0;
  return result("relu", x.shape(), out, {x}, [x](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      const auto v = x.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (v[i] > 0.0) gx[i] += g[i];
      }
    }
  });
}

Elementwise parse_elementwise(std::string_view tag) {
  if (tag == "add") return Elementwise::Add;
  if (tag == "sub") return Elementwise::Sub;
  if (tag == "mul") return Elementwise::Mul;
  if (tag == "tanh") return Elementwise::Tanh;
  if (tag == "sigmoid") return Elementwise::Sigmoid;
  if (tag == "relu") return Elementwise::Relu;
  throw ConfigError("unknown elementwise op '" + std::string(tag) + "'");
}

Tensor elementwise(Elementwise op, std::span<const Tensor> args) {
  const bool binary_op = op == Elementwise::Add || op == Elementwise::Sub || op == Elementwise::Mul;
  const std::size_t want = binary_op ? 2 : 1;
  if (args.size() != want) {
    throw ConfigError("elementwise op expects " + std::to_string(want) + " arguments, got " +
                      std::to_string(args.size()));
  }
  switch (op) {
    case Elementwise::Add: return add(args[0], args[1]);
    case Elementwise::Sub: return sub(args[0], args[1]);
    case Elementwise::Mul: return mul(args[0], args[1]);
    case Elementwise::Tanh: return tanh(args[0]);
    case Elementwise::Sigmoid: return sigmoid(args[0]);
    case Elementwise::Relu: return relu(args[0]);
  }
  return {};
}

// ---- row-vector broadcasts -----------------------------------------------

namespace {

void check_rowvec(const Tensor& x, const Tensor& v, std::string_view op) {
  require_rank(x, 2, op);
  if (v.size() != x.dim(1)) {
    throw DimensionError(std::string(op) + ": vector of " + to_string(v.shape()) +
                         " does not match columns of " + to_string(x.shape()));
  }
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_rowvec(x, v, "add_rowvec");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = new_storage(m * n);
  const auto X = x.values();
  const auto V = v.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) (*out)[i * n + j] = X[i * n + j] + V[j];
  return result("add_rowvec", x.shape(), out, {x, v}, [x, v, m, n](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
    }
    if (double* gv = sink.slot(v)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
    }
  });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  check_rowvec(x, v, "mul_rowvec");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = new_storage(m * n);
  const auto X = x.values();
  const auto V = v.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) (*out)[i * n + j] = X[i * n + j] * V[j];
  return result("mul_rowvec", x.shape(), out, {x, v}, [x, v, m, n](std::span<const double> g, GradSink& sink) {
    const auto X = x.values();
    const auto V = v.values();
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * V[j];
    }
    if (double* gv = sink.slot(v)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j] * X[i * n + j];
    }
  });
}

// ---- structural ----------------------------------------------------------

namespace {

// Views a shape as [outer, axis, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shapes(parts[0], p) + " along axis " +
                           std::to_string(axis));
    }
    shape[axis] += p.shape()[axis];
  }
  const auto dst = split_at(shape, axis);
  auto out = new_storage(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto src = split_at(p.shape(), axis);
    const double* v = p.values().data();
    const std::size_t row = src.len * src.inner;
    for (std::size_t o = 0; o < src.outer; ++o) {
      std::copy_n(v + o * row, row, out->data() + o * dst.len * dst.inner + offset * dst.inner);
    }
    offset += src.len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", shape, out, parts,
                     [inputs, offsets, axis, dst](std::span<const double> g, GradSink& sink) {
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         double* gp = sink.slot(inputs[k]);
                         if (!gp) continue;
                         const auto src = split_at(inputs[k].shape(), axis);
                         const std::size_t row = src.len * src.inner;
                         for (std::size_t o = 0; o < src.outer; ++o) {
                           const double* from = g.data() + o * dst.len * dst.inner + offsets[k] * dst.inner;
                           double* to = gp + o * row;
                           for (std::size_t i = 0; i < row; ++i) to[i] += from[i];
                         }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const auto src = split_at(x.shape(), axis);
  const std::size_t row = (end - begin) * src.inner;
  auto out = new_storage(numel(shape));
  const double* v = x.values().data();
  for (std::size_t o = 0; o < src.outer; ++o) {
    std::copy_n(v + o * src.len * src.inner + begin * src.inner, row, out->data() + o * row);
  }
  return result("slice", shape, out, {x}, [x, src, row, begin](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t o = 0; o < src.outer; ++o) {
        double* to = gx + o * src.len * src.inner + begin * src.inner;
        const double* from = g.data() + o * row;
        for (std::size_t i = 0; i < row; ++i) to[i] += from[i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  // Shares storage with x; gradients pass straight through.
  return result("reshape", std::move(shape), x.storage(), {x}, [x](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  double s = 0.0;
  for (double e : v) s += e;
  return result("sum", {1}, new_storage(1, s), {x}, [x](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0];
    }
  });
}

Tensor row_max(const Tensor& x) {
  require_rank(x, 2, "row_max");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = new_storage(m);
  std::vector<std::size_t> arg(m);
  const auto v = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (v[i * n + j] > v[i * n + best]) best = j;
    }
    arg[i] = best;
    (*out)[i] = v[i * n + best];
  }
  return result("row_max", {m, 1}, out, {x}, [x, arg, n](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < arg.size(); ++i) gx[i * n + arg[i]] += g[i];
    }
  });
}

// ---- probability ---------------------------------------------------------

Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape()) {
    throw DimensionError("masked_softmax: logits " + shapes(logits, mask) + " mask differ");
  }
  const std::size_t L = logits.shape().back();
  const std::size_t rows = logits.size() / L;
  const auto z = logits.values();
  const auto m = mask.values();
  auto out = new_storage(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * L;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < L; ++j) {
      if (m[base + j] == 0.0) continue;
      any = true;
      // NaN sticks so a poisoned row stays visible downstream.
      if (std::isnan(z[base + j]) || z[base + j] > mx) mx = z[base + j];
    }
    if (!any) {
      throw DegenerateMaskError("masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (m[base + j] != 0.0) {
        const double e = std::exp(z[base + j] - mx);
        (*out)[base + j] = e;
        total += e;
      }
    }
    for (std::size_t j = 0; j < L; ++j) (*out)[base + j] /= total;
  }
  return result("masked_softmax", logits.shape(), out, {logits},
                [logits, y = out, L, rows](std::span<const double> g, GradSink& sink) {
                  double* gz = sink.slot(logits);
                  if (!gz) return;
                  // dz_j = y_j (g_j - sum_k y_k g_k); masked y_j are 0.
                  for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = r * L;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < L; ++j) dot += (*y)[base + j] * g[base + j];
                    for (std::size_t j = 0; j < L; ++j) gz[base + j] += (*y)[base + j] * (g[base + j] - dot);
                  }
                });
}

Tensor lstm_step(const Tensor& xz, std::size_t t, const Tensor& state, const Tensor& W_h, const Tensor& keep) {
  if (xz.rank() != 3 || state.rank() != 2 || W_h.rank() != 2) {
    throw DimensionError("lstm_step: expected xz [B×L×4h], state [B×2h], W_h [h×4h], got " +
                         to_string(xz.shape()) + ", " + to_string(state.shape()) + ", " + to_string(W_h.shape()));
  }
  const std::size_t B = xz.dim(0), L = xz.dim(1), h4 = xz.dim(2), h = h4 / 4;
  if (h4 != 4 * h || h == 0 || state.shape() != Shape{B, 2 * h} || W_h.shape() != Shape{h, h4} ||
      keep.shape() != Shape{B}) {
    throw DimensionError("lstm_step: inconsistent shapes xz " + to_string(xz.shape()) + ", state " +
                         to_string(state.shape()) + ", W_h " + to_string(W_h.shape()) + ", keep " +
                         to_string(keep.shape()));
  }
  if (t >= L) throw IndexError("lstm_step: step " + std::to_string(t) + " outside " + std::to_string(L));
  if (keep.in_graph()) throw GraphError("lstm_step: keep mask must be a constant");

  const double* X = xz.values().data();
  const double* S = state.values().data();
  const double* W = W_h.values().data();
  const double* K = keep.values().data();
  // Post-activation gates and tanh(c') are kept for the backward pass.
  auto gates = new_storage(B * h4);
  auto tanh_c = new_storage(B * h);
  auto out = new_storage(B * 3 * h);
  std::vector<double> z(h4);
  for (std::size_t b = 0; b < B; ++b) {
    const double* hp = S + b * 2 * h;
    const double* cp = hp + h;
    double* o = out->data() + b * 3 * h;
    if (K[b] == 0.0) {
      std::copy_n(hp, 2 * h, o);
      continue;
    }
    std::copy_n(X + (b * L + t) * h4, h4, z.data());
    for (std::size_t k = 0; k < h; ++k) {
      const double hv = hp[k];
      if (hv == 0.0) continue;
      const double* wrow = W + k * h4;
      for (std::size_t j = 0; j < h4; ++j) z[j] += hv * wrow[j];
    }
    double* gt = gates->data() + b * h4;
    for (std::size_t j = 0; j < h; ++j) {
      const double i = logistic(z[j]);
      const double f = logistic(z[h + j]);
      const double g = std::tanh(z[2 * h + j]);
      const double og = logistic(z[3 * h + j]);
      const double c = f * cp[j] + i * g;
      const double tc = std::tanh(c);
      gt[j] = i;
      gt[h + j] = f;
      gt[2 * h + j] = g;
      gt[3 * h + j] = og;
      (*tanh_c)[b * h + j] = tc;
      o[j] = og * tc;
      o[h + j] = c;
      o[2 * h + j] = og * tc;
    }
  }
  return result("lstm_step", {B, 3 * h}, out, {xz, state, W_h},
                [xz, state, W_h, t, B, L, h, h4, gates, tanh_c, mask = keep](std::span<const double> g,
                                                                               GradSink& sink) {
                  double* gx = sink.slot(xz);
                  double* gs = sink.slot(state);
                  double* gw = sink.slot(W_h);
                  const double* S = state.values().data();
                  const double* W = W_h.values().data();
                  const double* K = mask.values().data();
                  std::vector<double> dz(h4);
                  for (std::size_t b = 0; b < B; ++b) {
                    const double* go = g.data() + b * 3 * h;
                    if (K[b] == 0.0) {
                      if (gs) {
                        for (std::size_t j = 0; j < 2 * h; ++j) gs[b * 2 * h + j] += go[j];
                      }
                      continue;
                    }
                    const double* cp = S + b * 2 * h + h;
                    const double* gt = gates->data() + b * h4;
                    const double* tc = tanh_c->data() + b * h;
                    for (std::size_t j = 0; j < h; ++j) {
                      const double i = gt[j], f = gt[h + j], gg = gt[2 * h + j], og = gt[3 * h + j];
                      const double dh = go[j] + go[2 * h + j];
                      const double dc = go[h + j] + dh * og * (1.0 - tc[j] * tc[j]);
                      dz[j] = dc * gg * i * (1.0 - i);
                      dz[h + j] = dc * cp[j] * f * (1.0 - f);
                      dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                      dz[3 * h + j] = dh * tc[j] * og * (1.0 - og);
                      if (gs) gs[b * 2 * h + h + j] += dc * f;
                    }
                    if (gx) {
                      double* row = gx + (b * L + t) * h4;
                      for (std::size_t j = 0; j < h4; ++j) row[j] += dz[j];
                    }
                    const double* hp = S + b * 2 * h;
                    for (std::size_t k = 0; k < h; ++k) {
                      const double* wrow = W + k * h4;
                      if (gs) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < h4; ++j) acc += wrow[j] * dz[j];
                        gs[b * 2 * h + k] += acc;
                      }
                      if (gw && hp[k] != 0.0) {
                        double* grow = gw + k * h4;
                        for (std::size_t j = 0; j < h4; ++j) grow[j] += hp[k] * dz[j];
                      }
                    }
                  }
                });
}

Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> gold, const Tensor& mask) {
  require_rank(probs, 2, "cross_entropy");
  if (mask.shape() != probs.shape()) {
    throw DimensionError("cross_entropy: probs/mask shapes " + shapes(probs, mask));
  }
  const std::size_t B = probs.dim(0), L = probs.dim(1);
  if (gold.size() != B) {
    throw LabelError("cross_entropy: " + std::to_string(gold.size()) + " labels for batch of " +
                     std::to_string(B));
  }
  const auto p = probs.values();
  const auto m = mask.values();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (gold[b] >= L) {
      throw LabelError("cross_entropy: gold index " + std::to_string(gold[b]) + " out of range for length " +
                       std::to_string(L));
    }
    if (m[b * L + gold[b]] == 0.0) {
      throw LabelError("cross_entropy: gold index " + std::to_string(gold[b]) + " is masked in row " +
                       std::to_string(b));
    }
    total -= std::log(std::max(p[b * L + gold[b]], kLogClamp));
  }
  std::vector<std::size_t> labels(gold.begin(), gold.end());
  return result("cross_entropy", {1}, new_storage(1, total / static_cast<double>(B)), {probs},
                [probs, labels, B, L](std::span<const double> g, GradSink& sink) {
                  double* gp = sink.slot(probs);
                  if (!gp) return;
                  const auto p = probs.values();
                  for (std::size_t b = 0; b < B; ++b) {
                    const double pv = p[b * L + labels[b]];
                    if (pv > kLogClamp) gp[b * L + labels[b]] -= g[0] / (pv * static_cast<double>(B));
                  }
                });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  SplitMix rng(seed);
  const double scale = 1.0 / (1.0 - rate);
  auto keep = std::make_shared<std::vector<double>>(x.size());
  auto out = new_storage(x.size());
  const auto v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*keep)[i] = rng.uniform() < rate ? 0.0 : scale;
    (*out)[i] = v[i] * (*keep)[i];
  }
  return result("dropout", x.shape(), out, {x}, [x, keep](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*keep)[i];
    }
  });
}

// ---- gradient checking ---------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  Graph graph;
  const Tensor var = graph.variable(x.detach());
  const Tensor root = f(var);
  const Gradients grads = graph.backward(root);
  const auto analytic = grads.of(var).values();

  GradCheckResult res;
  res.analytic_grad.assign(analytic.begin(), analytic.end());
  res.numeric_grad.resize(analytic.size());
  Tensor probe = x.detach();
  auto pv = probe.mutable_values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double orig = pv[i];
    pv[i] = orig + eps;
    const double up = f(probe).item();
    pv[i] = orig - eps;
    const double down = f(probe).item();
    pv[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    res.numeric_grad[i] = numeric;
    res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic[i] - numeric));
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.analytic = analytic[i];
      res.numeric = numeric;
    }
  }
  return res;
}

namespace testing {

void set_gradient_fault(std::string_view op, double scale) {
  fault() = Fault{std::string(op), scale};
}

}  // namespace testing

}  // namespace spanqa
