#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spanqa {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Graph;

// Dense row-major float64 array. Copies share storage; a tensor is either a
// free-standing value or a handle onto a node of one Graph.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::shared_ptr<std::vector<double>> storage);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const double> values() const noexcept { return *data_; }
  // Only free-standing tensors may be written in place.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_.back() + j]; }

  bool in_graph() const noexcept { return graph_ != nullptr; }
  bool requires_grad() const noexcept { return graph_ != nullptr; }
  Graph* graph() const noexcept { return graph_; }
  NodeId node() const noexcept { return node_; }

  // Deep copy detached from any graph.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const noexcept { return data_ == other.data_; }
  const std::shared_ptr<std::vector<double>>& storage() const noexcept { return data_; }

 private:
  friend class Graph;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  NodeId node_ = std::numeric_limits<NodeId>::max();
};

// Writes into parent gradient buffers during backward. `slot` returns nullptr
// for inputs that are constants.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual double* slot(const Tensor& input) = 0;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

class Gradients {
 public:
  // Gradient of a variable; zeros when it is not on any path to the root.
  // Intermediate gradients are not retained.
  const Tensor& of(const Tensor& t) const;
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  const std::map<NodeId, Tensor>& all() const { return grads_; }

 private:
  friend class Graph;
  std::map<NodeId, Tensor> grads_;
};

// Append-only tape. Parents of node k always have ids < k, so reverse id order
// is a valid reverse topological order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a trainable leaf sharing storage with `value`.
  Tensor variable(const Tensor& value);

  Gradients backward(const Tensor& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_.at(id).parents; }

  Tensor record(std::string_view op, Shape shape, std::shared_ptr<std::vector<double>> values,
                std::span<const Tensor> inputs, BackwardFn backward);

 private:
  struct Node {
    std::string_view op;
    std::vector<NodeId> parents;
    Shape shape;
    BackwardFn backward;
    bool is_variable = false;
  };
  std::vector<Node> nodes_;
};

// Builds the result of an op: a graph node when any input is in a graph,
// otherwise a free-standing tensor (and `backward` is discarded).
Tensor make_result(std::string_view op, Shape shape, std::shared_ptr<std::vector<double>> values,
                   std::span<const Tensor> inputs, BackwardFn backward);

// ---- operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Binary ops need equal shapes; a one-element operand broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

enum class Elementwise { Add, Sub, Mul, Tanh, Sigmoid, Relu };
Elementwise parse_elementwise(std::string_view tag);
Tensor elementwise(Elementwise op, std::span<const Tensor> args);

// x [m×n] with a length-n vector broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
// Max over the last axis of a 2-D tensor, [m×n] -> [m×1]; ties go to the first.
Tensor row_max(const Tensor& x);

// Softmax over the last axis restricted to mask==1 entries; masked entries
// are exactly 0.
Tensor masked_softmax(const Tensor& logits, const Tensor& mask);

// Batch mean of -ln(max(p[b, gold_b], 1e-30)).
inline constexpr double kLogClamp = 1e-30;
Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> gold, const Tensor& mask);

// Inverted dropout driven by a SplitMix stream seeded with `seed`.
Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed);

// One LSTM time step, fused so a step costs a single tape node.
//   xz     [B × L × 4h] input projections with bias, gate blocks i|f|g|o
//   t      time index into xz
//   state  [B × 2h] = [h | c]
//   W_h    [h × 4h] recurrent weights
//   keep   constant [B] of 0/1; rows with 0 carry their state and emit 0
// Returns [B × 3h] = [h' | c' | out].
Tensor lstm_step(const Tensor& xz, std::size_t t, const Tensor& state, const Tensor& W_h, const Tensor& keep);

// ---- verification --------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  double max_abs_error = 0.0;
  std::vector<double> analytic_grad;
  std::vector<double> numeric_grad;
};

using ScalarFn = std::function<Tensor(const Tensor& x)>;

// Central differences on every coordinate of x versus backward().
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

double relative_error(double analytic, double numeric);

namespace testing {
// Scales every gradient emitted by the named op's backward rule. Used to
// prove that the gradient harness detects broken rules. Empty op clears.
void set_gradient_fault(std::string_view op, double scale);
}  // namespace testing

}  // namespace spanqa
