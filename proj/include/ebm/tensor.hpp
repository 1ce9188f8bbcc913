#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebm/rng.hpp"

namespace ebm {

// Thrown when an operation's shape/usage contract is broken.
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a computation produces NaN/Inf.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

// Run-level switch. In f32 mode every op result is rounded through float;
// storage stays double so the graph machinery is shared.
void set_precision(Precision p);
Precision precision();

using Shape = std::vector<long>;

long numel_of(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  // grad w.r.t. this node's output -> grads w.r.t. each parent, built from
  // tensor ops so the results are themselves differentiable.
  std::function<std::vector<Tensor>(const Tensor&)> backward;
  const char* op = "leaf";
};

}  // namespace detail

// Shared-ownership view of an immutable n-d array node. Copies are cheap.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  long numel() const { return static_cast<long>(node_->data.size()); }
  long dim() const { return static_cast<long>(node_->shape.size()); }
  const std::vector<double>& data() const { return node_->data; }
  double item() const;

  // Leaf-only escape hatch for optimizers; graph nodes stay immutable.
  std::vector<double>& mutable_data();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- autodiff -------------------------------------------------------------

// d(output)/d(input) for each input; output must be scalar. Inputs that did
// not participate receive zeros. With create_graph the results support
// further differentiation.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph);

// Central-difference oracle, independent of the graph machinery.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double eps);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor pow_scalar(const Tensor& a, double p);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor gelu(const Tensor& a);      // tanh approximation
Tensor softplus(const Tensor& a);  // log(1 + exp(a)), overflow-safe

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<long>& dims);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, long axis);
Tensor slice(const Tensor& a, long axis, long start, long end);
Tensor index_select(const Tensor& a, long axis, const std::vector<long>& indices);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
// Bijective element remap: out[i] = in[map[i]]. Used by patch extraction.
Tensor permute_elements(const Tensor& a, std::shared_ptr<const std::vector<long>> map,
                        Shape out_shape);

// ---- reductions / linear algebra -----------------------------------------

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, long axis, bool keepdim);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, long axis, bool keepdim);
// Leading dims are batch dims with numpy broadcasting; last two are matrix.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& a, double eps);  // normalize last dim, no affine

// ---- losses ---------------------------------------------------------------

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta);
Tensor mse(const Tensor& pred, const Tensor& target);

// ---- misc -----------------------------------------------------------------

bool all_finite(const Tensor& t);
void check_finite(const Tensor& t, const std::string& context);

}  // namespace ebm
