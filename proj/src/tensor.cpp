#include "ebm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ebm {

namespace {

std::atomic<Precision> g_precision{Precision::f64};

inline void finalize(std::vector<double>& d) {
  if (g_precision.load(std::memory_order_relaxed) == Precision::f32) {
    for (double& v : d) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<long> strides_of(const Shape& s) {
  std::vector<long> st(s.size());
  long acc = 1;
  for (long d = static_cast<long>(s.size()) - 1; d >= 0; --d) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    long ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    long eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw contract_error(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `in` right-aligned against `out`, zero on broadcast dims.
std::vector<long> effective_strides(const Shape& in, const Shape& out) {
  std::vector<long> st(out.size(), 0);
  auto ist = strides_of(in);
  size_t off = out.size() - in.size();
  for (size_t d = 0; d < in.size(); ++d)
    if (in[d] != 1) st[off + d] = ist[d];
  return st;
}

// Walks every position of `shape`, tracking offsets into two source arrays.
template <typename Fn>
void for_each_pair(const Shape& shape, const std::vector<long>& sa,
                   const std::vector<long>& sb, Fn&& fn) {
  long n = numel_of(shape);
  size_t r = shape.size();
  std::vector<long> idx(r, 0);
  long oa = 0, ob = 0;
  for (long lin = 0; lin < n; ++lin) {
    fn(lin, oa, ob);
    for (long d = static_cast<long>(r) - 1; d >= 0; --d) {
      oa += sa[d];
      ob += sb[d];
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
      oa -= sa[d] * shape[d];
      ob -= sb[d] * shape[d];
    }
  }
}

template <typename Fn>
void for_each_single(const Shape& shape, const std::vector<long>& sa, Fn&& fn) {
  static const std::vector<long> dummy_init;
  std::vector<long> zero(shape.size(), 0);
  for_each_pair(shape, sa, zero, [&](long lin, long oa, long) { fn(lin, oa); });
}

using Node = detail::Node;
using Backward = std::function<std::vector<Tensor>(const Tensor&)>;

Tensor make(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
            Backward bw, const char* op) {
  finalize(data);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  for (const Tensor& p : parents)
    if (p.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Tensor(n);
}

Tensor constant_like(const Shape& shape, std::vector<double> data) {
  return Tensor::from_data(shape, std::move(data));
}

// Sum `g` down to `target` shape (inverse of broadcasting).
Tensor reduce_to(const Tensor& g, const Shape& target) {
  Tensor r = g;
  while (r.dim() > static_cast<long>(target.size())) r = sum(r, 0, false);
  for (size_t d = 0; d < target.size(); ++d)
    if (target[d] == 1 && r.shape()[d] != 1) r = sum(r, static_cast<long>(d), true);
  if (r.shape() != target) r = reshape(r, target);
  return r;
}

Tensor binary_op(const Tensor& a, const Tensor& b, const char* op,
                 double (*fwd)(double, double), Backward bw_factory) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), op);
  std::vector<double> data(numel_of(out));
  auto sa = effective_strides(a.shape(), out);
  auto sb = effective_strides(b.shape(), out);
  const auto& da = a.data();
  const auto& db = b.data();
  for_each_pair(out, sa, sb,
                [&](long lin, long oa, long ob) { data[lin] = fwd(da[oa], db[ob]); });
  return make(std::move(out), std::move(data), {a, b}, std::move(bw_factory), op);
}

Tensor unary_op(const Tensor& a, const char* op, double (*fwd)(double),
                Backward bw) {
  std::vector<double> data(a.numel());
  const auto& da = a.data();
  for (long i = 0; i < a.numel(); ++i) data[i] = fwd(da[i]);
  return make(a.shape(), std::move(data), {a}, std::move(bw), op);
}

Tensor embed_slice(const Tensor& g, const Shape& full, long axis, long start);

}  // namespace

long numel_of(const Shape& s) {
  long n = 1;
  for (long e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  long n = numel_of(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  long n = numel_of(shape);
  return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (numel_of(shape) != static_cast<long>(data.size()))
    throw contract_error("from_data: " + shape_str(shape) + " needs " +
                         std::to_string(numel_of(shape)) + " elements, got " +
                         std::to_string(data.size()));
  finalize(data);
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(n);
}

Tensor Tensor::scalar(double value) { return from_data(Shape{}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  long n = numel_of(shape);
  std::vector<double> d(n);
  for (long i = 0; i < n; ++i) d[i] = rng.normal() * stddev;
  return from_data(std::move(shape), std::move(d));
}

double Tensor::item() const {
  if (numel() != 1) throw contract_error("item(): tensor has " +
                                         std::to_string(numel()) + " elements");
  return node_->data[0];
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_->parents.empty())
    throw contract_error("mutable_data(): only leaf tensors may be mutated");
  return node_->data;
}

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && !node_->parents.empty() && !node_->requires_grad)
    throw contract_error("set_requires_grad: cannot re-enable on a graph node");
  node_->requires_grad = v;
  return *this;
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(n);
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [a, b](const Tensor& g) {
                     return std::vector<Tensor>{reduce_to(g, a.shape()),
                                                reduce_to(g, b.shape())};
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [a, b](const Tensor& g) {
                     return std::vector<Tensor>{reduce_to(g, a.shape()),
                                                reduce_to(neg(g), b.shape())};
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [a, b](const Tensor& g) {
                     return std::vector<Tensor>{reduce_to(mul(g, b), a.shape()),
                                                reduce_to(mul(g, a), b.shape())};
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [a, b](const Tensor& g) {
                     Tensor ga = div(g, b);
                     Tensor gb = neg(div(mul(g, a), mul(b, b)));
                     return std::vector<Tensor>{reduce_to(ga, a.shape()),
                                                reduce_to(gb, b.shape())};
                   });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; },
                  [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
}

Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor sub(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

Tensor pow_scalar(const Tensor& a, double p) {
  std::vector<double> data(a.numel());
  const auto& da = a.data();
  for (long i = 0; i < a.numel(); ++i) data[i] = std::pow(da[i], p);
  return make(a.shape(), std::move(data), {a},
              [a, p](const Tensor& g) {
                return std::vector<Tensor>{mul(g, mul(pow_scalar(a, p - 1.0), p))};
              },
              "pow");
}

Tensor exp_(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [a](const Tensor& g) {
                    return std::vector<Tensor>{mul(g, exp_(a))};
                  });
}

Tensor log_(const Tensor& a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [a](const Tensor& g) {
                    return std::vector<Tensor>{div(g, a)};
                  });
}

Tensor sqrt_(const Tensor& a) {
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [a](const Tensor& g) {
                    return std::vector<Tensor>{div(g, mul(sqrt_(a), 2.0))};
                  });
}

Tensor tanh_(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [a](const Tensor& g) {
                    Tensor t = tanh_(a);
                    return std::vector<Tensor>{mul(g, sub(Tensor::scalar(1.0), mul(t, t)))};
                  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  Tensor inner = mul(add(a, mul(mul(mul(a, a), a), 0.044715)), kC);
  return mul(mul(a, add(tanh_(inner), 1.0)), 0.5);
}

Tensor softplus(const Tensor& a) {
  std::vector<double> data(a.numel());
  const auto& da = a.data();
  for (long i = 0; i < a.numel(); ++i) {
    double x = da[i];
    data[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return make(a.shape(), std::move(data), {a},
              [a](const Tensor& g) {
                // d/dx log(1+e^x) = sigmoid(x)
                Tensor sig = div(Tensor::scalar(1.0), add(exp_(neg(a)), 1.0));
                return std::vector<Tensor>{mul(g, sig)};
              },
              "softplus");
}

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw contract_error("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape) + " changes element count");
  Shape orig = a.shape();
  return make(std::move(shape), a.data(), {a},
              [a, orig](const Tensor& g) {
                return std::vector<Tensor>{reshape(g, orig)};
              },
              "reshape");
}

Tensor permute(const Tensor& a, const std::vector<long>& dims) {
  if (static_cast<long>(dims.size()) != a.dim())
    throw contract_error("permute: dims rank mismatch");
  Shape out(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) out[i] = a.shape()[dims[i]];
  auto in_strides = strides_of(a.shape());
  std::vector<long> src_strides(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) src_strides[i] = in_strides[dims[i]];
  std::vector<double> data(a.numel());
  const auto& da = a.data();
  for_each_single(out, src_strides, [&](long lin, long oa) { data[lin] = da[oa]; });
  std::vector<long> inv(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) inv[dims[i]] = static_cast<long>(i);
  return make(std::move(out), std::move(data), {a},
              [inv](const Tensor& g) {
                return std::vector<Tensor>{permute(g, inv)};
              },
              "permute");
}

Tensor transpose_last2(const Tensor& a) {
  if (a.dim() < 2) throw contract_error("transpose_last2: rank < 2");
  std::vector<long> dims(a.dim());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[a.dim() - 2], dims[a.dim() - 1]);
  return permute(a, dims);
}

Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw contract_error("concat: no inputs");
  Shape out = parts[0].shape();
  long total = 0;
  for (const Tensor& p : parts) {
    if (p.dim() != static_cast<long>(out.size()))
      throw contract_error("concat: rank mismatch");
    for (long d = 0; d < p.dim(); ++d)
      if (d != axis && p.shape()[d] != out[d])
        throw contract_error("concat: extent mismatch off-axis");
    total += p.shape()[axis];
  }
  out[axis] = total;
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= out[d];
  for (long d = axis + 1; d < static_cast<long>(out.size()); ++d) inner *= out[d];
  std::vector<double> data(numel_of(out));
  long pos = 0;
  for (const Tensor& p : parts) {
    long ext = p.shape()[axis];
    const auto& dp = p.data();
    for (long o = 0; o < outer; ++o)
      std::copy(dp.begin() + o * ext * inner, dp.begin() + (o + 1) * ext * inner,
                data.begin() + (o * total + pos) * inner);
    pos += ext;
  }
  std::vector<long> extents;
  for (const Tensor& p : parts) extents.push_back(p.shape()[axis]);
  return make(std::move(out), std::move(data), parts,
              [extents, axis](const Tensor& g) {
                std::vector<Tensor> grads;
                long start = 0;
                for (long e : extents) {
                  grads.push_back(slice(g, axis, start, start + e));
                  start += e;
                }
                return grads;
              },
              "concat");
}

Tensor slice(const Tensor& a, long axis, long start, long end) {
  if (axis < 0 || axis >= a.dim() || start < 0 || end > a.shape()[axis] || start >= end)
    throw contract_error("slice: bad range");
  Shape out = a.shape();
  out[axis] = end - start;
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (long d = axis + 1; d < a.dim(); ++d) inner *= a.shape()[d];
  long ext = a.shape()[axis];
  std::vector<double> data(numel_of(out));
  const auto& da = a.data();
  for (long o = 0; o < outer; ++o)
    std::copy(da.begin() + (o * ext + start) * inner, da.begin() + (o * ext + end) * inner,
              data.begin() + o * (end - start) * inner);
  Shape full = a.shape();
  return make(std::move(out), std::move(data), {a},
              [full, axis, start](const Tensor& g) {
                return std::vector<Tensor>{embed_slice(g, full, axis, start)};
              },
              "slice");
}

namespace {
// Inverse of slice: place g into zeros of `full` at [start, start+len) on axis.
Tensor embed_slice(const Tensor& g, const Shape& full, long axis, long start) {
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= full[d];
  for (long d = axis + 1; d < static_cast<long>(full.size()); ++d) inner *= full[d];
  long ext = full[axis];
  long len = g.shape()[axis];
  std::vector<double> data(numel_of(full), 0.0);
  const auto& dg = g.data();
  for (long o = 0; o < outer; ++o)
    std::copy(dg.begin() + o * len * inner, dg.begin() + (o + 1) * len * inner,
              data.begin() + (o * ext + start) * inner);
  return make(full, std::move(data), {g},
              [axis, start, len](const Tensor& gg) {
                return std::vector<Tensor>{slice(gg, axis, start, start + len)};
              },
              "embed_slice");
}
}  // namespace

Tensor index_select(const Tensor& a, long axis, const std::vector<long>& indices) {
  if (axis < 0 || axis >= a.dim()) throw contract_error("index_select: bad axis");
  long ext = a.shape()[axis];
  for (long i : indices)
    if (i < 0 || i >= ext) throw contract_error("index_select: index out of range");
  Shape out = a.shape();
  out[axis] = static_cast<long>(indices.size());
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (long d = axis + 1; d < a.dim(); ++d) inner *= a.shape()[d];
  std::vector<double> data(numel_of(out));
  const auto& da = a.data();
  for (long o = 0; o < outer; ++o)
    for (size_t x = 0; x < indices.size(); ++x)
      std::copy(da.begin() + (o * ext + indices[x]) * inner,
                da.begin() + (o * ext + indices[x] + 1) * inner,
                data.begin() + (o * indices.size() + x) * inner);
  Shape full = a.shape();
  // backward: scatter-add rows of g back into a zeros tensor of a's shape
  return make(std::move(out), std::move(data), {a},
              [full, axis, indices](const Tensor& g) {
                long outer2 = 1, inner2 = 1;
                for (long d = 0; d < axis; ++d) outer2 *= full[d];
                for (long d = axis + 1; d < static_cast<long>(full.size()); ++d)
                  inner2 *= full[d];
                long ext2 = full[axis];
                std::vector<double> data2(numel_of(full), 0.0);
                const auto& dg = g.data();
                for (long o = 0; o < outer2; ++o)
                  for (size_t x = 0; x < indices.size(); ++x)
                    for (long i = 0; i < inner2; ++i)
                      data2[(o * ext2 + indices[x]) * inner2 + i] +=
                          dg[(o * indices.size() + x) * inner2 + i];
                Tensor scattered =
                    make(full, std::move(data2), {g},
                         [axis, indices](const Tensor& gg) {
                           return std::vector<Tensor>{index_select(gg, axis, indices)};
                         },
                         "index_scatter");
                return std::vector<Tensor>{scattered};
              },
              "index_select");
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Shape check = broadcast_shapes(a.shape(), shape, "broadcast_to");
  if (check != shape) throw contract_error("broadcast_to: incompatible target");
  auto sa = effective_strides(a.shape(), shape);
  std::vector<double> data(numel_of(shape));
  const auto& da = a.data();
  for_each_single(shape, sa, [&](long lin, long oa) { data[lin] = da[oa]; });
  Shape orig = a.shape();
  return make(shape, std::move(data), {a},
              [orig](const Tensor& g) {
                return std::vector<Tensor>{reduce_to(g, orig)};
              },
              "broadcast_to");
}

Tensor permute_elements(const Tensor& a, std::shared_ptr<const std::vector<long>> map,
                        Shape out_shape) {
  if (static_cast<long>(map->size()) != a.numel() || numel_of(out_shape) != a.numel())
    throw contract_error("permute_elements: size mismatch");
  std::vector<double> data(a.numel());
  const auto& da = a.data();
  for (long i = 0; i < a.numel(); ++i) data[i] = da[(*map)[i]];
  auto inv = std::make_shared<std::vector<long>>(a.numel());
  for (long i = 0; i < a.numel(); ++i) (*inv)[(*map)[i]] = i;
  Shape orig = a.shape();
  return make(std::move(out_shape), std::move(data), {a},
              [inv, orig](const Tensor& g) {
                return std::vector<Tensor>{permute_elements(g, inv, orig)};
              },
              "permute_elements");
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Shape orig = a.shape();
  return make(Shape{}, {s}, {a},
              [orig](const Tensor& g) {
                return std::vector<Tensor>{broadcast_to(g, orig)};
              },
              "sum");
}

Tensor sum(const Tensor& a, long axis, bool keepdim) {
  if (axis < 0) axis += a.dim();
  if (axis < 0 || axis >= a.dim()) throw contract_error("sum: bad axis");
  Shape out = a.shape();
  out[axis] = 1;
  long outer = 1, inner = 1;
  for (long d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (long d = axis + 1; d < a.dim(); ++d) inner *= a.shape()[d];
  long ext = a.shape()[axis];
  std::vector<double> data(outer * inner, 0.0);
  const auto& da = a.data();
  for (long o = 0; o < outer; ++o)
    for (long x = 0; x < ext; ++x)
      for (long i = 0; i < inner; ++i)
        data[o * inner + i] += da[(o * ext + x) * inner + i];
  Shape kept = out;
  if (!keepdim) out.erase(out.begin() + axis);
  Shape orig = a.shape();
  return make(std::move(out), std::move(data), {a},
              [orig, kept](const Tensor& g) {
                return std::vector<Tensor>{broadcast_to(reshape(g, kept), orig)};
              },
              "sum_axis");
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, long axis, bool keepdim) {
  long ax = axis < 0 ? axis + a.dim() : axis;
  return mul(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) throw contract_error("matmul: rank < 2");
  long m = a.shape()[a.dim() - 2], k = a.shape()[a.dim() - 1];
  long k2 = b.shape()[b.dim() - 2], n = b.shape()[b.dim() - 1];
  if (k != k2)
    throw contract_error("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shapes(abatch, bbatch, "matmul");
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  // strides to the start of each matrix within the batch
  std::vector<long> sa(batch.size(), 0), sb(batch.size(), 0);
  {
    auto fa = strides_of(a.shape());
    auto fb = strides_of(b.shape());
    size_t offa = batch.size() - abatch.size();
    for (size_t d = 0; d < abatch.size(); ++d)
      if (abatch[d] != 1) sa[offa + d] = fa[d];
    size_t offb = batch.size() - bbatch.size();
    for (size_t d = 0; d < bbatch.size(); ++d)
      if (bbatch[d] != 1) sb[offb + d] = fb[d];
  }
  std::vector<double> data(numel_of(out), 0.0);
  const auto& da = a.data();
  const auto& db = b.data();
  long mat = m * n;
  for_each_pair(batch, sa, sb, [&](long lin, long oa, long ob) {
    double* C = data.data() + lin * mat;
    const double* A = da.data() + oa;
    const double* B = db.data() + ob;
    for (long i = 0; i < m; ++i)
      for (long kk = 0; kk < k; ++kk) {
        double av = A[i * k + kk];
        const double* Br = B + kk * n;
        double* Cr = C + i * n;
        for (long j = 0; j < n; ++j) Cr[j] += av * Br[j];
      }
  });
  return make(std::move(out), std::move(data), {a, b},
              [a, b](const Tensor& g) {
                Tensor ga = reduce_to(matmul(g, transpose_last2(b)), a.shape());
                Tensor gb = reduce_to(matmul(transpose_last2(a), g), b.shape());
                return std::vector<Tensor>{ga, gb};
              },
              "matmul");
}

Tensor softmax_lastdim(const Tensor& a) {
  // constant max-shift for stability; a constant offset does not change the
  // softmax value or its derivatives
  long inner = a.shape().back();
  long outer = a.numel() / inner;
  std::vector<double> mx(outer);
  const auto& da = a.data();
  for (long o = 0; o < outer; ++o) {
    double m = da[o * inner];
    for (long i = 1; i < inner; ++i) m = std::max(m, da[o * inner + i]);
    mx[o] = m;
  }
  Shape mshape = a.shape();
  mshape.back() = 1;
  Tensor shift = constant_like(mshape, std::move(mx));
  Tensor e = exp_(sub(a, shift));
  Tensor s = sum(e, -1, true);
  return div(e, s);
}

Tensor layer_norm(const Tensor& a, double eps) {
  Tensor mu = mean(a, -1, true);
  Tensor xc = sub(a, mu);
  Tensor var = mean(mul(xc, xc), -1, true);
  return div(xc, sqrt_(add(var, eps)));
}

// ---- losses ----------------------------------------------------------------

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  if (pred.shape() != target.shape())
    throw contract_error("smooth_l1: shape mismatch " + shape_str(pred.shape()) +
                         " vs " + shape_str(target.shape()));
  if (beta <= 0.0) throw contract_error("smooth_l1: beta must be > 0");
  Tensor d = sub(pred, target);
  long n = d.numel();
  // branch selection is data-dependent but constant w.r.t. the graph
  std::vector<double> quad(n), lin(n), off(n);
  const auto& dd = d.data();
  for (long i = 0; i < n; ++i) {
    double v = dd[i];
    if (std::abs(v) < beta) {
      quad[i] = 0.5 / beta;
      lin[i] = 0.0;
      off[i] = 0.0;
    } else {
      quad[i] = 0.0;
      lin[i] = v >= 0.0 ? 1.0 : -1.0;
      off[i] = -0.5 * beta;
    }
  }
  Tensor q = constant_like(d.shape(), std::move(quad));
  Tensor l = constant_like(d.shape(), std::move(lin));
  Tensor o = constant_like(d.shape(), std::move(off));
  Tensor elem = add(add(mul(q, mul(d, d)), mul(l, d)), o);
  return mean(elem);
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw contract_error("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  Tensor d = sub(pred, target);
  return mean(mul(d, d));
}

// ---- autodiff --------------------------------------------------------------

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  if (output.numel() != 1)
    throw contract_error("grad: output must be scalar, got " +
                         shape_str(output.shape()));
  using Node = detail::Node;
  // postorder DFS over grad-requiring subgraph
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  {
    std::vector<std::pair<Node*, size_t>> stack;
    Node* root = output.node().get();
    if (root->requires_grad) stack.emplace_back(root, 0);
    while (!stack.empty()) {
      auto& [node, child] = stack.back();
      if (child == 0 && visited.count(node)) {
        stack.pop_back();
        continue;
      }
      if (child < node->parents.size()) {
        Node* p = node->parents[child].node().get();
        ++child;
        if (p->requires_grad && !visited.count(p)) stack.emplace_back(p, 0);
      } else {
        visited.insert(node);
        topo.push_back(node);
        stack.pop_back();
      }
    }
  }
  std::unordered_map<Node*, Tensor> gmap;
  if (output.node()->requires_grad)
    gmap[output.node().get()] = Tensor::full(output.shape(), 1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    auto git = gmap.find(n);
    if (git == gmap.end() || !n->backward) continue;
    std::vector<Tensor> pgrads = n->backward(git->second);
    if (pgrads.size() != n->parents.size())
      throw contract_error("grad: backward arity mismatch in op " + std::string(n->op));
    for (size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].node().get();
      if (!p->requires_grad) continue;
      auto pit = gmap.find(p);
      if (pit == gmap.end())
        gmap.emplace(p, pgrads[i]);
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }
  std::vector<Tensor> results;
  results.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    auto it = gmap.find(in.node().get());
    Tensor g = it != gmap.end() ? it->second : Tensor::zeros(in.shape());
    if (!all_finite(g))
      throw numeric_error("grad: non-finite gradient for input of op " +
                          std::string(in.node()->op));
    results.push_back(create_graph ? g : g.detach());
  }
  return results;
}

Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double eps) {
  if (eps <= 0.0) throw contract_error("numeric_grad: eps must be > 0");
  std::vector<double> g(x.numel());
  std::vector<double> base = x.data();
  for (long i = 0; i < x.numel(); ++i) {
    std::vector<double> up = base, dn = base;
    up[i] += eps;
    dn[i] -= eps;
    double fu = f(Tensor::from_data(x.shape(), std::move(up)));
    double fd = f(Tensor::from_data(x.shape(), std::move(dn)));
    g[i] = (fu - fd) / (2.0 * eps);
  }
  return Tensor::from_data(x.shape(), std::move(g));
}

// ---- misc ------------------------------------------------------------------

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const std::string& context) {
  if (!all_finite(t)) throw numeric_error("non-finite values in " + context);
}

}  // namespace ebm
