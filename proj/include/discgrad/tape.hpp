#pragma once
// Define-by-run reverse-mode autodiff on dense rank-0/1/2 tensors.
//
// The tape owns one flat value arena; each recorded node is a view into it.
// reset() keeps capacity, so a tape rebuilt inside a sampling loop stops
// allocating after the first iteration. backward() may be called any number
// of times on any scalar node of the same tape; it never mutates the tape.
// Gradients accumulate into GradVec slots keyed by the id passed to leaf().

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "core.hpp"

namespace discgrad {

enum class Op : uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  matmul,
  sigmoid,
  tanh,
  log,
  exp,
  neg,
  sum,
  mean,
  broadcast,
  select,
  square,
  softplus,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::matmul: return "matmul";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::neg: return "neg";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::broadcast: return "broadcast";
    case Op::select: return "select";
    case Op::square: return "square";
    case Op::softplus: return "softplus";
  }
  return "?";
}

class Tape;

struct Value {
  Tape* tape = nullptr;
  int32_t id = -1;
  Shape shape;

  bool valid() const { return tape != nullptr && id >= 0; }
  inline Tensor value() const;
  inline double scalar() const;
};

// Dense gradient accumulator: slot index == leaf id. Unset slots have empty
// data. Slot order is the deterministic iteration order everywhere.
struct GradVec {
  std::vector<Tensor> slots;

  explicit GradVec(size_t n = 0) : slots(n) {}

  void resize(size_t n) {
    if (n > slots.size()) slots.resize(n);
  }
  bool set(size_t i) const { return i < slots.size() && !slots[i].data.empty(); }

  void ensure(size_t i, Shape s) {
    resize(i + 1);
    if (slots[i].data.empty()) slots[i] = Tensor::zeros(s);
    else
      require(slots[i].shape == s, "gradient slot shape mismatch");
  }
  void accumulate(size_t i, Shape s, const double* g, double scale) {
    ensure(i, s);
    double* dst = slots[i].data.data();
    int64_t n = s.numel();
    for (int64_t k = 0; k < n; ++k) dst[k] += scale * g[k];
  }
  void add_scaled(const GradVec& o, double a) {
    resize(o.slots.size());
    for (size_t i = 0; i < o.slots.size(); ++i) {
      if (o.slots[i].data.empty()) continue;
      ensure(i, o.slots[i].shape);
      double* dst = slots[i].data.data();
      const double* src = o.slots[i].data.data();
      for (size_t k = 0; k < o.slots[i].data.size(); ++k) dst[k] += a * src[k];
    }
  }
  void scale(double a) {
    for (auto& t : slots)
      for (double& v : t.data) v *= a;
  }
  void clear() {
    for (auto& t : slots) t = Tensor{};
  }
  double dot(const GradVec& o) const {
    double acc = 0.0;
    size_t n = std::min(slots.size(), o.slots.size());
    for (size_t i = 0; i < n; ++i) {
      if (slots[i].data.empty() || o.slots[i].data.empty()) continue;
      for (size_t k = 0; k < slots[i].data.size(); ++k) acc += slots[i].data[k] * o.slots[i].data[k];
    }
    return acc;
  }
  double squared_l2() const { return dot(*this); }
  double max_abs() const {
    double m = 0.0;
    for (auto& t : slots)
      for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const {
    for (auto& t : slots)
      if (!t.all_finite()) return false;
    return true;
  }
};

class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  void reset() {
    nodes_.clear();
    val_.clear();
  }
  size_t node_count() const { return nodes_.size(); }

  // ---- recording ----

  Value leaf(int32_t slot_id, const Tensor& t) {
    require(slot_id >= 0, "leaf slot id must be non-negative");
    Value v = alloc(Op::leaf, t.shape);
    std::memcpy(val_.data() + nodes_[v.id].off, t.data.data(), t.data.size() * sizeof(double));
    nodes_[v.id].slot = slot_id;
    check(v);
    return v;
  }

  Value constant(const Tensor& t) {
    Value v = alloc(Op::constant, t.shape);
    std::memcpy(val_.data() + nodes_[v.id].off, t.data.data(), t.data.size() * sizeof(double));
    check(v);
    return v;
  }
  Value constant(double x) { return constant(Tensor::scalar(x)); }

  Value add(Value a, Value b) { return binary(Op::add, a, b); }
  Value sub(Value a, Value b) { return binary(Op::sub, a, b); }
  Value mul(Value a, Value b) { return binary(Op::mul, a, b); }
  Value div(Value a, Value b) { return binary(Op::div, a, b); }

  Value matmul(Value a, Value b) {
    const Shape& sa = a.shape;
    const Shape& sb = b.shape;
    Shape out;
    if (sa.rank == 2 && sb.rank == 2) {
      require(sa.d1 == sb.d0, "matmul inner dims " + sa.str() + " x " + sb.str());
      out = Shape{sa.d0, sb.d1};
    } else if (sa.rank == 2 && sb.rank == 1) {
      require(sa.d1 == sb.d0, "matmul inner dims " + sa.str() + " x " + sb.str());
      out = Shape{sa.d0};
    } else if (sa.rank == 1 && sb.rank == 2) {
      require(sa.d0 == sb.d0, "matmul inner dims " + sa.str() + " x " + sb.str());
      out = Shape{sb.d1};
    } else {
      fail("matmul requires rank-2 or (2,1)/(1,2) operands, got " + sa.str() + " x " + sb.str());
    }
    Value v = alloc(Op::matmul, out, a.id, b.id);
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    double* po = ptr(v.id);
    int64_t m = (sa.rank == 2) ? sa.d0 : 1;
    int64_t k = (sa.rank == 2) ? sa.d1 : sa.d0;
    int64_t n = (sb.rank == 2) ? sb.d1 : 1;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t q = 0; q < k; ++q) acc += pa[i * k + q] * pb[q * n + j];
        po[i * n + j] = acc;
      }
    check(v);
    return v;
  }

  Value sigmoid(Value a) {
    return unary(Op::sigmoid, a, [](double x) { return discgrad::sigmoid(x); });
  }
  Value tanh(Value a) {
    return unary(Op::tanh, a, [](double x) { return std::tanh(x); });
  }
  Value log(Value a) {
    return unary(Op::log, a, [](double x) { return std::log(x); });
  }
  Value exp(Value a) {
    return unary(Op::exp, a, [](double x) { return std::exp(x); });
  }
  Value neg(Value a) {
    return unary(Op::neg, a, [](double x) { return -x; });
  }
  Value square(Value a) {
    return unary(Op::square, a, [](double x) { return x * x; });
  }
  Value softplus(Value a) {
    return unary(Op::softplus, a, [](double x) { return discgrad::softplus(x); });
  }

  Value sum(Value a) { return reduce(Op::sum, a); }
  Value mean(Value a) { return reduce(Op::mean, a); }

  Value broadcast(Value a, Shape s) {
    require(a.shape.rank == 0, "broadcast source must be a scalar, got " + a.shape.str());
    Value v = alloc(Op::broadcast, s, a.id);
    double x = *ptr(a.id);
    double* po = ptr(v.id);
    for (int64_t i = 0; i < s.numel(); ++i) po[i] = x;
    check(v);
    return v;
  }

  // out[i] = cond[i] != 0 ? a[i] : b[i]. No gradient flows into cond.
  Value select(Value cond, Value a, Value b) {
    require(cond.shape == a.shape && a.shape == b.shape, "select shape mismatch");
    Value v = alloc(Op::select, a.shape, a.id, b.id, cond.id);
    const double* pc = ptr(cond.id);
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    double* po = ptr(v.id);
    for (int64_t i = 0; i < a.shape.numel(); ++i) po[i] = (pc[i] != 0.0) ? pa[i] : pb[i];
    check(v);
    return v;
  }

  // ---- reading ----

  Tensor read(Value v) const {
    const Node& n = nodes_[(size_t)v.id];
    Tensor t{n.shape};
    std::memcpy(t.data.data(), val_.data() + n.off, t.data.size() * sizeof(double));
    return t;
  }
  double read_scalar(Value v) const {
    require(v.shape.numel() == 1, "read_scalar on shape " + v.shape.str());
    return val_[nodes_[(size_t)v.id].off];
  }
  const double* data(Value v) const { return val_.data() + nodes_[(size_t)v.id].off; }

  // ---- backward ----

  // Accumulates scale * d(root)/d(leaf) into out[slot] for every leaf.
  // The tape itself is left untouched.
  void backward(Value root, GradVec& out, double scale = 1.0) {
    require(root.valid() && root.tape == this, "backward on foreign value");
    require(root.shape.rank == 0, "backward root must be a scalar, got " + root.shape.str());
    adj_.assign(val_.size(), 0.0);
    reach_.assign(nodes_.size(), 0);
    reach_[(size_t)root.id] = 1;
    adj_[nodes_[(size_t)root.id].off] = scale;

    for (int32_t i = root.id; i >= 0; --i) {
      if (!reach_[(size_t)i]) continue;
      const Node& nd = nodes_[(size_t)i];
      const double* g = adj_.data() + nd.off;
      const double* y = val_.data() + nd.off;
      int64_t n = nd.shape.numel();
      switch (nd.op) {
        case Op::constant: break;
        case Op::leaf:
          out.accumulate((size_t)nd.slot, nd.shape, g, 1.0);
          break;
        case Op::add: {
          spread(nd.a, g, n, +1.0);
          spread(nd.b, g, n, +1.0);
          break;
        }
        case Op::sub: {
          spread(nd.a, g, n, +1.0);
          spread(nd.b, g, n, -1.0);
          break;
        }
        case Op::mul: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          double* db = adj_.data() + nodes_[(size_t)nd.b].off;
          const double* xa = val_.data() + nodes_[(size_t)nd.a].off;
          const double* xb = val_.data() + nodes_[(size_t)nd.b].off;
          for (int64_t k = 0; k < n; ++k) {
            da[k] += g[k] * xb[k];
            db[k] += g[k] * xa[k];
          }
          mark(nd.a);
          mark(nd.b);
          break;
        }
        case Op::div: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          double* db = adj_.data() + nodes_[(size_t)nd.b].off;
          const double* xb = val_.data() + nodes_[(size_t)nd.b].off;
          for (int64_t k = 0; k < n; ++k) {
            da[k] += g[k] / xb[k];
            db[k] -= g[k] * y[k] / xb[k];
          }
          mark(nd.a);
          mark(nd.b);
          break;
        }
        case Op::matmul: {
          const Node& na = nodes_[(size_t)nd.a];
          const Node& nb = nodes_[(size_t)nd.b];
          int64_t m = (na.shape.rank == 2) ? na.shape.d0 : 1;
          int64_t k = (na.shape.rank == 2) ? na.shape.d1 : na.shape.d0;
          int64_t c = (nb.shape.rank == 2) ? nb.shape.d1 : 1;
          double* da = adj_.data() + na.off;
          double* db = adj_.data() + nb.off;
          const double* xa = val_.data() + na.off;
          const double* xb = val_.data() + nb.off;
          // dA += G B^T, dB += A^T G (with rank-1 operands folded in).
          for (int64_t i2 = 0; i2 < m; ++i2)
            for (int64_t q = 0; q < k; ++q) {
              double acc = 0.0;
              for (int64_t j = 0; j < c; ++j) acc += g[i2 * c + j] * xb[q * c + j];
              da[i2 * k + q] += acc;
            }
          for (int64_t q = 0; q < k; ++q)
            for (int64_t j = 0; j < c; ++j) {
              double acc = 0.0;
              for (int64_t i2 = 0; i2 < m; ++i2) acc += xa[i2 * k + q] * g[i2 * c + j];
              db[q * c + j] += acc;
            }
          mark(nd.a);
          mark(nd.b);
          break;
        }
        case Op::sigmoid: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += g[k] * y[k] * (1.0 - y[k]);
          mark(nd.a);
          break;
        }
        case Op::tanh: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += g[k] * (1.0 - y[k] * y[k]);
          mark(nd.a);
          break;
        }
        case Op::log: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          const double* xa = val_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += g[k] / xa[k];
          mark(nd.a);
          break;
        }
        case Op::exp: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += g[k] * y[k];
          mark(nd.a);
          break;
        }
        case Op::neg: {
          spread(nd.a, g, n, -1.0);
          break;
        }
        case Op::square: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          const double* xa = val_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += 2.0 * g[k] * xa[k];
          mark(nd.a);
          break;
        }
        case Op::softplus: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          const double* xa = val_.data() + nodes_[(size_t)nd.a].off;
          for (int64_t k = 0; k < n; ++k) da[k] += g[k] * discgrad::sigmoid(xa[k]);
          mark(nd.a);
          break;
        }
        case Op::sum: {
          const Node& na = nodes_[(size_t)nd.a];
          double* da = adj_.data() + na.off;
          for (int64_t k = 0; k < na.shape.numel(); ++k) da[k] += g[0];
          mark(nd.a);
          break;
        }
        case Op::mean: {
          const Node& na = nodes_[(size_t)nd.a];
          double* da = adj_.data() + na.off;
          double w = g[0] / (double)na.shape.numel();
          for (int64_t k = 0; k < na.shape.numel(); ++k) da[k] += w;
          mark(nd.a);
          break;
        }
        case Op::broadcast: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          double acc = 0.0;
          for (int64_t k = 0; k < n; ++k) acc += g[k];
          da[0] += acc;
          mark(nd.a);
          break;
        }
        case Op::select: {
          double* da = adj_.data() + nodes_[(size_t)nd.a].off;
          double* db = adj_.data() + nodes_[(size_t)nd.b].off;
          const double* pc = val_.data() + nodes_[(size_t)nd.c].off;
          for (int64_t k = 0; k < n; ++k) {
            if (pc[k] != 0.0) da[k] += g[k];
            else
              db[k] += g[k];
          }
          mark(nd.a);
          mark(nd.b);
          break;
        }
      }
    }
  }

 private:
  struct Node {
    Op op;
    int32_t a = -1, b = -1, c = -1;
    int32_t slot = -1;
    Shape shape;
    size_t off = 0;
  };

  Value alloc(Op op, Shape s, int32_t a = -1, int32_t b = -1, int32_t c = -1) {
    Node nd;
    nd.op = op;
    nd.a = a;
    nd.b = b;
    nd.c = c;
    nd.shape = s;
    nd.off = val_.size();
    val_.resize(val_.size() + (size_t)s.numel());
    nodes_.push_back(nd);
    return Value{this, (int32_t)(nodes_.size() - 1), s};
  }

  template <class F>
  Value unary(Op op, Value a, F f) {
    requireSame(a);
    Value v = alloc(op, a.shape, a.id);
    const double* pa = ptr(a.id);
    double* po = ptr(v.id);
    for (int64_t i = 0; i < a.shape.numel(); ++i) po[i] = f(pa[i]);
    check(v);
    return v;
  }

  Value binary(Op op, Value a, Value b) {
    requireSame(a);
    requireSame(b);
    require(a.shape == b.shape,
            std::string(op_name(op)) + " shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Value v = alloc(op, a.shape, a.id, b.id);
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    double* po = ptr(v.id);
    int64_t n = a.shape.numel();
    switch (op) {
      case Op::add:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case Op::sub:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case Op::mul:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
      case Op::div:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
        break;
      default: fail("not a binary op");
    }
    check(v);
    return v;
  }

  Value reduce(Op op, Value a) {
    requireSame(a);
    Value v = alloc(op, Shape::scalar(), a.id);
    const double* pa = ptr(a.id);
    double acc = 0.0;
    for (int64_t i = 0; i < a.shape.numel(); ++i) acc += pa[i];
    *ptr(v.id) = (op == Op::mean) ? acc / (double)a.shape.numel() : acc;
    check(v);
    return v;
  }

  void requireSame(Value v) const {
    require(v.valid() && v.tape == this, "value does not belong to this tape");
  }

  double* ptr(int32_t id) { return val_.data() + nodes_[(size_t)id].off; }
  const double* ptr(int32_t id) const { return val_.data() + nodes_[(size_t)id].off; }

  void check(Value v) {
    if (!check_finite_) return;
    const Node& nd = nodes_[(size_t)v.id];
    const double* p = val_.data() + nd.off;
    for (int64_t i = 0; i < nd.shape.numel(); ++i) {
      if (!std::isfinite(p[i])) {
        fail(std::string("non-finite value produced by op '") + op_name(nd.op) + "' at node " +
             std::to_string(v.id) + " shape " + nd.shape.str());
      }
    }
  }

  void mark(int32_t id) { reach_[(size_t)id] = 1; }

  void spread(int32_t id, const double* g, int64_t n, double sgn) {
    double* d = adj_.data() + nodes_[(size_t)id].off;
    for (int64_t k = 0; k < n; ++k) d[k] += sgn * g[k];
    mark(id);
  }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<uint8_t> reach_;
  bool check_finite_ = true;
};

inline Tensor Value::value() const { return tape->read(*this); }
inline double Value::scalar() const { return tape->read_scalar(*this); }

// ---- free-function sugar ----

inline Value operator+(Value a, Value b) { return a.tape->add(a, b); }
inline Value operator-(Value a, Value b) { return a.tape->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.tape->mul(a, b); }
inline Value operator/(Value a, Value b) { return a.tape->div(a, b); }
inline Value operator-(Value a) { return a.tape->neg(a); }

inline Value scalarlike(Value ref, double x) {
  Value c = ref.tape->constant(x);
  return ref.shape.rank == 0 ? c : ref.tape->broadcast(c, ref.shape);
}
inline Value operator+(Value a, double b) { return a + scalarlike(a, b); }
inline Value operator+(double a, Value b) { return scalarlike(b, a) + b; }
inline Value operator-(Value a, double b) { return a - scalarlike(a, b); }
inline Value operator-(double a, Value b) { return scalarlike(b, a) - b; }
inline Value operator*(Value a, double b) { return a * scalarlike(a, b); }
inline Value operator*(double a, Value b) { return scalarlike(b, a) * b; }
inline Value operator/(Value a, double b) { return a / scalarlike(a, b); }
inline Value operator/(double a, Value b) { return scalarlike(b, a) / b; }

inline Value matmul(Value a, Value b) { return a.tape->matmul(a, b); }
inline Value sigmoid(Value a) { return a.tape->sigmoid(a); }
inline Value tanh(Value a) { return a.tape->tanh(a); }
inline Value log(Value a) { return a.tape->log(a); }
inline Value exp(Value a) { return a.tape->exp(a); }
inline Value sum(Value a) { return a.tape->sum(a); }
inline Value mean(Value a) { return a.tape->mean(a); }
inline Value square(Value a) { return a.tape->square(a); }
inline Value softplus(Value a) { return a.tape->softplus(a); }
inline Value select(Value cond, Value a, Value b) { return cond.tape->select(cond, a, b); }
inline Value broadcast_to(Value a, Shape s) { return a.tape->broadcast(a, s); }

}  // namespace discgrad
