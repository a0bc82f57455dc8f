#include "gpal/ops.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpal::diff {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void op_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

bool tracing(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins) {
    if (t->node()->needs_grad) return true;
  }
  return false;
}

Tensor traced_output(const char* op, std::initializer_list<const Tensor*> ins, Tensor out,
                     std::function<void(const double*, const std::vector<double*>&)> backward) {
  if (tracing(ins)) {
    out.node()->leaf = false;
    out.node()->needs_grad = true;
    TapeEntry e;
    e.op = op;
    for (const Tensor* t : ins) e.inputs.push_back(t->node());
    e.output = out.node();
    e.backward = std::move(backward);
    Tape::active()->record(std::move(e));
  }
  return out;
}

// Broadcast relation for element-wise ops: equal, scalar, or suffix.
enum class Bcast { Equal, BScalar, AScalar, BSuffix, ASuffix };

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::Equal;
  if (b.numel() == 1) return Bcast::BScalar;
  if (a.numel() == 1) return Bcast::AScalar;
  if (is_suffix(b.shape(), a.shape())) return Bcast::BSuffix;
  if (is_suffix(a.shape(), b.shape())) return Bcast::ASuffix;
  op_error(op, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " are not broadcastable");
}

template <class Fwd, class BwdA, class BwdB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd f, BwdA dfa, BwdB dfb) {
  const Bcast mode = classify(op, a, b);
  const bool a_big = (mode == Bcast::Equal || mode == Bcast::BScalar || mode == Bcast::BSuffix);
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  const std::size_t n = big.numel();
  const std::size_t m = small.numel();

  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  if (mode == Bcast::Equal) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
  } else if (a_big) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i % m]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i % m], pb[i]);
  }

  NodePtr an = a.node(), bn = b.node();
  return traced_output(op, {&a, &b}, Tensor::from_data(big.shape(), std::move(out)),
                       [an, bn, mode, n, m, dfa, dfb](const double* gout, const std::vector<double*>& gin) {
                         const double* pa = an->data.data();
                         const double* pb = bn->data.data();
                         const bool a_big =
                             (mode == Bcast::Equal || mode == Bcast::BScalar || mode == Bcast::BSuffix);
                         if (gin[0]) {
                           double* ga = gin[0];
                           if (a_big) {
                             if (mode == Bcast::Equal) {
                               for (std::size_t i = 0; i < n; ++i) ga[i] += gout[i] * dfa(pa[i], pb[i]);
                             } else {
                               for (std::size_t i = 0; i < n; ++i) ga[i] += gout[i] * dfa(pa[i], pb[i % m]);
                             }
                           } else {
                             for (std::size_t i = 0; i < n; ++i) ga[i % m] += gout[i] * dfa(pa[i % m], pb[i]);
                           }
                         }
                         if (gin[1]) {
                           double* gb = gin[1];
                           if (mode == Bcast::Equal) {
                             for (std::size_t i = 0; i < n; ++i) gb[i] += gout[i] * dfb(pa[i], pb[i]);
                           } else if (a_big) {
                             for (std::size_t i = 0; i < n; ++i) gb[i % m] += gout[i] * dfb(pa[i], pb[i % m]);
                           } else {
                             for (std::size_t i = 0; i < n; ++i) gb[i] += gout[i] * dfb(pa[i % m], pb[i]);
                           }
                         }
                       });
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Copy with two axes swapped; used by transpose forward and backward.
void transpose_copy(const double* src, double* dst, const Shape& in_shape, std::size_t ax_a,
                    std::size_t ax_b) {
  Shape out_shape = in_shape;
  std::swap(out_shape[ax_a], out_shape[ax_b]);
  const auto in_strides = strides_of(in_shape);
  const auto out_strides = strides_of(out_shape);
  const std::size_t n = shape_numel(in_shape);
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> oidx(rank, 0);
  for (std::size_t lin = 0; lin < n; ++lin) {
    std::size_t rem = lin;
    for (std::size_t d = 0; d < rank; ++d) {
      oidx[d] = rem / out_strides[d];
      rem %= out_strides[d];
    }
    std::swap(oidx[ax_a], oidx[ax_b]);
    std::size_t src_off = 0;
    for (std::size_t d = 0; d < rank; ++d) src_off += oidx[d] * in_strides[d];
    dst[lin] = src[src_off];
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& t, double c) {
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] * c;
  return traced_output("scale", {&t}, Tensor::from_data(t.shape(), std::move(out)),
                       [c, n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[i] * c;
                       });
}

Tensor sqrt(const Tensor& t) {
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(p[i]);
  Tensor result = Tensor::from_data(t.shape(), std::move(out));
  NodePtr on = result.node();
  return traced_output("sqrt", {&t}, std::move(result),
                       [on, n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         const double* y = on->data.data();
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[i] * 0.5 / y[i];
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) op_error("matmul", "operands must have rank >= 2");
  const std::size_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  const std::size_t Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
  if (K != Kb) {
    op_error("matmul", "inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
  }

  const bool shared_rhs = (sb.size() == 2 && sa.size() >= 2);
  std::size_t batch = 1;
  if (shared_rhs) {
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  } else {
    if (sa.size() != sb.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      op_error("matmul", "leading axes disagree: " + shape_str(sa) + " x " + shape_str(sb));
    }
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  }

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(N);
  std::vector<double> out(batch * M * N);

  if (shared_rhs) {
    CMapMat A(a.data(), static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(K));
    CMapMat B(b.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
    MapMat C(out.data(), static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(N));
    C.noalias() = A * B;
  } else {
    for (std::size_t g = 0; g < batch; ++g) {
      CMapMat A(a.data() + g * M * K, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(K));
      CMapMat B(b.data() + g * K * N, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
      MapMat C(out.data() + g * M * N, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
      C.noalias() = A * B;
    }
  }

  NodePtr an = a.node(), bn = b.node();
  return traced_output(
      "matmul", {&a, &b}, Tensor::from_data(std::move(out_shape), std::move(out)),
      [an, bn, M, K, N, batch, shared_rhs](const double* gout, const std::vector<double*>& gin) {
        if (gin[0]) {
          if (shared_rhs) {
            CMapMat G(gout, static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(N));
            CMapMat B(bn->data.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
            MapMat GA(gin[0], static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(K));
            GA.noalias() += G * B.transpose();
          } else {
            for (std::size_t g = 0; g < batch; ++g) {
              CMapMat G(gout + g * M * N, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
              CMapMat B(bn->data.data() + g * K * N, static_cast<Eigen::Index>(K),
                        static_cast<Eigen::Index>(N));
              MapMat GA(gin[0] + g * M * K, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(K));
              GA.noalias() += G * B.transpose();
            }
          }
        }
        if (gin[1]) {
          if (shared_rhs) {
            CMapMat A(an->data.data(), static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(K));
            CMapMat G(gout, static_cast<Eigen::Index>(batch * M), static_cast<Eigen::Index>(N));
            MapMat GB(gin[1], static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
            GB.noalias() += A.transpose() * G;
          } else {
            for (std::size_t g = 0; g < batch; ++g) {
              CMapMat A(an->data.data() + g * M * K, static_cast<Eigen::Index>(M),
                        static_cast<Eigen::Index>(K));
              CMapMat G(gout + g * M * N, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
              MapMat GB(gin[1] + g * K * N, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
              GB.noalias() += A.transpose() * G;
            }
          }
        }
      });
}

Tensor transpose(const Tensor& t, std::size_t axis_a, std::size_t axis_b) {
  const Shape& s = t.shape();
  if (axis_a >= s.size() || axis_b >= s.size()) {
    op_error("transpose", "axes out of range for shape " + shape_str(s));
  }
  Shape out_shape = s;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  std::vector<double> out(t.numel());
  transpose_copy(t.data(), out.data(), s, axis_a, axis_b);

  return traced_output("transpose", {&t}, Tensor::from_data(out_shape, std::move(out)),
                       [out_shape, axis_a, axis_b, n = t.numel()](const double* gout,
                                                                  const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         std::vector<double> tmp(n);
                         transpose_copy(gout, tmp.data(), out_shape, axis_a, axis_b);
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += tmp[i];
                       });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    op_error("reshape", "cannot reshape " + shape_str(t.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(t.data(), t.data() + t.numel());
  return traced_output("reshape", {&t}, Tensor::from_data(std::move(shape), std::move(out)),
                       [n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[i];
                       });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) op_error("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) op_error("concat", "axis out of range");
  Shape out_shape = first;
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) op_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        op_error("concat", "shape mismatch at axis " + std::to_string(d));
      }
    }
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;  // in units of inner, within one outer block
  std::vector<std::size_t> part_axis(parts.size());
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& p = parts[pi];
    const std::size_t pa = p.shape()[axis];
    part_axis[pi] = pa;
    const double* src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * pa * inner, src + (o + 1) * pa * inner,
                out.data() + (o * axis_total + offset) * inner);
    }
    offset += pa;
  }

  std::vector<NodePtr> in_nodes;
  for (const Tensor& p : parts) in_nodes.push_back(p.node());

  Tensor result = Tensor::from_data(std::move(out_shape), std::move(out));
  bool needs = false;
  if (Tape::active()) {
    for (const auto& n : in_nodes) needs = needs || n->needs_grad;
  }
  if (needs) {
    result.node()->leaf = false;
    result.node()->needs_grad = true;
    TapeEntry e;
    e.op = "concat";
    e.inputs = in_nodes;
    e.output = result.node();
    e.backward = [outer, inner, axis_total, part_axis](const double* gout,
                                                       const std::vector<double*>& gin) {
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < part_axis.size(); ++pi) {
        const std::size_t pa = part_axis[pi];
        if (gin[pi]) {
          for (std::size_t o = 0; o < outer; ++o) {
            const double* g = gout + (o * axis_total + offset) * inner;
            double* dst = gin[pi] + o * pa * inner;
            for (std::size_t i = 0; i < pa * inner; ++i) dst[i] += g[i];
          }
        }
        offset += pa;
      }
    };
    Tape::active()->record(std::move(e));
  }
  return result;
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = t.shape();
  if (axis >= s.size()) op_error("slice", "axis out of range");
  if (len == 0 || start + len > s[axis]) {
    op_error("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of bounds for axis size " + std::to_string(s[axis]));
  }
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];

  std::vector<double> out(outer * len * inner);
  const double* src = t.data();
  const std::size_t axis_size = s[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + (o * axis_size + start) * inner, src + (o * axis_size + start + len) * inner,
              out.data() + o * len * inner);
  }

  return traced_output("slice", {&t}, Tensor::from_data(std::move(out_shape), std::move(out)),
                       [outer, inner, axis_size, start, len](const double* gout,
                                                             const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t o = 0; o < outer; ++o) {
                           const double* g = gout + o * len * inner;
                           double* dst = gin[0] + (o * axis_size + start) * inner;
                           for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                         }
                       });
}

Tensor embedding_gather(const Tensor& table, std::span<const std::int32_t> ids) {
  const Shape& s = table.shape();
  if (s.size() != 2) op_error("embedding_gather", "table must be rank 2, got " + shape_str(s));
  const std::size_t rows = s[0], d = s[1];
  if (ids.empty()) op_error("embedding_gather", "empty id list");
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      op_error("embedding_gather",
               "index " + std::to_string(id) + " out of range for table with " + std::to_string(rows) + " rows");
    }
  }
  std::vector<double> out(ids.size() * d);
  const double* src = table.data();
  for (std::size_t j = 0; j < ids.size(); ++j) {
    std::copy(src + static_cast<std::size_t>(ids[j]) * d, src + (static_cast<std::size_t>(ids[j]) + 1) * d,
              out.data() + j * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return traced_output("embedding_gather", {&table},
                       Tensor::from_data({ids.size(), d}, std::move(out)),
                       [saved = std::move(saved), d](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t j = 0; j < saved.size(); ++j) {
                           double* dst = gin[0] + static_cast<std::size_t>(saved[j]) * d;
                           const double* g = gout + j * d;
                           for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
                         }
                       });
}

namespace {

std::pair<std::size_t, std::size_t> row_view(const char* op, const Tensor& t) {
  if (t.ndim() < 1) op_error(op, "needs at least one axis");
  const std::size_t d = t.shape().back();
  return {t.numel() / d, d};
}

}  // namespace

Tensor softmax(const Tensor& t) {
  auto [rows, d] = row_view("softmax", t);
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = p + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (std::size_t i = 0; i < d; ++i) y[i] /= z;
  }
  Tensor result = Tensor::from_data(t.shape(), std::move(out));
  NodePtr on = result.node();
  return traced_output("softmax", {&t}, std::move(result),
                       [on, rows = rows, d = d](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         const double* y = on->data.data();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* yr = y + r * d;
                           const double* gr = gout + r * d;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
                           double* dst = gin[0] + r * d;
                           for (std::size_t i = 0; i < d; ++i) dst[i] += yr[i] * (gr[i] - dot);
                         }
                       });
}

Tensor log_softmax(const Tensor& t) {
  auto [rows, d] = row_view("log_softmax", t);
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = p + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] - lse;
  }
  Tensor result = Tensor::from_data(t.shape(), std::move(out));
  NodePtr on = result.node();
  return traced_output("log_softmax", {&t}, std::move(result),
                       [on, rows = rows, d = d](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         const double* y = on->data.data();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* yr = y + r * d;
                           const double* gr = gout + r * d;
                           double gsum = 0.0;
                           for (std::size_t i = 0; i < d; ++i) gsum += gr[i];
                           double* dst = gin[0] + r * d;
                           for (std::size_t i = 0; i < d; ++i) dst[i] += gr[i] - std::exp(yr[i]) * gsum;
                         }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  auto [rows, d] = row_view("layer_norm", x);
  if (gain.numel() != d || bias.numel() != d) {
    op_error("layer_norm", "gain/bias must match last axis " + std::to_string(d));
  }
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* p = x.data();
  const double* g = gain.data();
  const double* b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = p + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* hr = xhat->data() + r * d;
    double* yr = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      hr[i] = (xr[i] - mu) * is;
      yr[i] = g[i] * hr[i] + b[i];
    }
  }
  NodePtr gn = gain.node();
  return traced_output(
      "layer_norm", {&x, &gain, &bias}, Tensor::from_data(x.shape(), std::move(out)),
      [xhat, inv_std, gn, rows = rows, d = d](const double* gout, const std::vector<double*>& gin) {
        const double* gw = gn->data.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* hr = xhat->data() + r * d;
          const double* gr = gout + r * d;
          if (gin[1]) {
            for (std::size_t i = 0; i < d; ++i) gin[1][i] += gr[i] * hr[i];
          }
          if (gin[2]) {
            for (std::size_t i = 0; i < d; ++i) gin[2][i] += gr[i];
          }
          if (gin[0]) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              const double dh = gr[i] * gw[i];
              mean_dh += dh;
              mean_dh_h += dh * hr[i];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            double* dst = gin[0] + r * d;
            const double is = (*inv_std)[r];
            for (std::size_t i = 0; i < d; ++i) {
              const double dh = gr[i] * gw[i];
              dst[i] += is * (dh - mean_dh - hr[i] * mean_dh_h);
            }
          }
        }
      });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] > 0.0 ? p[i] : 0.0;
  NodePtr tn = t.node();
  return traced_output("relu", {&t}, Tensor::from_data(t.shape(), std::move(out)),
                       [tn, n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         const double* x = tn->data.data();
                         for (std::size_t i = 0; i < n; ++i) {
                           if (x[i] > 0.0) gin[0][i] += gout[i];
                         }
                       });
}

Tensor gelu(const Tensor& t) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(t.numel());
  const double* p = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * p[i] * (1.0 + std::erf(p[i] * kInvSqrt2));
  }
  NodePtr tn = t.node();
  return traced_output("gelu", {&t}, Tensor::from_data(t.shape(), std::move(out)),
                       [tn, n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         const double* x = tn->data.data();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
                           const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
                           gin[0][i] += gout[i] * (cdf + x[i] * pdf);
                         }
                       });
}

Tensor mask_fill(const Tensor& t, const Tensor& mask, double value) {
  const std::size_t n = t.numel();
  const std::size_t m = mask.numel();
  if (!(mask.shape() == t.shape() || m == 1 || is_suffix(mask.shape(), t.shape()))) {
    op_error("mask_fill", "mask shape " + shape_str(mask.shape()) + " does not broadcast over " +
                              shape_str(t.shape()));
  }
  std::vector<double> out(n);
  const double* p = t.data();
  const double* mk = mask.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = mk[i % m] != 0.0 ? value : p[i];
  std::vector<double> saved_mask(mk, mk + m);
  return traced_output("mask_fill", {&t}, Tensor::from_data(t.shape(), std::move(out)),
                       [saved_mask = std::move(saved_mask), n, m](const double* gout,
                                                                  const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < n; ++i) {
                           if (saved_mask[i % m] == 0.0) gin[0][i] += gout[i];
                         }
                       });
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  const double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) acc += p[i];
  return traced_output("sum", {&t}, Tensor::scalar(acc),
                       [n = t.numel()](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[0];
                       });
}

Tensor mean(const Tensor& t) {
  double acc = 0.0;
  const double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) acc += p[i];
  const double inv = 1.0 / static_cast<double>(t.numel());
  return traced_output("mean", {&t}, Tensor::scalar(acc * inv),
                       [n = t.numel(), inv](const double* gout, const std::vector<double*>& gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[0] * inv;
                       });
}

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                                 std::optional<std::int32_t> ignore_id) {
  if (logits.ndim() < 2) op_error("cross_entropy_from_logits", "logits must be rank >= 2");
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.numel() / v;
  if (targets.size() != rows) {
    op_error("cross_entropy_from_logits", "expected " + std::to_string(rows) + " targets, got " +
                                              std::to_string(targets.size()));
  }
  const double* p = logits.data();
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> row_lse(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t tgt = targets[r];
    if (ignore_id && tgt == *ignore_id) continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v) {
      op_error("cross_entropy_from_logits", "target id " + std::to_string(tgt) + " out of range");
    }
    const double* x = p + r * v;
    double mx = x[0];
    for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < v; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    row_lse[r] = lse;
    total += lse - x[tgt];
    ++counted;
  }
  if (counted == 0) op_error("cross_entropy_from_logits", "no target rows to average over");
  const double inv = 1.0 / static_cast<double>(counted);

  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  NodePtr ln = logits.node();
  return traced_output(
      "cross_entropy_from_logits", {&logits}, Tensor::scalar(total * inv),
      [ln, saved = std::move(saved), row_lse = std::move(row_lse), rows, v, inv,
       ignore_id](const double* gout, const std::vector<double*>& gin) {
        if (!gin[0]) return;
        const double* p = ln->data.data();
        const double g = gout[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::int32_t tgt = saved[r];
          if (ignore_id && tgt == *ignore_id) continue;
          const double* x = p + r * v;
          double* dst = gin[0] + r * v;
          const double lse = row_lse[r];
          for (std::size_t i = 0; i < v; ++i) {
            dst[i] += g * std::exp(x[i] - lse);
          }
          dst[tgt] -= g;
        }
      });
}

}  // namespace gpal::diff
