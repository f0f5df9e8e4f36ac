#include "spotter/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace spotter::ad {

namespace {

std::atomic<int64_t> g_nextId{1};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

MapM asMat(Tensor& t, int rows, int cols) { return MapM(t.v.data(), rows, cols); }
CMapM asMat(const Tensor& t, int rows, int cols) { return CMapM(t.v.data(), rows, cols); }

Var node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->parents = std::move(parents);
  n->backfn = std::move(backfn);
  n->requiresGrad = false;
  for (const auto& p : n->parents)
    if (p->requiresGrad) n->requiresGrad = true;
  if (!n->requiresGrad) n->backfn = nullptr;
  n->id = g_nextId.fetch_add(1);
  return n;
}

void checkSameShape(const Var& a, const Var& b, const char* opname) {
  if (!a->val.sameShape(b->val))
    throw std::invalid_argument(std::string(opname) + ": shape mismatch");
}

Var elementwiseBinary(const Var& a, const Var& b, const char* name,
                      double (*f)(double, double),
                      void (*df)(double, double, double, double&, double&)) {
  checkSameShape(a, b, name);
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = f(a->val.v[i], b->val.v[i]);
  return node(std::move(out), {a, b}, [f, df](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    Tensor* ga = pa.requiresGrad ? &pa.ensureGrad() : nullptr;
    Tensor* gb = pb.requiresGrad ? &pb.ensureGrad() : nullptr;
    for (int64_t i = 0; i < n.val.size(); ++i) {
      double da = 0, db = 0;
      df(pa.val.v[i], pb.val.v[i], n.grad.v[i], da, db);
      if (ga) ga->v[i] += da;
      if (gb) gb->v[i] += db;
    }
  });
}

Var elementwiseUnary(const Var& a, double (*f)(double),
                     double (*dfdx)(double x, double y)) {
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = f(a->val.v[i]);
  return node(std::move(out), {a}, [dfdx](Node& n) {
    auto& pa = *n.parents[0];
    if (!pa.requiresGrad) return;
    auto& g = pa.ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i)
      g.v[i] += n.grad.v[i] * dfdx(pa.val.v[i], n.val.v[i]);
  });
}

}  // namespace

Var makeVar(Tensor value, bool requiresGrad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->requiresGrad = requiresGrad;
  n->id = g_nextId.fetch_add(1);
  return n;
}

Var constant(Tensor value) { return makeVar(std::move(value), false); }

void backward(const Var& root) {
  root->ensureGrad();
  std::fill(root->grad.v.begin(), root->grad.v.end(), 1.0);

  // Collect reachable nodes; creation order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requiresGrad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) {
    if (n->backfn && !n->grad.v.empty()) n->backfn(*n);
  }
}

void zeroGrad(const std::vector<Var>& params) {
  for (const auto& p : params) p->grad = Tensor();
}

Var add(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

Var sub(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

Var mul(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

Var div(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Var powc(const Var& a, double c) {
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = std::pow(a->val.v[i], c);
  return node(std::move(out), {a}, [c](Node& n) {
    auto& pa = *n.parents[0];
    auto& g = pa.ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i)
      g.v[i] += n.grad.v[i] * c * std::pow(pa.val.v[i], c - 1.0);
  });
}

Var emin(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "emin", [](double x, double y) { return x < y ? x : y; },
      [](double x, double y, double g, double& da, double& db) {
        if (x <= y) da = g; else db = g;
      });
}

Var emax(const Var& a, const Var& b) {
  return elementwiseBinary(
      a, b, "emax", [](double x, double y) { return x > y ? x : y; },
      [](double x, double y, double g, double& da, double& db) {
        if (x >= y) da = g; else db = g;
      });
}

Var neg(const Var& a) {
  return elementwiseUnary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double k) {
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = a->val.v[i] * k;
  return node(std::move(out), {a}, [k](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i) g.v[i] += n.grad.v[i] * k;
  });
}

Var addScalar(const Var& a, double k) {
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = a->val.v[i] + k;
  return node(std::move(out), {a}, [](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i) g.v[i] += n.grad.v[i];
  });
}

Var relu(const Var& a) {
  return elementwiseUnary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return elementwiseUnary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return elementwiseUnary(a, [](double x) { return std::exp(x); },
                          [](double, double y) { return y; });
}

Var log(const Var& a) {
  return elementwiseUnary(a, [](double x) { return std::log(x); },
                          [](double x, double) { return 1.0 / x; });
}

Var absval(const Var& a) {
  return elementwiseUnary(a, [](double x) { return std::fabs(x); },
                          [](double x, double) { return x >= 0 ? 1.0 : -1.0; });
}

Var clampMin(const Var& a, double lo) {
  Tensor out(a->val.shape);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = std::max(a->val.v[i], lo);
  return node(std::move(out), {a}, [lo](Node& n) {
    auto& pa = *n.parents[0];
    auto& g = pa.ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i)
      if (pa.val.v[i] > lo) g.v[i] += n.grad.v[i];
  });
}

Var sum(const Var& a) {
  double s = 0;
  for (double x : a->val.v) s += x;
  return node(Tensor::scalar(s), {a}, [](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (auto& x : g.v) x += n.grad.v[0];
  });
}

Var mean(const Var& a) {
  double s = 0;
  for (double x : a->val.v) s += x;
  const double inv = 1.0 / (double)a->val.size();
  return node(Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (auto& x : g.v) x += n.grad.v[0] * inv;
  });
}

Var sumAxis1(const Var& a) {
  const auto& s = a->val.shape;
  if (s.size() != 3) throw std::invalid_argument("sumAxis1 expects rank-3");
  const int B = s[0], P = s[1], D = s[2];
  Tensor out({B, D});
  for (int b = 0; b < B; ++b)
    for (int p = 0; p < P; ++p)
      for (int d = 0; d < D; ++d) out.v[(int64_t)b * D + d] += a->val.v[((int64_t)b * P + p) * D + d];
  return node(std::move(out), {a}, [B, P, D](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < P; ++p)
        for (int d = 0; d < D; ++d)
          g.v[((int64_t)b * P + p) * D + d] += n.grad.v[(int64_t)b * D + d];
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::sizeFor(shape) != a->val.size())
    throw std::invalid_argument("reshape: size mismatch");
  Tensor out(std::move(shape), a->val.v);
  return node(std::move(out), {a}, [](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i) g.v[i] += n.grad.v[i];
  });
}

Var concatRows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concatRows: empty");
  std::vector<int> shape = parts[0]->val.shape;
  int lead = 0;
  for (const auto& p : parts) {
    if (std::vector<int>(p->val.shape.begin() + 1, p->val.shape.end()) !=
        std::vector<int>(shape.begin() + 1, shape.end()))
      throw std::invalid_argument("concatRows: trailing-shape mismatch");
    lead += p->val.shape[0];
  }
  shape[0] = lead;
  Tensor out(shape);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->val.v.begin(), p->val.v.end(), out.v.begin() + off);
    off += p->val.size();
  }
  return node(std::move(out), parts, [](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      if (p->requiresGrad) {
        auto& g = p->ensureGrad();
        for (int64_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[off + i];
      }
      off += p->val.size();
    }
  });
}

Var sliceRows(const Var& a, int begin, int count) {
  std::vector<int> shape = a->val.shape;
  if (begin < 0 || begin + count > shape[0]) throw std::out_of_range("sliceRows");
  int64_t stride = a->val.size() / shape[0];
  shape[0] = count;
  Tensor out(shape);
  std::copy(a->val.v.begin() + begin * stride, a->val.v.begin() + (begin + count) * stride,
            out.v.begin());
  return node(std::move(out), {a}, [begin, stride](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int64_t i = 0; i < n.val.size(); ++i) g.v[begin * stride + i] += n.grad.v[i];
  });
}

Var gatherRows(const Var& a, std::vector<int> idx) {
  const int cols = a->val.cols();
  const int rows = a->val.rows();
  Tensor out({(int)idx.size(), cols});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows) throw std::out_of_range("gatherRows");
    std::copy(a->val.v.begin() + (int64_t)idx[i] * cols,
              a->val.v.begin() + (int64_t)(idx[i] + 1) * cols, out.v.begin() + (int64_t)i * cols);
  }
  return node(std::move(out), {a}, [idx = std::move(idx), cols](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < cols; ++c)
        g.v[(int64_t)idx[i] * cols + c] += n.grad.v[(int64_t)i * cols + c];
  });
}

Var sliceLastDim(const Var& a, int begin, int count) {
  const int cols = a->val.cols();
  const int rows = a->val.rows();
  if (begin < 0 || begin + count > cols) throw std::out_of_range("sliceLastDim");
  std::vector<int> shape = a->val.shape;
  shape.back() = count;
  Tensor out(shape);
  for (int r = 0; r < rows; ++r)
    std::copy(a->val.v.begin() + (int64_t)r * cols + begin,
              a->val.v.begin() + (int64_t)r * cols + begin + count,
              out.v.begin() + (int64_t)r * count);
  return node(std::move(out), {a}, [begin, count, cols, rows](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < count; ++c)
        g.v[(int64_t)r * cols + begin + c] += n.grad.v[(int64_t)r * count + c];
  });
}

Var concatLastDim(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concatLastDim: empty");
  const int rows = parts[0]->val.rows();
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p->val.rows() != rows) throw std::invalid_argument("concatLastDim: row mismatch");
    widths.push_back(p->val.cols());
    total += p->val.cols();
  }
  std::vector<int> shape = parts[0]->val.shape;
  shape.back() = total;
  Tensor out(shape);
  for (int r = 0; r < rows; ++r) {
    int off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const int w = widths[pi];
      std::copy(parts[pi]->val.v.begin() + (int64_t)r * w,
                parts[pi]->val.v.begin() + (int64_t)(r + 1) * w,
                out.v.begin() + (int64_t)r * total + off);
      off += w;
    }
  }
  return node(std::move(out), parts, [rows, total, widths](Node& n) {
    for (int r = 0; r < rows; ++r) {
      int off = 0;
      for (size_t pi = 0; pi < n.parents.size(); ++pi) {
        const int w = widths[pi];
        if (n.parents[pi]->requiresGrad) {
          auto& g = n.parents[pi]->ensureGrad();
          for (int c = 0; c < w; ++c)
            g.v[(int64_t)r * w + c] += n.grad.v[(int64_t)r * total + off + c];
        }
        off += w;
      }
    }
  });
}

Var addTileRows(const Var& x, const Var& t) {
  const auto& s = x->val.shape;
  if (s.size() < 2) throw std::invalid_argument("addTileRows: rank");
  const int A = s[0];
  const int64_t inner = x->val.size() / A;
  if (t->val.size() != inner) throw std::invalid_argument("addTileRows: tile size");
  Tensor out(s);
  for (int a = 0; a < A; ++a)
    for (int64_t i = 0; i < inner; ++i) out.v[(int64_t)a * inner + i] = x->val.v[(int64_t)a * inner + i] + t->val.v[i];
  return node(std::move(out), {x, t}, [A, inner](Node& n) {
    if (n.parents[0]->requiresGrad) {
      auto& g = n.parents[0]->ensureGrad();
      for (int64_t i = 0; i < n.val.size(); ++i) g.v[i] += n.grad.v[i];
    }
    if (n.parents[1]->requiresGrad) {
      auto& g = n.parents[1]->ensureGrad();
      for (int a = 0; a < A; ++a)
        for (int64_t i = 0; i < inner; ++i) g.v[i] += n.grad.v[(int64_t)a * inner + i];
    }
  });
}

Var transpose01(const Var& a) {
  const auto& s = a->val.shape;
  if (s.size() < 2) throw std::invalid_argument("transpose01: rank < 2");
  const int A = s[0], B = s[1];
  const int64_t inner = a->val.size() / ((int64_t)A * B);
  std::vector<int> shape = s;
  std::swap(shape[0], shape[1]);
  Tensor out(shape);
  for (int i = 0; i < A; ++i)
    for (int j = 0; j < B; ++j)
      std::copy(a->val.v.begin() + ((int64_t)i * B + j) * inner,
                a->val.v.begin() + ((int64_t)i * B + j + 1) * inner,
                out.v.begin() + ((int64_t)j * A + i) * inner);
  return node(std::move(out), {a}, [A, B, inner](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int i = 0; i < A; ++i)
      for (int j = 0; j < B; ++j)
        for (int64_t k = 0; k < inner; ++k)
          g.v[((int64_t)i * B + j) * inner + k] += n.grad.v[((int64_t)j * A + i) * inner + k];
  });
}

Var matmul(const Var& a, const Var& b) {
  const int k = a->val.cols();
  const int m = a->val.rows();
  if (b->val.ndim() != 2 || b->val.shape[0] != k)
    throw std::invalid_argument("matmul: inner dim mismatch");
  const int n = b->val.shape[1];
  std::vector<int> shape = a->val.shape;
  shape.back() = n;
  Tensor out(shape);
  if (n == 1) {
    // Width-1 products would hit Eigen's matrix-vector kernel, whose rounding
    // depends on the row's position within the batch. A fixed-order dot keeps
    // each output row independent of how many rows precede it.
    const double* bv = b->val.v.data();
    for (int r = 0; r < m; ++r) {
      const double* ar = a->val.v.data() + (int64_t)r * k;
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += ar[j] * bv[j];
      out.v[r] = s;
    }
  } else {
    asMat(out, m, n).noalias() = asMat(a->val, m, k) * asMat(b->val, k, n);
  }
  return node(std::move(out), {a, b}, [m, k, n](Node& n_) {
    auto& pa = *n_.parents[0];
    auto& pb = *n_.parents[1];
    // Skip leading rows whose output grad is identically zero. They add
    // nothing, and trimming keeps GEMM rounding independent of zero-grad
    // rows prepended to the batch (e.g. masked-off slots): Eigen's kernels
    // may round a row differently depending on its position in the product.
    int r0 = 0;
    while (r0 < m) {
      const double* row = n_.grad.v.data() + (int64_t)r0 * n;
      bool zero = true;
      for (int j = 0; j < n && zero; ++j) zero = row[j] == 0.0;
      if (!zero) break;
      ++r0;
    }
    if (r0 == m) return;
    if (pa.requiresGrad)
      MapM(pa.ensureGrad().v.data() + (int64_t)r0 * k, m - r0, k).noalias() +=
          CMapM(n_.grad.v.data() + (int64_t)r0 * n, m - r0, n) *
          asMat(pb.val, k, n).transpose();
    if (pb.requiresGrad) {
      if (r0 < m)
        asMat(pb.ensureGrad(), k, n).noalias() +=
            CMapM(pa.val.v.data() + (int64_t)r0 * k, m - r0, k).transpose() *
            CMapM(n_.grad.v.data() + (int64_t)r0 * n, m - r0, n);
    }
  });
}

Var addRowBroadcast(const Var& x, const Var& bias) {
  const int cols = x->val.cols();
  if (bias->val.size() != cols) throw std::invalid_argument("addRowBroadcast: bias size");
  Tensor out(x->val.shape);
  const int rows = x->val.rows();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.v[(int64_t)r * cols + c] = x->val.v[(int64_t)r * cols + c] + bias->val.v[c];
  return node(std::move(out), {x, bias}, [rows, cols](Node& n) {
    if (n.parents[0]->requiresGrad) {
      auto& g = n.parents[0]->ensureGrad();
      for (int64_t i = 0; i < n.val.size(); ++i) g.v[i] += n.grad.v[i];
    }
    if (n.parents[1]->requiresGrad) {
      auto& g = n.parents[1]->ensureGrad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g.v[c] += n.grad.v[(int64_t)r * cols + c];
    }
  });
}

Var mulRowBroadcast(const Var& x, const Var& w) {
  const int cols = x->val.cols();
  if (w->val.size() != cols) throw std::invalid_argument("mulRowBroadcast: size");
  Tensor out(x->val.shape);
  const int rows = x->val.rows();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.v[(int64_t)r * cols + c] = x->val.v[(int64_t)r * cols + c] * w->val.v[c];
  return node(std::move(out), {x, w}, [rows, cols](Node& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    if (px.requiresGrad) {
      auto& g = px.ensureGrad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          g.v[(int64_t)r * cols + c] += n.grad.v[(int64_t)r * cols + c] * pw.val.v[c];
    }
    if (pw.requiresGrad) {
      auto& g = pw.ensureGrad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          g.v[c] += n.grad.v[(int64_t)r * cols + c] * px.val.v[(int64_t)r * cols + c];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  return addRowBroadcast(matmul(x, w), bias);
}

Var mulBcastLastDim(const Var& x, const Var& w) {
  const auto& s = x->val.shape;
  if (s.size() != 3) throw std::invalid_argument("mulBcastLastDim expects rank-3 x");
  const int B = s[0], P = s[1], D = s[2];
  if (w->val.size() != (int64_t)B * P) throw std::invalid_argument("mulBcastLastDim: w size");
  Tensor out(s);
  for (int64_t bp = 0; bp < (int64_t)B * P; ++bp)
    for (int d = 0; d < D; ++d) out.v[bp * D + d] = x->val.v[bp * D + d] * w->val.v[bp];
  return node(std::move(out), {x, w}, [B, P, D](Node& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    if (px.requiresGrad) {
      auto& g = px.ensureGrad();
      for (int64_t bp = 0; bp < (int64_t)B * P; ++bp)
        for (int d = 0; d < D; ++d) g.v[bp * D + d] += n.grad.v[bp * D + d] * pw.val.v[bp];
    }
    if (pw.requiresGrad) {
      auto& g = pw.ensureGrad();
      for (int64_t bp = 0; bp < (int64_t)B * P; ++bp)
        for (int d = 0; d < D; ++d) g.v[bp] += n.grad.v[bp * D + d] * px.val.v[bp * D + d];
    }
  });
}

namespace {
void softmaxRow(const double* x, double* y, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    s += y[i];
  }
  const double inv = 1.0 / s;
  for (int i = 0; i < n; ++i) y[i] *= inv;
}
}  // namespace

Var softmaxLastDim(const Var& x) {
  const int cols = x->val.cols(), rows = x->val.rows();
  Tensor out(x->val.shape);
  for (int r = 0; r < rows; ++r)
    softmaxRow(x->val.v.data() + (int64_t)r * cols, out.v.data() + (int64_t)r * cols, cols);
  return node(std::move(out), {x}, [rows, cols](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int r = 0; r < rows; ++r) {
      const double* y = n.val.v.data() + (int64_t)r * cols;
      const double* gy = n.grad.v.data() + (int64_t)r * cols;
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
      for (int c = 0; c < cols; ++c) g.v[(int64_t)r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Var logSoftmaxLastDim(const Var& x) {
  const int cols = x->val.cols(), rows = x->val.rows();
  Tensor out(x->val.shape);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x->val.v.data() + (int64_t)r * cols;
    double m = xr[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double s = 0;
    for (int c = 0; c < cols; ++c) s += std::exp(xr[c] - m);
    const double lse = m + std::log(s);
    for (int c = 0; c < cols; ++c) out.v[(int64_t)r * cols + c] = xr[c] - lse;
  }
  return node(std::move(out), {x}, [rows, cols](Node& n) {
    auto& g = n.parents[0]->ensureGrad();
    for (int r = 0; r < rows; ++r) {
      const double* ly = n.val.v.data() + (int64_t)r * cols;
      const double* gy = n.grad.v.data() + (int64_t)r * cols;
      double gsum = 0;
      for (int c = 0; c < cols; ++c) gsum += gy[c];
      for (int c = 0; c < cols; ++c)
        g.v[(int64_t)r * cols + c] += gy[c] - std::exp(ly[c]) * gsum;
    }
  });
}

Var layerNorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int cols = x->val.cols(), rows = x->val.rows();
  if (gamma->val.size() != cols || beta->val.size() != cols)
    throw std::invalid_argument("layerNorm: affine size");
  Tensor out(x->val.shape);
  Tensor xhat(x->val.shape);
  std::vector<double> invstd(rows);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x->val.v.data() + (int64_t)r * cols;
    double mu = 0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    double var = 0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    invstd[r] = is;
    for (int c = 0; c < cols; ++c) {
      const double xh = (xr[c] - mu) * is;
      xhat.v[(int64_t)r * cols + c] = xh;
      out.v[(int64_t)r * cols + c] = xh * gamma->val.v[c] + beta->val.v[c];
    }
  }
  return node(std::move(out), {x, gamma, beta},
              [rows, cols, xhat = std::move(xhat), invstd = std::move(invstd)](Node& n) {
                auto& px = *n.parents[0];
                auto& pg = *n.parents[1];
                auto& pb = *n.parents[2];
                for (int r = 0; r < rows; ++r) {
                  const double* gy = n.grad.v.data() + (int64_t)r * cols;
                  const double* xh = xhat.v.data() + (int64_t)r * cols;
                  if (pg.requiresGrad) {
                    auto& gg = pg.ensureGrad();
                    for (int c = 0; c < cols; ++c) gg.v[c] += gy[c] * xh[c];
                  }
                  if (pb.requiresGrad) {
                    auto& gb = pb.ensureGrad();
                    for (int c = 0; c < cols; ++c) gb.v[c] += gy[c];
                  }
                  if (px.requiresGrad) {
                    auto& gx = px.ensureGrad();
                    double s1 = 0, s2 = 0;
                    for (int c = 0; c < cols; ++c) {
                      const double gyh = gy[c] * pg.val.v[c];
                      s1 += gyh;
                      s2 += gyh * xh[c];
                    }
                    for (int c = 0; c < cols; ++c) {
                      const double gyh = gy[c] * pg.val.v[c];
                      gx.v[(int64_t)r * cols + c] +=
                          invstd[r] * (gyh - s1 / cols - xh[c] * s2 / cols);
                    }
                  }
                }
              });
}

Var multiheadAttention(const Var& q, const Var& k, const Var& v, int heads,
                       const Tensor* mask, Tensor* saveWeights) {
  const auto& qs = q->val.shape;
  const auto& ks = k->val.shape;
  if (qs.size() != 3 || ks.size() != 3 || !k->val.sameShape(v->val))
    throw std::invalid_argument("multiheadAttention: bad shapes");
  const int B = qs[0], Tq = qs[1], C = qs[2], Tk = ks[1];
  if (ks[0] != B || ks[2] != C || C % heads != 0)
    throw std::invalid_argument("multiheadAttention: dim mismatch");
  const int D = C / heads;
  const double sc = 1.0 / std::sqrt((double)D);
  bool maskPerBatch = false;
  if (mask) {
    if (mask->shape == std::vector<int>{Tq, Tk}) maskPerBatch = false;
    else if (mask->shape == std::vector<int>{B, Tq, Tk}) maskPerBatch = true;
    else throw std::invalid_argument("multiheadAttention: mask shape");
  }

  Tensor out({B, Tq, C});
  // Cached post-softmax weights, [B, heads, Tq, Tk].
  auto attn = std::make_shared<Tensor>(std::vector<int>{B, heads, Tq, Tk});
  std::vector<double> logits(Tk);
  for (int b = 0; b < B; ++b) {
    const double* mrow0 = mask ? mask->v.data() + (maskPerBatch ? (int64_t)b * Tq * Tk : 0) : nullptr;
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < Tq; ++i) {
        const double* qi = q->val.v.data() + (((int64_t)b * Tq + i) * C) + h * D;
        for (int j = 0; j < Tk; ++j) {
          const double* kj = k->val.v.data() + (((int64_t)b * Tk + j) * C) + h * D;
          double dot = 0;
          for (int d = 0; d < D; ++d) dot += qi[d] * kj[d];
          double m = mrow0 ? mrow0[(int64_t)i * Tk + j] : 0.0;
          logits[j] = dot * sc + m;
        }
        double* arow = attn->v.data() + ((((int64_t)b * heads + h) * Tq + i) * Tk);
        // softmax robust to -inf entries
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < Tk; ++j) mx = std::max(mx, logits[j]);
        double s = 0;
        for (int j = 0; j < Tk; ++j) {
          arow[j] = std::isinf(logits[j]) && logits[j] < 0 ? 0.0 : std::exp(logits[j] - mx);
          s += arow[j];
        }
        const double inv = 1.0 / s;
        double* orow = out.v.data() + (((int64_t)b * Tq + i) * C) + h * D;
        for (int d = 0; d < D; ++d) orow[d] = 0;
        for (int j = 0; j < Tk; ++j) {
          arow[j] *= inv;
          if (arow[j] == 0.0) continue;
          const double* vj = v->val.v.data() + (((int64_t)b * Tk + j) * C) + h * D;
          for (int d = 0; d < D; ++d) orow[d] += arow[j] * vj[d];
        }
      }
    }
  }
  if (saveWeights) *saveWeights = *attn;

  return node(std::move(out), {q, k, v}, [B, Tq, Tk, C, D, heads, sc, attn](Node& n) {
    auto& pq = *n.parents[0];
    auto& pk = *n.parents[1];
    auto& pv = *n.parents[2];
    Tensor* gq = pq.requiresGrad ? &pq.ensureGrad() : nullptr;
    Tensor* gk = pk.requiresGrad ? &pk.ensureGrad() : nullptr;
    Tensor* gv = pv.requiresGrad ? &pv.ensureGrad() : nullptr;
    std::vector<double> dA(Tk);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < Tq; ++i) {
          const double* go = n.grad.v.data() + (((int64_t)b * Tq + i) * C) + h * D;
          const double* arow = attn->v.data() + ((((int64_t)b * heads + h) * Tq + i) * Tk);
          // dV and dA
          double dot = 0;
          for (int j = 0; j < Tk; ++j) {
            const double* vj = pv.val.v.data() + (((int64_t)b * Tk + j) * C) + h * D;
            double da = 0;
            for (int d = 0; d < D; ++d) da += go[d] * vj[d];
            dA[j] = da;
            dot += da * arow[j];
            if (gv && arow[j] != 0.0) {
              double* gvj = gv->v.data() + (((int64_t)b * Tk + j) * C) + h * D;
              for (int d = 0; d < D; ++d) gvj[d] += arow[j] * go[d];
            }
          }
          // softmax backward -> dZ, then dQ,dK
          const double* qi = pq.val.v.data() + (((int64_t)b * Tq + i) * C) + h * D;
          double* gqi = gq ? gq->v.data() + (((int64_t)b * Tq + i) * C) + h * D : nullptr;
          for (int j = 0; j < Tk; ++j) {
            const double dz = arow[j] * (dA[j] - dot) * sc;
            if (dz == 0.0) continue;
            const double* kj = pk.val.v.data() + (((int64_t)b * Tk + j) * C) + h * D;
            if (gqi)
              for (int d = 0; d < D; ++d) gqi[d] += dz * kj[d];
            if (gk) {
              double* gkj = gk->v.data() + (((int64_t)b * Tk + j) * C) + h * D;
              for (int d = 0; d < D; ++d) gkj[d] += dz * qi[d];
            }
          }
        }
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  const auto& xs = x->val.shape;
  const auto& ws = w->val.shape;
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0])
    throw std::invalid_argument("conv2d: shapes");
  const int Cin = xs[0], H = xs[1], W = xs[2];
  const int Cout = ws[0], kh = ws[2], kw = ws[3];
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const int K = Cin * kh * kw;

  // im2col: [K, Ho*Wo]
  auto col = std::make_shared<Tensor>(std::vector<int>{K, Ho * Wo});
  for (int c = 0; c < Cin; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const int krow = (c * kh + ki) * kw + kj;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            double v = 0;
            if (ii >= 0 && ii < H && jj >= 0 && jj < W)
              v = x->val.v[((int64_t)c * H + ii) * W + jj];
            col->v[(int64_t)krow * Ho * Wo + oi * Wo + oj] = v;
          }
        }
      }

  Tensor out({Cout, Ho, Wo});
  asMat(out, Cout, Ho * Wo).noalias() = asMat(w->val, Cout, K) * asMat(*col, K, Ho * Wo);
  for (int co = 0; co < Cout; ++co)
    for (int64_t i = 0; i < (int64_t)Ho * Wo; ++i) out.v[(int64_t)co * Ho * Wo + i] += bias->val.v[co];

  return node(std::move(out), {x, w, bias},
              [Cin, H, W, Cout, kh, kw, Ho, Wo, K, stride, pad, col](Node& n) {
                auto& px = *n.parents[0];
                auto& pw = *n.parents[1];
                auto& pb = *n.parents[2];
                auto gOut = asMat(n.grad, Cout, Ho * Wo);
                if (pb.requiresGrad) {
                  auto& gb = pb.ensureGrad();
                  for (int co = 0; co < Cout; ++co)
                    for (int64_t i = 0; i < (int64_t)Ho * Wo; ++i)
                      gb.v[co] += n.grad.v[(int64_t)co * Ho * Wo + i];
                }
                if (pw.requiresGrad)
                  asMat(pw.ensureGrad(), Cout, K).noalias() +=
                      gOut * asMat(*col, K, Ho * Wo).transpose();
                if (px.requiresGrad) {
                  Tensor gcol({K, Ho * Wo});
                  asMat(gcol, K, Ho * Wo).noalias() =
                      asMat(pw.val, Cout, K).transpose() * gOut;
                  auto& gx = px.ensureGrad();
                  for (int c = 0; c < Cin; ++c)
                    for (int ki = 0; ki < kh; ++ki)
                      for (int kj = 0; kj < kw; ++kj) {
                        const int krow = (c * kh + ki) * kw + kj;
                        for (int oi = 0; oi < Ho; ++oi) {
                          const int ii = oi * stride + ki - pad;
                          if (ii < 0 || ii >= H) continue;
                          for (int oj = 0; oj < Wo; ++oj) {
                            const int jj = oj * stride + kj - pad;
                            if (jj < 0 || jj >= W) continue;
                            gx.v[((int64_t)c * H + ii) * W + jj] +=
                                gcol.v[(int64_t)krow * Ho * Wo + oi * Wo + oj];
                          }
                        }
                      }
                }
              });
}

Var bilinearSample(const Var& map, const Var& pts) {
  const auto& ms = map->val.shape;
  const auto& ps = pts->val.shape;
  if (ms.size() != 3 || ps.size() != 2 || ps[1] != 2)
    throw std::invalid_argument("bilinearSample: shapes");
  const int H = ms[0], W = ms[1], C = ms[2];
  const int K = ps[0];

  auto fetch = [&](int i, int j, int c) -> double {
    if (i < 0 || i >= H || j < 0 || j >= W) return 0.0;
    return map->val.v[((int64_t)i * W + j) * C + c];
  };

  Tensor out({K, C});
  for (int k = 0; k < K; ++k) {
    const double u = pts->val.v[2 * k] * W - 0.5;      // x -> column
    const double vv = pts->val.v[2 * k + 1] * H - 0.5; // y -> row
    const int j0 = (int)std::floor(u), i0 = (int)std::floor(vv);
    const double fu = u - j0, fv = vv - i0;
    for (int c = 0; c < C; ++c) {
      out.v[(int64_t)k * C + c] =
          (1 - fv) * ((1 - fu) * fetch(i0, j0, c) + fu * fetch(i0, j0 + 1, c)) +
          fv * ((1 - fu) * fetch(i0 + 1, j0, c) + fu * fetch(i0 + 1, j0 + 1, c));
    }
  }
  return node(std::move(out), {map, pts}, [H, W, C, K](Node& n) {
    auto& pm = *n.parents[0];
    auto& pp = *n.parents[1];
    Tensor* gm = pm.requiresGrad ? &pm.ensureGrad() : nullptr;
    Tensor* gp = pp.requiresGrad ? &pp.ensureGrad() : nullptr;
    auto fetch = [&](int i, int j, int c) -> double {
      if (i < 0 || i >= H || j < 0 || j >= W) return 0.0;
      return pm.val.v[((int64_t)i * W + j) * C + c];
    };
    auto addm = [&](int i, int j, int c, double g) {
      if (i < 0 || i >= H || j < 0 || j >= W) return;
      gm->v[((int64_t)i * W + j) * C + c] += g;
    };
    for (int k = 0; k < K; ++k) {
      const double u = pp.val.v[2 * k] * W - 0.5;
      const double vv = pp.val.v[2 * k + 1] * H - 0.5;
      const int j0 = (int)std::floor(u), i0 = (int)std::floor(vv);
      const double fu = u - j0, fv = vv - i0;
      double du = 0, dv = 0;
      for (int c = 0; c < C; ++c) {
        const double g = n.grad.v[(int64_t)k * C + c];
        if (g == 0.0) continue;
        if (gm) {
          addm(i0, j0, c, g * (1 - fv) * (1 - fu));
          addm(i0, j0 + 1, c, g * (1 - fv) * fu);
          addm(i0 + 1, j0, c, g * fv * (1 - fu));
          addm(i0 + 1, j0 + 1, c, g * fv * fu);
        }
        if (gp) {
          const double f00 = fetch(i0, j0, c), f01 = fetch(i0, j0 + 1, c);
          const double f10 = fetch(i0 + 1, j0, c), f11 = fetch(i0 + 1, j0 + 1, c);
          du += g * ((1 - fv) * (f01 - f00) + fv * (f11 - f10));
          dv += g * ((1 - fu) * (f10 - f00) + fu * (f11 - f01));
        }
      }
      if (gp) {
        gp->v[2 * k] += du * W;
        gp->v[2 * k + 1] += dv * H;
      }
    }
  });
}

double gradNorm(const std::vector<Var>& params) {
  double s = 0;
  for (const auto& p : params) {
    if (p->grad.v.empty()) continue;
    for (double g : p->grad.v) s += g * g;
  }
  return std::sqrt(s);
}

}  // namespace spotter::ad
