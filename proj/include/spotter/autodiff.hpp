#pragma once

#include <functional>
#include <memory>

#include "spotter/tensor.hpp"

namespace spotter::ad {

struct Node;
using Var = std::shared_ptr<Node>;

// Reverse-mode autodiff node. Graphs are built per forward pass and discarded
// after backward(); parameters are long-lived nodes whose grads accumulate.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on demand, same shape as val
  std::vector<Var> parents;
  std::function<void(Node&)> backfn;  // pulls node.grad into parents' grads
  bool requiresGrad = true;
  int64_t id = 0;

  Tensor& ensureGrad() {
    if (grad.v.empty()) grad = Tensor::zeros(val.shape);
    return grad;
  }
};

Var makeVar(Tensor value, bool requiresGrad = true);
Var constant(Tensor value);

// Runs reverse accumulation from a scalar (or any) root with seed grad 1.
void backward(const Var& root);
void zeroGrad(const std::vector<Var>& params);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double k);
Var addScalar(const Var& a, double k);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var absval(const Var& a);
Var div(const Var& a, const Var& b);
Var powc(const Var& a, double c);  // a must stay positive when c < 1
Var emin(const Var& a, const Var& b);
Var emax(const Var& a, const Var& b);
Var clampMin(const Var& a, double lo);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var sumAxis1(const Var& a);  // [B,P,D] -> [B,D]

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var concatRows(const std::vector<Var>& parts);              // stack along axis 0 (leading dim)
Var sliceRows(const Var& a, int begin, int count);          // along axis 0
Var gatherRows(const Var& a, std::vector<int> idx);         // along collapsed row axis
Var sliceLastDim(const Var& a, int begin, int count);
Var concatLastDim(const std::vector<Var>& parts);
Var transpose01(const Var& a);  // [A,B,...] -> [B,A,...]
Var addTileRows(const Var& x, const Var& t);  // x [A,B,C] + t [B,C] per leading index

// ---- linear algebra ----
// a viewed as [rows, k] (leading dims collapsed), b is [k, n]; result keeps
// a's leading dims with last dim n.
Var matmul(const Var& a, const Var& b);
Var addRowBroadcast(const Var& x, const Var& bias);  // bias shape [lastDim]
Var mulRowBroadcast(const Var& x, const Var& w);     // w shape [lastDim]
Var linear(const Var& x, const Var& w, const Var& bias);  // x·w + bias
Var mulBcastLastDim(const Var& x, const Var& w);  // x [B,P,D] * w [B,P] -> [B,P,D]

// ---- nonlinears with fused backward ----
Var softmaxLastDim(const Var& x);
Var logSoftmaxLastDim(const Var& x);
Var layerNorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Multi-head scaled dot-product attention over a batch of sequences.
// q [B,Tq,C], k,v [B,Tk,C]; optional additive mask [Tq,Tk] or [B,Tq,Tk].
// If saveWeights != nullptr the post-softmax weights [B,heads,Tq,Tk] are
// copied there (forward only).
Var multiheadAttention(const Var& q, const Var& k, const Var& v, int heads,
                       const Tensor* mask = nullptr, Tensor* saveWeights = nullptr);

// x [Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);

// map [H,W,C], pts [K,2] normalized so pixel (i,j) center is
// ((j+0.5)/W, (i+0.5)/H); zero padding outside. Differentiable in both.
Var bilinearSample(const Var& map, const Var& pts);

double gradNorm(const std::vector<Var>& params);

}  // namespace spotter::ad
