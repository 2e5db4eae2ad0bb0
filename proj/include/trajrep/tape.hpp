#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "trajrep/tensor.hpp"

namespace trajrep {

// Handle to a node on a Tape.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode differentiation tape. Nodes are appended in forward order,
// which is already a topological order, so backward() is a single reverse
// sweep. One tape = one computation graph; clear() (or destruction) resets it.
// Single-threaded per instance.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Gradient-tracked input (parameters).
  Var leaf(const Tensor& v);
  // Fixed input; no gradient is accumulated for it.
  Var constant(Tensor v);

  const Tensor& val(Var x) const { return nodes_[x.i]->value; }
  // Gradient after backward(); empty tensor if the node never received one.
  const Tensor& grad(Var x) const { return nodes_[x.i]->grad; }

  // --- arithmetic ---
  Var matmul(Var a, Var b);     // [m,k]x[k,n]
  Var matmul_nt(Var a, Var b);  // a * b^T: [m,k]x[n,k] -> [m,n]
  Var add(Var a, Var b);        // same shape
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);             // elementwise, same shape
  Var add_rowvec(Var m, Var v);      // [r,c] + [c] broadcast over rows
  Var scale(Var a, double s);        // constant scale
  Var scale_var(Var a, Var s);       // scale by a scalar variable
  Var reciprocal(Var a);             // elementwise 1/x
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var sin(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);  // gradient passes inside (lo, hi)
  Var sum(Var a);   // -> scalar
  Var mean(Var a);  // -> scalar

  // --- shape ---
  Var concat_cols(Var a, Var b);  // along last dim; 1-D or 2-D
  Var concat_rows(Var a, Var b);
  Var stack_rows(const std::vector<Var>& rows);  // k vectors [c] -> [k,c]
  Var transpose(Var a);
  Var reshape(Var a, std::vector<int> shape);
  Var slice_rows(Var a, int r0, int r1);
  Var slice_cols(Var a, int c0, int c1);
  Var gather_rows(Var table, const std::vector<int>& idx);

  // --- neural ops ---
  // Row-wise softmax, numerically stabilized by row-max subtraction.
  // valid (optional, length = n cols) zeroes masked columns in every row;
  // each row must keep at least one valid position.
  Var softmax_rows(Var a, const std::vector<std::uint8_t>* valid = nullptr);
  // 3x3 convolution, zero padding 1, image [H,W,Cin], kernels [3,3,Cin,Cout],
  // bias [Cout] -> [H,W,Cout].
  Var conv2d_same(Var image, Var kernels, Var bias);
  // Mean over rows of -log softmax(logits)[target].
  Var cross_entropy(Var logits, const std::vector<int>& targets);
  Var cosine(Var u, Var v);  // 1-D vectors, both nonzero
  Var l2_normalize_rows(Var a);
  Var layer_norm_rows(Var a, Var gain, Var bias);  // eps 1e-5
  // Inverted dropout; identity when p == 0.
  Var dropout(Var a, double p, std::mt19937_64& rng);
  // One graph-attention head: out[i] = sum_j alpha_ij h[j] over j in nbr[i],
  // alpha = softmax_j(leaky_relu(s_src[i] + s_dst[j], slope)).
  // h: [V,hd], s_src/s_dst: [V,1]; nbr must include self-loops.
  Var gat_head(Var h, Var s_src, Var s_dst,
               std::shared_ptr<const std::vector<std::vector<int>>> nbr, double slope);

  // Propagates gradients from a scalar loss to every reachable node.
  void backward(Var loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> back;
  };

  Var emit(Tensor value, std::initializer_list<Var> parents,
           std::function<void(Tape&, Node&)> back);
  bool any_requires(std::initializer_list<Var> parents) const;
  // Accumulation target for a parent node (allocated on first use).
  Tensor& gbuf(int i);
  bool wants(int i) const { return nodes_[i]->requires_grad; }

  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace trajrep
