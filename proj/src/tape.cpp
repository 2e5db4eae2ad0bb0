#include "trajrep/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace trajrep {

namespace {

void check_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(who) + ": expected 2-D tensor, got " + t.shape_str());
  }
}

[[noreturn]] void shape_error(const char* who, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(who) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

}  // namespace

Var Tape::leaf(const Tensor& v) {
  auto n = std::make_unique<Node>();
  n->value = v;
  n->requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor v) {
  auto n = std::make_unique<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_requires(std::initializer_list<Var> parents) const {
  for (Var p : parents) {
    if (p.valid() && nodes_[p.i]->requires_grad) return true;
  }
  return false;
}

Var Tape::emit(Tensor value, std::initializer_list<Var> parents,
               std::function<void(Tape&, Node&)> back) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = any_requires(parents);
  if (n->requires_grad) n->back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::gbuf(int i) {
  Node& n = *nodes_[i];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  const Tensor& lv = val(loss);
  if (lv.numel() != 1) {
    throw std::logic_error("backward: loss must be scalar, got " + lv.shape_str());
  }
  gbuf(loss.i).fill(1.0);
  for (int i = loss.i; i >= 0; --i) {
    Node& n = *nodes_[i];
    if (n.back && !n.grad.empty()) n.back(*this, n);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// arithmetic

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_2d(av, "matmul");
  check_2d(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) shape_error("matmul", av, bv);
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  matmul_raw(av.data(), bv.data(), out.data(), m, k, n, false, false, false);
  return emit(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, Node& self) {
    const double* g = self.grad.data();
    if (t.wants(a.i)) {
      matmul_raw(g, t.val(b).data(), t.gbuf(a.i).data(), m, n, k, false, true, true);
    }
    if (t.wants(b.i)) {
      matmul_raw(t.val(a).data(), g, t.gbuf(b.i).data(), k, m, n, true, false, true);
    }
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_2d(av, "matmul_nt");
  check_2d(bv, "matmul_nt");
  if (av.dim(1) != bv.dim(1)) shape_error("matmul_nt", av, bv);
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  matmul_raw(av.data(), bv.data(), out.data(), m, k, n, false, true, false);
  return emit(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, Node& self) {
    const double* g = self.grad.data();
    if (t.wants(a.i)) {
      matmul_raw(g, t.val(b).data(), t.gbuf(a.i).data(), m, n, k, false, false, true);
    }
    if (t.wants(b.i)) {
      matmul_raw(g, t.val(a).data(), t.gbuf(b.i).data(), n, m, k, true, false, true);
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return emit(std::move(out), {a, b}, [a, b](Tape& t, Node& self) {
    for (Var p : {a, b}) {
      if (!t.wants(p.i)) continue;
      Tensor& g = t.gbuf(p.i);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return emit(std::move(out), {a, b}, [a, b](Tape& t, Node& self) {
    if (t.wants(a.i)) {
      Tensor& g = t.gbuf(a.i);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (t.wants(b.i)) {
      Tensor& g = t.gbuf(b.i);
      for (int i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return emit(std::move(out), {a, b}, [a, b](Tape& t, Node& self) {
    if (t.wants(a.i)) {
      Tensor& g = t.gbuf(a.i);
      const Tensor& o = t.val(b);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * o[i];
    }
    if (t.wants(b.i)) {
      Tensor& g = t.gbuf(b.i);
      const Tensor& o = t.val(a);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * o[i];
    }
  });
}

Var Tape::add_rowvec(Var m, Var v) {
  const Tensor& mv = val(m);
  const Tensor& vv = val(v);
  check_2d(mv, "add_rowvec");
  if (vv.numel() != mv.dim(1)) shape_error("add_rowvec", mv, vv);
  const int r = mv.dim(0), c = mv.dim(1);
  Tensor out = mv;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(i, j) += vv[j];
  }
  return emit(std::move(out), {m, v}, [m, v, r, c](Tape& t, Node& self) {
    if (t.wants(m.i)) {
      Tensor& g = t.gbuf(m.i);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (t.wants(v.i)) {
      Tensor& g = t.gbuf(v.i);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) g[j] += self.grad.at(i, j);
      }
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = val(a);
  for (double& x : out) x *= s;
  return emit(std::move(out), {a}, [a, s](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var Tape::scale_var(Var a, Var s) {
  const Tensor& sv = val(s);
  if (sv.numel() != 1) {
    throw std::invalid_argument("scale_var: scale must be scalar, got " + sv.shape_str());
  }
  const double sc = sv[0];
  Tensor out = val(a);
  for (double& x : out) x *= sc;
  return emit(std::move(out), {a, s}, [a, s, sc](Tape& t, Node& self) {
    if (t.wants(a.i)) {
      Tensor& g = t.gbuf(a.i);
      for (int i = 0; i < g.numel(); ++i) g[i] += sc * self.grad[i];
    }
    if (t.wants(s.i)) {
      const Tensor& av = t.val(a);
      double acc = 0.0;
      for (int i = 0; i < av.numel(); ++i) acc += self.grad[i] * av[i];
      t.gbuf(s.i)[0] += acc;
    }
  });
}

Var Tape::reciprocal(Var a) {
  Tensor out = val(a);
  for (double& x : out) x = 1.0 / x;
  return emit(std::move(out), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) {
      g[i] -= self.grad[i] * self.value[i] * self.value[i];
    }
  });
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::leaky_relu(Var a, double slope) {
  Tensor out = val(a);
  for (double& x : out) x = x > 0.0 ? x : slope * x;
  return emit(std::move(out), {a}, [a, slope](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    const Tensor& in = t.val(a);
    for (int i = 0; i < g.numel(); ++i) {
      g[i] += self.grad[i] * (in[i] > 0.0 ? 1.0 : slope);
    }
  });
}

Var Tape::sin(Var a) {
  Tensor out = val(a);
  for (double& x : out) x = std::sin(x);
  return emit(std::move(out), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    const Tensor& in = t.val(a);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * std::cos(in[i]);
  });
}

Var Tape::exp(Var a) {
  Tensor out = val(a);
  for (double& x : out) x = std::exp(x);
  return emit(std::move(out), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Var Tape::log(Var a) {
  Tensor out = val(a);
  for (double& x : out) x = std::log(x);
  return emit(std::move(out), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    const Tensor& in = t.val(a);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / in[i];
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  Tensor out = val(a);
  for (double& x : out) x = std::min(hi, std::max(lo, x));
  return emit(std::move(out), {a}, [a, lo, hi](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    const Tensor& in = t.val(a);
    for (int i = 0; i < g.numel(); ++i) {
      if (in[i] > lo && in[i] < hi) g[i] += self.grad[i];
    }
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double x : val(a)) s += x;
  return emit(Tensor::scalar(s), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

Var Tape::mean(Var a) {
  const int n = val(a).numel();
  double s = 0.0;
  for (double x : val(a)) s += x;
  return emit(Tensor::scalar(s / n), {a}, [a, n](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    const double gs = self.grad[0] / n;
    for (int i = 0; i < g.numel(); ++i) g[i] += gs;
  });
}

// ---------------------------------------------------------------------------
// shape

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.ndim() == 1 && bv.ndim() == 1) {
    Tensor out({av.numel() + bv.numel()});
    std::copy(av.begin(), av.end(), out.begin());
    std::copy(bv.begin(), bv.end(), out.begin() + av.numel());
    const int na = av.numel();
    return emit(std::move(out), {a, b}, [a, b, na](Tape& t, Node& self) {
      if (t.wants(a.i)) {
        Tensor& g = t.gbuf(a.i);
        for (int i = 0; i < na; ++i) g[i] += self.grad[i];
      }
      if (t.wants(b.i)) {
        Tensor& g = t.gbuf(b.i);
        for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
      }
    });
  }
  check_2d(av, "concat_cols");
  check_2d(bv, "concat_cols");
  if (av.dim(0) != bv.dim(0)) shape_error("concat_cols", av, bv);
  const int r = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor out({r, ca + cb});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
    for (int j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
  }
  return emit(std::move(out), {a, b}, [a, b, r, ca, cb](Tape& t, Node& self) {
    if (t.wants(a.i)) {
      Tensor& g = t.gbuf(a.i);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) g.at(i, j) += self.grad.at(i, j);
      }
    }
    if (t.wants(b.i)) {
      Tensor& g = t.gbuf(b.i);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < cb; ++j) g.at(i, j) += self.grad.at(i, ca + j);
      }
    }
  });
}

Var Tape::concat_rows(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_2d(av, "concat_rows");
  check_2d(bv, "concat_rows");
  if (av.dim(1) != bv.dim(1)) shape_error("concat_rows", av, bv);
  Tensor out({av.dim(0) + bv.dim(0), av.dim(1)});
  std::copy(av.begin(), av.end(), out.begin());
  std::copy(bv.begin(), bv.end(), out.begin() + av.numel());
  const int na = av.numel();
  return emit(std::move(out), {a, b}, [a, b, na](Tape& t, Node& self) {
    if (t.wants(a.i)) {
      Tensor& g = t.gbuf(a.i);
      for (int i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (t.wants(b.i)) {
      Tensor& g = t.gbuf(b.i);
      for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty row list");
  const int c = val(rows[0]).numel();
  Tensor out({static_cast<int>(rows.size()), c});
  bool needs = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = val(rows[i]);
    if (rv.numel() != c) shape_error("stack_rows", val(rows[0]), rv);
    std::copy(rv.begin(), rv.end(), out.begin() + static_cast<int>(i) * c);
    needs = needs || nodes_[rows[i].i]->requires_grad;
  }
  auto n = std::make_unique<Node>();
  n->value = std::move(out);
  n->requires_grad = needs;
  if (needs) {
    std::vector<Var> parents = rows;
    n->back = [parents, c](Tape& t, Node& self) {
      for (std::size_t i = 0; i < parents.size(); ++i) {
        if (!t.wants(parents[i].i)) continue;
        Tensor& g = t.gbuf(parents[i].i);
        const double* src = self.grad.data() + i * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) g[j] += src[j];
      }
    };
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::transpose(Var a) {
  const Tensor& av = val(a);
  check_2d(av, "transpose");
  const int r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  }
  return emit(std::move(out), {a}, [a, r, c](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) g.at(i, j) += self.grad.at(j, i);
    }
  });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  Tensor out(std::move(shape), std::vector<double>(val(a).begin(), val(a).end()));
  if (out.numel() != val(a).numel()) shape_error("reshape", val(a), out);
  return emit(std::move(out), {a}, [a](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  const Tensor& av = val(a);
  check_2d(av, "slice_rows");
  if (r0 < 0 || r1 > av.dim(0) || r0 >= r1) {
    throw std::out_of_range("slice_rows: range [" + std::to_string(r0) + ", " +
                            std::to_string(r1) + ") on " + av.shape_str());
  }
  const int c = av.dim(1);
  Tensor out({r1 - r0, c});
  std::copy(av.begin() + r0 * c, av.begin() + r1 * c, out.begin());
  return emit(std::move(out), {a}, [a, r0, c](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < self.grad.numel(); ++i) g[r0 * c + i] += self.grad[i];
  });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& av = val(a);
  check_2d(av, "slice_cols");
  if (c0 < 0 || c1 > av.dim(1) || c0 >= c1) {
    throw std::out_of_range("slice_cols: range [" + std::to_string(c0) + ", " +
                            std::to_string(c1) + ") on " + av.shape_str());
  }
  const int r = av.dim(0), w = c1 - c0;
  Tensor out({r, w});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < w; ++j) out.at(i, j) = av.at(i, c0 + j);
  }
  return emit(std::move(out), {a}, [a, c0, r, w](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < w; ++j) g.at(i, c0 + j) += self.grad.at(i, j);
    }
  });
}

Var Tape::gather_rows(Var table, const std::vector<int>& idx) {
  const Tensor& tv = val(table);
  check_2d(tv, "gather_rows");
  const int c = tv.dim(1);
  Tensor out({static_cast<int>(idx.size()), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= tv.dim(0)) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) +
                              " out of table " + tv.shape_str());
    }
    std::copy(tv.begin() + idx[i] * c, tv.begin() + (idx[i] + 1) * c,
              out.begin() + static_cast<int>(i) * c);
  }
  return emit(std::move(out), {table}, [table, idx, c](Tape& t, Node& self) {
    Tensor& g = t.gbuf(table.i);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = self.grad.data() + i * static_cast<std::size_t>(c);
      double* dst = g.data() + static_cast<std::size_t>(idx[i]) * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------
// neural ops

Var Tape::softmax_rows(Var a, const std::vector<std::uint8_t>* valid) {
  const Tensor& av = val(a);
  check_2d(av, "softmax_rows");
  const int r = av.dim(0), c = av.dim(1);
  std::vector<std::uint8_t> mask;
  if (valid) {
    if (static_cast<int>(valid->size()) != c) {
      throw std::invalid_argument("softmax_rows: mask length " + std::to_string(valid->size()) +
                                  " != columns " + std::to_string(c));
    }
    mask = *valid;
    if (std::find(mask.begin(), mask.end(), std::uint8_t{1}) == mask.end()) {
      throw std::domain_error("softmax_rows: all positions masked");
    }
  }
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) {
      if (!mask.empty() && !mask[j]) continue;
      mx = std::max(mx, av.at(i, j));
    }
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      if (!mask.empty() && !mask[j]) {
        out.at(i, j) = 0.0;
        continue;
      }
      out.at(i, j) = std::exp(av.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (int j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  return emit(std::move(out), {a}, [a, r, c](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (int j = 0; j < c; ++j) {
        g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
      }
    }
  });
}

Var Tape::conv2d_same(Var image, Var kernels, Var bias) {
  const Tensor& im = val(image);
  const Tensor& kr = val(kernels);
  const Tensor& bs = val(bias);
  if (im.ndim() != 3 || kr.ndim() != 4 || kr.dim(0) != 3 || kr.dim(1) != 3) {
    throw std::invalid_argument("conv2d_same: want image [H,W,Cin] and kernels [3,3,Cin,Cout], got " +
                                im.shape_str() + " and " + kr.shape_str());
  }
  if (kr.dim(2) != im.dim(2) || bs.numel() != kr.dim(3)) shape_error("conv2d_same", im, kr);
  const int H = im.dim(0), W = im.dim(1), ci = im.dim(2), co = kr.dim(3);
  Tensor out({H, W, co});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int oc = 0; oc < co; ++oc) out.at(y, x, oc) = bs[oc];
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= W) continue;
          for (int ic = 0; ic < ci; ++ic) {
            const double v = im.at(sy, sx, ic);
            if (v == 0.0) continue;
            const double* kw = kr.data() + ((ky * 3 + kx) * ci + ic) * co;
            double* op = out.data() + (static_cast<std::size_t>(y) * W + x) * co;
            for (int oc = 0; oc < co; ++oc) op[oc] += v * kw[oc];
          }
        }
      }
    }
  }
  return emit(std::move(out), {image, kernels, bias},
              [image, kernels, bias, H, W, ci, co](Tape& t, Node& self) {
                const Tensor& im = t.val(image);
                const Tensor& kr = t.val(kernels);
                const bool wi = t.wants(image.i), wk = t.wants(kernels.i), wb = t.wants(bias.i);
                Tensor* gi = wi ? &t.gbuf(image.i) : nullptr;
                Tensor* gk = wk ? &t.gbuf(kernels.i) : nullptr;
                Tensor* gb = wb ? &t.gbuf(bias.i) : nullptr;
                for (int y = 0; y < H; ++y) {
                  for (int x = 0; x < W; ++x) {
                    const double* go = self.grad.data() + (static_cast<std::size_t>(y) * W + x) * co;
                    if (wb) {
                      for (int oc = 0; oc < co; ++oc) (*gb)[oc] += go[oc];
                    }
                    for (int ky = 0; ky < 3; ++ky) {
                      const int sy = y + ky - 1;
                      if (sy < 0 || sy >= H) continue;
                      for (int kx = 0; kx < 3; ++kx) {
                        const int sx = x + kx - 1;
                        if (sx < 0 || sx >= W) continue;
                        for (int ic = 0; ic < ci; ++ic) {
                          const std::size_t koff = ((ky * 3 + kx) * static_cast<std::size_t>(ci) + ic) * co;
                          if (wk) {
                            const double v = im.at(sy, sx, ic);
                            if (v != 0.0) {
                              for (int oc = 0; oc < co; ++oc) (*gk)[koff + oc] += v * go[oc];
                            }
                          }
                          if (wi) {
                            double s = 0.0;
                            const double* kw = kr.data() + koff;
                            for (int oc = 0; oc < co; ++oc) s += kw[oc] * go[oc];
                            gi->at(sy, sx, ic) += s;
                          }
                        }
                      }
                    }
                  }
                }
              });
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& targets) {
  const Tensor& lv = val(logits);
  check_2d(lv, "cross_entropy");
  const int n = lv.dim(0), k = lv.dim(1);
  if (n == 0) throw std::invalid_argument("cross_entropy: no rows");
  if (static_cast<int>(targets.size()) != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= k) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  }
  // Keep the softmax probabilities for the backward rule.
  Tensor probs({n, k});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = lv.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, lv.at(i, j));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      probs.at(i, j) = std::exp(lv.at(i, j) - mx);
      z += probs.at(i, j);
    }
    for (int j = 0; j < k; ++j) probs.at(i, j) /= z;
    loss -= std::log(std::max(probs.at(i, targets[i]), 1e-300));
  }
  auto probs_ptr = std::make_shared<Tensor>(std::move(probs));
  return emit(Tensor::scalar(loss / n), {logits},
              [logits, targets, probs_ptr, n, k](Tape& t, Node& self) {
                Tensor& g = t.gbuf(logits.i);
                const double gs = self.grad[0] / n;
                for (int i = 0; i < n; ++i) {
                  for (int j = 0; j < k; ++j) {
                    double p = probs_ptr->at(i, j);
                    if (j == targets[i]) p -= 1.0;
                    g.at(i, j) += gs * p;
                  }
                }
              });
}

Var Tape::cosine(Var u, Var v) {
  const Tensor& uv = val(u);
  const Tensor& vv = val(v);
  if (uv.numel() != vv.numel()) shape_error("cosine", uv, vv);
  double nu = 0.0, nv = 0.0, dot = 0.0;
  for (int i = 0; i < uv.numel(); ++i) {
    nu += uv[i] * uv[i];
    nv += vv[i] * vv[i];
    dot += uv[i] * vv[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine: zero vector");
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  const double cs = dot / (nu * nv);
  return emit(Tensor::scalar(cs), {u, v}, [u, v, nu, nv, cs](Tape& t, Node& self) {
    const Tensor& uv = t.val(u);
    const Tensor& vv = t.val(v);
    const double g = self.grad[0];
    if (t.wants(u.i)) {
      Tensor& gu = t.gbuf(u.i);
      for (int i = 0; i < uv.numel(); ++i) {
        gu[i] += g * (vv[i] / (nu * nv) - cs * uv[i] / (nu * nu));
      }
    }
    if (t.wants(v.i)) {
      Tensor& gv = t.gbuf(v.i);
      for (int i = 0; i < vv.numel(); ++i) {
        gv[i] += g * (uv[i] / (nu * nv) - cs * vv[i] / (nv * nv));
      }
    }
  });
}

Var Tape::l2_normalize_rows(Var a) {
  const Tensor& av = val(a);
  check_2d(av, "l2_normalize_rows");
  const int r = av.dim(0), c = av.dim(1);
  Tensor out({r, c});
  std::vector<double> norms(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += av.at(i, j) * av.at(i, j);
    if (s == 0.0) throw std::domain_error("l2_normalize_rows: zero row " + std::to_string(i));
    norms[i] = std::sqrt(s);
    for (int j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) / norms[i];
  }
  return emit(std::move(out), {a}, [a, norms, r, c](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (int j = 0; j < c; ++j) {
        g.at(i, j) += (self.grad.at(i, j) - dot * self.value.at(i, j)) / norms[i];
      }
    }
  });
}

Var Tape::layer_norm_rows(Var a, Var gain, Var bias) {
  constexpr double kEps = 1e-5;
  const Tensor& av = val(a);
  const Tensor& gv = val(gain);
  const Tensor& bv = val(bias);
  check_2d(av, "layer_norm_rows");
  const int r = av.dim(0), c = av.dim(1);
  if (gv.numel() != c || bv.numel() != c) shape_error("layer_norm_rows", av, gv);
  Tensor out({r, c});
  auto xhat = std::make_shared<Tensor>(Tensor({r, c}));
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += av.at(i, j);
    m /= c;
    double v2 = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = av.at(i, j) - m;
      v2 += d * d;
    }
    inv_std[i] = 1.0 / std::sqrt(v2 / c + kEps);
    for (int j = 0; j < c; ++j) {
      xhat->at(i, j) = (av.at(i, j) - m) * inv_std[i];
      out.at(i, j) = gv[j] * xhat->at(i, j) + bv[j];
    }
  }
  return emit(std::move(out), {a, gain, bias},
              [a, gain, bias, xhat, inv_std, r, c](Tape& t, Node& self) {
                const Tensor& gv = t.val(gain);
                if (t.wants(gain.i)) {
                  Tensor& gg = t.gbuf(gain.i);
                  for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) gg[j] += self.grad.at(i, j) * xhat->at(i, j);
                  }
                }
                if (t.wants(bias.i)) {
                  Tensor& gb = t.gbuf(bias.i);
                  for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) gb[j] += self.grad.at(i, j);
                  }
                }
                if (t.wants(a.i)) {
                  Tensor& ga = t.gbuf(a.i);
                  for (int i = 0; i < r; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                      const double dy = self.grad.at(i, j) * gv[j];
                      s1 += dy;
                      s2 += dy * xhat->at(i, j);
                    }
                    for (int j = 0; j < c; ++j) {
                      const double dy = self.grad.at(i, j) * gv[j];
                      ga.at(i, j) += inv_std[i] * (dy - s1 / c - xhat->at(i, j) * s2 / c);
                    }
                  }
                }
              });
}

Var Tape::dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const Tensor& av = val(a);
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(av.numel()));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor out = av;
  for (int i = 0; i < av.numel(); ++i) {
    (*mask)[i] = dist(rng) < keep ? 1.0 / keep : 0.0;
    out[i] *= (*mask)[i];
  }
  return emit(std::move(out), {a}, [a, mask](Tape& t, Node& self) {
    Tensor& g = t.gbuf(a.i);
    for (int i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Var Tape::gat_head(Var h, Var s_src, Var s_dst,
                   std::shared_ptr<const std::vector<std::vector<int>>> nbr, double slope) {
  const Tensor& hv = val(h);
  check_2d(hv, "gat_head");
  const int V = hv.dim(0), hd = hv.dim(1);
  if (static_cast<int>(nbr->size()) != V || val(s_src).numel() != V || val(s_dst).numel() != V) {
    throw std::invalid_argument("gat_head: neighbor/score lists do not match " + hv.shape_str());
  }
  const Tensor& ss = val(s_src);
  const Tensor& sd = val(s_dst);
  auto alpha = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(V));
  Tensor out({V, hd});
  for (int i = 0; i < V; ++i) {
    const auto& ns = (*nbr)[i];
    if (ns.empty()) {
      throw std::invalid_argument("gat_head: node " + std::to_string(i) + " has no neighbors");
    }
    auto& ai = (*alpha)[i];
    ai.resize(ns.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < ns.size(); ++e) {
      const int j = ns[e];
      if (j < 0 || j >= V) {
        throw std::out_of_range("gat_head: dangling neighbor id " + std::to_string(j));
      }
      const double raw = ss[i] + sd[j];
      ai[e] = raw > 0.0 ? raw : slope * raw;
      mx = std::max(mx, ai[e]);
    }
    double z = 0.0;
    for (double& v : ai) {
      v = std::exp(v - mx);
      z += v;
    }
    double* oi = out.data() + static_cast<std::size_t>(i) * hd;
    for (std::size_t e = 0; e < ns.size(); ++e) {
      ai[e] /= z;
      const double* hj = hv.data() + static_cast<std::size_t>(ns[e]) * hd;
      for (int k = 0; k < hd; ++k) oi[k] += ai[e] * hj[k];
    }
  }
  return emit(std::move(out), {h, s_src, s_dst},
              [h, s_src, s_dst, nbr, alpha, slope, V, hd](Tape& t, Node& self) {
                const Tensor& hv = t.val(h);
                const Tensor& ss = t.val(s_src);
                const Tensor& sd = t.val(s_dst);
                const bool wh = t.wants(h.i), ws = t.wants(s_src.i), wd = t.wants(s_dst.i);
                Tensor* gh = wh ? &t.gbuf(h.i) : nullptr;
                Tensor* gs = ws ? &t.gbuf(s_src.i) : nullptr;
                Tensor* gd = wd ? &t.gbuf(s_dst.i) : nullptr;
                for (int i = 0; i < V; ++i) {
                  const auto& ns = (*nbr)[i];
                  const auto& ai = (*alpha)[i];
                  const double* go = self.grad.data() + static_cast<std::size_t>(i) * hd;
                  // d(out_i)/d(alpha_e) = h[j_e] . go
                  std::vector<double> da(ns.size());
                  double dot = 0.0;
                  for (std::size_t e = 0; e < ns.size(); ++e) {
                    const double* hj = hv.data() + static_cast<std::size_t>(ns[e]) * hd;
                    double s = 0.0;
                    for (int k = 0; k < hd; ++k) s += hj[k] * go[k];
                    da[e] = s;
                    dot += ai[e] * s;
                    if (wh) {
                      double* ghj = gh->data() + static_cast<std::size_t>(ns[e]) * hd;
                      for (int k = 0; k < hd; ++k) ghj[k] += ai[e] * go[k];
                    }
                  }
                  if (!ws && !wd) continue;
                  for (std::size_t e = 0; e < ns.size(); ++e) {
                    const double dlogit = ai[e] * (da[e] - dot);
                    const double raw = ss[i] + sd[ns[e]];
                    const double dr = dlogit * (raw > 0.0 ? 1.0 : slope);
                    if (ws) (*gs)[i] += dr;
                    if (wd) (*gd)[ns[e]] += dr;
                  }
                }
              });
}

}  // namespace trajrep
