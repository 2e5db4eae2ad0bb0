#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "trajrep/tape.hpp"
#include "trajrep/tensor.hpp"

namespace trajrep {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

// First/second moment accumulators for one parameter.
struct AdamState {
  Tensor m;
  Tensor v;
};

// Single Adam update with bias correction. step is the 1-based step counter
// shared across the parameter set.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg,
               std::int64_t step);

// Named parameter tensors plus their optimizer state. Handles are stable
// indices into the store.
class ParamStore {
 public:
  int add(const std::string& name, Tensor init);
  int handle(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int size() const { return static_cast<int>(entries_.size()); }

  const std::string& name(int h) const { return entries_[h].name; }
  Tensor& value(int h) { return entries_[h].value; }
  const Tensor& value(int h) const { return entries_[h].value; }
  AdamState& opt_state(int h) { return entries_[h].opt; }

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  // Applies one Adam step over all bound parameters that received a gradient.
  void apply_gradients(const class ParamBinding& binding, const AdamConfig& cfg);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    AdamState opt;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
  std::int64_t step_ = 0;
};

// Per-tape view of a ParamStore: creates a leaf the first time a parameter is
// used on the tape and reuses it afterwards, so each parameter is one graph
// node per step.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, ParamStore& store);
  Var operator()(int handle);
  Var operator()(const std::string& name);
  Tape& tape() const { return tape_; }
  // Gradient of a bound parameter (empty if unbound or unreached).
  Tensor param_grad(int handle) const;

 private:
  friend class ParamStore;
  Tape& tape_;
  ParamStore& store_;
  std::vector<Var> vars_;
};

// Central finite-difference gradient check of loss() w.r.t. selected entries
// of param. Returns the max relative error over the probed entries.
double finite_diff_check(Tensor& param, const Tensor& analytic_grad,
                         const std::function<double()>& loss, const std::vector<int>& entries,
                         double step = 1e-5);

}  // namespace trajrep
