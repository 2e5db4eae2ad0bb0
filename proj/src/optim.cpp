#include "trajrep/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace trajrep {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg,
               std::int64_t step) {
  if (!param.same_shape(grad)) {
    throw std::invalid_argument("adam_step: param " + param.shape_str() + " vs grad " +
                                grad.shape_str());
  }
  if (state.m.empty()) state.m = Tensor::zeros(param.shape());
  if (state.v.empty()) state.v = Tensor::zeros(param.shape());
  if (!state.m.same_shape(param)) {
    throw std::invalid_argument("adam_step: state shape " + state.m.shape_str() +
                                " vs param " + param.shape_str());
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (int i = 0; i < param.numel(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

int ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const int h = static_cast<int>(entries_.size());
  entries_.push_back(Entry{name, std::move(init), {}});
  index_.emplace(name, h);
  return h;
}

int ParamStore::handle(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

void ParamStore::apply_gradients(const ParamBinding& binding, const AdamConfig& cfg) {
  ++step_;
  // Optional global-norm gradient clipping.
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (int h = 0; h < size(); ++h) {
      Tensor g = binding.param_grad(h);
      for (int i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }
  for (int h = 0; h < size(); ++h) {
    Tensor g = binding.param_grad(h);
    if (g.empty()) continue;
    if (scale != 1.0) {
      for (int i = 0; i < g.numel(); ++i) g[i] *= scale;
    }
    adam_step(entries_[h].value, g, entries_[h].opt, cfg, step_);
  }
}

ParamBinding::ParamBinding(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {
  vars_.assign(static_cast<std::size_t>(store.size()), Var{});
}

Var ParamBinding::operator()(int handle) {
  if (handle < 0 || handle >= static_cast<int>(vars_.size())) {
    throw std::out_of_range("parameter handle out of range");
  }
  if (!vars_[handle].valid()) vars_[handle] = tape_.leaf(store_.value(handle));
  return vars_[handle];
}

Var ParamBinding::operator()(const std::string& name) { return (*this)(store_.handle(name)); }

Tensor ParamBinding::param_grad(int handle) const {
  if (handle < 0 || handle >= static_cast<int>(vars_.size()) || !vars_[handle].valid()) return {};
  return tape_.grad(vars_[handle]);
}

double finite_diff_check(Tensor& param, const Tensor& analytic_grad,
                         const std::function<double()>& loss, const std::vector<int>& entries,
                         double step) {
  double worst = 0.0;
  for (int e : entries) {
    const double saved = param[e];
    param[e] = saved + step;
    const double fp = loss();
    param[e] = saved - step;
    const double fm = loss();
    param[e] = saved;
    const double fd = (fp - fm) / (2.0 * step);
    const double an = analytic_grad.empty() ? 0.0 : analytic_grad[e];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace trajrep
