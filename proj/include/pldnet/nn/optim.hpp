#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pldnet/nn/tensor.hpp"

namespace pldnet::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

inline std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// Cosine annealing from lr0 at step 0 to 0 at step == budget.
inline double cosine_lr(double lr0, std::size_t step, std::size_t budget) {
  if (budget == 0 || step >= budget) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(budget);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

enum class OptimizerKind { kNovoGrad, kAdam };

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "novograd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "novograd") return OptimizerKind::kNovoGrad;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("optimizer: unknown kind '" + s + "' (expected novograd or adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kNovoGrad;
  double lr = 3e-3;
  double beta1 = 0.95;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t budget = 1000;  // schedule length in steps

  void validate() const {
    if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0) || !(weight_decay >= 0.0)) {
      throw ConfigError("optimizer: invalid hyperparameters");
    }
  }
};

// NovoGrad keeps one second-moment scalar per parameter tensor and a
// first moment of the normalized gradient; weight decay is decoupled.
// Adam keeps per-coordinate moments with bias correction.
class Optimizer {
 public:
  Optimizer(ParamList params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      if (cfg_.kind == OptimizerKind::kAdam) {
        v_.emplace_back(p.tensor.numel(), 0.0);
      } else {
        v_.emplace_back(1, 0.0);
      }
    }
  }

  std::size_t step_count() const { return step_; }
  double current_lr() const { return cosine_lr(cfg_.lr, step_, cfg_.budget); }
  const ParamList& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    const double lr = current_lr();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& t = params_[i].tensor;
      const auto g = t.grad();
      auto w = t.data();
      if (g.size() != w.size()) throw ShapeError("optimizer: gradient shape mismatch for " + params_[i].name);
      if (cfg_.kind == OptimizerKind::kAdam) {
        adam_update(i, g, w, lr);
      } else {
        novograd_update(i, g, w, lr);
      }
    }
    ++step_;
  }

 private:
  void novograd_update(std::size_t i, std::span<const double> g, std::span<double> w, double lr) {
    double norm2 = 0.0;
    for (double x : g) norm2 += x * x;
    double& v = v_[i][0];
    v = step_ == 0 ? norm2 : cfg_.beta2 * v + (1.0 - cfg_.beta2) * norm2;
    const double inv = 1.0 / (std::sqrt(v) + cfg_.eps);
    auto& m = m_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + g[j] * inv;
      w[j] -= lr * (m[j] + cfg_.weight_decay * w[j]);
    }
  }

  void adam_update(std::size_t i, std::span<const double> g, std::span<double> w, double lr) {
    const double t = static_cast<double>(step_ + 1);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      w[j] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }

  ParamList params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace pldnet::nn
