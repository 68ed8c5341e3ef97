#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "pldnet/nn/tensor.hpp"

namespace pldnet::nn {

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  // Denominator floor; raise it in proportion to the loss for large losses,
  // where finite-difference roundoff swamps tiny gradients.
  double floor = 1e-8;
};

// Central finite differences against reverse-mode gradients. `f` must read
// the current contents of `inputs` and return a scalar. Returns the maximum
// relative error |fd - an| / max(|fd|, |an|, floor) over the checked coordinates.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                         const GradCheckOptions& opt = {}) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    const auto g = x.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  }
  if (opt.max_coords > 0 && coords.size() > opt.max_coords) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
  }

  NoGradGuard guard;
  double worst = 0.0;
  for (auto [i, j] : coords) {
    double& xv = inputs[i].data()[j];
    const double orig = xv;
    xv = orig + opt.eps;
    const double fp = f().item();
    xv = orig - opt.eps;
    const double fm = f().item();
    xv = orig;
    const double fd = (fp - fm) / (2.0 * opt.eps);
    const double an = analytic[i][j];
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), opt.floor});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace pldnet::nn
