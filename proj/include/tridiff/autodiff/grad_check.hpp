#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tridiff/autodiff/tensor.hpp"

namespace tridiff::ad {

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t compared = 0;  // elements whose finite difference exceeded the floor
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = true;
};

// Compares backward() against central differences of `f` for every element of
// every parameter. Only elements with |finite difference| > fd_floor count.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f,
                           std::vector<std::pair<std::string, Tensor<S>>> params, S step, S tol,
                           S fd_floor = S(1e-6)) {
  for (auto& [_, p] : params) p.zero_grad();
  S base;
  {
    Tape<S> tape;
    TapeScope<S> scope(tape);
    const Tensor<S> loss = f();
    base = loss.item();
    tape.backward(loss);
  }
  std::vector<std::vector<S>> analytic;
  for (auto& [_, p] : params) analytic.push_back(p.grad_or_zeros());

  NoGradScope<S> no_grad;
  const S again = f().item();
  if (again != base)
    throw NonDeterministicError("grad_check: two forward passes disagree (" + std::to_string(base) +
                                " vs " + std::to_string(again) + ")");

  GradCheckReport report;
  report.tol = static_cast<double>(tol);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    ParamGradCheck entry;
    entry.name = name;
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const S saved = values[i];
      values[i] = saved + step;
      const S up = f().item();
      values[i] = saved - step;
      const S down = f().item();
      values[i] = saved;
      const S numeric = (up - down) / (S(2) * step);
      if (std::abs(numeric) <= fd_floor) continue;
      const S a = analytic[k][i];
      const double rel = static_cast<double>(std::abs(a - numeric) /
                                             std::max(std::abs(a), std::abs(numeric)));
      ++entry.compared;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.worst_analytic = static_cast<double>(a);
        entry.worst_numeric = static_cast<double>(numeric);
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < report.tol;
  return report;
}

template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f, const std::vector<Tensor<S>>& params,
                           S step, S tol, S fd_floor = S(1e-6)) {
  std::vector<std::pair<std::string, Tensor<S>>> named;
  for (std::size_t i = 0; i < params.size(); ++i) named.emplace_back("param" + std::to_string(i), params[i]);
  return grad_check<S>(f, std::move(named), step, tol, fd_floor);
}

}  // namespace tridiff::ad
