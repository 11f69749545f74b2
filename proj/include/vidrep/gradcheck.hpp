#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>

#include "vidrep/ops.hpp"
#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  bool has_nan = false;
  int64_t nan_index = -1;

  bool ok(double tol) const { return !has_nan && max_rel_err < tol; }
};

namespace detail {

inline void gc_compare(double analytic, double fd, int64_t i, GradCheckResult& r) {
  if (std::isnan(analytic) || std::isnan(fd)) {
    if (!r.has_nan) {
      r.has_nan = true;
      r.nan_index = i;
    }
    return;
  }
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(fd)});
  const double rel = std::fabs(analytic - fd) / denom;
  if (rel > r.max_rel_err) {
    r.max_rel_err = rel;
    r.worst_index = i;
  }
}

}  // namespace detail

// Central-difference check of the reverse-mode gradient of a scalar function
// f at leaf x. The oracle side rebuilds the graph twice per coordinate with
// x nudged by +/- eps and never touches the analytic gradient path.
// Coordinates listed in `coords` are checked; an empty list means all.
inline GradCheckResult grad_check_coords(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                         double eps, const std::vector<int64_t>& coords) {
  if (!(eps >= 1e-7 && eps <= 1e-4))
    throw std::invalid_argument("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-4]");
  if (!x.requires_grad()) throw std::invalid_argument("grad_check: x does not require grad");

  x.zero_grad();
  Tensor loss = f(x);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(loss);
  std::vector<double> analytic(static_cast<size_t>(x.size()), 0.0);
  if (x.has_grad()) analytic.assign(x.grad_vec().begin(), x.grad_vec().end());

  GradCheckResult result;
  std::vector<int64_t> all;
  const std::vector<int64_t>* idx = &coords;
  if (coords.empty()) {
    all.resize(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < x.size(); ++i) all[static_cast<size_t>(i)] = i;
    idx = &all;
  }
  for (int64_t i : *idx) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double fp = f(x).value();
    x.data()[i] = saved - eps;
    const double fm = f(x).value();
    x.data()[i] = saved;
    detail::gc_compare(analytic[static_cast<size_t>(i)], (fp - fm) / (2.0 * eps), i, result);
  }
  return result;
}

inline GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                  double eps) {
  return grad_check_coords(f, x, eps, {});
}

// Spot-check a random subset of coordinates; used where the full sweep would
// be quadratic in parameter count (end-to-end graphs).
inline GradCheckResult grad_check_subset(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                         double eps, int max_coords, Rng& rng) {
  std::vector<int64_t> coords;
  if (x.size() <= max_coords) {
    return grad_check(f, x, eps);
  }
  for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(x.size()));
  return grad_check_coords(f, x, eps, coords);
}

}  // namespace vidrep
