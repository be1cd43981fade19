#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dara/tensor.hpp"

namespace dara {

/// Central finite differences against reverse-mode gradients.
///
/// `f` must rebuild its computation from the current parameter values on
/// every call and return a one-element tensor. The check runs one taped
/// evaluation to obtain analytic gradients, then perturbs each selected
/// coordinate by +/-h with no tape active. Relative errors use the
/// denominator max(|analytic|, |numeric|, 1e-8).
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

/// Checks every coordinate of every parameter.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<const Tensor> params, double h = 1e-5);

/// Checks at most `max_coords` coordinates, sampled without replacement
/// across the flattened parameter list (deterministic in `seed`).
GradCheckReport finite_diff_check_sampled(const std::function<Tensor()>& f,
                                          std::span<const Tensor> params, double h,
                                          std::size_t max_coords, std::uint64_t seed);

}  // namespace dara
