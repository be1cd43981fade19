#include "dara/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dara/errors.hpp"
#include "dara/rng.hpp"

namespace dara {

namespace {

struct Coord {
  std::size_t param;
  std::size_t index;
};

GradCheckReport run_check(const std::function<Tensor()>& f, std::span<const Tensor> params,
                          double h, const std::vector<Coord>& coords) {
  if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");

  // Analytic pass.
  std::vector<Tensor> mut(params.begin(), params.end());
  for (Tensor& p : mut) {
    p.zero_grad();
    (void)p.grad_accumulator();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  analytic.reserve(mut.size());
  for (const Tensor& p : mut)
    analytic.emplace_back(p.grad_view().begin(), p.grad_view().end());

  GradCheckReport report;
  for (const Coord& c : coords) {
    Tensor p = mut[c.param];
    const double original = p.data()[c.index];
    p.data()[c.index] = original + h;
    const double f_plus = f().value();
    p.data()[c.index] = original - h;
    const double f_minus = f().value();
    p.data()[c.index] = original;

    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[c.param][c.index];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = c.param;
      report.worst_coord = c.index;
    }
    ++report.coords_checked;
  }
  return report;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<const Tensor> params, double h) {
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.push_back({p, i});
  return run_check(f, params, h, coords);
}

GradCheckReport finite_diff_check_sampled(const std::function<Tensor()>& f,
                                          std::span<const Tensor> params, double h,
                                          std::size_t max_coords, std::uint64_t seed) {
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.push_back({p, i});
  if (coords.size() > max_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
  }
  return run_check(f, params, h, coords);
}

}  // namespace dara
