#pragma once

#include "iidm/numerics/autodiff.hpp"
#include "iidm/numerics/rng.hpp"

#include <functional>
#include <span>
#include <string>

namespace iidm {

struct GradCheckOptions {
  double step = 1e-3;        // central-difference half-width
  double tolerance = 1e-4;   // max allowed relative error
  double abs_floor = 1e-6;   // denominator floor for near-zero gradients
  std::size_t max_entries_per_parameter = 0;  // 0 checks every entry
  std::uint64_t sample_seed = 0;
};

struct GradCheckReport {
  std::string block;
  double max_rel_error = 0;
  std::size_t entries = 0;
  std::string worst_entry;
  bool passed = true;
};

/// Compares reverse-mode gradients of `loss` against central differences
///   (loss(p + h) - loss(p - h)) / 2h
/// entry by entry. Relative error is |a - n| / max(|a|, |n|, abs_floor).
/// Parameter values are restored afterwards; gradients are left zeroed.
template <typename Scalar>
GradCheckReport check_gradients(const std::string& block, std::span<Parameter<Scalar>* const> params,
                                const std::function<Var<Scalar>(Tape<Scalar>&)>& loss,
                                const GradCheckOptions& options = {});

}  // namespace iidm
