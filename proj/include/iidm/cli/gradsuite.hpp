#pragma once

#include "iidm/cli/config.hpp"
#include "iidm/numerics/gradcheck.hpp"

#include <string>
#include <vector>

namespace iidm {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  /// Adds a primitive whose backward is deliberately wrong (negative control).
  bool corrupt = false;
  /// Entries sampled per parameter tensor for the model blocks; 0 = all.
  std::size_t model_entries = 6;
};

/// Central-difference checks, in double precision, of every autodiff
/// primitive, the network blocks, and the denoiser assembled from `config`
/// on an input of the smallest spatial size its UNet accepts.
std::vector<GradCheckReport> gradient_suite(const RunConfig& config, const GradSuiteOptions& options = {});

/// Header `block,max_rel_error,entries,passed,worst_entry`.
std::string gradient_report_csv(const std::vector<GradCheckReport>& reports);

}  // namespace iidm
