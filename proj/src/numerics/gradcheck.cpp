#include "iidm/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace iidm {

template <typename Scalar>
GradCheckReport check_gradients(const std::string& block, std::span<Parameter<Scalar>* const> params,
                                const std::function<Var<Scalar>(Tape<Scalar>&)>& loss,
                                const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape;
    auto l = loss(tape);
    tape.backward(l);
  }

  auto evaluate = [&] {
    Tape<Scalar> tape;
    return static_cast<double>(loss(tape).value().item());
  };

  GradCheckReport report;
  report.block = block;
  Rng sampler(options.sample_seed);
  for (auto* p : params) {
    std::vector<std::size_t> entries(p->value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_parameter && entries.size() > options.max_entries_per_parameter) {
      for (std::size_t i = 0; i < options.max_entries_per_parameter; ++i) {
        const auto j = static_cast<std::size_t>(sampler.uniform_int(static_cast<std::int64_t>(i),
                                                                    static_cast<std::int64_t>(entries.size() - 1)));
        std::swap(entries[i], entries[j]);
      }
      entries.resize(options.max_entries_per_parameter);
    }
    for (std::size_t idx : entries) {
      const Scalar saved = p->value[idx];
      p->value[idx] = static_cast<Scalar>(saved + options.step);
      const double up = evaluate();
      p->value[idx] = static_cast<Scalar>(saved - options.step);
      const double down = evaluate();
      p->value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = static_cast<double>(p->grad[idx]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.entries;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_entry = p->name + "[" + std::to_string(idx) + "] analytic=" + std::to_string(analytic) +
                             " numeric=" + std::to_string(numeric);
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

template GradCheckReport check_gradients<float>(const std::string&, std::span<Parameter<float>* const>,
                                                const std::function<Var<float>(Tape<float>&)>&,
                                                const GradCheckOptions&);
template GradCheckReport check_gradients<double>(const std::string&, std::span<Parameter<double>* const>,
                                                 const std::function<Var<double>(Tape<double>&)>&,
                                                 const GradCheckOptions&);

}  // namespace iidm
