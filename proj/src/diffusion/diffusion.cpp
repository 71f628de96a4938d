#include "iidm/diffusion/diffusion.hpp"

#include <ctime>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace iidm {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown noise schedule '" + name + "' (expected linear)");
}

std::string to_string(ScheduleKind) { return "linear"; }

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ancestral") return SamplerKind::ancestral;
  if (name == "strided") return SamplerKind::strided;
  throw std::invalid_argument("unknown sampler '" + name + "' (expected ancestral or strided)");
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::ancestral ? "ancestral" : "strided"; }

void NoiseSchedule::validate() const {
  if (betas.empty() || betas.size() != gammas.size()) throw std::invalid_argument("malformed noise schedule");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0 && betas[i] < 1)) throw std::invalid_argument("beta outside (0, 1)");
    if (i > 0 && betas[i] < betas[i - 1]) throw std::invalid_argument("betas must be nondecreasing");
  }
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.kind = kind;
  double gamma = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double beta =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(steps - 1);
    gamma *= 1.0 - beta;
    s.betas.push_back(beta);
    s.gammas.push_back(gamma);
  }
  return s;
}

template <typename Scalar>
BasicTensor<Scalar> forward_step(const BasicTensor<Scalar>& x_prev, double beta, Rng& rng) {
  if (!(beta > 0 && beta < 1)) throw std::invalid_argument("forward_step needs 0 < beta < 1");
  auto out = draw_normal<Scalar>(rng, x_prev.shape());
  out.vec() = static_cast<Scalar>(std::sqrt(1 - beta)) * x_prev.vec() + static_cast<Scalar>(std::sqrt(beta)) * out.vec();
  return out;
}

template <typename Scalar>
NoisySample<Scalar> forward_sample(const BasicTensor<Scalar>& y0, double gamma, Rng& rng) {
  if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("forward_sample needs 0 <= gamma <= 1");
  NoisySample<Scalar> s{BasicTensor<Scalar>(y0.shape()), draw_normal<Scalar>(rng, y0.shape())};
  if (gamma == 1) {
    s.y = y0;
  } else if (gamma == 0) {
    s.y = s.eps;
  } else {
    s.y.vec() = static_cast<Scalar>(std::sqrt(gamma)) * y0.vec() + static_cast<Scalar>(std::sqrt(1 - gamma)) * s.eps.vec();
  }
  return s;
}

template <typename Scalar>
void TrainingPair<Scalar>::validate() const {
  if (x.rank() != 3 || y0.rank() != 3) throw ShapeError("training pair tensors must be [C, H, W]");
  if (y0.dim(0) != 1) throw ShapeError("target must be single-channel, got " + shape_string(y0.shape()));
  if (x.dim(1) != y0.dim(1) || x.dim(2) != y0.dim(2)) {
    throw ShapeError("condition " + shape_string(x.shape()) + " and target " + shape_string(y0.shape()) +
                     " differ spatially");
  }
}

namespace {

template <typename Scalar>
bool all_finite(const BasicTensor<Scalar>& t) {
  return t.vec().allFinite();
}

}  // namespace

template <typename Scalar>
double training_loss(const std::vector<TrainingPair<Scalar>>& batch, const NoisePredictor<Scalar>& model,
                     const NoiseSchedule& schedule, Rng& rng, bool accumulate_gradients) {
  if (batch.empty()) throw std::invalid_argument("training loss of an empty batch");
  const Scalar weight = Scalar(1) / static_cast<Scalar>(batch.size());
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = batch[i];
    pair.validate();
    const int t = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    const double gamma = schedule.gamma(t);
    auto noisy = forward_sample(pair.y0, gamma, rng);

    Tape<Scalar> tape;
    DenoiserContext<Scalar> ctx{pair.x, tape.constant(noisy.y), t, gamma, &noisy.eps};
    auto pred = model.predict(tape, ctx);
    if (pred.shape() != pair.y0.shape()) {
      throw ShapeError("noise prediction " + shape_string(pred.shape()) + " does not match target " +
                       shape_string(pair.y0.shape()));
    }
    if (!all_finite(pred.value())) {
      throw NumericError("non-finite noise prediction for pair " + std::to_string(i) + " at t=" + std::to_string(t));
    }
    auto loss = abs_mean(sub(tape.constant(noisy.eps), pred));
    total += static_cast<double>(loss.value()[0]);
    if (accumulate_gradients) tape.backward(loss, weight);
  }
  return total / static_cast<double>(batch.size());
}

std::vector<int> strided_timesteps(int total, int steps) {
  if (total < 1 || steps < 1) throw std::invalid_argument("strided sampler needs T >= 1 and steps >= 1");
  steps = std::min(steps, total);
  std::vector<int> out;
  for (int i = steps; i >= 1; --i) {
    // round(i * T / steps): lands on T at i = steps and is strictly increasing in i.
    out.push_back(static_cast<int>((static_cast<long long>(i) * total * 2 + steps) / (2LL * steps)));
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> reverse_sample(const BasicTensor<Scalar>& x, const NoisePredictor<Scalar>& model,
                                   const NoiseSchedule& schedule, Rng& rng, const SamplerOptions& options) {
  if (x.rank() != 3) throw ShapeError("condition must be [bands, H, W], got " + shape_string(x.shape()));
  schedule.validate();
  if (!(options.clip_lo < options.clip_hi)) throw std::invalid_argument("sampler clip range is empty");
  const auto lo = static_cast<Scalar>(options.clip_lo), hi = static_cast<Scalar>(options.clip_hi);
  auto y = draw_normal<Scalar>(rng, {1, x.dim(1), x.dim(2)});

  auto predict = [&](int t) {
    Tape<Scalar> tape;
    DenoiserContext<Scalar> ctx{x, tape.constant(y), t, schedule.gamma(t)};
    auto eps = model.predict(tape, ctx).value();
    if (eps.shape() != y.shape()) throw ShapeError("noise prediction has shape " + shape_string(eps.shape()));
    return eps;
  };
  auto check = [&](int t) {
    if (!all_finite(y)) throw NumericError("non-finite sample at reverse step t=" + std::to_string(t));
  };

  if (options.kind == SamplerKind::ancestral) {
    for (int t = schedule.steps(); t >= 1; --t) {
      const auto eps = predict(t);
      const double beta = schedule.beta(t);
      const auto c_eps = static_cast<Scalar>(beta / std::sqrt(1 - schedule.gamma(t)));
      const auto c_out = static_cast<Scalar>(1 / std::sqrt(1 - beta));
      y.vec() = c_out * (y.vec() - c_eps * eps.vec());
      if (t > 1) y.vec() += static_cast<Scalar>(std::sqrt(beta)) * draw_normal<Scalar>(rng, y.shape()).vec();
      check(t);
    }
  } else {
    const auto ts = strided_timesteps(schedule.steps(), options.steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const int t = ts[i];
      const int s = i + 1 < ts.size() ? ts[i + 1] : 0;
      auto eps = predict(t);
      const double g_t = schedule.gamma(t), g_s = schedule.gamma(s);
      BasicTensor<Scalar> y0(y.shape());
      y0.vec() = (y.vec() - static_cast<Scalar>(std::sqrt(1 - g_t)) * eps.vec()) / static_cast<Scalar>(std::sqrt(g_t));
      if (options.clip_estimate && g_t < 1) {
        y0.vec() = y0.vec().cwiseMax(lo).cwiseMin(hi);
        eps.vec() = (y.vec() - static_cast<Scalar>(std::sqrt(g_t)) * y0.vec()) / static_cast<Scalar>(std::sqrt(1 - g_t));
      }
      y.vec() = static_cast<Scalar>(std::sqrt(g_s)) * y0.vec() + static_cast<Scalar>(std::sqrt(1 - g_s)) * eps.vec();
      check(t);
    }
  }
  y.vec() = y.vec().cwiseMax(lo).cwiseMin(hi);
  return y;
}

template <typename Scalar>
DiffusionTrainResult train_diffusion(const std::vector<TrainingPair<Scalar>>& data,
                                     const NoisePredictor<Scalar>& model, ParameterStore<Scalar>& parameters,
                                     const NoiseSchedule& schedule, Optimizer<Scalar>& optimizer,
                                     const DiffusionTrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("diffusion training needs a nonempty dataset");
  if (options.epochs < 0 || options.batch_size < 1 || options.draws_per_pair < 1) {
    throw std::invalid_argument("epochs >= 0, batch size >= 1 and draws per pair >= 1");
  }
  for (const auto& p : data) p.validate();
  schedule.validate();

  const std::clock_t start_time = std::clock();
  auto elapsed = [&] { return static_cast<double>(std::clock() - start_time) / CLOCKS_PER_SEC; };
  auto out_of_time = [&] { return options.time_budget_seconds > 0 && elapsed() >= options.time_budget_seconds; };

  const double base_lr = optimizer.learning_rate();
  const auto batches_per_epoch = static_cast<long>((data.size() + static_cast<std::size_t>(options.batch_size) - 1) /
                                                   static_cast<std::size_t>(options.batch_size));
  auto progress = [&](long steps) {
    double p = static_cast<double>(steps) / static_cast<double>(std::max(1L, options.epochs * batches_per_epoch));
    if (options.max_steps > 0) p = std::max(p, static_cast<double>(steps) / static_cast<double>(options.max_steps));
    if (options.time_budget_seconds > 0) p = std::max(p, elapsed() / options.time_budget_seconds);
    return std::min(p, 1.0);
  };

  Rng rng(options.seed);
  auto params = parameters.all();
  DiffusionTrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= options.epochs && !result.stopped_early; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<TrainingPair<Scalar>> batch;
      for (std::size_t k = start; k < stop; ++k)
        for (int d = 0; d < options.draws_per_pair; ++d) batch.push_back(data[order[k]]);
      parameters.zero_grad();
      const double loss = training_loss(batch, model, schedule, rng, /*accumulate_gradients=*/true);
      if (!std::isfinite(loss) || loss > options.divergence) {
        throw NumericError("diffusion training diverged at step " + std::to_string(result.steps + 1) + " (loss " +
                           std::to_string(loss) + ")");
      }
      if (options.cosine_lr) {
        const double c = 0.5 * (1 + std::cos(std::numbers::pi * progress(result.steps)));
        optimizer.set_learning_rate(base_lr * std::max(c, 1e-3));
      }
      optimizer.step(params);
      ++result.steps;
      result.step_loss.push_back(loss);
      sum += loss;
      ++batches;
      if ((options.max_steps > 0 && result.steps >= options.max_steps) || out_of_time()) {
        result.stopped_early = true;
        break;
      }
    }
    result.epoch_loss.push_back(sum / batches);
    if (options.on_epoch) options.on_epoch(epoch, result.epoch_loss.back());
  }
  optimizer.set_learning_rate(base_lr);
  return result;
}

std::string loss_curve_csv(const std::vector<double>& epoch_loss) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) os << i + 1 << ',' << epoch_loss[i] << '\n';
  return os.str();
}

#define IIDM_INSTANTIATE(S)                                                                                       \
  template BasicTensor<S> forward_step(const BasicTensor<S>&, double, Rng&);                                      \
  template NoisySample<S> forward_sample(const BasicTensor<S>&, double, Rng&);                                    \
  template struct TrainingPair<S>;                                                                                \
  template double training_loss(const std::vector<TrainingPair<S>>&, const NoisePredictor<S>&,                    \
                                const NoiseSchedule&, Rng&, bool);                                                \
  template BasicTensor<S> reverse_sample(const BasicTensor<S>&, const NoisePredictor<S>&, const NoiseSchedule&,   \
                                         Rng&, const SamplerOptions&);                                            \
  template DiffusionTrainResult train_diffusion(const std::vector<TrainingPair<S>>&, const NoisePredictor<S>&,    \
                                                ParameterStore<S>&, const NoiseSchedule&, Optimizer<S>&,          \
                                                const DiffusionTrainOptions&);

IIDM_INSTANTIATE(float)
IIDM_INSTANTIATE(double)
#undef IIDM_INSTANTIATE

}  // namespace iidm
