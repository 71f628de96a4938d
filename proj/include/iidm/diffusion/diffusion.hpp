#pragma once

#include "iidm/networks/denoiser.hpp"
#include "iidm/numerics/optim.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace iidm {

enum class ScheduleKind { linear };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// beta_1..beta_T and gamma_t = prod_{s <= t} (1 - beta_s), with gamma_0 = 1.
/// Timesteps are 1-based throughout.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  std::vector<double> betas;
  std::vector<double> gammas;

  int steps() const { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double gamma(int t) const { return t == 0 ? 1.0 : gammas.at(static_cast<std::size_t>(t - 1)); }
  void validate() const;
};

/// Betas interpolated linearly from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end);

/// x_t = sqrt(1 - beta) x_prev + sqrt(beta) eps
template <typename Scalar>
BasicTensor<Scalar> forward_step(const BasicTensor<Scalar>& x_prev, double beta, Rng& rng);

template <typename Scalar>
struct NoisySample {
  BasicTensor<Scalar> y;    // sqrt(gamma) y0 + sqrt(1 - gamma) eps
  BasicTensor<Scalar> eps;  // the exact noise used
};

template <typename Scalar>
NoisySample<Scalar> forward_sample(const BasicTensor<Scalar>& y0, double gamma, Rng& rng);

/// Condition x ([bands, H, W]) and normalized target y0 ([1, H, W]).
template <typename Scalar>
struct TrainingPair {
  BasicTensor<Scalar> x;
  BasicTensor<Scalar> y0;

  void validate() const;
};

/// What a noise predictor sees. `noise` carries the true eps during training
/// only; it exists so tests can plug in a teacher-forced oracle.
template <typename Scalar>
struct DenoiserContext {
  const BasicTensor<Scalar>& x;
  Var<Scalar> y_t;
  int t;
  double gamma;
  const BasicTensor<Scalar>* noise = nullptr;
};

template <typename Scalar>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Var<Scalar> predict(Tape<Scalar>& tape, const DenoiserContext<Scalar>& ctx) const = 0;
};

template <typename Scalar>
class DenoiserPredictor final : public NoisePredictor<Scalar> {
 public:
  explicit DenoiserPredictor(const Denoiser<Scalar>& model) : model_(model) {}
  Var<Scalar> predict(Tape<Scalar>& tape, const DenoiserContext<Scalar>& ctx) const override {
    return model_(tape, ctx.x, ctx.y_t, ctx.gamma);
  }

 private:
  const Denoiser<Scalar>& model_;
};

/// Per pair: t ~ U{1..T}, eps ~ N(0, I), loss mean|eps - eps_theta(x, t, y_t, gamma_t)|;
/// returns the batch mean. Each pair gets its own tape; with
/// `accumulate_gradients`, d(batch mean)/d(params) is added to the parameter
/// gradients. Throws NumericError naming t and the pair index when the model
/// output is non-finite.
template <typename Scalar>
double training_loss(const std::vector<TrainingPair<Scalar>>& batch, const NoisePredictor<Scalar>& model,
                     const NoiseSchedule& schedule, Rng& rng, bool accumulate_gradients = false);

enum class SamplerKind { ancestral, strided };

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

struct SamplerOptions {
  SamplerKind kind = SamplerKind::ancestral;
  /// Model evaluations for the strided sampler (clamped to T).
  int steps = 20;
  /// Range the final sample is clipped to (the data range of y_0).
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  /// Strided only: also clip each intermediate y0_hat and re-derive eps from it.
  bool clip_estimate = false;
};

/// The strided sampler's timesteps, descending from T; evenly spaced, distinct.
std::vector<int> strided_timesteps(int total, int steps);

/// Starts from y_T ~ N(0, I) and denoises to y_0, clipped to [clip_lo, clip_hi]
/// at the end (and per step for the strided sampler with clip_estimate).
///
///   ancestral: y_{t-1} = (y_t - beta_t / sqrt(1 - gamma_t) eps_theta) / sqrt(1 - beta_t) + sqrt(beta_t) z,
///              z = 0 at t = 1
///   strided:   y0_hat = (y_t - sqrt(1 - gamma_t) eps_theta) / sqrt(gamma_t),
///              y_s = sqrt(gamma_s) y0_hat + sqrt(1 - gamma_s) eps_theta   (s = next timestep, gamma_0 = 1)
///
/// Throws NumericError naming the step when an intermediate is non-finite.
template <typename Scalar>
BasicTensor<Scalar> reverse_sample(const BasicTensor<Scalar>& x, const NoisePredictor<Scalar>& model,
                                   const NoiseSchedule& schedule, Rng& rng, const SamplerOptions& options = {});

struct DiffusionTrainOptions {
  int epochs = 10;
  int batch_size = 8;
  /// Independent (t, eps) draws per pair within a step; > 1 lowers gradient
  /// noise on very small datasets.
  int draws_per_pair = 1;
  std::uint64_t seed = 0;
  double divergence = 1e3;
  /// Optional stops; 0 disables. Checked after each optimizer step. The
  /// budget is process CPU time, so it does not shrink on a loaded machine.
  long max_steps = 0;
  double time_budget_seconds = 0;
  /// Cosine decay of the optimizer's learning rate from its initial value to
  /// 1/1000 of it over the run. Progress is the furthest along of steps / (epochs * batches),
  /// steps / max_steps and elapsed / time_budget_seconds, so a budgeted run
  /// finishes its decay when the budget runs out. The rate is restored on return.
  bool cosine_lr = false;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct DiffusionTrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  long steps = 0;
  bool stopped_early = false;
};

/// Mini-batch training on the noise-prediction objective. The data order is
/// reshuffled each epoch; every draw comes from `options.seed`, so equal seeds
/// give equal curves. Throws NumericError when a batch loss exceeds
/// `divergence`.
template <typename Scalar>
DiffusionTrainResult train_diffusion(const std::vector<TrainingPair<Scalar>>& data,
                                     const NoisePredictor<Scalar>& model, ParameterStore<Scalar>& parameters,
                                     const NoiseSchedule& schedule, Optimizer<Scalar>& optimizer,
                                     const DiffusionTrainOptions& options);

/// CSV `epoch,mean_loss` with 1-based epochs.
std::string loss_curve_csv(const std::vector<double>& epoch_loss);

}  // namespace iidm
