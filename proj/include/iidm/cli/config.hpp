#pragma once

#include "iidm/diffusion/diffusion.hpp"
#include "iidm/evalkit/metrics.hpp"
#include "iidm/networks/denoiser.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace iidm {

/// Everything a run needs besides its data. JSON on disk; every key is
/// optional (defaults below) but unknown keys are rejected. Precedence:
/// defaults < config file < --set overrides < dedicated flags (--seed).
struct RunConfig {
  std::uint64_t seed = 0;

  struct Schedule {
    std::string kind = "linear";
    int steps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string sampler = "strided";
    int inference_steps = 20;
    int inference_samples = 1;  // independent reverse samples averaged per tile
    bool clip_estimate = false;  // strided sampler: clip each y0 estimate to the target range
  } schedule;

  struct Model {
    int bands = 4;
    bool mask = true;
    std::string extractor = "none";  // none | vgg | kd-vgg
    int extractor_width = 16;
    int extractor_depth = 2;
    std::vector<int> extractor_channels;  // kd-vgg: distilled widths, empty = from distill
    std::vector<int> unet = {16, 16, 32, 32, 64, 64};
    std::string unet_kind = "full";  // full | kd (widths scaled by 11/16, rounded up)
    bool fusion = true;
    int fusion_heads = 1;
    int fusion_proj_width = 0;
    double fusion_mlp_ratio = 2.0;
    int fusion_min_level = 2;
    int time_width = 64;
    int tile = 64;
    std::vector<double> target_range = {-1.0, 1.0};  // y in [0, 1] is mapped affinely onto this
  } model;

  struct Training {
    int batch_size = 8;
    int epochs = 10;
    double learning_rate = 2e-3;
    std::string optimizer = "adam";
    int draws_per_pair = 1;
    std::string lr_schedule = "constant";  // constant | cosine (decays over epochs, max_steps or the time budget)
    double time_budget_seconds = 0;
    long max_steps = 0;
  } training;

  struct Kd {
    double mcev_threshold = 0.85;
    int eigenbasis_batch = 8;
    int eigenbasis_epochs = 200;
    int blockwise_epochs = 30;
    double blockwise_learning_rate = 3e-3;
    int teacher_width = 16;
    int teacher_depth = 2;
  } kd;

  struct Paths {
    std::string data;
    std::string checkpoint;
    std::string out;
  } paths;

  void validate() const;

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  /// Canonical text (sorted keys, no whitespace); paths excluded.
  std::string canonical() const;
  std::uint64_t fingerprint() const;

  /// "section.key=value"; value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);

  NoiseSchedule noise_schedule() const;
  SamplerOptions sampler_options() const;
  DenoiserConfig denoiser() const;
  AblationFlags flags() const;
  void apply_flags(const AblationFlags& flags);
};

}  // namespace iidm
