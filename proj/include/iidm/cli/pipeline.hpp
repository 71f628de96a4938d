#pragma once

#include "iidm/cli/config.hpp"
#include "iidm/cli/formats.hpp"
#include "iidm/cli/synth.hpp"
#include "iidm/numerics/optim.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace iidm {

/// One training/evaluation tile: bands, density target, optional forest mask.
struct Sample {
  RasterGrid x;
  RasterGrid y;
  std::optional<RasterGrid> mask;
  std::string split = "train";  // train | test
};

/// Writes `<dir>/NNNN_x.iidr`, `NNNN_y.iidr`, `NNNN_mask.iidr` and
/// `<dir>/manifest.csv` (header `index,x,y,mask,split`).
void write_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::string& dir);

/// The last fifth of a synthetic set (at least one tile) is held out.
std::vector<Sample> synth_samples(const SynthOptions& options);

/// Model input/target for a sample. With the mask flag, non-forest pixels of
/// both x and y are zeroed so the network sees where the forest is; nodata
/// in x or y becomes 0. The target is then mapped from [0, 1] onto `range`.
TrainingPair<float> make_pair(const Sample& sample, bool use_mask, std::array<double, 2> range = {0.0, 1.0});

/// Denoiser plus the config it was built from.
class Model {
 public:
  explicit Model(RunConfig config);

  const RunConfig& config() const { return config_; }
  Denoiser<float>& denoiser() { return *denoiser_; }
  const Denoiser<float>& denoiser() const { return *denoiser_; }

  /// Parameters as "param.<name>"; optimizer state as "opt.step" and
  /// "opt.m.<name>" / "opt.v.<name>".
  Checkpoint to_checkpoint(const Optimizer<float>* optimizer = nullptr) const;

  /// Copies "param.*" tensors into the denoiser, and optimizer state when
  /// `optimizer` is given and the checkpoint has it.
  void load_parameters(const Checkpoint& checkpoint, Optimizer<float>* optimizer = nullptr);

  /// Model built from the embedded config, then load_parameters. A
  /// fingerprint differing from the config's is reported through `warn`.
  static std::unique_ptr<Model> from_checkpoint(const Checkpoint& checkpoint, Optimizer<float>* optimizer = nullptr,
                                                const std::function<void(const std::string&)>& warn = {});

 private:
  RunConfig config_;
  std::unique_ptr<Denoiser<float>> denoiser_;
};

struct TrainReport {
  DiffusionTrainResult result;
  double seconds = 0;
};

/// Trains on the "train" split. `optimizer` carries Adam state across resumes.
TrainReport train_model(Model& model, Optimizer<float>& optimizer, const std::vector<Sample>& samples,
                        const std::function<void(int, double)>& on_epoch = {});

/// The config text embedded in a checkpoint.
RunConfig checkpoint_config(const Checkpoint& checkpoint);

/// Non-overlapping tile x tile pieces, row-major. Dims must be multiples of tile.
std::vector<RasterGrid> split_tiles(const RasterGrid& raster, int tile);
/// Inverse of split_tiles.
RasterGrid mosaic(const std::vector<RasterGrid>& tiles, int width, int height);

/// Tiles -> reverse sampling per tile (config's sampler, `inference_samples`
/// draws averaged) -> mosaic -> mask applied. Tile k draws from
/// Rng(seed).fork(k), so output depends only on (model, inputs, seed).
RasterGrid infer(const Model& model, const RasterGrid& x, const RasterGrid* mask, std::uint64_t seed);

/// Held-out evaluation: predictions vs y over forest pixels (mask flag on) or
/// all pixels (off).
MetricReport evaluate(const Model& model, const std::vector<Sample>& samples, std::uint64_t seed);

/// OLS fit on the train split, scored like `evaluate` (forest pixels when `use_mask`).
MetricReport evaluate_ols(const std::vector<Sample>& samples, bool use_mask);

}  // namespace iidm
