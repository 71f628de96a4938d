#include "iidm/cli/pipeline.hpp"

#include "iidm/preprocess/preprocess.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iidm {

namespace fs = std::filesystem;

namespace {

std::string tile_name(std::size_t i, const char* part) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu_%s.iidr", i, part);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::array<double, 2> target_range(const RunConfig& cfg) {
  return {cfg.model.target_range.at(0), cfg.model.target_range.at(1)};
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "index,x,y,mask,split\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto x = tile_name(i, "x"), y = tile_name(i, "y"), m = s.mask ? tile_name(i, "mask") : std::string();
    write_iidr((fs::path(dir) / x).string(), s.x);
    write_iidr((fs::path(dir) / y).string(), s.y);
    if (s.mask) write_iidr((fs::path(dir) / m).string(), *s.mask);
    manifest << i << ',' << x << ',' << y << ',' << m << ',' << s.split << '\n';
  }
}

std::vector<Sample> read_dataset(const std::string& dir) {
  const auto path = fs::path(dir) / "manifest.csv";
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("no manifest.csv in " + dir);
  std::string line;
  if (!std::getline(f, line) || line != "index,x,y,mask,split")
    throw std::invalid_argument(path.string() + ": expected header index,x,y,mask,split");
  std::vector<Sample> out;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5)
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    Sample s;
    s.x = read_iidr((fs::path(dir) / cells[1]).string());
    s.y = read_iidr((fs::path(dir) / cells[2]).string());
    if (!cells[3].empty()) s.mask = read_iidr((fs::path(dir) / cells[3]).string());
    s.split = cells[4];
    if (s.split != "train" && s.split != "test")
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": split must be train or test");
    const std::string id = "sample " + cells[0];
    if (s.y.channels != 1) throw ShapeError(id + ": y must be single-channel");
    if (s.x.width != s.y.width || s.x.height != s.y.height)
      throw ShapeError(id + ": x is " + std::to_string(s.x.width) + "x" + std::to_string(s.x.height) + " but y is " +
                       std::to_string(s.y.width) + "x" + std::to_string(s.y.height));
    if (s.mask && (s.mask->width != s.x.width || s.mask->height != s.x.height))
      throw ShapeError(id + ": mask dims differ from x");
    if (s.mask) ForestMask{*s.mask};
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::invalid_argument(path.string() + ": no samples");
  return out;
}

std::vector<Sample> synth_samples(const SynthOptions& options) {
  const auto tiles = synth_dataset(options);
  const int held_out = std::max(1, options.count / 5);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const bool test = static_cast<int>(i) >= options.count - held_out && options.count > 1;
    out.push_back({tiles[i].x, tiles[i].y, tiles[i].mask, test ? "test" : "train"});
  }
  return out;
}

TrainingPair<float> make_pair(const Sample& s, bool use_mask, std::array<double, 2> range) {
  Tensor x({s.x.channels, s.x.height, s.x.width}), y({1, s.y.height, s.y.width});
  const auto n = s.x.pixel_count();
  const bool masked = use_mask && s.mask;
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = !masked || s.mask->values[i] == ForestMask::kForest;
    for (int c = 0; c < s.x.channels; ++c) {
      const float v = s.x.values[static_cast<std::size_t>(c) * n + i];
      x[static_cast<std::size_t>(c) * n + i] = keep && !s.x.is_nodata(v) ? v : 0.0f;
    }
    const float v = s.y.values[i];
    y[i] = static_cast<float>(range[0] + (range[1] - range[0]) * (keep && !s.y.is_nodata(v) ? v : 0.0f));
  }
  return {std::move(x), std::move(y)};
}

Model::Model(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng(config_.seed).fork(0x6d6f64656cull);  // "model"
  denoiser_ = std::make_unique<Denoiser<float>>(config_.denoiser(), rng);
}

Checkpoint Model::to_checkpoint(const Optimizer<float>* optimizer) const {
  Checkpoint ck;
  ck.fingerprint = config_.fingerprint();
  ck.config = config_.to_json().dump(2);
  for (const auto* p : denoiser_->parameters().all())
    ck.tensors.push_back({"param." + p->name, p->value.shape(), p->value.to_vector()});
  if (optimizer) {
    ck.tensors.push_back({"opt.step", {1}, {static_cast<float>(optimizer->step_count())}});
    for (const auto& [name, m] : optimizer->moments()) {
      ck.tensors.push_back({"opt.m." + name, m.first.shape(), m.first.to_vector()});
      ck.tensors.push_back({"opt.v." + name, m.second.shape(), m.second.to_vector()});
    }
  }
  return ck;
}

RunConfig checkpoint_config(const Checkpoint& ck) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ck.config);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  return RunConfig::from_json(j);
}

void Model::load_parameters(const Checkpoint& ck, Optimizer<float>* optimizer) {
  for (auto* p : denoiser_->parameters().all()) {
    const auto* t = ck.find("param." + p->name);
    if (!t) throw FormatError("checkpoint lacks parameter " + p->name);
    if (t->shape != p->value.shape())
      throw ShapeError("checkpoint parameter " + p->name + " is " + shape_string(t->shape) + ", model expects " +
                       shape_string(p->value.shape()));
    p->value = Tensor(t->shape, t->data);
  }
  const auto* s = ck.find("opt.step");
  if (!optimizer || !s) return;
  std::map<std::string, Optimizer<float>::Moments> moments;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("opt.m.", 0) != 0) continue;
    const std::string name = t.name.substr(6);
    const auto* v = ck.find("opt.v." + name);
    if (!v) throw FormatError("checkpoint lacks opt.v." + name);
    moments[name] = {Tensor(t.shape, t.data), Tensor(v->shape, v->data)};
  }
  optimizer->restore(static_cast<long>(s->data.at(0)), std::move(moments));
}

std::unique_ptr<Model> Model::from_checkpoint(const Checkpoint& ck, Optimizer<float>* optimizer,
                                              const std::function<void(const std::string&)>& warn) {
  auto model = std::make_unique<Model>(checkpoint_config(ck));
  if (ck.fingerprint != model->config().fingerprint() && warn)
    warn("checkpoint fingerprint does not match its configuration; loading anyway");
  model->load_parameters(ck, optimizer);
  return model;
}

TrainReport train_model(Model& model, Optimizer<float>& optimizer, const std::vector<Sample>& samples,
                        const std::function<void(int, double)>& on_epoch) {
  const auto& cfg = model.config();
  std::vector<TrainingPair<float>> data;
  for (const auto& s : samples)
    if (s.split == "train") data.push_back(make_pair(s, cfg.model.mask, target_range(cfg)));
  if (data.empty()) throw std::invalid_argument("no training samples");
  for (const auto& p : data)
    if (p.x.shape() != data.front().x.shape())
      throw ShapeError("training tiles differ in shape; re-tile the dataset to a common size");
  DiffusionTrainOptions o;
  o.epochs = cfg.training.epochs;
  o.batch_size = cfg.training.batch_size;
  o.draws_per_pair = cfg.training.draws_per_pair;
  o.cosine_lr = cfg.training.lr_schedule == "cosine";
  // Resumed runs continue the draw sequence instead of replaying it.
  o.seed = Rng(cfg.seed).fork(0x747261696eull + static_cast<std::uint64_t>(optimizer.step_count())).next_u64();
  o.time_budget_seconds = cfg.training.time_budget_seconds;
  o.max_steps = cfg.training.max_steps;
  o.on_epoch = on_epoch;
  DenoiserPredictor<float> predictor(model.denoiser());
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport r;
  r.result = train_diffusion(data, predictor, model.denoiser().parameters(), cfg.noise_schedule(), optimizer, o);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<RasterGrid> split_tiles(const RasterGrid& raster, int tile) {
  raster.validate();
  if (tile < 1 || raster.width % tile != 0 || raster.height % tile != 0)
    throw ShapeError("raster " + std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                     " is not a multiple of the tile size " + std::to_string(tile));
  return iidm::tile(raster, tile, tile);
}

RasterGrid mosaic(const std::vector<RasterGrid>& tiles, int width, int height) {
  if (tiles.empty()) throw ShapeError("mosaic of zero tiles");
  const int t = tiles.front().width, c = tiles.front().channels;
  if (t < 1 || width % t != 0 || height % t != 0) throw ShapeError("mosaic dims are not a multiple of the tile size");
  const int nx = width / t, ny = height / t;
  if (static_cast<int>(tiles.size()) != nx * ny) throw ShapeError("mosaic tile count does not match its dims");
  RasterGrid out(width, height, c);
  for (int k = 0; k < nx * ny; ++k) {
    const auto& tl = tiles[static_cast<std::size_t>(k)];
    if (tl.width != t || tl.height != t || tl.channels != c) throw ShapeError("mosaic tiles differ in shape");
    const int oy = (k / nx) * t, ox = (k % nx) * t;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < t; ++y)
        for (int x = 0; x < t; ++x) out.at(ch, oy + y, ox + x) = tl.at(ch, y, x);
  }
  return out;
}

RasterGrid infer(const Model& model, const RasterGrid& x, const RasterGrid* mask, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (x.channels != cfg.model.bands)
    throw ShapeError("x has " + std::to_string(x.channels) + " bands, the model expects " +
                     std::to_string(cfg.model.bands));
  if (mask && (mask->width != x.width || mask->height != x.height)) throw ShapeError("mask dims differ from x");
  std::optional<ForestMask> forest;
  if (mask) forest.emplace(*mask);
  const auto x_tiles = split_tiles(x, cfg.model.tile);
  std::vector<RasterGrid> m_tiles;
  if (mask) m_tiles = split_tiles(*mask, cfg.model.tile);

  const auto schedule = cfg.noise_schedule();
  const auto sampler = cfg.sampler_options();
  DenoiserPredictor<float> predictor(model.denoiser());
  std::vector<RasterGrid> out;
  for (std::size_t k = 0; k < x_tiles.size(); ++k) {
    Sample s{x_tiles[k], RasterGrid(cfg.model.tile, cfg.model.tile, 1), {}, "test"};
    if (mask) s.mask = m_tiles[k];
    const auto pair = make_pair(s, cfg.model.mask, target_range(cfg));
    Rng rng = Rng(seed).fork(k);
    Tensor sum({1, cfg.model.tile, cfg.model.tile});
    for (int d = 0; d < cfg.schedule.inference_samples; ++d) {
      Rng draw = rng.fork(static_cast<std::uint64_t>(d));
      sum.vec() += reverse_sample(pair.x, predictor, schedule, draw, sampler).vec();
    }
    const auto [lo, hi] = target_range(cfg);
    sum.vec() = (sum.vec() / static_cast<float>(cfg.schedule.inference_samples)).array() - static_cast<float>(lo);
    sum.vec() /= static_cast<float>(hi - lo);
    out.push_back(RasterGrid::from_tensor(sum));
  }
  auto full = mosaic(out, x.width, x.height);
  return forest ? apply_mask(full, *forest) : full;
}

MetricReport evaluate(const Model& model, const std::vector<Sample>& samples, std::uint64_t seed) {
  MetricAccumulator acc;
  std::size_t k = 0;
  for (const auto& s : samples) {
    if (s.split != "test") continue;
    const bool masked = model.config().model.mask && s.mask;
    const auto pred = infer(model, s.x, masked ? &*s.mask : nullptr, Rng(seed).fork(k++).next_u64());
    if (masked) {
      ForestMask m(*s.mask);
      acc.add(pred, s.y, &m);
    } else {
      acc.add(pred, s.y);
    }
  }
  if (k == 0) throw std::invalid_argument("no held-out samples");
  return acc.report();
}

MetricReport evaluate_ols(const std::vector<Sample>& samples, bool use_mask) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  OlsProblem problem(samples.front().x.channels);
  for (const auto& s : samples) {
    if (s.split != "train") continue;
    if (use_mask && s.mask) {
      ForestMask m(*s.mask);
      problem.add(s.x, s.y, &m);
    } else {
      problem.add(s.x, s.y);
    }
  }
  const auto ols = problem.solve();
  MetricAccumulator acc;
  for (const auto& s : samples) {
    if (s.split != "test") continue;
    if (use_mask && s.mask) {
      ForestMask m(*s.mask);
      acc.add(ols.predict(s.x, &m), s.y, &m);
    } else {
      acc.add(ols.predict(s.x), s.y);
    }
  }
  return acc.report();
}

}  // namespace iidm
