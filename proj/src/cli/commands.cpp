#include "iidm/cli/commands.hpp"

#include "iidm/cli/gradsuite.hpp"
#include "iidm/cli/pipeline.hpp"
#include "iidm/kd/blockwise.hpp"
#include "iidm/kd/spectrum.hpp"
#include "iidm/preprocess/preprocess.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace iidm {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c, bool needs_out) {
  app->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Config override section.key=value (repeatable)");
  app->add_option("--seed", c.seed, "Seed (overrides the config)");
  auto* out = app->add_option("--out", c.out, needs_out ? "Output directory" : "Output path");
  if (needs_out) out->required();
  app->add_flag("--verbose", c.verbose, "Log progress to stderr");
}

RunConfig resolve(const Common& c, std::optional<RunConfig> base = std::nullopt) {
  RunConfig cfg = base ? *base : (c.config.empty() ? RunConfig{} : RunConfig::load(c.config));
  if (base && !c.config.empty()) cfg = RunConfig::load(c.config);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> parse_ints(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("bad integer '") + cell + "' in " + what);
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  return out;
}

// With a density range, also the RMSE in Mg/ha: min-max normalization is affine,
// so errors scale by (max - min).
std::string metrics_csv(const MetricReport& r, const std::vector<double>& density_range = {}) {
  std::ostringstream os;
  os << std::setprecision(9) << "mae,mse,rmse,psnr,ssim,n_valid" << (density_range.empty() ? "" : ",rmse_mg_ha")
     << '\n' << r.mae << ',' << r.mse << ',' << r.rmse << ',' << r.psnr << ',' << r.ssim << ',' << r.n_valid;
  if (!density_range.empty()) os << ',' << r.rmse * (density_range[1] - density_range[0]);
  os << '\n';
  return os.str();
}

// ---- preprocess ----

struct PreprocessArgs {
  std::string survey, canopy, mask;
  int tile = 256;
  int stride = 0;
};

int cmd_preprocess(const Common& c, const PreprocessArgs& a, std::ostream& out, std::ostream& err) {
  const auto plaques = read_survey_csv(a.survey);
  if (plaques.empty()) throw std::invalid_argument(a.survey + ": no plaques");
  const auto canopy = read_iidr(a.canopy);
  const auto density = density_map(plaques, canopy);
  fs::create_directories(c.out);
  write_iidr((fs::path(c.out) / "density.iidr").string(), density);
  RasterGrid tiled_source = density;
  if (!a.mask.empty()) {
    const auto mask_grid = read_iidr(a.mask);
    if (mask_grid.width != canopy.width || mask_grid.height != canopy.height)
      throw ShapeError("mask is " + std::to_string(mask_grid.width) + "x" + std::to_string(mask_grid.height) +
                       " but canopy is " + std::to_string(canopy.width) + "x" + std::to_string(canopy.height));
    const ForestMask mask(mask_grid);
    if (mask.forest_count() == 0) err << "warning: mask has no forest pixels; masked output is all nodata\n";
    tiled_source = apply_mask(density, mask);
    write_iidr((fs::path(c.out) / "density_masked.iidr").string(), tiled_source);
  }
  const int stride = a.stride > 0 ? a.stride : a.tile;
  const auto tiles = tile(tiled_source, a.tile, stride);
  const auto dir = fs::path(c.out) / "tiles";
  fs::create_directories(dir);
  const int nx = a.tile >= tiled_source.width ? 1 : (tiled_source.width - a.tile + stride - 1) / stride + 1;
  std::ostringstream manifest;
  manifest << "index,row,col,file\n";
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "tile_%04zu.iidr", k);
    write_iidr((dir / name).string(), tiles[k]);
    manifest << k << ',' << (static_cast<int>(k) / nx) * stride << ',' << (static_cast<int>(k) % nx) * stride << ','
             << name << '\n';
  }
  write_text(dir / "manifest.csv", manifest.str());
  double total = 0;
  for (const auto& p : plaques) total += carbon_stock(p);
  out << "plaques " << plaques.size() << "\ncarbon_stock_total " << std::setprecision(10) << total << "\ntiles "
      << tiles.size() << '\n';
  return kExitOk;
}

// ---- distill ----

struct DistillArgs {
  std::string corpus, teacher, unet_requirements, unet_structure;
  int synth_corpus = 0;
};

std::vector<Tensor> load_corpus(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("corpus directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".iidr") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  for (const auto& f : files) {
    const auto r = read_iidr(f.string());
    auto t = r.to_tensor();
    for (auto& v : t.storage())
      if (std::isnan(v)) v = 0.0f;
    out.push_back(std::move(t));
  }
  return out;
}

int cmd_distill(const Common& c, const DistillArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve(c);
  if (!a.unet_requirements.empty()) {
    const auto req = parse_ints(a.unet_requirements, "--unet-requirements");
    const auto structure = a.unet_structure.empty() ? UNetConfig::teacher().channels
                                                    : parse_ints(a.unet_structure, "--unet-structure");
    out << "unet_channels " << join(select_unet_channels(req, structure)) << '\n';
    return kExitOk;
  }
  std::vector<Tensor> corpus;
  if (!a.corpus.empty()) {
    corpus = load_corpus(a.corpus);
  } else if (a.synth_corpus > 0) {
    SynthOptions so;
    so.seed = cfg.seed;
    so.count = a.synth_corpus;
    so.size = cfg.model.tile;
    so.bands = cfg.model.bands;
    for (const auto& t : synth_dataset(so)) corpus.push_back(t.x.to_tensor());
  }
  if (corpus.empty()) throw std::invalid_argument("distillation corpus is empty");
  for (const auto& t : corpus)
    if (t.dim(0) != cfg.model.bands)
      throw ShapeError("corpus image has " + std::to_string(t.dim(0)) + " bands, config expects " +
                       std::to_string(cfg.model.bands));

  const auto teacher_cfg = VggConfig::toy(cfg.model.bands, cfg.kd.teacher_width, cfg.kd.teacher_depth);
  Rng rng = Rng(cfg.seed).fork(0x6b64ull);  // "kd"
  VggFeatures<float> teacher(teacher_cfg, rng, "teacher");
  if (!a.teacher.empty()) {
    const auto ck = read_checkpoint(a.teacher);
    for (auto* p : teacher.parameters().all()) {
      const auto* t = ck.find("param." + p->name);
      if (!t || t->shape != p->value.shape()) throw FormatError(a.teacher + ": missing or mis-shaped " + p->name);
      p->value = Tensor(t->shape, t->data);
    }
  }
  const int depth = static_cast<int>(teacher_cfg.channels.size());
  std::vector<SpectrumStats> stats;
  std::vector<CenteredFeatures> centered;
  std::vector<int> plan;
  for (int layer = 1; layer <= depth; ++layer) {
    centered.push_back(center(teacher_features(teacher, corpus, layer)));
    stats.push_back(spectrum(centered.back()));
    plan.push_back(select_channel_length(stats.back(), cfg.kd.mcev_threshold));
  }
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "spectrum.csv", spectrum_csv(stats));
  std::ostringstream plan_csv;
  plan_csv << "layer,teacher_channels,selected\n";
  for (int l = 0; l < depth; ++l) plan_csv << l + 1 << ',' << teacher_cfg.channels[static_cast<std::size_t>(l)] << ',' << plan[static_cast<std::size_t>(l)] << '\n';
  write_text(fs::path(c.out) / "plan.csv", plan_csv.str());

  EigenbasisOptions eo;
  eo.batch_size = cfg.kd.eigenbasis_batch;
  eo.epochs = cfg.kd.eigenbasis_epochs;
  eo.seed = cfg.seed;
  const auto bases = train_global_eigenbases(centered, plan, eo);

  DistilledStudent<float> student(teacher_cfg, plan, rng);
  BlockwiseOptions bo;
  bo.epochs = cfg.kd.blockwise_epochs;
  bo.batch_size = cfg.kd.eigenbasis_batch;
  bo.learning_rate = cfg.kd.blockwise_learning_rate;
  bo.seed = cfg.seed;
  const auto reports = train_blockwise(student, teacher, bases, corpus, bo);
  if (c.verbose)
    for (const auto& r : reports)
      err << "pair " << r.pair << " encoder " << r.encoder_loss << " decoder " << r.decoder_loss << '\n';

  Checkpoint ck;
  ck.fingerprint = cfg.fingerprint();
  ck.config = cfg.to_json().dump(2);
  std::size_t student_params = 0;
  for (int pair = 1; pair <= student.pairs(); ++pair) {
    for (const auto* p : student.encoder_parameters(pair).all()) {
      ck.tensors.push_back({"param.enc" + std::to_string(pair) + "." + p->name, p->value.shape(), p->value.to_vector()});
      student_params += p->value.size();
    }
    for (const auto* p : student.decoder_parameters(pair).all())
      ck.tensors.push_back({"param.dec" + std::to_string(pair) + "." + p->name, p->value.shape(), p->value.to_vector()});
  }
  for (const auto& b : bases) {
    const Tensor w = to_tensor<float>(b.w);
    ck.tensors.push_back({"basis." + std::to_string(b.layer), w.shape(), w.to_vector()});
  }
  write_checkpoint((fs::path(c.out) / "distilled.iidc").string(), ck);

  const auto distilled = teacher_cfg.distilled(plan);
  out << "plan " << join(plan) << '\n'
      << "round_trip_error " << round_trip_error(student, corpus, student.pairs()) << '\n'
      << "kd_ratio " << std::fixed << std::setprecision(2)
      << kd_ratio(static_cast<long long>(distilled.parameter_count()), static_cast<long long>(teacher_cfg.parameter_count()))
      << "%\n";
  (void)student_params;
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string data, resume;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> resume;
  std::optional<RunConfig> base;
  if (!a.resume.empty()) {
    resume = read_checkpoint(a.resume);
    base = checkpoint_config(*resume);
    if (resume->fingerprint != base->fingerprint())
      err << "warning: checkpoint fingerprint does not match its configuration; loading anyway\n";
  }
  const auto cfg = resolve(c, base);
  const std::string data = a.data.empty() ? cfg.paths.data : a.data;
  if (data.empty()) throw std::invalid_argument("train needs --data or paths.data");
  const auto samples = read_dataset(data);
  Model model(cfg);
  Optimizer<float> opt(parse_optimizer_kind(cfg.training.optimizer), cfg.training.learning_rate);
  if (resume) model.load_parameters(*resume, &opt);
  const auto report = train_model(model, opt, samples, [&](int epoch, double loss) {
    if (c.verbose) err << "epoch " << epoch << " mean_loss " << loss << '\n';
  });
  fs::create_directories(c.out);
  write_checkpoint((fs::path(c.out) / "checkpoint.iidc").string(), model.to_checkpoint(&opt));
  write_text(fs::path(c.out) / "loss.csv", loss_curve_csv(report.result.epoch_loss));
  out << "epochs " << report.result.epoch_loss.size() << "\nsteps " << report.result.steps << "\nfinal_loss "
      << (report.result.epoch_loss.empty() ? 0.0 : report.result.epoch_loss.back()) << '\n';
  if (report.result.stopped_early) out << "stopped_early yes\n";
  return kExitOk;
}

// ---- infer ----

struct InferArgs {
  std::string checkpoint, x, mask;
};

int cmd_infer(const Common& c, const InferArgs& a, std::ostream& out, std::ostream& err) {
  const auto ck = read_checkpoint(a.checkpoint);
  auto model = Model::from_checkpoint(ck, nullptr, [&](const std::string& w) { err << "warning: " << w << '\n'; });
  const auto x = read_iidr(a.x);
  std::optional<RasterGrid> mask;
  if (!a.mask.empty()) mask = read_iidr(a.mask);
  const std::uint64_t seed = c.seed ? *c.seed : model->config().seed;
  const auto y = infer(*model, x, mask ? &*mask : nullptr, seed);
  fs::create_directories(c.out);
  write_iidr((fs::path(c.out) / "estimate.iidr").string(), y);
  write_heatmap_png((fs::path(c.out) / "estimate.png").string(), y);
  out << "estimate " << y.width << "x" << y.height << " valid " << y.valid_count() << '\n';
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string pred, truth, mask, data, checkpoints, checkpoint;
  bool ablation = false;
  bool ols = false;
  bool train_small = false;
  std::vector<std::string> only;
  std::vector<double> density_range;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (!a.ablation && (!a.checkpoint.empty() || a.ols)) {
    // Held-out split of a dataset, scored by a trained model or by OLS.
    if (a.checkpoint.empty() == !a.ols) throw std::invalid_argument("give exactly one of --checkpoint and --ols");
    const auto cfg = resolve(c);
    const std::string data = a.data.empty() ? cfg.paths.data : a.data;
    if (data.empty()) throw std::invalid_argument("held-out scoring needs --data or paths.data");
    const auto samples = read_dataset(data);
    MetricReport report;
    if (a.ols) {
      report = evaluate_ols(samples, cfg.model.mask);
    } else {
      auto model = Model::from_checkpoint(read_checkpoint(a.checkpoint), nullptr,
                                          [&](const std::string& w) { err << "warning: " << w << '\n'; });
      report = evaluate(*model, samples, c.seed ? *c.seed : model->config().seed);
    }
    const auto csv = metrics_csv(report, a.density_range);
    if (!c.out.empty()) write_text(c.out, csv);
    out << csv;
    return kExitOk;
  }
  if (!a.ablation) {
    if (a.pred.empty() || a.truth.empty()) throw std::invalid_argument("eval needs --pred and --truth");
    if (!a.density_range.empty() && !(a.density_range[1] > a.density_range[0]))
      throw std::invalid_argument("--density-range needs MIN < MAX");
    const auto pred = read_iidr(a.pred), truth = read_iidr(a.truth);
    std::optional<ForestMask> mask;
    if (!a.mask.empty()) mask.emplace(read_iidr(a.mask));
    const auto report = metrics(pred, truth, mask ? &*mask : nullptr);
    const auto csv = metrics_csv(report, a.density_range);
    if (!c.out.empty()) write_text(c.out, csv);
    out << csv;
    return kExitOk;
  }
  const auto cfg = resolve(c);
  const std::string data = a.data.empty() ? cfg.paths.data : a.data;
  if (data.empty()) throw std::invalid_argument("ablation needs --data or paths.data");
  const auto samples = read_dataset(data);
  std::vector<AblationFlags> combos;
  for (const auto& f : ablation_combinations())
    if (a.only.empty() || std::find(a.only.begin(), a.only.end(), f.key()) != a.only.end()) combos.push_back(f);
  if (combos.empty()) throw std::invalid_argument("--only matched no ablation combination");
  auto runner = [&](const AblationFlags& flags) -> std::optional<MetricReport> {
    if (!a.checkpoints.empty()) {
      const auto path = fs::path(a.checkpoints) / (flags.key() + ".iidc");
      if (fs::exists(path)) {
        auto model = Model::from_checkpoint(read_checkpoint(path.string()), nullptr,
                                            [&](const std::string& w) { err << "warning: " << w << '\n'; });
        return evaluate(*model, samples, cfg.seed);
      }
    }
    if (!a.train_small) return std::nullopt;
    RunConfig run = cfg;
    run.apply_flags(flags);
    Model model(run);
    Optimizer<float> opt(parse_optimizer_kind(run.training.optimizer), run.training.learning_rate);
    train_model(model, opt, samples);
    if (c.verbose) err << "trained " << flags.key() << '\n';
    return evaluate(model, samples, cfg.seed);
  };
  const auto rows = ablation_grid(combos, runner);
  const auto csv = ablation_csv(rows);
  if (!c.out.empty()) write_text(c.out, csv);
  out << csv;
  return kExitOk;
}

// ---- synth ----

int cmd_synth(const Common& c, SynthOptions so, std::ostream& out) {
  if (c.seed) so.seed = *c.seed;
  const auto samples = synth_samples(so);
  write_dataset(c.out, samples);
  write_text(fs::path(c.out) / "generation.csv", synth_manifest(so));
  out << "tiles " << samples.size() << "\nsize " << so.size << '\n';
  return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const Common& c, bool corrupt, std::ostream& out) {
  const auto cfg = resolve(c);
  GradSuiteOptions o;
  o.seed = cfg.seed;
  o.corrupt = corrupt;
  const auto reports = gradient_suite(cfg, o);
  const auto csv = gradient_report_csv(reports);
  if (!c.out.empty()) write_text(c.out, csv);
  out << csv;
  const bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed; });
  out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Carbon-density estimation with a distilled implicit diffusion model", "iidm"};
  app.require_subcommand(1);
  Common common;

  auto* pre = app.add_subcommand("preprocess", "Survey + canopy height -> density raster and tiles");
  PreprocessArgs pa;
  add_common(pre, common, true);
  pre->add_option("--survey", pa.survey, "Survey CSV (id,v_ha,area_ha,pixels)")->required();
  pre->add_option("--canopy", pa.canopy, "Canopy-height IIDR raster")->required();
  pre->add_option("--mask", pa.mask, "Forest mask IIDR (0/255)");
  pre->add_option("--tile", pa.tile, "Tile size")->check(CLI::PositiveNumber);
  pre->add_option("--stride", pa.stride, "Tile stride (default: tile size)");

  auto* dis = app.add_subcommand("distill", "Spectra, channel plan, eigenbases and blockwise distillation");
  DistillArgs da;
  add_common(dis, common, false);
  dis->add_option("--corpus", da.corpus, "Directory of IIDR images");
  dis->add_option("--synth-corpus", da.synth_corpus, "Use N synthetic images instead of a corpus");
  dis->add_option("--teacher", da.teacher, "Teacher checkpoint (default: random-weight toy teacher)");
  dis->add_option("--unet-requirements", da.unet_requirements, "Print the UNet channel selection for these requirements");
  dis->add_option("--unet-structure", da.unet_structure, "UNet structure for --unet-requirements");

  auto* tr = app.add_subcommand("train", "Train the denoiser on a tile dataset");
  TrainArgs ta;
  add_common(tr, common, true);
  tr->add_option("--data", ta.data, "Dataset directory with manifest.csv");
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* inf = app.add_subcommand("infer", "Estimate a density raster");
  InferArgs ia;
  add_common(inf, common, true);
  inf->add_option("--checkpoint", ia.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--x", ia.x, "Band IIDR raster")->required()->check(CLI::ExistingFile);
  inf->add_option("--mask", ia.mask, "Forest mask IIDR")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Metrics of a prediction, a model or OLS on a held-out split, or the ablation grid");
  EvalArgs ea;
  add_common(ev, common, false);
  ev->add_option("--pred", ea.pred, "Predicted IIDR");
  ev->add_option("--truth", ea.truth, "Reference IIDR");
  ev->add_option("--mask", ea.mask, "Forest mask IIDR");
  ev->add_option("--density-range", ea.density_range, "MIN MAX (Mg/ha) the rasters were normalized with")
      ->expected(2);
  ev->add_option("--checkpoint", ea.checkpoint, "Score this model on --data's held-out split")
      ->check(CLI::ExistingFile);
  ev->add_flag("--ols", ea.ols, "Score the OLS baseline (fit on the train split) on --data's held-out split");
  ev->add_flag("--ablation", ea.ablation, "Evaluate the ablation grid on --data's held-out split");
  ev->add_option("--data", ea.data, "Dataset directory with manifest.csv");
  ev->add_option("--checkpoints", ea.checkpoints, "Directory of <key>.iidc checkpoints (ablation)");
  ev->add_flag("--train-small", ea.train_small, "Train missing combinations with the config's budget (ablation)");
  ev->add_option("--only", ea.only, "Restrict the grid to these keys (ablation)");

  auto* syn = app.add_subcommand("synth", "Generate the synthetic benchmark dataset");
  SynthOptions so;
  add_common(syn, common, true);
  syn->add_option("--count", so.count, "Number of tiles")->check(CLI::PositiveNumber);
  syn->add_option("--size", so.size, "Tile size (multiple of 16)");
  syn->add_option("--bands", so.bands, "Bands (>= 4)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  bool corrupt = false;
  add_common(gc, common, false);
  gc->add_flag("--corrupt", corrupt, "Include a deliberately broken primitive (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*pre) return cmd_preprocess(common, pa, out, err);
    if (*dis) {
      if (da.unet_requirements.empty() && common.out.empty()) throw std::invalid_argument("distill needs --out");
      return cmd_distill(common, da, out, err);
    }
    if (*tr) return cmd_train(common, ta, out, err);
    if (*inf) return cmd_infer(common, ia, out, err);
    if (*ev) return cmd_eval(common, ea, out, err);
    if (*syn) return cmd_synth(common, so, out);
    if (*gc) return cmd_gradcheck(common, corrupt, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace iidm
