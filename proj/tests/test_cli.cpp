#include "doctest.h"

#include "iidm/cli/commands.hpp"
#include "iidm/cli/pipeline.hpp"
#include "iidm/preprocess/preprocess.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

using namespace iidm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "iidm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("iidm_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 5;
  c.schedule.steps = 10;
  c.schedule.inference_steps = 4;
  c.model.unet = {4, 4, 8, 8};
  c.model.tile = 8;
  c.model.time_width = 8;
  c.model.fusion_min_level = 1;
  c.training.epochs = 2;
  c.training.batch_size = 2;
  return c;
}

void write_config(const fs::path& path, const RunConfig& c) {
  std::ofstream f(path);
  f << c.to_json().dump(2);
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("split_tiles and mosaic are inverses") {
  Rng rng(3);
  RasterGrid g(16, 16, 2);
  for (auto& v : g.values) v = static_cast<float>(rng.uniform());
  const auto tiles = split_tiles(g, 8);
  REQUIRE(tiles.size() == 4);
  // Tile 1 is the top-right quadrant.
  CHECK(tiles[1].at(1, 0, 0) == g.at(1, 0, 8));
  CHECK(tiles[2].at(0, 7, 7) == g.at(0, 15, 7));
  CHECK(bit_identical(mosaic(tiles, 16, 16), g));
  CHECK_THROWS_AS(split_tiles(RasterGrid(12, 16, 1), 8), ShapeError);
  CHECK_THROWS_AS(mosaic(tiles, 16, 24), ShapeError);
}

TEST_CASE("make_pair masks both sides") {
  Sample s{RasterGrid(2, 1, 2, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f}), RasterGrid(2, 1, 1, std::vector<float>{0.5f, 0.6f}),
           RasterGrid(2, 1, 1, std::vector<float>{255.0f, 0.0f}), "train"};
  const auto on = make_pair(s, true);
  CHECK(on.x.to_vector() == std::vector<float>{0.1f, 0.0f, 0.3f, 0.0f});
  CHECK(on.y0.to_vector() == std::vector<float>{0.5f, 0.0f});
  const auto off = make_pair(s, false);
  CHECK(off.x.to_vector() == std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
  s.y.values[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK(make_pair(s, false).y0[0] == 0.0f);
}

TEST_CASE("dataset directory round trip") {
  const auto dir = scratch("dataset");
  SynthOptions o;
  o.count = 5;
  o.size = 16;
  const auto samples = synth_samples(o);
  CHECK(samples.back().split == "test");
  CHECK(samples.front().split == "train");
  write_dataset(dir.string(), samples);
  const auto back = read_dataset(dir.string());
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(bit_identical(back[i].x, samples[i].x));
    CHECK(bit_identical(back[i].y, samples[i].y));
    CHECK(bit_identical(*back[i].mask, *samples[i].mask));
    CHECK(back[i].split == samples[i].split);
  }
  // A shape-inconsistent pair is named.
  write_iidr((dir / "0002_y.iidr").string(), RasterGrid(8, 8, 1));
  CHECK_THROWS_WITH_AS(read_dataset(dir.string()), doctest::Contains("sample 2"), ShapeError);
}

TEST_CASE("model checkpoints") {
  Optimizer<float> opt(OptimizerKind::adam, 1e-3);
  SynthOptions so;
  so.count = 3;
  so.size = 16;
  const auto samples = synth_samples(so);
  {
    RunConfig c = tiny_config();
    c.model.tile = 16;
    Model m(c);
    train_model(m, opt, samples);
    const auto ck = m.to_checkpoint(&opt);
    std::vector<std::string> warnings;
    Optimizer<float> opt2(OptimizerKind::adam, 1e-3);
    auto loaded = Model::from_checkpoint(ck, &opt2, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(warnings.empty());
    CHECK(opt2.step_count() == opt.step_count());
    CHECK(opt2.moments().size() == opt.moments().size());
    CHECK(bit_identical(loaded->to_checkpoint(&opt2), ck));

    auto tampered = ck;
    tampered.fingerprint ^= 1;
    Model::from_checkpoint(tampered, nullptr, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(warnings.size() == 1);

    auto missing = ck;
    missing.tensors.erase(missing.tensors.begin());
    CHECK_THROWS_AS(Model::from_checkpoint(missing), FormatError);
  }
  SUBCASE("zero epochs leaves the initialization unchanged") {
    RunConfig c = tiny_config();
    c.model.tile = 16;
    c.training.epochs = 0;
    Model a(c), b(c);
    Optimizer<float> o2(OptimizerKind::adam, 1e-3);
    train_model(a, o2, samples);
    CHECK(bit_identical(a.to_checkpoint(), b.to_checkpoint()));
  }
}

TEST_CASE("inference is seed-deterministic and masks non-forest pixels") {
  RunConfig c = tiny_config();
  Model model(c);
  SynthOptions so;
  so.count = 1;
  so.size = 16;
  const auto tile = synth_tile(so, 0);
  const auto a = infer(model, tile.x, &tile.mask, 11), b = infer(model, tile.x, &tile.mask, 11);
  const auto other = infer(model, tile.x, &tile.mask, 12);
  CHECK(a.width == 16);
  CHECK(a.height == 16);
  CHECK(bit_identical(a, b));
  CHECK_FALSE(bit_identical(a, other));
  ForestMask m(tile.mask);
  CHECK(a.valid_count() == m.forest_count());
  const auto unmasked = infer(model, tile.x, nullptr, 11);
  CHECK(unmasked.valid_count() == unmasked.pixel_count());
  CHECK_THROWS_AS(infer(model, RasterGrid(12, 12, 4), nullptr, 1), ShapeError);
  CHECK_THROWS_AS(infer(model, RasterGrid(16, 16, 3), nullptr, 1), ShapeError);
}

TEST_CASE("cli: exit codes and help") {
  CHECK(cli({}).code == kExitValidation);
  CHECK(cli({"bogus"}).code == kExitValidation);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"synth"}).code == kExitValidation);  // --out missing
  CHECK(cli({"infer", "--checkpoint", "/nonexistent", "--x", "/nonexistent", "--out", "/tmp"}).code == kExitValidation);
}

TEST_CASE("cli: preprocess") {
  const auto dir = scratch("preprocess");
  {
    std::ofstream f(dir / "survey.csv");
    f << "id,v_ha,area_ha,pixels\n"
      << "a,100,1,0:0;0:1;1:0;1:1\n"
      << "b,40,0.5,4:4;4:5;5:4\n";
  }
  RasterGrid canopy(8, 8, 1);
  for (int i = 0; i < 64; ++i) canopy.values[static_cast<std::size_t>(i)] = static_cast<float>(1 + i % 5);
  write_iidr((dir / "canopy.iidr").string(), canopy);
  RasterGrid mask(8, 8, 1, 255.0f);
  write_iidr((dir / "mask.iidr").string(), mask);

  auto r = cli({"preprocess", "--survey", (dir / "survey.csv").string(), "--canopy", (dir / "canopy.iidr").string(),
                "--mask", (dir / "mask.iidr").string(), "--tile", "4", "--out", (dir / "out").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto density = read_iidr((dir / "out" / "density.iidr").string());
  double a = 0, b = 0;
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) a += density.at(0, y, x);
  b = density.at(0, 4, 4) + density.at(0, 4, 5) + density.at(0, 5, 4);
  // Stocks computed independently: 2.439 * 1.90 * 0.5 * 0.5 * v_ha * area.
  CHECK(a == doctest::Approx(2.439 * 1.90 * 0.25 * 100 * 1).epsilon(1e-6));
  CHECK(b == doctest::Approx(2.439 * 1.90 * 0.25 * 40 * 0.5).epsilon(1e-6));
  CHECK(fs::exists(dir / "out" / "density_masked.iidr"));
  CHECK(read_file(dir / "out" / "tiles" / "manifest.csv").rfind("index,row,col,file\n0,0,0,tile_0000.iidr\n", 0) == 0);
  CHECK(fs::exists(dir / "out" / "tiles" / "tile_0003.iidr"));

  SUBCASE("empty survey") {
    std::ofstream(dir / "empty.csv") << "id,v_ha,area_ha,pixels\n";
    auto e = cli({"preprocess", "--survey", (dir / "empty.csv").string(), "--canopy", (dir / "canopy.iidr").string(),
                  "--out", (dir / "o2").string()});
    CHECK(e.code == kExitValidation);
    CHECK(e.err.find("no plaques") != std::string::npos);
  }
  SUBCASE("all-zero mask warns and yields all nodata") {
    write_iidr((dir / "zero.iidr").string(), RasterGrid(8, 8, 1, 0.0f));
    auto z = cli({"preprocess", "--survey", (dir / "survey.csv").string(), "--canopy", (dir / "canopy.iidr").string(),
                  "--mask", (dir / "zero.iidr").string(), "--tile", "8", "--out", (dir / "o3").string()});
    CHECK(z.code == kExitOk);
    CHECK(z.err.find("warning") != std::string::npos);
    CHECK(read_iidr((dir / "o3" / "density_masked.iidr").string()).valid_count() == 0);
  }
  SUBCASE("mismatched mask dims are named") {
    write_iidr((dir / "small.iidr").string(), RasterGrid(4, 4, 1, 255.0f));
    auto m = cli({"preprocess", "--survey", (dir / "survey.csv").string(), "--canopy", (dir / "canopy.iidr").string(),
                  "--mask", (dir / "small.iidr").string(), "--out", (dir / "o4").string()});
    CHECK(m.code == kExitValidation);
    CHECK(m.err.find("4x4") != std::string::npos);
  }
}

TEST_CASE("cli: synth, train, resume, infer, eval") {
  const auto dir = scratch("pipeline");
  RunConfig c = tiny_config();
  c.model.tile = 32;
  write_config(dir / "config.json", c);
  const auto data = (dir / "data").string();
  REQUIRE(cli({"synth", "--out", data, "--count", "5", "--size", "32", "--seed", "2"}).code == kExitOk);
  CHECK(fs::exists(dir / "data" / "generation.csv"));

  auto t = cli({"train", "--config", (dir / "config.json").string(), "--data", data, "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(t.code == kExitOk, t.err);
  CHECK(read_file(dir / "run" / "loss.csv").rfind("epoch,mean_loss\n", 0) == 0);
  const auto ck1 = read_file(dir / "run" / "checkpoint.iidc");

  // Identical config and seed give byte-identical artifacts.
  auto t2 = cli({"train", "--config", (dir / "config.json").string(), "--data", data, "--out", (dir / "run2").string()});
  REQUIRE(t2.code == kExitOk);
  CHECK(read_file(dir / "run2" / "checkpoint.iidc") == ck1);
  CHECK(read_file(dir / "run2" / "loss.csv") == read_file(dir / "run" / "loss.csv"));

  auto resumed = cli({"train", "--resume", (dir / "run" / "checkpoint.iidc").string(), "--data", data, "--set",
                      "training.epochs=1", "--out", (dir / "run3").string()});
  REQUIRE_MESSAGE(resumed.code == kExitOk, resumed.err);
  const auto ck3 = read_checkpoint((dir / "run3" / "checkpoint.iidc").string());
  CHECK(ck3.find("opt.step")->data[0] > read_checkpoint((dir / "run" / "checkpoint.iidc").string()).find("opt.step")->data[0]);

  const auto x = (dir / "data" / "0004_x.iidr").string(), mask = (dir / "data" / "0004_mask.iidr").string();
  auto i1 = cli({"infer", "--checkpoint", (dir / "run" / "checkpoint.iidc").string(), "--x", x, "--mask", mask, "--out",
                 (dir / "inf1").string(), "--seed", "9"});
  REQUIRE_MESSAGE(i1.code == kExitOk, i1.err);
  auto i2 = cli({"infer", "--checkpoint", (dir / "run" / "checkpoint.iidc").string(), "--x", x, "--mask", mask, "--out",
                 (dir / "inf2").string(), "--seed", "9"});
  CHECK(read_file(dir / "inf1" / "estimate.iidr") == read_file(dir / "inf2" / "estimate.iidr"));
  const auto png = read_png((dir / "inf1" / "estimate.png").string());
  CHECK(png.width == 32);
  CHECK(png.height == 32);

  auto unmasked = cli({"infer", "--checkpoint", (dir / "run" / "checkpoint.iidc").string(), "--x", x, "--out",
                       (dir / "inf0").string()});
  REQUIRE(unmasked.code == kExitOk);
  CHECK(read_iidr((dir / "inf0" / "estimate.iidr").string()).valid_count() == 32u * 32u);
  // Scored under an all-forest mask: a small synthetic tile need not contain a
  // fully forested 11x11 SSIM window.
  write_iidr((dir / "all_forest.iidr").string(), RasterGrid(32, 32, 1, 255.0f));
  auto e = cli({"eval", "--pred", (dir / "inf0" / "estimate.iidr").string(), "--truth",
                (dir / "data" / "0004_y.iidr").string(), "--mask", (dir / "all_forest.iidr").string(), "--out",
                (dir / "m.csv").string()});
  REQUIRE_MESSAGE(e.code == kExitOk, e.err);
  CHECK(e.out.rfind("mae,mse,rmse,psnr,ssim,n_valid\n", 0) == 0);
  CHECK(read_file(dir / "m.csv") == e.out);

  const auto y = (dir / "data" / "0004_y.iidr").string();
  auto ident = cli({"eval", "--pred", y, "--truth", y});
  CHECK(ident.out.find(",1,") != std::string::npos);  // SSIM 1 on identical inputs

  // A constant 0.1 normalized error over a 0..200 Mg/ha range is 20 Mg/ha.
  write_iidr((dir / "zero.iidr").string(), RasterGrid(16, 16, 1, 0.0f));
  write_iidr((dir / "tenth.iidr").string(), RasterGrid(16, 16, 1, 0.1f));
  auto mg = cli({"eval", "--pred", (dir / "tenth.iidr").string(), "--truth", (dir / "zero.iidr").string(),
                 "--density-range", "0", "200"});
  REQUIRE_MESSAGE(mg.code == kExitOk, mg.err);
  CHECK(mg.out.rfind("mae,mse,rmse,psnr,ssim,n_valid,rmse_mg_ha\n", 0) == 0);
  CHECK(std::stod(mg.out.substr(mg.out.rfind(',') + 1)) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(cli({"eval", "--pred", y, "--truth", y, "--density-range", "5", "5"}).code == kExitValidation);

  SUBCASE("fingerprint mismatch warns but proceeds") {
    auto ck = read_checkpoint((dir / "run" / "checkpoint.iidc").string());
    ck.fingerprint ^= 0xff;
    write_checkpoint((dir / "tampered.iidc").string(), ck);
    auto w = cli({"infer", "--checkpoint", (dir / "tampered.iidc").string(), "--x", x, "--out", (dir / "inf3").string()});
    CHECK(w.code == kExitOk);
    CHECK(w.err.find("fingerprint") != std::string::npos);
  }
  SUBCASE("ablation grid without checkpoints or train-small is rejected") {
    auto a = cli({"eval", "--ablation", "--config", (dir / "config.json").string(), "--data", data, "--only",
                  "mask-none-full-attn"});
    CHECK(a.code == kExitValidation);
    CHECK(a.err.find("mask-none-full-attn") != std::string::npos);
  }
  SUBCASE("ablation grid in train-small mode") {
    // 64x64 tiles so the held-out forest area holds whole SSIM windows.
    const auto big = (dir / "big").string();
    REQUIRE(cli({"synth", "--out", big, "--count", "5", "--size", "64"}).code == kExitOk);
    auto a = cli({"eval", "--ablation", "--train-small", "--config", (dir / "config.json").string(), "--set",
                  "model.tile=64", "--set", "training.epochs=1", "--data", big, "--only", "mask-none-full-attn", "--only",
                  "nomask-none-full-nofusion"});
    REQUIRE_MESSAGE(a.code == kExitOk, a.err);
    CHECK(a.out.rfind("mask,extractor,unet,fusion,mae,rmse,ssim,psnr,n_valid\n", 0) == 0);
    CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 3);
  }
  SUBCASE("held-out scoring of a checkpoint and of OLS") {
    const auto big = (dir / "big").string();
    REQUIRE(cli({"synth", "--out", big, "--count", "5", "--size", "64"}).code == kExitOk);
    const auto run64 = (dir / "run64").string();
    REQUIRE(cli({"train", "--config", (dir / "config.json").string(), "--set", "model.tile=64", "--set",
                 "training.epochs=1", "--data", big, "--out", run64})
                .code == kExitOk);
    const auto ck = (fs::path(run64) / "checkpoint.iidc").string();
    auto m1 = cli({"eval", "--data", big, "--checkpoint", ck});
    REQUIRE_MESSAGE(m1.code == kExitOk, m1.err);
    CHECK(m1.out.rfind("mae,mse,rmse,psnr,ssim,n_valid\n", 0) == 0);
    CHECK(cli({"eval", "--data", big, "--checkpoint", ck}).out == m1.out);

    auto o = cli({"eval", "--data", big, "--ols"});
    REQUIRE_MESSAGE(o.code == kExitOk, o.err);
    const auto ols = evaluate_ols(read_dataset(big), true);
    std::ostringstream row;
    row << std::setprecision(9) << ols.mae << ',' << ols.mse << ',' << ols.rmse << ',';
    CHECK(o.out.find("\n" + row.str()) != std::string::npos);

    CHECK(cli({"eval", "--data", big, "--ols", "--checkpoint", ck}).code == kExitValidation);
    CHECK(cli({"eval", "--ols"}).code == kExitValidation);
  }
}

TEST_CASE("cli: distill") {
  const auto dir = scratch("distill");
  SUBCASE("UNet selection for the published requirement column") {
    auto r = cli({"distill", "--unet-requirements", "5,37,65,82,142,167,286,335,524,621"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out == "unet_channels 44,44,88,88,176,176,352,352,704,704\n");
  }
  SUBCASE("toy teacher on a synthetic corpus") {
    auto r = cli({"distill", "--synth-corpus", "6", "--set", "model.tile=16", "--set", "kd.eigenbasis_epochs=20", "--set",
                  "kd.blockwise_epochs=2", "--set", "kd.teacher_width=8", "--out", (dir / "a").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.find("kd_ratio ") != std::string::npos);
    std::istringstream plan(read_file(dir / "a" / "plan.csv"));
    std::string line;
    std::getline(plan, line);
    CHECK(line == "layer,teacher_channels,selected");
    int rows = 0;
    while (std::getline(plan, line)) {
      int layer, full, sel;
      char c1, c2;
      std::istringstream(line) >> layer >> c1 >> full >> c2 >> sel;
      CHECK(sel <= full);
      CHECK(sel >= 1);
      ++rows;
    }
    CHECK(rows == 2);
    CHECK(read_file(dir / "a" / "spectrum.csv").rfind("layer,channel_index,mEV,mCEV\n", 0) == 0);
    const auto ck = read_checkpoint((dir / "a" / "distilled.iidc").string());
    CHECK(ck.find("basis.1") != nullptr);
  }
  SUBCASE("threshold 1 keeps every channel") {
    auto r = cli({"distill", "--synth-corpus", "4", "--set", "model.tile=16", "--set", "kd.mcev_threshold=1", "--set",
                  "kd.eigenbasis_epochs=2", "--set", "kd.blockwise_epochs=1", "--set", "kd.teacher_width=6", "--out",
                  (dir / "b").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.find("plan 6,6\n") != std::string::npos);
    CHECK(r.out.find("kd_ratio 0.00%") != std::string::npos);
  }
  SUBCASE("empty corpus is rejected") {
    fs::create_directories(dir / "empty");
    auto r = cli({"distill", "--corpus", (dir / "empty").string(), "--out", (dir / "c").string()});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("empty") != std::string::npos);
  }
}

TEST_CASE("cli: gradcheck") {
  auto ok = cli({"gradcheck", "--set", "model.unet=[4,4,8,8]", "--set", "model.tile=8"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.rfind("block,max_rel_error,entries,passed,worst_entry\n", 0) == 0);
  for (const char* block : {"conv2d", "softmax_rows", "cross_attention_fusion", "implicit_upsampler", "denoiser"})
    CHECK(ok.out.find(std::string("\n") + block + ",") != std::string::npos);
  auto bad = cli({"gradcheck", "--corrupt", "--set", "model.unet=[4,4,8,8]", "--set", "model.tile=8"});
  CHECK(bad.code == kExitNumeric);
  CHECK(bad.out.find("corrupted_square") != std::string::npos);
  CHECK(bad.out.find("gradcheck FAILED") != std::string::npos);
}
