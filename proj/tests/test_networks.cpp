#include "doctest.h"

#include "iidm/networks/denoiser.hpp"
#include "iidm/numerics/gradcheck.hpp"

#include <cmath>

using namespace iidm;

namespace {

TensorD random_tensor(Rng& rng, const Shape& shape, double scale = 1.0) {
  auto t = draw_normal<double>(rng, shape);
  t.vec() *= scale;
  return t;
}

template <typename S>
void zero_all(ParameterStore<S>& store) {
  for (auto* p : store.all()) p->value.fill(S(0));
}

DenoiserConfig tiny_denoiser(bool extractor, bool fusion) {
  DenoiserConfig c;
  c.bands = 2;
  if (extractor) c.extractor = VggConfig::toy(2, 3, 2);
  c.unet = UNetConfig{{3, 4, 5, 6}};
  c.fusion = fusion;
  c.fusion_spec.min_level = 0;
  c.fusion_spec.heads = 2;
  c.fusion_spec.proj_width = 2;  // divides 4 and 6
  c.time_width = 5;
  return c;
}

}  // namespace

TEST_CASE("feature head") {
  Rng rng(1);
  SUBCASE("zero image gives zero features") {
    VggFeatures<float> vgg(VggConfig::toy(4, 8, 2), rng);
    Tape<float> tape;
    auto f = vgg.forward(tape, tape.constant(Tensor({4, 16, 16})));
    CHECK(f.value().vec().cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("full-resolution 64-channel head") {
    VggFeatures<float> vgg(VggConfig::toy(4, 64, 1), rng);
    Tape<float> tape;
    auto f = vgg.forward(tape, tape.constant(draw_normal<float>(rng, {4, 256, 256})));
    CHECK(f.shape() == Shape{64, 256, 256});
  }
  SUBCASE("VGG-19 head is the first block and pools come after it") {
    auto c = VggConfig::vgg(19, 4);
    CHECK(c.depth() == 16);
    CHECK(c.head_depth() == 2);
    CHECK(c.head_channels() == 64);
    VggFeatures<float> vgg(VggConfig{3, {4, 4, 6}, {false, true, false}}, rng);
    Tape<float> tape;
    auto outs = vgg.layer_outputs(tape, tape.constant(Tensor({3, 8, 8})), 3);
    CHECK(outs[1].shape() == Shape{4, 8, 8});
    CHECK(outs[2].shape() == Shape{6, 4, 4});
  }
  SUBCASE("channel mismatch rejected") {
    VggFeatures<float> vgg(VggConfig::toy(4, 8, 1), rng);
    Tape<float> tape;
    CHECK_THROWS_AS(vgg.forward(tape, tape.constant(Tensor({3, 8, 8}))), ShapeError);
  }
  SUBCASE("distilled head is much smaller than the teacher") {
    auto teacher = VggConfig::toy();
    auto student = teacher.distilled({6, 6});
    // 9 C_in C_out + C_out per layer, evaluated by hand.
    CHECK(teacher.parameter_count() == (9 * 4 * 32 + 32) + (9 * 32 * 32 + 32));
    CHECK(student.parameter_count() == (9 * 4 * 6 + 6) + (9 * 6 * 6 + 6));
    VggFeatures<float> built(student, rng);
    CHECK(built.parameters().parameter_count() == student.parameter_count());
    const double ratio = 100.0 * (1.0 - static_cast<double>(student.parameter_count()) / teacher.parameter_count());
    CHECK(ratio > 90.0);
    CHECK_THROWS(teacher.distilled({33, 6}));
    CHECK_THROWS(teacher.distilled({6}));
  }
}

TEST_CASE("condition pyramid") {
  Rng rng(2);
  ParameterStore<float> store;
  SUBCASE("halving per level") {
    ConditionPyramid<float> pyr(store, "p", 64, 4, rng);
    Tape<float> tape;
    auto levels = pyr(tape, tape.constant(Tensor({64, 256, 256})));
    REQUIRE(levels.size() == 5);
    CHECK(levels[1].shape() == Shape{64, 128, 128});
    CHECK(levels[2].shape() == Shape{64, 64, 64});
    CHECK(levels[3].shape() == Shape{64, 32, 32});
    CHECK(levels[4].shape() == Shape{64, 16, 16});
  }
  SUBCASE("zero levels") {
    ConditionPyramid<float> pyr(store, "p", 3, 0, rng);
    Tape<float> tape;
    auto f0 = tape.constant(Tensor({3, 5, 5}));
    auto levels = pyr(tape, f0);
    REQUIRE(levels.size() == 1);
    CHECK(levels[0].id() == f0.id());
  }
  SUBCASE("indivisible dims rejected") {
    ConditionPyramid<float> pyr(store, "p", 3, 2, rng);
    Tape<float> tape;
    CHECK_THROWS_AS(pyr(tape, tape.constant(Tensor({3, 6, 8}))), ShapeError);
  }
}

TEST_CASE("gradient reaches f0 through every pyramid level") {
  Rng rng(3);
  ParameterStore<double> store;
  ConditionPyramid<double> pyr(store, "p", 2, 3, rng);
  Parameter<double> f0("f0", random_tensor(rng, {2, 8, 8}));
  auto params = store.all();
  params.push_back(&f0);
  auto report = check_gradients<double>("pyramid", params, [&](Tape<double>& t) {
    return sum_squares(pyr(t, t.parameter(f0)).back());
  });
  CHECK_MESSAGE(report.passed, report.worst_entry);
}

TEST_CASE("cross-attention fusion") {
  Rng rng(4);
  SUBCASE("constant keys give uniform attention and the mean of the values") {
    ParameterStore<double> store;
    CrossAttentionFusion<double> fuse(store, "f", 4, 3, FusionSpec{}, rng);
    TensorD cond({3, 3, 3});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 9; ++i) cond[static_cast<std::size_t>(c * 9 + i)] = (c == 0) ? 2.0 : 0.1 * i;
    // Keys only see channel 0, which is constant.
    fuse.key.weight->value.matrix().col(1).setZero();
    fuse.key.weight->value.matrix().col(2).setZero();
    Tape<double> tape;
    auto h = tape.constant(random_tensor(rng, {4, 3, 3}));
    auto c = tape.constant(cond);
    auto a = fuse.attention_weights(tape, h, c).value();
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 9; ++j) CHECK(a.matrix()(i, j) == doctest::Approx(1.0 / 9).epsilon(1e-12));
    auto out = fuse.attend(tape, h, c).value();
    auto v = fuse.value(tape, tape.constant(cond.reshaped({3, 9}))).value();
    for (int r = 0; r < 4; ++r)
      for (int j = 0; j < 9; ++j) CHECK(out.matrix()(r, j) == doctest::Approx(v.matrix().row(r).mean()).epsilon(1e-12));
  }
  SUBCASE("single position returns its value vector") {
    ParameterStore<double> store;
    CrossAttentionFusion<double> fuse(store, "f", 4, 2, FusionSpec{2, 0, 2.0, 0}, rng);
    Tape<double> tape;
    auto cond = random_tensor(rng, {2, 1, 1});
    auto out = fuse.attend(tape, tape.constant(random_tensor(rng, {4, 1, 1})), tape.constant(cond)).value();
    auto v = fuse.value(tape, tape.constant(cond.reshaped({2, 1}))).value();
    for (int r = 0; r < 4; ++r) CHECK(out[static_cast<std::size_t>(r)] == doctest::Approx(v[static_cast<std::size_t>(r)]));
  }
  SUBCASE("two positions against a hand-computed softmax") {
    ParameterStore<double> store;
    CrossAttentionFusion<double> fuse(store, "f", 1, 1, FusionSpec{1, 1, 1.0, 0}, rng);
    fuse.query.weight->value[0] = 1.0;
    fuse.query.bias->value[0] = 0.0;
    fuse.key.weight->value[0] = 2.0;
    fuse.key.bias->value[0] = 0.0;
    fuse.value.weight->value[0] = 3.0;
    fuse.value.bias->value[0] = 1.0;
    Tape<double> tape;
    auto h = tape.constant(TensorD({1, 1, 2}, {0.5, -1.0}));
    auto c = tape.constant(TensorD({1, 1, 2}, {1.0, 0.25}));
    auto out = fuse.attend(tape, h, c).value();
    // q = h, k = 2c = (2, 0.5), v = 3c + 1 = (4, 1.75); d = 1.
    const double k0 = 2.0, k1 = 0.5, v0 = 4.0, v1 = 1.75;
    for (int i = 0; i < 2; ++i) {
      const double q = i == 0 ? 0.5 : -1.0;
      const double e0 = std::exp(q * k0), e1 = std::exp(q * k1);
      CHECK(out[static_cast<std::size_t>(i)] == doctest::Approx((e0 * v0 + e1 * v1) / (e0 + e1)).epsilon(1e-5));
    }
  }
  SUBCASE("attention rows are probability vectors") {
    ParameterStore<float> store;
    CrossAttentionFusion<float> fuse(store, "f", 8, 5, FusionSpec{2, 4, 2.0, 0}, rng);
    Tape<float> tape;
    auto h = tape.constant(draw_normal<float>(rng, {8, 4, 4}));
    auto c = tape.constant(draw_normal<float>(rng, {5, 4, 4}));
    for (int head = 0; head < 2; ++head) {
      auto a = fuse.attention_weights(tape, h, c, head).value();
      for (int r = 0; r < 16; ++r) {
        CHECK(std::abs(a.matrix().row(r).sum() - 1.0f) < 1e-6f);
        CHECK(a.matrix().row(r).minCoeff() >= 0.0f);
      }
    }
    CHECK(fuse(tape, h, c).shape() == Shape{8, 4, 4});
  }
  SUBCASE("rejections") {
    ParameterStore<float> store;
    CHECK_THROWS(CrossAttentionFusion<float>(store, "bad", 6, 2, FusionSpec{1, 4, 2.0, 0}, rng));
    CrossAttentionFusion<float> fuse(store, "f", 4, 2, FusionSpec{}, rng);
    Tape<float> tape;
    CHECK_THROWS_AS(fuse(tape, tape.constant(Tensor({4, 4, 4})), tape.constant(Tensor({2, 2, 2}))), ShapeError);
  }
  SUBCASE("gradients") {
    ParameterStore<double> store;
    CrossAttentionFusion<double> fuse(store, "f", 4, 3, FusionSpec{2, 2, 1.5, 0}, rng);
    Parameter<double> h("h", random_tensor(rng, {4, 2, 3})), c("c", random_tensor(rng, {3, 2, 3}));
    auto params = store.all();
    params.push_back(&h);
    params.push_back(&c);
    GradCheckOptions opt;
    opt.step = 1e-6;
    auto report = check_gradients<double>(
        "fusion", params, [&](Tape<double>& t) { return sum_squares(fuse(t, t.parameter(h), t.parameter(c))); }, opt);
    CHECK_MESSAGE(report.passed, report.worst_entry);
  }
}

TEST_CASE("implicit upsampler") {
  Rng rng(5);
  SUBCASE("identity construction reproduces nearest-neighbour upsampling") {
    ParameterStore<double> store;
    const int c = 3;
    ImplicitUpsampler<double> up(store, "u", c, c, 2 * c, rng);
    // relu(z) - relu(-z) = z, coordinates ignored.
    up.w_feature->value.matrix().setZero();
    up.w_feature->value.matrix().topRows(c).setIdentity();
    up.w_feature->value.matrix().bottomRows(c) = -Eigen::MatrixXd::Identity(c, c);
    up.w_coord->value.fill(0.0);
    up.b1->value.fill(0.0);
    up.w2->value.matrix() << Eigen::MatrixXd::Identity(c, c), -Eigen::MatrixXd::Identity(c, c);
    up.b2->value.fill(0.0);
    auto coarse = random_tensor(rng, {c, 4, 5});
    Tape<double> tape;
    auto out = up(tape, tape.constant(coarse)).value();
    REQUIRE(out.shape() == Shape{c, 8, 10});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x) CHECK(out.at(ch, y, x) == coarse.at(ch, y / 2, x / 2));
  }
  SUBCASE("shape contract and rejection") {
    ParameterStore<float> store;
    ImplicitUpsampler<float> up(store, "u", 6, 4, 8, rng);
    Tape<float> tape;
    auto coarse = tape.constant(draw_normal<float>(rng, {6, 16, 16}));
    CHECK(up(tape, coarse).shape() == Shape{4, 32, 32});
    CHECK_THROWS_AS(up(tape, coarse, {33, 32}), ShapeError);
    CHECK_THROWS_AS(up(tape, coarse, {16, 16}), ShapeError);
    CHECK(store.parameter_count() == ImplicitUpsampler<float>::parameter_count(6, 4, 8));
  }
  SUBCASE("grid evaluation agrees with continuous queries at fine-cell centres") {
    ParameterStore<double> store;
    ImplicitUpsampler<double> up(store, "u", 2, 3, 5, rng);
    auto coarse = random_tensor(rng, {2, 3, 3});
    Tape<double> tape;
    auto out = up(tape, tape.constant(coarse)).value();
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        auto q = up.query(coarse, (y + 0.5) / 2.0, (x + 0.5) / 2.0);
        for (int c = 0; c < 3; ++c) CHECK(out.at(c, y, x) == doctest::Approx(q(c)).epsilon(1e-12));
      }
  }
  SUBCASE("query is continuous in the offset") {
    ParameterStore<double> store;
    ImplicitUpsampler<double> up(store, "u", 2, 2, 6, rng);
    auto coarse = random_tensor(rng, {2, 2, 2});
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const double y = 0.05 + 0.9 * rng.uniform(), x = 0.05 + 0.9 * rng.uniform();
      worst = std::max(worst, (up.query(coarse, y + 1e-7, x) - up.query(coarse, y, x)).norm());
    }
    CHECK(worst < 1e-5);
  }
  SUBCASE("gradient wrt coarse features") {
    ParameterStore<double> store;
    ImplicitUpsampler<double> up(store, "u", 3, 2, 4, rng);
    Parameter<double> coarse("coarse", random_tensor(rng, {3, 3, 2}));
    auto params = store.all();
    params.push_back(&coarse);
    GradCheckOptions opt;
    opt.step = 1e-6;
    auto report = check_gradients<double>(
        "implicit", params, [&](Tape<double>& t) { return sum_squares(up(t, t.parameter(coarse))); }, opt);
    CHECK_MESSAGE(report.passed, report.worst_entry);
  }
}

TEST_CASE("unet") {
  Rng rng(6);
  SUBCASE("output keeps the spatial size of y_t") {
    for (auto cfg : {UNetConfig::doubling(4, 1), UNetConfig::doubling(4, 3), UNetConfig{{3, 5, 7, 2, 6, 6}}}) {
      ParameterStore<float> store;
      UNetOptions opt;
      opt.in_channels = 3;
      opt.time_width = 8;
      UNet<float> unet(cfg, opt, store, rng);
      Tape<float> tape;
      auto out = unet(tape, tape.constant(draw_normal<float>(rng, {3, 16, 24})), {},
                      tape.constant(draw_normal<float>(rng, {8, 1})));
      CHECK(out.shape() == Shape{1, 16, 24});
      CHECK(store.parameter_count() == UNet<float>::parameter_count(cfg, opt));
    }
  }
  SUBCASE("zero weights give zero output") {
    ParameterStore<float> store;
    UNetOptions opt;
    opt.in_channels = 2;
    opt.cond_channels = 2;
    opt.fusion.min_level = 0;
    opt.time_width = 4;
    UNet<float> unet(UNetConfig::doubling(4, 2), opt, store, rng);
    zero_all(store);
    Tape<float> tape;
    auto f0 = tape.constant(draw_normal<float>(rng, {2, 8, 8}));
    auto f1 = tape.constant(draw_normal<float>(rng, {2, 4, 4}));
    auto out = unet(tape, tape.constant(draw_normal<float>(rng, {2, 8, 8})), {f0, f1},
                    tape.constant(draw_normal<float>(rng, {4, 1})));
    CHECK(out.value().vec().cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("indivisible input rejected with the level count") {
    ParameterStore<float> store;
    UNet<float> unet(UNetConfig::doubling(4, 3), UNetOptions{}, store, rng);
    Tape<float> tape;
    CHECK_THROWS_AS(unet(tape, tape.constant(Tensor({1, 10, 10})), {}, tape.constant(Tensor({64, 1}))), ShapeError);
  }
  SUBCASE("distilled tuple is smaller, per level and in total") {
    UNetOptions opt;
    opt.in_channels = 5;
    const auto teacher = UNetConfig::teacher(), student = UNetConfig::distilled();
    for (std::size_t i = 0; i < teacher.channels.size(); ++i) CHECK(student.channels[i] < teacher.channels[i]);
    const auto big = UNet<float>::parameter_count(teacher, opt);
    const auto small = UNet<float>::parameter_count(student, opt);
    CHECK(small < big);
    // Conv parameters scale with the square of the width ratio 44/64.
    const double ratio = 100.0 * (1.0 - static_cast<double>(small) / static_cast<double>(big));
    CHECK(ratio == doctest::Approx(100.0 * (1.0 - (44.0 / 64) * (44.0 / 64))).epsilon(0.02));
  }
}

TEST_CASE("denoiser") {
  Rng rng(7);
  SUBCASE("shape preservation and closed-form parameter count") {
    for (bool ex : {false, true})
      for (bool fu : {false, true}) {
        auto cfg = tiny_denoiser(ex, fu);
        Denoiser<float> model(cfg, rng);
        CHECK(model.parameters().parameter_count() == Denoiser<float>::parameter_count(cfg));
        Tape<float> tape;
        auto out = model(tape, draw_normal<float>(rng, {2, 8, 12}), tape.constant(draw_normal<float>(rng, {1, 8, 12})), 0.3);
        CHECK(out.shape() == Shape{1, 8, 12});
      }
  }
  SUBCASE("every parameter receives gradient") {
    for (bool ex : {false, true})
      for (bool fu : {false, true}) {
        Denoiser<float> model(tiny_denoiser(ex, fu), rng);
        for (int sample = 0; sample < 2; ++sample) {
          Tape<float> tape;
          auto out = model(tape, draw_normal<float>(rng, {2, 8, 8}), tape.constant(draw_normal<float>(rng, {1, 8, 8})),
                           rng.uniform());
          tape.backward(abs_mean(sub(out, tape.constant(draw_normal<float>(rng, {1, 8, 8})))));
        }
        for (const auto* p : model.parameters().all())
          CHECK_MESSAGE(p->grad.vec().cwiseAbs().maxCoeff() > 0.0f, p->name);
      }
  }
  SUBCASE("x with the wrong band count is rejected") {
    Denoiser<float> model(tiny_denoiser(true, true), rng);
    Tape<float> tape;
    CHECK_THROWS_AS(model(tape, Tensor({3, 8, 8}), tape.constant(Tensor({1, 8, 8})), 0.5), ShapeError);
  }
  SUBCASE("assembled model passes the finite-difference check") {
    Denoiser<double> model(tiny_denoiser(true, true), rng);
    const auto x = random_tensor(rng, {2, 4, 4});
    const auto y = random_tensor(rng, {1, 4, 4});
    const auto target = random_tensor(rng, {1, 4, 4});
    GradCheckOptions opt;
    opt.step = 1e-5;
    auto report = check_gradients<double>("denoiser", model.parameters().all(), [&](Tape<double>& t) {
      return sum_squares(sub(model(t, x, t.constant(y), 0.4), t.constant(target)));
    }, opt);
    CHECK_MESSAGE(report.passed, report.worst_entry << " rel=" << report.max_rel_error);
  }
}
