#include "iidm/cli/gradsuite.hpp"

#include "iidm/networks/denoiser.hpp"
#include "iidm/networks/fusion.hpp"
#include "iidm/networks/implicit.hpp"
#include "iidm/numerics/ops.hpp"

#include <functional>
#include <sstream>

namespace iidm {

namespace {

using Fn = std::function<Var<double>(Tape<double>&)>;

TensorD random_tensor(Rng& rng, const Shape& shape, double scale = 1.0) {
  auto t = draw_normal<double>(rng, shape);
  t.vec() *= scale;
  return t;
}

}  // namespace

std::vector<GradCheckReport> gradient_suite(const RunConfig& config, const GradSuiteOptions& options) {
  Rng rng = Rng(options.seed).fork(0x67726164ull);
  std::vector<GradCheckReport> out;
  const int c = 2, h = 4, w = 4;
  Parameter<double> x("x", random_tensor(rng, {c, h, w})), y("y", random_tensor(rng, {c, h, w}));
  // Keep entries clear of relu/abs kinks.
  for (auto& v : x.value.storage())
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  Parameter<double> k("k", random_tensor(rng, {3, c, 3, 3}, 0.5)), b("b", random_tensor(rng, {3}));
  Parameter<double> m("m", random_tensor(rng, {3, 4})), n("n", random_tensor(rng, {4, 5}));
  Parameter<double> bias("bias", random_tensor(rng, {c}));
  const TensorD weights = random_tensor(rng, {c, h, w});
  const TensorD mixer = random_tensor(rng, {3, 4});
  auto weighted = [&](Tape<double>& t, const Var<double>& v) {
    return sum(mul(v, t.constant(weights.reshaped(v.shape()))));
  };
  std::vector<Parameter<double>*> xy{&x, &y};
  struct Case {
    std::string name;
    std::vector<Parameter<double>*> params;
    Fn loss;
  };
  std::vector<Case> cases = {
      {"add", xy, [&](Tape<double>& t) { return weighted(t, add(t.parameter(x), t.parameter(y))); }},
      {"sub", xy, [&](Tape<double>& t) { return weighted(t, sub(t.parameter(x), t.parameter(y))); }},
      {"mul", xy, [&](Tape<double>& t) { return weighted(t, mul(t.parameter(x), t.parameter(y))); }},
      {"scale", {&x}, [&](Tape<double>& t) { return weighted(t, scale(t.parameter(x), -1.7)); }},
      {"relu", {&x}, [&](Tape<double>& t) { return weighted(t, relu(t.parameter(x))); }},
      {"add_channel_bias", {&x, &bias},
       [&](Tape<double>& t) { return weighted(t, add_channel_bias(t.parameter(x), t.parameter(bias))); }},
      {"conv2d", {&x, &k, &b},
       [&](Tape<double>& t) { return sum_squares(conv2d(t.parameter(x), t.parameter(k), t.parameter(b), 1, 1)); }},
      {"conv2d_strided", {&x, &k, &b},
       [&](Tape<double>& t) { return sum_squares(conv2d(t.parameter(x), t.parameter(k), t.parameter(b), 2, 1)); }},
      {"matmul", {&m, &n}, [&](Tape<double>& t) { return sum_squares(matmul(t.parameter(m), t.parameter(n))); }},
      {"matmul_transposed", {&m, &n},
       [&](Tape<double>& t) { return sum_squares(matmul(t.parameter(n), t.parameter(m), true, true)); }},
      {"softmax_rows", {&m}, [&](Tape<double>& t) { return sum_squares(softmax_rows(t.parameter(m))); }},
      {"mean", {&x}, [&](Tape<double>& t) { return mean(mul(t.parameter(x), t.parameter(x))); }},
      {"abs_mean", {&x}, [&](Tape<double>& t) { return abs_mean(t.parameter(x)); }},
      {"concat_slice", xy,
       [&](Tape<double>& t) {
         auto cat = concat<double>({t.parameter(x), t.parameter(y)});
         return sum_squares(mul(slice(cat, 1, 3), slice(cat, 0, 3)));
       }},
      {"reshape", {&m}, [&](Tape<double>& t) { return sum_squares(matmul(reshape(t.parameter(m), {4, 3}), t.constant(mixer))); }},
      {"avg_pool2", {&x}, [&](Tape<double>& t) { return sum_squares(avg_pool2(t.parameter(x))); }},
      {"max_pool2", {&x}, [&](Tape<double>& t) { return sum_squares(max_pool2(t.parameter(x))); }},
      {"upsample_nearest2", {&x}, [&](Tape<double>& t) { return sum_squares(upsample_nearest2(t.parameter(x))); }},
      {"center_rows", {&m}, [&](Tape<double>& t) { return sum_squares(mul(center_rows(t.parameter(m)), t.constant(mixer))); }},
  };
  if (options.corrupt)
    cases.push_back({"corrupted_square", {&x}, [&](Tape<double>& t) {
                       auto v = t.parameter(x);
                       TensorD sq(v.shape());
                       sq.vec() = v.value().vec().cwiseAbs2();
                       // Backward off by a factor of 3/2.
                       return sum(t.record(sq, {v}, [v](Tape<double>& tp, const TensorD& g) {
                         tp.grad_buffer(v).vec() += 3.0 * g.vec().cwiseProduct(v.value().vec());
                       }));
                     }});
  for (auto& cs : cases) out.push_back(check_gradients<double>(cs.name, cs.params, cs.loss));

  GradCheckOptions model_opts;
  model_opts.step = 1e-5;
  model_opts.max_entries_per_parameter = options.model_entries;
  model_opts.sample_seed = options.seed;

  auto target_loss = [&](Tape<double>& t, const Var<double>& v, const TensorD& target) {
    return sum_squares(sub(v, t.constant(target)));
  };
  {
    ParameterStore<double> store;
    const auto spec = config.denoiser().fusion_spec;
    CrossAttentionFusion<double> fusion(store, "fusion", 4, 3, FusionSpec{1, 0, spec.mlp_ratio, 0}, rng);
    const auto hv = random_tensor(rng, {4, 3, 3}), fv = random_tensor(rng, {3, 3, 3}), tv = random_tensor(rng, {4, 3, 3});
    out.push_back(check_gradients<double>("cross_attention_fusion", store.all(), [&](Tape<double>& t) {
      return target_loss(t, fusion(t, t.constant(hv), t.constant(fv)), tv);
    }, model_opts));
  }
  {
    ParameterStore<double> store;
    ImplicitUpsampler<double> up(store, "upsampler", 3, 2, 5, rng);
    const auto zv = random_tensor(rng, {3, 2, 3}), tv = random_tensor(rng, {2, 4, 6});
    out.push_back(check_gradients<double>("implicit_upsampler", store.all(), [&](Tape<double>& t) {
      return target_loss(t, up(t, t.constant(zv)), tv);
    }, model_opts));
  }
  {
    const auto cfg = config.denoiser();
    Denoiser<double> model(cfg, rng);
    const int size = std::max(4, 1 << (cfg.unet.levels() - 1));
    const auto xv = random_tensor(rng, {cfg.bands, size, size}), yv = random_tensor(rng, {1, size, size}),
               tv = random_tensor(rng, {1, size, size});
    out.push_back(check_gradients<double>("denoiser", model.parameters().all(), [&](Tape<double>& t) {
      return target_loss(t, model(t, xv, t.constant(yv), 0.37), tv);
    }, model_opts));
  }
  return out;
}

std::string gradient_report_csv(const std::vector<GradCheckReport>& reports) {
  std::ostringstream os;
  os.precision(6);
  os << "block,max_rel_error,entries,passed,worst_entry\n";
  for (const auto& r : reports)
    os << r.block << ',' << r.max_rel_error << ',' << r.entries << ',' << (r.passed ? "yes" : "no") << ','
       << r.worst_entry << '\n';
  return os.str();
}

}  // namespace iidm
