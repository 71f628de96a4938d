#include "iidm/cli/config.hpp"

#include "iidm/numerics/optim.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace iidm {

namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

void reject_unknown(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument("config: bad value for '" + where + "." + key + "': " + j.at(key).dump());
  }
}

std::set<std::string> keys_of(const ojson& j) {
  std::set<std::string> s;
  for (const auto& [k, v] : j.items()) s.insert(k);
  return s;
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  parse_schedule_kind(schedule.kind);
  need(schedule.steps >= 1, "schedule.steps must be >= 1");
  need(0 < schedule.beta_start && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1,
       "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  parse_sampler_kind(schedule.sampler);
  need(schedule.inference_steps >= 1 && schedule.inference_steps <= schedule.steps,
       "schedule.inference_steps must lie in [1, schedule.steps]");
  need(schedule.inference_samples >= 1, "schedule.inference_samples must be >= 1");
  need(model.bands >= 1, "model.bands must be >= 1");
  parse_extractor_kind(model.extractor);
  need(model.extractor_width >= 1 && model.extractor_depth >= 1, "model.extractor width/depth must be >= 1");
  need(model.unet.size() >= 2 && model.unet.size() % 2 == 0, "model.unet needs an even number (>= 2) of widths");
  for (int c : model.unet) need(c >= 1, "model.unet widths must be positive");
  parse_unet_kind(model.unet_kind);
  need(model.fusion_heads >= 1 && model.fusion_proj_width >= 0 && model.fusion_mlp_ratio > 0,
       "model.fusion heads/proj/mlp ratio out of range");
  need(model.fusion_min_level >= 0, "model.fusion_min_level must be >= 0");
  need(model.time_width >= 1, "model.time_width must be >= 1");
  const int levels = static_cast<int>(model.unet.size() / 2);
  need(model.tile >= 1 && model.tile % (1 << (levels - 1)) == 0,
       "model.tile must be divisible by 2^(levels-1) = " + std::to_string(1 << (levels - 1)));
  need(model.target_range.size() == 2 && model.target_range[0] < model.target_range[1],
       "model.target_range must be [lo, hi] with lo < hi");
  need(training.batch_size >= 1 && training.epochs >= 0 && training.learning_rate > 0 && training.draws_per_pair >= 1,
       "training batch/epochs/lr/draws out of range");
  parse_optimizer_kind(training.optimizer);
  need(training.lr_schedule == "constant" || training.lr_schedule == "cosine",
       "training.lr_schedule must be constant or cosine");
  need(training.time_budget_seconds >= 0 && training.max_steps >= 0, "training budgets must be >= 0");
  need(kd.mcev_threshold > 0 && kd.mcev_threshold <= 1, "kd.mcev_threshold must lie in (0, 1]");
  need(kd.eigenbasis_batch >= 1 && kd.eigenbasis_epochs >= 1 && kd.blockwise_epochs >= 0 &&
           kd.blockwise_learning_rate > 0 && kd.teacher_width >= 1 && kd.teacher_depth >= 1,
       "kd settings out of range");
}

nlohmann::ordered_json RunConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["schedule"] = {{"kind", schedule.kind},
                   {"steps", schedule.steps},
                   {"beta_start", schedule.beta_start},
                   {"beta_end", schedule.beta_end},
                   {"sampler", schedule.sampler},
                   {"inference_steps", schedule.inference_steps},
                   {"inference_samples", schedule.inference_samples},
                   {"clip_estimate", schedule.clip_estimate}};
  j["model"] = {{"bands", model.bands},
                {"mask", model.mask},
                {"extractor", model.extractor},
                {"extractor_width", model.extractor_width},
                {"extractor_depth", model.extractor_depth},
                {"extractor_channels", model.extractor_channels},
                {"unet", model.unet},
                {"unet_kind", model.unet_kind},
                {"fusion", model.fusion},
                {"fusion_heads", model.fusion_heads},
                {"fusion_proj_width", model.fusion_proj_width},
                {"fusion_mlp_ratio", model.fusion_mlp_ratio},
                {"fusion_min_level", model.fusion_min_level},
                {"time_width", model.time_width},
                {"tile", model.tile},
                {"target_range", model.target_range}};
  j["training"] = {{"batch_size", training.batch_size},
                   {"epochs", training.epochs},
                   {"learning_rate", training.learning_rate},
                   {"optimizer", training.optimizer},
                   {"draws_per_pair", training.draws_per_pair},
                   {"lr_schedule", training.lr_schedule},
                   {"time_budget_seconds", training.time_budget_seconds},
                   {"max_steps", training.max_steps}};
  j["kd"] = {{"mcev_threshold", kd.mcev_threshold},
             {"eigenbasis_batch", kd.eigenbasis_batch},
             {"eigenbasis_epochs", kd.eigenbasis_epochs},
             {"blockwise_epochs", kd.blockwise_epochs},
             {"blockwise_learning_rate", kd.blockwise_learning_rate},
             {"teacher_width", kd.teacher_width},
             {"teacher_depth", kd.teacher_depth}};
  j["paths"] = {{"data", paths.data}, {"checkpoint", paths.checkpoint}, {"out", paths.out}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  const ojson shape = c.to_json();
  reject_unknown(j, "", keys_of(shape));
  read(j, "seed", c.seed, "");
  auto section = [&](const char* name) -> const json* {
    if (!j.contains(name)) return nullptr;
    reject_unknown(j.at(name), name, keys_of(shape.at(name)));
    return &j.at(name);
  };
  if (const json* s = section("schedule")) {
    read(*s, "kind", c.schedule.kind, "schedule");
    read(*s, "steps", c.schedule.steps, "schedule");
    read(*s, "beta_start", c.schedule.beta_start, "schedule");
    read(*s, "beta_end", c.schedule.beta_end, "schedule");
    read(*s, "sampler", c.schedule.sampler, "schedule");
    read(*s, "inference_steps", c.schedule.inference_steps, "schedule");
    read(*s, "inference_samples", c.schedule.inference_samples, "schedule");
    read(*s, "clip_estimate", c.schedule.clip_estimate, "schedule");
  }
  if (const json* m = section("model")) {
    read(*m, "bands", c.model.bands, "model");
    read(*m, "mask", c.model.mask, "model");
    read(*m, "extractor", c.model.extractor, "model");
    read(*m, "extractor_width", c.model.extractor_width, "model");
    read(*m, "extractor_depth", c.model.extractor_depth, "model");
    read(*m, "extractor_channels", c.model.extractor_channels, "model");
    read(*m, "unet", c.model.unet, "model");
    read(*m, "unet_kind", c.model.unet_kind, "model");
    read(*m, "fusion", c.model.fusion, "model");
    read(*m, "fusion_heads", c.model.fusion_heads, "model");
    read(*m, "fusion_proj_width", c.model.fusion_proj_width, "model");
    read(*m, "fusion_mlp_ratio", c.model.fusion_mlp_ratio, "model");
    read(*m, "fusion_min_level", c.model.fusion_min_level, "model");
    read(*m, "time_width", c.model.time_width, "model");
    read(*m, "tile", c.model.tile, "model");
    read(*m, "target_range", c.model.target_range, "model");
  }
  if (const json* t = section("training")) {
    read(*t, "batch_size", c.training.batch_size, "training");
    read(*t, "epochs", c.training.epochs, "training");
    read(*t, "learning_rate", c.training.learning_rate, "training");
    read(*t, "optimizer", c.training.optimizer, "training");
    read(*t, "draws_per_pair", c.training.draws_per_pair, "training");
    read(*t, "lr_schedule", c.training.lr_schedule, "training");
    read(*t, "time_budget_seconds", c.training.time_budget_seconds, "training");
    read(*t, "max_steps", c.training.max_steps, "training");
  }
  if (const json* k = section("kd")) {
    read(*k, "mcev_threshold", c.kd.mcev_threshold, "kd");
    read(*k, "eigenbasis_batch", c.kd.eigenbasis_batch, "kd");
    read(*k, "eigenbasis_epochs", c.kd.eigenbasis_epochs, "kd");
    read(*k, "blockwise_epochs", c.kd.blockwise_epochs, "kd");
    read(*k, "blockwise_learning_rate", c.kd.blockwise_learning_rate, "kd");
    read(*k, "teacher_width", c.kd.teacher_width, "kd");
    read(*k, "teacher_depth", c.kd.teacher_depth, "kd");
  }
  if (const json* p = section("paths")) {
    read(*p, "data", c.paths.data, "paths");
    read(*p, "checkpoint", c.paths.checkpoint, "paths");
    read(*p, "out", c.paths.out, "paths");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::canonical() const {
  json j = to_json();  // unordered json sorts keys
  j.erase("paths");
  return j.dump();
}

std::uint64_t RunConfig::fingerprint() const {
  // FNV-1a, inlined here to keep the config free of the formats header.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json j = to_json();
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw std::invalid_argument("config: unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw std::invalid_argument("config: '" + path + "' is a section, not a value");
  *node = value;
  *this = from_json(j);
}

NoiseSchedule RunConfig::noise_schedule() const {
  return make_schedule(parse_schedule_kind(schedule.kind), schedule.steps, schedule.beta_start, schedule.beta_end);
}

SamplerOptions RunConfig::sampler_options() const {
  return {parse_sampler_kind(schedule.sampler), schedule.inference_steps, model.target_range[0], model.target_range[1],
          schedule.clip_estimate};
}

DenoiserConfig RunConfig::denoiser() const {
  DenoiserConfig d;
  d.bands = model.bands;
  switch (parse_extractor_kind(model.extractor)) {
    case ExtractorKind::none:
      break;
    case ExtractorKind::vgg:
      d.extractor = VggConfig::toy(model.bands, model.extractor_width, model.extractor_depth);
      break;
    case ExtractorKind::kd_vgg: {
      const auto full = VggConfig::toy(model.bands, model.extractor_width, model.extractor_depth);
      if (model.extractor_channels.empty()) {
        // Without a distill plan, halve every layer.
        std::vector<int> half;
        for (int c : full.channels) half.push_back(std::max(1, c / 2));
        d.extractor = full.distilled(half);
      } else {
        d.extractor = full.distilled(model.extractor_channels);
      }
      break;
    }
  }
  d.unet = UNetConfig{model.unet};
  if (parse_unet_kind(model.unet_kind) == UnetKind::kd)
    for (int& c : d.unet.channels) c = (11 * c + 15) / 16;
  d.fusion = model.fusion;
  d.fusion_spec.heads = model.fusion_heads;
  d.fusion_spec.proj_width = model.fusion_proj_width;
  d.fusion_spec.mlp_ratio = model.fusion_mlp_ratio;
  d.fusion_spec.min_level = std::min(model.fusion_min_level, d.unet.levels() - 1);
  d.time_width = model.time_width;
  d.validate();
  return d;
}

AblationFlags RunConfig::flags() const {
  AblationFlags f;
  f.mask = model.mask;
  f.extractor = parse_extractor_kind(model.extractor);
  f.unet = parse_unet_kind(model.unet_kind);
  f.fusion = model.fusion;
  return f;
}

void RunConfig::apply_flags(const AblationFlags& f) {
  model.mask = f.mask;
  model.extractor = to_string(f.extractor);
  model.fusion = f.fusion;
  model.unet_kind = to_string(f.unet);
}

}  // namespace iidm
