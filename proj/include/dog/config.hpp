#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "dog/conditions.hpp"
#include "dog/errors.hpp"
#include "dog/eval.hpp"
#include "dog/guidance.hpp"
#include "dog/mlp.hpp"
#include "dog/perturb.hpp"
#include "dog/sampler.hpp"
#include "dog/schedule.hpp"

namespace dog {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct ScheduleSpec {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sampling_steps = 0;  // 0: all T steps
};

struct TargetSpec {
  int modes_per_content = 4;
  ToyGeometry geometry;
  std::uint64_t seed = 11;
};

enum class DenoiserKind { kAnalytic, kTrained };

struct DenoiserSpec {
  DenoiserKind kind = DenoiserKind::kAnalytic;
  std::string checkpoint;
  double condition_sharpness = 10.0;
};

struct DatasetSpec {
  int samples_per_condition = 1024;
  std::uint64_t seed = 3;
};

struct TrainingSpec {
  TrainConfig train;
  double agreement_threshold = 0.1;
  int agreement_pairs = 1000;
  std::uint64_t agreement_seed = 5;
};

struct SamplingSpec {
  int seeds = 16;
  std::uint64_t seed_base = 0;
  int content_id = 0;
  int style_id = 1;
  RecordPolicy record;
  unsigned workers = 1;
};

struct EvalSpec {
  int target_samples = 1024;
  std::uint64_t target_seed = 99;
  SlicedOptions sliced;
  std::optional<double> blowup_bound;  // empty: 10 max||mu|| + 5 sigma
  std::vector<double> gs_list{2.0, 10.0, 20.0, 30.0};
  std::vector<Strategy> strategies{Strategy::kNone, Strategy::kCfg, Strategy::kApg, Strategy::kDog};
  std::vector<int> peaks{200, 500, 700};
};

/// Full run configuration. Sections absent from the file take the defaults
/// above, except `dataset`, which `train` requires explicitly.
struct RunConfig {
  int schema_version = kSchemaVersion;
  ScheduleSpec schedule;
  ConditionVocab conditions;
  TargetSpec target;
  DenoiserSpec denoiser;
  std::optional<DatasetSpec> dataset;
  TrainingSpec training;
  GuidanceConfig guidance;
  SamplingSpec sampling;
  EvalSpec eval;
  std::string output_dir = "out";
};

namespace detail {

/// Reads one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& dst) {
    const json* v = raw(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(field(key), "expected a boolean");
        dst = v->get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v->is_number_unsigned() || v->get<std::int64_t>() >= 0) {
            dst = v->get<T>();
          } else {
            throw ConfigError(field(key), "must be nonnegative");
          }
        } else {
          dst = v->get<T>();
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError(field(key), "expected a number");
        dst = v->get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(field(key), "expected a string");
        dst = v->get<std::string>();
      } else {
        static_assert(sizeof(T) == 0, "unsupported field type");
      }
    } catch (const json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = raw(key);
    if (!v) return std::nullopt;
    return Section(*v, field(key));
  }

  /// Throws on any key never asked for.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline PerturbTarget parse_target(const std::string& s, const std::string& field) {
  if (s == "style") return PerturbTarget::kStyle;
  if (s == "content") return PerturbTarget::kContent;
  if (s == "both") return PerturbTarget::kBoth;
  if (s == "unconditional") return PerturbTarget::kUnconditional;
  throw ConfigError(field, "expected style|content|both|unconditional");
}

inline std::string to_string(PerturbTarget t) {
  switch (t) {
    case PerturbTarget::kStyle: return "style";
    case PerturbTarget::kContent: return "content";
    case PerturbTarget::kBoth: return "both";
    case PerturbTarget::kUnconditional: return "unconditional";
  }
  return "?";
}

}  // namespace detail

inline std::string to_string(PerturbTarget t) { return detail::to_string(t); }
inline PerturbTarget parse_perturb_target(const std::string& s) { return detail::parse_target(s, "guidance.perturb.target"); }

/// Cross-field checks; every field is checked before any computation.
inline void validate(const RunConfig& c) {
  if (c.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  if (c.schedule.T < 2) throw ConfigError("schedule.T", "must be at least 2");
  (void)make_linear_schedule(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end);
  if (c.schedule.sampling_steps < 0 || c.schedule.sampling_steps > c.schedule.T) {
    throw ConfigError("schedule.sampling_steps", "must lie in [0, T]");
  }
  c.conditions.validate();
  if (c.target.modes_per_content < 1) throw ConfigError("target.modes_per_content", "must be >= 1");
  if (!(c.target.geometry.radius > 0.0)) throw ConfigError("target.radius", "must be positive");
  if (!(c.target.geometry.sigma >= 0.0)) throw ConfigError("target.sigma", "must be nonnegative");
  if (!(1.0 + (c.conditions.style_vocab - 1) * c.target.geometry.style_scale > 0.0)) {
    throw ConfigError("target.style_scale", "every style's scale factor must stay positive");
  }
  if (c.denoiser.kind == DenoiserKind::kTrained && c.denoiser.checkpoint.empty()) {
    throw ConfigError("denoiser.checkpoint", "required when kind is \"trained\"");
  }
  if (!(c.denoiser.condition_sharpness > 0.0)) throw ConfigError("denoiser.condition_sharpness", "must be positive");
  if (c.dataset && c.dataset->samples_per_condition < 1) {
    throw ConfigError("dataset.samples_per_condition", "must be >= 1");
  }
  TrainConfig tc = c.training.train;
  tc.shape.T = c.schedule.T;
  tc.validate();
  if (!(c.training.agreement_threshold > 0.0)) throw ConfigError("training.agreement_threshold", "must be positive");
  if (c.training.agreement_pairs < 1) throw ConfigError("training.agreement_pairs", "must be >= 1");
  GuidanceConfig g = c.guidance;
  g.triangular.T = c.schedule.T;
  if (g.triangular.peak <= 0 || g.triangular.peak >= c.schedule.T) {
    throw ConfigError("guidance.peak", "must lie strictly inside (0, T)");
  }
  g.validate();
  c.guidance.perturb.validate();
  if (c.sampling.seeds < 1) throw ConfigError("sampling.seeds", "must be >= 1");
  if (c.sampling.content_id < 0 || c.sampling.content_id >= c.conditions.content_vocab) {
    throw ConfigError("sampling.content_id", "outside the content vocabulary");
  }
  if (c.sampling.style_id < 0 || c.sampling.style_id >= c.conditions.style_vocab) {
    throw ConfigError("sampling.style_id", "outside the style vocabulary");
  }
  if (c.sampling.record.kind == RecordPolicy::Kind::kEveryK && c.sampling.record.every < 1) {
    throw ConfigError("sampling.record", "stride must be >= 1");
  }
  if (c.sampling.workers < 1) throw ConfigError("sampling.workers", "must be >= 1");
  if (c.eval.target_samples < 1) throw ConfigError("eval.target_samples", "must be >= 1");
  if (c.eval.sliced.projections < 1) throw ConfigError("eval.projections", "must be >= 1");
  if (c.eval.blowup_bound && !(*c.eval.blowup_bound > 0.0)) throw ConfigError("eval.blowup_bound", "must be positive");
  if (c.eval.gs_list.empty()) throw ConfigError("eval.gs_list", "must not be empty");
  for (double gs : c.eval.gs_list)
    if (!(gs >= 0.0) || !std::isfinite(gs)) throw ConfigError("eval.gs_list", "entries must be finite and nonnegative");
  if (c.eval.strategies.empty()) throw ConfigError("eval.strategies", "must not be empty");
  if (c.eval.peaks.empty()) throw ConfigError("eval.peaks", "must not be empty");
  for (int p : c.eval.peaks)
    if (p <= 0 || p >= c.schedule.T) throw ConfigError("eval.peaks", "every peak must lie strictly inside (0, T)");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

inline RunConfig parse_config(const json& root) {
  RunConfig c;
  detail::Section top(root, "");
  if (!top.has("schema_version")) throw ConfigError("schema_version", "missing");
  top.read("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");

  if (auto s = top.child("schedule")) {
    s->read("T", c.schedule.T);
    s->read("beta_start", c.schedule.beta_start);
    s->read("beta_end", c.schedule.beta_end);
    s->read("sampling_steps", c.schedule.sampling_steps);
    s->finish();
  }
  if (auto s = top.child("conditions")) {
    s->read("content_vocab", c.conditions.content_vocab);
    s->read("style_vocab", c.conditions.style_vocab);
    s->read("d_content", c.conditions.d_content);
    s->read("d_style", c.conditions.d_style);
    s->read("seed", c.conditions.seed);
    s->finish();
  }
  if (auto s = top.child("target")) {
    s->read("modes_per_content", c.target.modes_per_content);
    s->read("radius", c.target.geometry.radius);
    s->read("sigma", c.target.geometry.sigma);
    s->read("style_rotation", c.target.geometry.style_rotation);
    s->read("style_scale", c.target.geometry.style_scale);
    s->read("seed", c.target.seed);
    s->finish();
  }
  if (auto s = top.child("denoiser")) {
    std::string kind = "analytic";
    s->read("kind", kind);
    if (kind == "analytic") {
      c.denoiser.kind = DenoiserKind::kAnalytic;
    } else if (kind == "trained") {
      c.denoiser.kind = DenoiserKind::kTrained;
    } else {
      throw ConfigError("denoiser.kind", "expected analytic|trained");
    }
    s->read("checkpoint", c.denoiser.checkpoint);
    s->read("condition_sharpness", c.denoiser.condition_sharpness);
    s->finish();
  }
  if (auto s = top.child("dataset")) {
    DatasetSpec d;
    s->read("samples_per_condition", d.samples_per_condition);
    s->read("seed", d.seed);
    s->finish();
    c.dataset = d;
  }
  if (auto s = top.child("training")) {
    auto& t = c.training.train;
    s->read("epochs", t.epochs);
    s->read("batch_size", t.batch_size);
    s->read("learning_rate", t.learning_rate);
    s->read("cond_dropout", t.cond_dropout);
    s->read("seed", t.seed);
    s->read("hidden_width", t.shape.hidden_width);
    s->read("hidden_layers", t.shape.hidden_layers);
    s->read("time_features", t.shape.time_features);
    s->read("agreement_threshold", c.training.agreement_threshold);
    s->read("agreement_pairs", c.training.agreement_pairs);
    s->read("agreement_seed", c.training.agreement_seed);
    s->finish();
  }
  if (auto s = top.child("guidance")) {
    auto& g = c.guidance;
    std::string strategy = std::string(to_string(g.strategy));
    s->read("strategy", strategy);
    g.strategy = parse_strategy(strategy);
    s->read("gs", g.gs);
    if (const json* tau = s->raw("tau")) {
      if (tau->is_string() && tau->get<std::string>() == "auto") {
        g.tau.reset();
      } else if (tau->is_number()) {
        g.tau = tau->get<double>();
      } else {
        throw ConfigError("guidance.tau", "expected a positive number or \"auto\"");
      }
    }
    s->read("apg_parallel_weight", g.apg_parallel_weight);
    s->read("schedule_on", g.schedule_on);
    s->read("projection", g.projection_on);
    s->read("peak", g.triangular.peak);
    if (auto p = s->child("perturb")) {
      p->read("lambda_s", g.perturb.lambda_s);
      p->read("lambda_t", g.perturb.lambda_t);
      p->read("p", g.perturb.p);
      std::string target = detail::to_string(g.perturb.target);
      p->read("target", target);
      g.perturb.target = detail::parse_target(target, "guidance.perturb.target");
      std::string resample = "per_trajectory";
      p->read("resample", resample);
      if (resample == "per_trajectory") {
        g.perturb.resample = ResampleMode::kPerTrajectory;
      } else if (resample == "per_step") {
        g.perturb.resample = ResampleMode::kPerStep;
      } else {
        throw ConfigError("guidance.perturb.resample", "expected per_trajectory|per_step");
      }
      p->read("additive", g.perturb.additive);
      p->finish();
    }
    s->finish();
  }
  if (auto s = top.child("sampling")) {
    auto& sp = c.sampling;
    s->read("seeds", sp.seeds);
    s->read("seed_base", sp.seed_base);
    s->read("content_id", sp.content_id);
    s->read("style_id", sp.style_id);
    s->read("workers", sp.workers);
    if (const json* rec = s->raw("record")) {
      if (rec->is_string() && rec->get<std::string>() == "all") {
        sp.record = RecordPolicy{RecordPolicy::Kind::kAll, 1};
      } else if (rec->is_string() && rec->get<std::string>() == "final") {
        sp.record = RecordPolicy{RecordPolicy::Kind::kFinalOnly, 1};
      } else if (rec->is_number_integer()) {
        sp.record = RecordPolicy{RecordPolicy::Kind::kEveryK, rec->get<int>()};
      } else {
        throw ConfigError("sampling.record", "expected \"all\", \"final\" or a stride");
      }
    }
    s->finish();
  }
  if (auto s = top.child("eval")) {
    auto& e = c.eval;
    s->read("target_samples", e.target_samples);
    s->read("target_seed", e.target_seed);
    s->read("projections", e.sliced.projections);
    s->read("projection_seed", e.sliced.seed);
    if (const json* b = s->raw("blowup_bound")) {
      if (b->is_string() && b->get<std::string>() == "auto") {
        e.blowup_bound.reset();
      } else if (b->is_number()) {
        e.blowup_bound = b->get<double>();
      } else {
        throw ConfigError("eval.blowup_bound", "expected a number or \"auto\"");
      }
    }
    if (const json* l = s->raw("gs_list")) {
      if (!l->is_array()) throw ConfigError("eval.gs_list", "expected an array");
      e.gs_list.clear();
      for (const auto& v : *l) {
        if (!v.is_number()) throw ConfigError("eval.gs_list", "expected numbers");
        e.gs_list.push_back(v.get<double>());
      }
    }
    if (const json* l = s->raw("strategies")) {
      if (!l->is_array()) throw ConfigError("eval.strategies", "expected an array");
      e.strategies.clear();
      for (const auto& v : *l) {
        if (!v.is_string()) throw ConfigError("eval.strategies", "expected strings");
        e.strategies.push_back(parse_strategy(v.get<std::string>()));
      }
    }
    if (const json* l = s->raw("peaks")) {
      if (!l->is_array()) throw ConfigError("eval.peaks", "expected an array");
      e.peaks.clear();
      for (const auto& v : *l) {
        if (!v.is_number_integer()) throw ConfigError("eval.peaks", "expected integers");
        e.peaks.push_back(v.get<int>());
      }
    }
    s->finish();
  }
  top.read("output_dir", c.output_dir);
  top.finish();
  validate(c);
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

/// Complete, normalized record of `c` (every default written out).
inline json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["schedule"] = {{"T", c.schedule.T},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end},
                   {"sampling_steps", c.schedule.sampling_steps}};
  j["conditions"] = {{"content_vocab", c.conditions.content_vocab},
                     {"style_vocab", c.conditions.style_vocab},
                     {"d_content", c.conditions.d_content},
                     {"d_style", c.conditions.d_style},
                     {"seed", c.conditions.seed}};
  j["target"] = {{"modes_per_content", c.target.modes_per_content},
                 {"radius", c.target.geometry.radius},
                 {"sigma", c.target.geometry.sigma},
                 {"style_rotation", c.target.geometry.style_rotation},
                 {"style_scale", c.target.geometry.style_scale},
                 {"seed", c.target.seed}};
  j["denoiser"] = {{"kind", c.denoiser.kind == DenoiserKind::kAnalytic ? "analytic" : "trained"},
                   {"checkpoint", c.denoiser.checkpoint},
                   {"condition_sharpness", c.denoiser.condition_sharpness}};
  if (c.dataset) {
    j["dataset"] = {{"samples_per_condition", c.dataset->samples_per_condition}, {"seed", c.dataset->seed}};
  }
  const auto& t = c.training.train;
  j["training"] = {{"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"cond_dropout", t.cond_dropout},
                   {"seed", t.seed},
                   {"hidden_width", t.shape.hidden_width},
                   {"hidden_layers", t.shape.hidden_layers},
                   {"time_features", t.shape.time_features},
                   {"agreement_threshold", c.training.agreement_threshold},
                   {"agreement_pairs", c.training.agreement_pairs},
                   {"agreement_seed", c.training.agreement_seed}};
  const auto& g = c.guidance;
  json tau = g.tau ? json(*g.tau) : json("auto");
  j["guidance"] = {{"strategy", std::string(to_string(g.strategy))},
                   {"gs", g.gs},
                   {"tau", tau},
                   {"apg_parallel_weight", g.apg_parallel_weight},
                   {"schedule_on", g.schedule_on},
                   {"projection", g.projection_on},
                   {"peak", g.triangular.peak},
                   {"perturb",
                    {{"lambda_s", g.perturb.lambda_s},
                     {"lambda_t", g.perturb.lambda_t},
                     {"p", g.perturb.p},
                     {"target", detail::to_string(g.perturb.target)},
                     {"resample", g.perturb.resample == ResampleMode::kPerTrajectory ? "per_trajectory" : "per_step"},
                     {"additive", g.perturb.additive}}}};
  json record;
  switch (c.sampling.record.kind) {
    case RecordPolicy::Kind::kAll: record = "all"; break;
    case RecordPolicy::Kind::kFinalOnly: record = "final"; break;
    case RecordPolicy::Kind::kEveryK: record = c.sampling.record.every; break;
  }
  j["sampling"] = {{"seeds", c.sampling.seeds},
                   {"seed_base", c.sampling.seed_base},
                   {"content_id", c.sampling.content_id},
                   {"style_id", c.sampling.style_id},
                   {"record", record},
                   {"workers", c.sampling.workers}};
  json strategies = json::array();
  for (auto s : c.eval.strategies) strategies.push_back(std::string(to_string(s)));
  j["eval"] = {{"target_samples", c.eval.target_samples},
               {"target_seed", c.eval.target_seed},
               {"projections", c.eval.sliced.projections},
               {"projection_seed", c.eval.sliced.seed},
               {"blowup_bound", c.eval.blowup_bound ? json(*c.eval.blowup_bound) : json("auto")},
               {"gs_list", c.eval.gs_list},
               {"strategies", strategies},
               {"peaks", c.eval.peaks}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Digest of the canonical config plus command context. `output_dir` is excluded:
/// it says where results go, not what they are.
inline std::string config_digest(const RunConfig& c, const std::string& context = {}) {
  json j = to_json(c);
  j.erase("output_dir");
  return sha256_hex(j.dump() + "\n" + context);
}

inline json gmm_to_json(const ConditionalGMM& gmm) {
  json slices = json::array();
  for (int c = 0; c < gmm.content_vocab(); ++c) {
    for (int s = 0; s < gmm.style_vocab(); ++s) {
      json comps = json::array();
      for (const auto& comp : gmm.slice(c, s)) {
        comps.push_back({{"weight", comp.weight},
                         {"mean", std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size())},
                         {"sigma", comp.sigma}});
      }
      slices.push_back({{"content_id", c}, {"style_id", s}, {"components", comps}});
    }
  }
  return {{"dim", gmm.dim()},
          {"content_vocab", gmm.content_vocab()},
          {"style_vocab", gmm.style_vocab()},
          {"slices", slices}};
}

inline ConditionalGMM gmm_from_json(const json& j) {
  ConditionalGMM gmm(j.at("dim").get<int>(), j.at("content_vocab").get<int>(), j.at("style_vocab").get<int>());
  for (const auto& sl : j.at("slices")) {
    std::vector<GmmComponent> comps;
    for (const auto& comp : sl.at("components")) {
      const auto mean = comp.at("mean").get<std::vector<double>>();
      comps.push_back(GmmComponent{comp.at("weight").get<double>(), Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                                   comp.at("sigma").get<double>()});
    }
    gmm.set_slice(sl.at("content_id").get<int>(), sl.at("style_id").get<int>(), std::move(comps));
  }
  return gmm;
}

// Objects built from a config.

inline DiffusionSchedule build_schedule(const RunConfig& c) {
  return make_linear_schedule(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end);
}

inline ConditionalGMM build_target(const RunConfig& c) {
  return build_toy_gmm(c.conditions.content_vocab, c.conditions.style_vocab, c.target.modes_per_content,
                       c.target.seed, c.target.geometry);
}

inline GuidanceConfig build_guidance(const RunConfig& c) {
  GuidanceConfig g = c.guidance;
  g.triangular.T = c.schedule.T;
  g.triangular.gs = g.gs;
  return g;
}

inline std::vector<std::uint64_t> build_seeds(const RunConfig& c) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < c.sampling.seeds; ++i) seeds.push_back(c.sampling.seed_base + static_cast<std::uint64_t>(i));
  return seeds;
}

}  // namespace dog
