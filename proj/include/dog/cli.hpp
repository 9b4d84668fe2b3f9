#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dog/conditions.hpp"
#include "dog/config.hpp"
#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/eval.hpp"
#include "dog/guidance.hpp"
#include "dog/io.hpp"
#include "dog/mlp.hpp"
#include "dog/sampler.hpp"

namespace dog::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Environment variable that overrides `output_dir` from the config file.
inline constexpr const char* kOutputDirEnv = "DOG_OUTPUT_DIR";

inline RunConfig load_run_config(const std::string& path) { return parse_config_text(io::read_file(path)); }

inline fs::path resolve_output_dir(const RunConfig& c, const std::string& flag_override) {
  if (!flag_override.empty()) return flag_override;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return c.output_dir;
}

/// Calls `fn` with the configured denoiser.
template <typename Fn>
decltype(auto) with_model(const RunConfig& c, Fn&& fn) {
  const auto schedule = build_schedule(c);
  if (c.denoiser.kind == DenoiserKind::kAnalytic) {
    const AnalyticDenoiser model(build_target(c), c.conditions, schedule, c.denoiser.condition_sharpness);
    return fn(model, schedule);
  }
  std::ifstream in(c.denoiser.checkpoint);
  if (!in) throw ConfigError("denoiser.checkpoint", "cannot open '" + c.denoiser.checkpoint + "'");
  const MlpDenoiser model = load_checkpoint(in);
  if (model.shape().T != schedule.T()) throw ConfigError("denoiser.checkpoint", "checkpoint T differs from schedule.T");
  if (model.shape().d_content != c.conditions.d_content || model.shape().d_style != c.conditions.d_style) {
    throw ConfigError("denoiser.checkpoint", "checkpoint condition sizes differ from the conditions section");
  }
  return fn(model, schedule);
}

inline EvalTargets build_targets(const RunConfig& c) {
  const ConditionalGMM gmm = build_target(c);
  const double bound = c.eval.blowup_bound.value_or(default_blowup_bound(gmm));
  return make_eval_targets(gmm, {embed_condition(c.conditions, c.sampling.content_id, c.sampling.style_id)},
                           c.eval.target_samples, c.eval.target_seed, bound, c.eval.sliced);
}

inline SamplerOptions sampler_options(const RunConfig& c, const std::string& digest) {
  SamplerOptions opts;
  opts.steps = c.schedule.sampling_steps;
  opts.record = c.sampling.record;
  opts.config_digest = digest;
  return opts;
}

inline void write_manifest(const fs::path& out, const RunConfig& c, const std::string& digest,
                           const std::string& command) {
  json m;
  m["command"] = command;
  m["config_digest"] = digest;
  m["config"] = to_json(c);
  m["config"].erase("output_dir");
  m["target_gmm"] = gmm_to_json(build_target(c));
  io::write_atomic(out / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct TrainOutcome {
  std::vector<double> epoch_loss;
  double agreement = 0.0;
  bool agreement_ok = false;
};

inline TrainOutcome cmd_train(RunConfig c, const fs::path& out, std::ostream& log) {
  if (!c.dataset) throw ConfigError("dataset", "section is required for train");
  const std::string digest = config_digest(c, "train");
  const auto schedule = build_schedule(c);
  const auto gmm = build_target(c);
  const auto dataset = make_toy_dataset(gmm, c.conditions, c.dataset->samples_per_condition, c.dataset->seed);
  const auto start = std::chrono::steady_clock::now();
  auto result = train_toy_denoiser(dataset, schedule, c.training.train,
                                   [&](int epoch, double loss) { log << "epoch " << epoch << " loss " << io::fmt_real(loss) << "\n"; });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const AnalyticDenoiser oracle(gmm, c.conditions, schedule, c.denoiser.condition_sharpness);
  TrainOutcome outcome;
  outcome.epoch_loss = result.epoch_loss;
  outcome.agreement = eps_disagreement(result.model, oracle, gmm, c.conditions, schedule, c.training.agreement_pairs,
                                       c.training.agreement_seed);
  outcome.agreement_ok = outcome.agreement < c.training.agreement_threshold;

  std::ostringstream ckpt;
  save_checkpoint(ckpt, result.model, digest);
  io::write_atomic(out / "model.ckpt", ckpt.str());
  io::write_atomic(out / "train_loss.csv", io::loss_csv(result.epoch_loss, digest));
  std::ostringstream summary;
  summary << io::digest_line(digest) << "first_epoch_loss,final_epoch_loss,agreement_mse,agreement_threshold\n"
          << io::fmt_real(result.epoch_loss.front()) << ',' << io::fmt_real(result.epoch_loss.back()) << ','
          << io::fmt_real(outcome.agreement) << ',' << io::fmt_real(c.training.agreement_threshold) << '\n';
  io::write_atomic(out / "train_summary.csv", summary.str());
  write_manifest(out, c, digest, "train");
  log << "trained in " << seconds << " s; eps disagreement vs analytic " << io::fmt_real(outcome.agreement)
      << (outcome.agreement_ok ? " (below " : " (NOT below ") << io::fmt_real(c.training.agreement_threshold) << ")\n";
  return outcome;
}

inline std::vector<Trajectory> cmd_sample(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const std::string digest = config_digest(c, "sample");
  return with_model(c, [&](const auto& model, const DiffusionSchedule& schedule) {
    const GuidanceConfig g = build_guidance(c);
    if (needs_unconditional(g.strategy) && !model.supports_null()) {
      throw ConfigError("guidance.strategy", std::string(to_string(g.strategy)) +
                                                 " needs an unconditional branch; the model has none");
    }
    const auto seeds = build_seeds(c);
    const ConditionPair cond = embed_condition(c.conditions, c.sampling.content_id, c.sampling.style_id);
    const std::vector<ConditionPair> conds(seeds.size(), cond);
    auto trajs = sample_batch(model, conds, g, schedule, seeds, sampler_options(c, digest), c.sampling.workers);

    for (const auto& tr : trajs) {
      io::write_atomic(out / "trajectories" / ("seed_" + std::to_string(tr.seed) + ".txt"),
                       io::trajectory_text(tr, to_string(g.strategy)));
    }
    io::write_atomic(out / "samples.csv", io::final_samples_csv(trajs, digest));
    const EvalTargets targets = build_targets(c);
    const MetricReport report = summarize({trajs}, targets, std::string(to_string(g.strategy)), g.gs);
    io::write_atomic(out / "summary.csv", io::metrics_csv({report}, digest));
    write_manifest(out, c, digest, "sample");
    log << "sampled " << trajs.size() << " trajectories; fidelity_w2 " << io::fmt_real(report.fidelity_w2)
        << ", diversity " << io::fmt_real(report.diversity) << ", blowup_rate " << io::fmt_real(report.blowup_rate)
        << "\n";
    return trajs;
  });
}

inline std::vector<io::Panel> metric_panels(const std::vector<io::Series>& fidelity,
                                            const std::vector<io::Series>& blowup) {
  return {io::Panel{"fidelity (sliced W2, lower is better)", "gs", "fidelity_w2", fidelity},
          io::Panel{"blowup rate", "gs", "blowup_rate", blowup}};
}

inline std::vector<MetricReport> cmd_compare(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const std::string digest = config_digest(c, "compare");
  return with_model(c, [&](const auto& model, const DiffusionSchedule& schedule) {
    const EvalTargets targets = build_targets(c);
    const GuidanceConfig base = build_guidance(c);
    const auto seeds = build_seeds(c);
    const SamplerOptions opts = sampler_options(c, digest);
    std::vector<MetricReport> rows;
    std::vector<io::Series> fid, blow;
    for (Strategy s : c.eval.strategies) {
      if (needs_unconditional(s) && !model.supports_null()) {
        throw ConfigError("eval.strategies", std::string(to_string(s)) + " needs an unconditional branch");
      }
      const auto curve = stability_curve(model, base, s, c.eval.gs_list, schedule, seeds, targets, opts);
      io::Series f{std::string(to_string(s)), {}, {}}, b{std::string(to_string(s)), {}, {}};
      for (const auto& r : curve) {
        log << r.strategy << " gs=" << io::fmt_real(r.gs) << " w2=" << io::fmt_real(r.fidelity_w2)
            << " diversity=" << io::fmt_real(r.diversity) << " blowup=" << io::fmt_real(r.blowup_rate) << "\n";
        f.x.push_back(r.gs);
        f.y.push_back(r.fidelity_w2);
        b.x.push_back(r.gs);
        b.y.push_back(r.blowup_rate);
        rows.push_back(r);
      }
      fid.push_back(std::move(f));
      blow.push_back(std::move(b));
    }
    io::write_atomic(out / "compare.csv", io::metrics_csv(rows, digest));
    io::write_atomic(out / "compare.svg", io::svg_plot(metric_panels(fid, blow), digest));
    write_manifest(out, c, digest, "compare");
    return rows;
  });
}

enum class AblationAxis { kProjection, kSchedule, kTarget, kPeak };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "projection") return AblationAxis::kProjection;
  if (s == "schedule") return AblationAxis::kSchedule;
  if (s == "target") return AblationAxis::kTarget;
  if (s == "peak") return AblationAxis::kPeak;
  throw ConfigError("--axis", "expected projection|schedule|target|peak");
}

inline std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::kProjection: return "projection";
    case AblationAxis::kSchedule: return "schedule";
    case AblationAxis::kTarget: return "target";
    case AblationAxis::kPeak: return "peak";
  }
  return "?";
}

struct AblationArm {
  std::string label;
  GuidanceConfig guidance;
};

/// DOG variants compared along one axis; everything else comes from `base`.
inline std::vector<AblationArm> ablation_arms(AblationAxis axis, GuidanceConfig base, const std::vector<int>& peaks) {
  base.strategy = Strategy::kDog;
  std::vector<AblationArm> arms;
  switch (axis) {
    case AblationAxis::kProjection: {
      GuidanceConfig on = base, off = base;
      on.projection_on = true;
      off.projection_on = false;
      arms = {{"orthogonal", on}, {"raw", off}};
      break;
    }
    case AblationAxis::kSchedule: {
      GuidanceConfig tri = base, flat = base;
      tri.schedule_on = true;
      flat.schedule_on = false;
      arms = {{"triangular", tri}, {"constant", flat}};
      break;
    }
    case AblationAxis::kTarget:
      for (PerturbTarget t : {PerturbTarget::kStyle, PerturbTarget::kContent, PerturbTarget::kBoth,
                              PerturbTarget::kUnconditional}) {
        GuidanceConfig g = base;
        g.perturb.target = t;
        arms.push_back({to_string(t), g});
      }
      break;
    case AblationAxis::kPeak:
      for (int p : peaks) {
        GuidanceConfig g = base;
        g.triangular.peak = p;
        arms.push_back({"u_T=" + std::to_string(p), g});
      }
      break;
  }
  return arms;
}

inline std::vector<io::AblationRow> cmd_ablate(const RunConfig& c, AblationAxis axis, const fs::path& out,
                                               std::ostream& log) {
  const std::string digest = config_digest(c, "ablate:" + to_string(axis));
  return with_model(c, [&](const auto& model, const DiffusionSchedule& schedule) {
    const EvalTargets targets = build_targets(c);
    const auto seeds = build_seeds(c);
    const SamplerOptions opts = sampler_options(c, digest);
    std::vector<io::AblationRow> rows;
    std::vector<io::Series> fid, blow;
    for (const auto& arm : ablation_arms(axis, build_guidance(c), c.eval.peaks)) {
      io::Series f{arm.label, {}, {}}, b{arm.label, {}, {}};
      for (double gs : c.eval.gs_list) {
        GuidanceConfig g = arm.guidance;
        g.gs = gs;
        const MetricReport r = evaluate(model, g, schedule, seeds, targets, opts, "dog");
        log << to_string(axis) << " " << arm.label << " gs=" << io::fmt_real(gs) << " w2=" << io::fmt_real(r.fidelity_w2)
            << " blowup=" << io::fmt_real(r.blowup_rate) << "\n";
        rows.push_back(io::AblationRow{to_string(axis), arm.label, r});
        f.x.push_back(gs);
        f.y.push_back(r.fidelity_w2);
        b.x.push_back(gs);
        b.y.push_back(r.blowup_rate);
      }
      fid.push_back(std::move(f));
      blow.push_back(std::move(b));
    }
    const std::string stem = "ablate_" + to_string(axis);
    io::write_atomic(out / (stem + ".csv"), io::ablation_csv(rows, digest));
    io::write_atomic(out / (stem + ".svg"), io::svg_plot(metric_panels(fid, blow), digest));
    write_manifest(out, c, digest, "ablate:" + to_string(axis));
    return rows;
  });
}

// ---------------------------------------------------------------------------

inline std::vector<double> parse_real_list(const std::string& s, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(field, "expected comma-separated numbers, got '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError(field, "must not be empty");
  return out;
}

inline std::vector<Strategy> parse_strategy_list(const std::string& s) {
  std::vector<Strategy> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_strategy(tok));
  if (out.empty()) throw ConfigError("--strategies", "must not be empty");
  return out;
}

/// Entry point shared by the `dogctl` binary and the tests. Exit codes:
/// 0 success, 2 configuration or usage error, 3 numerical abort.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Guided diffusion sampling on a toy conditional target: train, sample, compare, ablate"};
  app.require_subcommand(1);
  std::string config_path, output_dir;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("--output-dir", output_dir, "Output directory (overrides config and DOG_OUTPUT_DIR)");
  };

  auto* train = app.add_subcommand("train", "Train the toy MLP denoiser with condition dropout");
  add_common(train);

  std::string strategy;
  std::optional<double> gs;
  std::optional<int> n_seeds;
  auto* sample_cmd = app.add_subcommand("sample", "Sample trajectories with one guidance strategy");
  add_common(sample_cmd);
  sample_cmd->add_option("--strategy", strategy, "none|cfg|apg|dog");
  sample_cmd->add_option("--gs", gs, "Base guidance scale");
  sample_cmd->add_option("--seeds", n_seeds, "Number of seeds");

  std::string gs_list, strategies;
  auto* compare = app.add_subcommand("compare", "Stability curves across guidance scales");
  add_common(compare);
  compare->add_option("--gs-list", gs_list, "Comma-separated guidance scales");
  compare->add_option("--strategies", strategies, "Comma-separated strategies");
  compare->add_option("--seeds", n_seeds, "Number of seeds");

  std::string axis, peaks;
  auto* ablate = app.add_subcommand("ablate", "DOG ablations along one axis");
  add_common(ablate);
  ablate->add_option("--axis", axis, "projection|schedule|target|peak")->required();
  ablate->add_option("--gs-list", gs_list, "Comma-separated guidance scales");
  ablate->add_option("--peaks", peaks, "Comma-separated peak timesteps for --axis peak");
  ablate->add_option("--seeds", n_seeds, "Number of seeds");

  std::vector<std::string> argv_store{"dogctl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    RunConfig c = load_run_config(config_path);
    if (n_seeds) c.sampling.seeds = *n_seeds;
    if (!gs_list.empty()) c.eval.gs_list = parse_real_list(gs_list, "--gs-list");
    if (!strategies.empty()) c.eval.strategies = parse_strategy_list(strategies);
    if (!strategy.empty()) c.guidance.strategy = parse_strategy(strategy);
    if (gs) c.guidance.gs = *gs;
    if (!peaks.empty()) {
      c.eval.peaks.clear();
      for (double p : parse_real_list(peaks, "--peaks")) {
        if (p != static_cast<int>(p)) throw ConfigError("--peaks", "peaks must be integers");
        c.eval.peaks.push_back(static_cast<int>(p));
      }
    }
    validate(c);
    const fs::path dir = resolve_output_dir(c, output_dir);

    if (*train) {
      cmd_train(c, dir, out);
    } else if (*sample_cmd) {
      cmd_sample(c, dir, out);
    } else if (*compare) {
      cmd_compare(c, dir, out);
    } else if (*ablate) {
      cmd_ablate(c, parse_axis(axis), dir, out);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace dog::cli
