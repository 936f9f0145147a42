#include "imagine/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

#include "imagine/eval.hpp"

namespace imagine {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
};

const std::vector<std::pair<std::string, std::string>>& commands() {
  static const std::vector<std::pair<std::string, std::string>> list = {
      {"gen-data", "write the train/dev/test datasets"},
      {"train-diffusion", "stage 1: pretrain the scene denoiser"},
      {"train-ddpo", "stage 2: reward fine-tuning of the denoiser"},
      {"train-translator", "stage 3: train the translator"},
      {"eval", "evaluate the trained translator on the test split"},
      {"ablate", "train and evaluate the full, wo_sd, w_ri and wo_vs rows"},
      {"score", "score imagined scenes of the tuned denoiser on the test split"},
      {"curve", "BLEU and reward of every stage-3 checkpoint"},
  };
  return list;
}

std::string present(const fs::path& p) { return p.string() + (fs::exists(p) ? " (present)" : " (missing)"); }

void print_plan(const Invocation& inv, const RunConfig& config, std::ostream& out) {
  const RunPaths paths = RunPaths::for_config(config);
  out << "command: " << inv.command << "\n";
  out << "config hash: " << config.hash() << "\n";
  out << "run directory: " << paths.root.string() << "\n";
  out << "scene source: " << name(config.scene_source()) << "\n";
  const std::string& c = inv.command;
  if (c == "gen-data") {
    out << "writes: " << (paths.data() / "{train,dev,test}.jsonl").string() << "\n";
  } else if (c == "train-diffusion") {
    out << "reads: " << present(paths.data() / "train.jsonl") << "\n";
    out << "writes: " << paths.pretrained_denoiser().string() << ", " << (paths.diffusion() / "loss_curve.csv").string()
        << "\n";
  } else if (c == "train-ddpo") {
    out << "reads: " << present(paths.pretrained_denoiser()) << "\n";
    out << "writes: " << paths.tuned_denoiser().string() << ", " << (paths.ddpo() / "reward_curve.csv").string()
        << " (" << config.ddpo.rl_steps << " steps)\n";
  } else if (c == "train-translator") {
    out << "reads: " << present(paths.data() / "train.jsonl");
    if (config.scene_source() == SceneSource::generated) out << ", " << present(paths.tuned_denoiser());
    out << "\nwrites: " << paths.translator().string() << "/ (" << config.translator.checkpoints
        << " checkpoints, joint term " << (config.translator.joint_loss && config.ablation.use_diffusion ? "on" : "off")
        << ")\n";
  } else if (c == "eval") {
    out << "reads: " << present(paths.final_translator()) << "\n";
    out << "writes: " << (paths.eval() / "report.csv").string() << "\n";
  } else if (c == "ablate") {
    for (const auto& row : ablation_rows(config)) {
      out << "row " << row.name << ": " << (paths.root / "ablation" / row.name).string() << " switches:";
      for (const auto& k : row.switches) out << " " << k << "=" << row.config.get(k);
      out << "\n";
    }
    out << "writes: " << (paths.eval() / "ablation.csv").string() << "\n";
  } else if (c == "score") {
    out << "reads: " << present(paths.tuned_denoiser()) << "\n";
    out << "writes: " << (paths.eval() / "score.csv").string() << "\n";
  } else if (c == "curve") {
    out << "reads: " << present(paths.translator() / "checkpoints.csv") << "\n";
    out << "writes: " << (paths.eval() / "curve.csv").string() << "\n";
  }
}

void print_metrics(std::ostream& out, const char* label, const SplitMetrics& m) {
  out << label << ": examples=" << m.examples << " bleu=" << m.bleu << " token_accuracy=" << m.token_accuracy
      << " mean_reward=" << m.mean_reward << " clip_analog=" << m.clip_analog << "\n";
}

void run(const Invocation& inv, const RunConfig& config, std::ostream& out) {
  const RunPaths paths = RunPaths::for_config(config);
  const std::string& c = inv.command;
  if (c == "gen-data") {
    const Datasets d = generate_data(config, paths);
    out << "wrote " << d.train.size() << "/" << d.dev.size() << "/" << d.test.size() << " examples to "
        << paths.data().string() << "\n";
  } else if (c == "train-diffusion") {
    const auto h = pretrain_diffusion(config, paths);
    out << "epochs=" << h.epochs() << " val_loss " << h.val_loss.front() << " -> " << h.val_loss.back() << "\n";
  } else if (c == "train-ddpo") {
    const auto log = finetune_ddpo(config, paths);
    out << "steps=" << log.size();
    if (!log.empty()) out << " final mean_reward=" << log.back().diag.mean_reward;
    out << "\n";
  } else if (c == "train-translator") {
    const auto r = train_translator(config, paths);
    out << "steps=" << r.log.size() << " checkpoints=" << r.checkpoints.size();
    if (!r.log.empty()) out << " final mllm_loss=" << r.log.back().mllm_loss;
    out << "\n";
  } else if (c == "eval") {
    const auto r = evaluate_run(config, paths);
    print_metrics(out, "overall", r.overall);
    print_metrics(out, "normal", r.normal);
    print_metrics(out, "ambiguous", r.ambiguous);
  } else if (c == "ablate") {
    const auto rows = run_ablation(config);
    for (const auto& row : rows) {
      out << row.name << " " << row.status;
      if (row.report)
        out << " bleu=" << row.report->overall.bleu << " ambiguous_bleu=" << row.report->ambiguous.bleu
            << " ambiguous_token_accuracy=" << row.report->ambiguous.token_accuracy;
      out << "\n";
    }
    if (std::none_of(rows.begin(), rows.end(), [](const AblationRow& r) { return r.report.has_value(); }))
      throw std::runtime_error("no ablation row could be evaluated");
  } else if (c == "score") {
    const auto r = score_imagination(config, paths);
    out << "mean_reward=" << r.overall.mean_reward << " clip_analog=" << r.overall.clip_analog << "\n";
  } else if (c == "curve") {
    const auto curve = log_curve(config, paths);
    for (const auto& p : curve.points) out << p.iteration << " bleu=" << p.bleu << " mean_reward=" << p.mean_reward << "\n";
    out << "spearman=" << (curve.spearman ? std::to_string(*curve.spearman) : curve.correlation_status) << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Imagination-augmented translation on a synthetic world", "imagine"};
  app.require_subcommand(1);
  Invocation inv;
  for (const auto& [name, help] : commands()) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "run configuration file")->required();
    sub->add_option("--set", inv.overrides, "override a key, e.g. --set translator.lr=1e-3 (repeatable)");
    sub->add_flag("--dry-run", inv.dry_run, "validate and print the plan without writing anything");
    sub->callback([&inv, name = name] { inv.command = name; });
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  RunConfig config;
  try {
    config = load_config(inv.config_path);
    apply_overrides(config, inv.overrides);
    config.validate();
    if (inv.command == "ablate") ablation_rows(config);
  } catch (const std::exception& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitInvalid;
  }

  if (inv.dry_run) {
    print_plan(inv, config, out);
    return kExitOk;
  }
  try {
    run(inv, config, out);
  } catch (const MissingArtifact& e) {
    err << e.what() << "\n";
    return kExitInvalid;
  } catch (const ConfigError& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << inv.command << " failed: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitOk;
}

}  // namespace imagine
