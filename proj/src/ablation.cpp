#include <cstdio>
#include <fstream>
#include <iostream>

#include "imagine/eval.hpp"

namespace imagine {

namespace fs = std::filesystem;

namespace {

struct RowSpec {
  const char* name;
  std::vector<std::pair<std::string, std::string>> settings;
};

const std::vector<RowSpec>& row_specs() {
  static const std::vector<RowSpec> specs = {
      {"full", {}},
      {"wo_sd", {{"ablation.use_diffusion", "false"}}},
      {"w_ri", {{"ablation.use_diffusion", "false"}, {"ablation.use_real_scenes", "true"}}},
      {"wo_vs", {{"ablation.use_scene_encoder", "false"}}},
  };
  return specs;
}

std::string metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<AblationRow> ablation_rows(const RunConfig& base) {
  const AblationConfig full;
  if (base.ablation.use_diffusion != full.use_diffusion || base.ablation.use_real_scenes != full.use_real_scenes ||
      base.ablation.use_scene_encoder != full.use_scene_encoder)
    throw ConfigError("ablation base config must have all ablation switches at their full-model values");
  std::vector<AblationRow> rows;
  for (const auto& spec : row_specs()) {
    AblationRow row;
    row.name = spec.name;
    row.config = base;
    std::vector<std::string> declared;
    for (const auto& [k, v] : spec.settings) {
      row.config.set(k, v);
      declared.push_back(k);
    }
    row.config.validate();
    row.switches = config_diff(base, row.config);
    if (row.switches != declared) throw std::logic_error("ablation row " + row.name + " differs in undeclared keys");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const AblationOptions& options) {
  base.validate();
  auto rows = ablation_rows(base);
  const RunPaths shared = RunPaths::for_config(base);
  fs::create_directories(shared.root);

  bool stages_ok = true;
  if (options.train_missing) {
    if (!fs::exists(shared.data() / "test.jsonl")) generate_data(base, shared);
    try {
      if (!fs::exists(shared.pretrained_denoiser()) || !fs::exists(shared.diffusion() / "loss_curve.csv"))
        pretrain_diffusion(base, shared);
      if (!fs::exists(shared.tuned_denoiser())) finetune_ddpo(base, shared);
    } catch (const std::exception& e) {
      std::cerr << "ablate: imagination stages failed: " << e.what() << "\n";
      stages_ok = false;
    }
  }

  for (auto& row : rows) {
    const RunPaths paths(shared.root / "ablation" / row.name, shared.root);
    try {
      if (options.train_missing && !fs::exists(paths.final_translator())) {
        if (!stages_ok && row.config.scene_source() == SceneSource::generated)
          throw MissingArtifact(shared.tuned_denoiser());
        train_translator(row.config, paths);
      }
      row.report = evaluate_run(row.config, paths);
      if (options.with_curve && row.name == "full") log_curve(row.config, paths);
      row.status = "ok";
    } catch (const std::exception& e) {
      std::cerr << "ablate: row " << row.name << " absent: " << e.what() << "\n";
      row.status = "absent";
    }
  }
  write_ablation_csv(shared.eval() / "ablation.csv", rows);
  return rows;
}

void write_ablation_csv(const fs::path& path, std::span<const AblationRow> rows) {
  std::string csv =
      "row,status,bleu,token_accuracy,mean_reward,clip_analog,normal_bleu,normal_token_accuracy,ambiguous_bleu,"
      "ambiguous_token_accuracy\n";
  for (const auto& row : rows) {
    csv += row.name + "," + row.status;
    if (row.report) {
      const auto& r = *row.report;
      for (double v : {r.overall.bleu, r.overall.token_accuracy, r.overall.mean_reward, r.overall.clip_analog,
                       r.normal.bleu, r.normal.token_accuracy, r.ambiguous.bleu, r.ambiguous.token_accuracy})
        csv += "," + metric(v);
    } else {
      csv += ",,,,,,,,";
    }
    csv += "\n";
  }
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << csv;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace imagine
