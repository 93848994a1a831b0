#pragma once

// Whole-run plumbing shared by the CLI, the ablation harness and the
// acceptance checks: resolving data, training with outputs on disk, and
// target evaluation from a checkpoint.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "geomt/checkpoint.hpp"
#include "geomt/config.hpp"
#include "geomt/data/dataset.hpp"
#include "geomt/data/synthetic.hpp"
#include "geomt/metrics.hpp"
#include "geomt/training.hpp"

namespace geomt {

/// Training-side view of the data. Target patches never carry labels.
struct RunData {
  int num_classes = 0;
  double gsd_m = kDefaultGsd;
  std::vector<Patch> source;
  std::vector<Patch> target;
};

/// Held-out target labels, kept apart from RunData on purpose.
struct TargetLabels {
  std::vector<LabelMap> labels;  // aligned with RunData::target
};

namespace detail {

inline std::vector<std::string> domains_or(const std::vector<std::string>& configured,
                                           const std::vector<std::string>& fallback) {
  return configured.empty() ? fallback : configured;
}

}  // namespace detail

/// In-memory synthetic data from the [synthetic] section. Returns the target
/// labels through `held_out` when asked for.
inline RunData synthetic_run_data(const SyntheticConfig& cfg, TargetLabels* held_out = nullptr) {
  RunData data;
  data.num_classes = cfg.num_classes;
  data.gsd_m = cfg.gsd_m;
  const auto domains = synthetic_domains(cfg);
  for (int d = 0; d < cfg.num_domains(); ++d) {
    const auto& domain = domains[static_cast<std::size_t>(d)];
    for (int i = 0; i < cfg.patches_per_domain; ++i) {
      Patch p = synthetic_patch(cfg, domain, d, i);
      if (domain.is_source) {
        data.source.push_back(std::move(p));
      } else {
        if (held_out) held_out->labels.push_back(*p.label);
        p.label.reset();
        data.target.push_back(std::move(p));
      }
    }
  }
  return data;
}

/// Reads source (labelled) and target (unlabelled) domains from a dataset
/// root. Labels found in target domain folders are dropped.
inline RunData load_run_data(const DataConfig& dc) {
  const auto manifest = read_manifest(dc.root).value_or(DatasetManifest{});
  RunData data;
  data.num_classes = manifest.num_classes;
  data.gsd_m = manifest.gsd_m;
  const auto src_domains = detail::domains_or(dc.source_domains, manifest.source_domains);
  const auto tgt_domains = detail::domains_or(dc.target_domains, manifest.target_domains);
  if (src_domains.empty()) throw DataError("no source domains configured or listed in " + dc.root + "/dataset.txt");
  if (data.num_classes <= 0) throw DataError("class count unknown: dataset.txt in " + dc.root + " lacks num_classes");

  LoadOptions opts;
  opts.domains = src_domains;
  opts.num_classes = data.num_classes;
  data.source = load_dataset(dc.root, opts).load_all();
  for (const auto& p : data.source) {
    if (!p.label) throw DataError("source patch " + p.meta.patch_id + " has no label");
  }
  if (!tgt_domains.empty()) {
    opts.domains = tgt_domains;
    data.target = load_dataset(dc.root, opts).load_all();
    for (auto& p : data.target) p.label.reset();
  }
  return data;
}

inline RunData resolve_run_data(const RunConfig& cfg, TargetLabels* held_out = nullptr) {
  if (cfg.data.root.empty()) return synthetic_run_data(cfg.synthetic, held_out);
  RunData data = load_run_data(cfg.data);
  if (held_out) {
    const auto dir = std::filesystem::path(cfg.data.root) / kEvalLabelsDir;
    for (const auto& p : data.target) held_out->labels.push_back(load_eval_label(dir, p.meta.patch_id));
  }
  return data;
}

template <typename T>
struct RunOutcome {
  FitResult<T> fit;
  std::size_t params = 0;  // U-Net plus any enabled heads
};

/// Trains and, when `out_dir` is given, writes history.csv, checkpoint.bin
/// and config_echo.ini there.
template <typename T = float>
RunOutcome<T> train_run(RunConfig cfg, const RunData& data, const std::optional<std::filesystem::path>& out_dir,
                        const FitHooks& hooks = {}) {
  cfg.train.set_num_classes(data.num_classes);
  cfg.train.validate();
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream echo(*out_dir / "config_echo.ini", std::ios::trunc);
    echo << echo_config(cfg);
  }
  RunOutcome<T> out;
  {
    SegModel<T> probe(cfg.train.model_config(), cfg.seed());
    out.params = probe.parameter_count();
  }
  out.fit = fit<T>(cfg, data.source, data.target, data.gsd_m, hooks);
  if (out_dir) {
    std::ofstream hist(*out_dir / "history.csv", std::ios::trunc);
    write_history_csv(hist, out.fit.history, data.num_classes);
    save_checkpoint(*out_dir / "checkpoint.bin", out.fit.best);
  }
  return out;
}

template <typename T>
IouReport evaluate_checkpoint(const Checkpoint<T>& ck, std::span<const Patch> target, std::span<const LabelMap> labels,
                              double gsd_m = kDefaultGsd) {
  if (labels.size() != target.size()) throw DataError("evaluation labels do not cover every target patch");
  SegModel<T> model = model_from_checkpoint(ck);
  return evaluate_patches(model, target, labels, ck.num_classes, gsd_m);
}

/// Evaluates on the target domains of a dataset root with labels from
/// `labels_dir` (one <patch_id>.bin per target patch).
template <typename T>
IouReport evaluate_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& data_root,
                              const std::filesystem::path& labels_dir) {
  DataConfig dc;
  dc.root = data_root.string();
  dc.target_domains = ck.config.data.target_domains;
  const RunData data = load_run_data(dc);
  if (data.target.empty()) throw DataError("no target patches under " + data_root.string());
  if (!std::filesystem::is_directory(labels_dir)) throw DataError("evaluation label directory missing: " + labels_dir.string());
  std::vector<LabelMap> labels;
  for (const auto& p : data.target) labels.push_back(load_eval_label(labels_dir, p.meta.patch_id));
  return evaluate_checkpoint(ck, std::span<const Patch>(data.target), std::span<const LabelMap>(labels), data.gsd_m);
}

}  // namespace geomt
