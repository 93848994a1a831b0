// geomtnet: command-line front end (encode, gen-data, train, eval, ablate).
// Exit codes: 0 ok, 1 usage, 2 config error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geomt/geomt.hpp"

namespace fs = std::filesystem;
using namespace geomt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets,
                      const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : parse_config(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    apply_override(cfg, text::trim(s.substr(0, eq)), s.substr(eq + 1), "--set");
  }
  if (seed) cfg.set_seed(*seed);
  return cfg;
}

void log_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %3d  l_seg %.4f  l_coord_s %.4f  l_coord_t %.4f  l_time %.4f  val_miou %.4f\n", r.epoch,
               r.mean.l_seg, r.mean.l_coord_source, r.mean.l_coord_target, r.mean.l_time, r.val_miou);
}

int run_encode(const std::string& input, const std::string& output, const EncodingConfig& enc, std::uint64_t seed) {
  enc.validate();
  std::ifstream in_file;
  std::istream* in = &std::cin;
  if (!input.empty() && input != "-") {
    in_file.open(input);
    if (!in_file) throw DataError("cannot read " + input);
    in = &in_file;
  }
  std::ofstream out_file;
  std::ostream* out = &std::cout;
  if (!output.empty() && output != "-") {
    out_file.open(output, std::ios::trunc);
    if (!out_file) throw DataError("cannot write " + output);
    out = &out_file;
  }
  Rng rng(seed);
  std::string line;
  int lineno = 0;
  while (std::getline(*in, line)) {
    ++lineno;
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream fields(t);
    std::string a, b, extra;
    fields >> a >> b;
    RawCoordinate raw;
    if (b.empty() || (fields >> extra) || !text::parse_double(a, raw.lon_m) || !text::parse_double(b, raw.lat_m)) {
      throw DataError(input + ":" + std::to_string(lineno) + ": expected 'lon_m lat_m'");
    }
    const auto e = encode_supervision(raw, enc, rng);
    for (std::size_t i = 0; i < e.values.size(); ++i) *out << (i ? "," : "") << text::format_double(e.values[i]);
    *out << '\n';
  }
  return 0;
}

int run_gen_data(const RunConfig& cfg, const std::string& out) {
  const auto manifest = generate_synthetic(cfg.synthetic, out);
  std::ofstream echo(fs::path(out) / "config_echo.ini", std::ios::trunc);
  echo << echo_config(cfg);
  std::fprintf(stderr, "wrote %zu source and %zu target domains to %s\n", manifest.source_domains.size(),
               manifest.target_domains.size(), out.c_str());
  return 0;
}

int run_train(const RunConfig& cfg, const std::string& out) {
  const RunData data = resolve_run_data(cfg);
  FitHooks hooks;
  hooks.on_epoch = log_epoch;
  const auto outcome = train_run<float>(cfg, data, fs::path(out), hooks);
  std::fprintf(stderr, "best epoch %d  val_miou %.4f  params %zu  -> %s\n", outcome.fit.best_epoch,
               outcome.fit.best_val_miou, outcome.params, out.c_str());
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, std::string labels, const std::string& out) {
  const auto ck = load_checkpoint<float>(checkpoint);
  if (labels.empty()) labels = (fs::path(data) / kEvalLabelsDir).string();
  const auto report = evaluate_checkpoint(ck, data, labels);
  if (out.empty() || out == "-") {
    write_iou_csv(std::cout, report);
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out, std::ios::trunc);
    write_iou_csv(f, report);
    std::fprintf(stderr, "miou %.4f -> %s\n", report.miou, out.c_str());
  }
  return 0;
}

int run_ablate(const RunConfig& base, const std::string& grid, const std::string& preset, const std::string& out) {
  std::vector<GridCell> cells;
  if (!grid.empty()) {
    cells = read_grid(grid);
  } else if (preset == "standard") {
    cells = standard_grid();
  } else {
    throw ConfigError("unknown grid preset '" + preset + "'");
  }
  if (cells.empty()) throw ConfigError("grid has no cells");
  fs::create_directories(out);
  {
    std::ofstream g(fs::path(out) / "grid.ini", std::ios::trunc);
    g << format_grid(cells);
  }
  const auto rows = ablate(cells, base, fs::path(out), [](const CellResult& r) {
    std::fprintf(stderr, "cell %-20s miou %.4f  params %zu  epochs %d  %s\n", r.id.c_str(), r.miou, r.params,
                 r.epochs_run, r.status.c_str());
  });
  for (const auto& r : rows) {
    if (r.status != "ok") return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geomtnet: coordinate-supervised domain adaptation for aerial image segmentation"};
  app.require_subcommand(1);

  // encode
  auto* encode = app.add_subcommand("encode", "Encode 'lon_m lat_m' lines into positional vectors (CSV rows)");
  std::string enc_in, enc_out;
  EncodingConfig enc;
  std::uint64_t enc_seed = 0;
  std::vector<double> origin;
  encode->add_option("--input", enc_in, "Input text file ('-' for stdin)")->default_val("-");
  encode->add_option("--output", enc_out, "Output file ('-' for stdout)")->default_val("-");
  encode->add_option("--dim", enc.dim, "Encoding dimension, a multiple of 4")->capture_default_str();
  encode->add_option("--base-frequency", enc.base_frequency, "Base f of omega_i = f^(-2i/D)")->capture_default_str();
  encode->add_option("--noise-radius-m", enc.noise_radius_m, "Uniform noise radius per axis (m)")->capture_default_str();
  encode->add_option("--seed", enc_seed, "Noise seed")->capture_default_str();
  encode->add_option("--origin", origin, "Centering origin lon,lat (m)")->delimiter(',')->expected(2);

  // shared by gen-data / train / ablate
  std::string config_path, out_dir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  auto add_run_options = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", config_path, "Run config file (defaults when omitted)");
    auto* o = sub->add_option("--out", out_dir, "Output directory");
    if (out_required) o->required();
    sub->add_option("--set", sets, "Override a config key: section.key=value (repeatable)");
    sub->add_option("--seed", seed, "Overrides the config seed everywhere");
  };

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic geo-tagged dataset");
  add_run_options(gen, true);

  auto* train = app.add_subcommand("train", "Train; writes history.csv, checkpoint.bin, config_echo.ini");
  add_run_options(train, true);
  std::string train_data;
  train->add_option("--data", train_data, "Dataset root (overrides data.root)");

  auto* eval = app.add_subcommand("eval", "Per-class IoU of a checkpoint on the target domains");
  std::string eval_ck, eval_data, eval_labels, eval_out;
  eval->add_option("--checkpoint", eval_ck, "checkpoint.bin")->required();
  eval->add_option("--data", eval_data, "Dataset root")->required();
  eval->add_option("--labels", eval_labels, "Held-out label directory (default <data>/eval_labels)");
  eval->add_option("--out", eval_out, "IoU CSV path ('-' for stdout)")->default_val("-");

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid; writes results.csv");
  add_run_options(abl, true);
  std::string grid_path, preset = "standard";
  abl->add_option("--grid", grid_path, "Grid file of [cell id] blocks with section.key = value deltas");
  abl->add_option("--preset", preset, "Built-in grid when --grid is absent")->capture_default_str();

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*encode) {
      if (!origin.empty()) {
        enc.origin_lon_m = origin[0];
        enc.origin_lat_m = origin[1];
      }
      return run_encode(enc_in, enc_out, enc, enc_seed);
    }
    if (*gen) return run_gen_data(load_config(config_path, sets, seed), out_dir);
    if (*train) {
      RunConfig cfg = load_config(config_path, sets, seed);
      if (!train_data.empty()) cfg.data.root = train_data;
      return run_train(cfg, out_dir);
    }
    if (*eval) return run_eval(eval_ck, eval_data, eval_labels, eval_out);
    if (*abl) return run_ablate(load_config(config_path, sets, seed), grid_path, preset, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "geomtnet: config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geomtnet: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
