// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//   acceptance --workdir DIR --cli PATH/TO/geomtnet [--only 1,5,9]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geomt/geomt.hpp"

using namespace geomt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

std::vector<double> reference_encoding(double x, double y, int dim, double f) {
  std::vector<double> out;
  for (double c : {x, y}) {
    for (int i = 1; i <= dim / 4; ++i) {
      const double w = std::exp(-2.0 * i / dim * std::log(f));
      out.push_back(std::sin(c * w));
      out.push_back(std::cos(c * w));
    }
  }
  return out;
}

void criterion_encoding(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(101);
  EncodingConfig cfg;
  double worst = 0.0, worst_norm = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const RawCoordinate c{rng.uniform(-7e5, 7e5), rng.uniform(-7e5, 7e5)};
    const auto got = positional_encode(c, cfg).values;
    const auto ref = reference_encoding(c.lon_m, c.lat_m, cfg.dim, cfg.base_frequency);
    if (got.size() != ref.size()) {
      o.require(false, "encoding length");
      return;
    }
    for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(got[k] - ref[k]));
    for (std::size_t k = 0; k < got.size(); k += 2) {
      worst_norm = std::max(worst_norm, std::abs(std::hypot(got[k], got[k + 1]) - 1.0));
    }
  }
  const double t = seconds_since(t0);
  o.detail << "max |diff| " << fmt(worst) << ", max |norm-1| " << fmt(worst_norm) << ", " << fmt(t, 3) << " s";
  o.require(worst <= 1e-9, "reference mismatch");
  o.require(worst_norm <= 1e-9, "unit norm");
  o.require(t < 1.0, "runtime");
}

// --- 2 ---------------------------------------------------------------------

void criterion_centering(Outcome& o) {
  const RawCoordinate c = center({489353.59, 6587552.20}, EncodingConfig{});
  o.detail << "(" << c.lon_m << ", " << c.lat_m << ")";
  o.require(c.lon_m == 0.0 && c.lat_m == 0.0, "origin not mapped to zero");
  const auto e = positional_encode(c, EncodingConfig{}).values;
  bool ok = true;
  for (std::size_t k = 0; k < e.size(); k += 2) ok = ok && e[k] == 0.0 && e[k + 1] == 1.0;
  o.require(ok, "origin encoding is not (0, 1) pairs");
}

// --- 3 ---------------------------------------------------------------------

void criterion_dcs(Outcome& o) {
  DcsConfig cfg;
  cfg.num_classes = 6;
  cfg.ignore_index = 6;
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> w(6);
    for (auto& v : w) v = rng.uniform(0.1, 3.0);
    DcsState s = DcsState::initial(6);
    for (int k = 1; k <= 20; ++k) {
      s = update(s, w, cfg);
      const double a = std::pow(cfg.decay, k);
      for (std::size_t c = 0; c < 6; ++c) worst = std::max(worst, std::abs(s.weights[c] - (a + (1.0 - a) * w[c])));
    }
  }
  LabelMap even(6, 6);
  for (std::size_t i = 0; i < even.entries.size(); ++i) even.entries[i] = static_cast<std::int32_t>(i % 6);
  const auto u = instantaneous_weights(label_frequency(even, cfg), cfg);
  double worst_uniform = 0.0;
  for (double v : u) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0));
  o.detail << "alpha " << cfg.decay << ", closed-form |diff| " << fmt(worst) << ", uniform |w-1| " << fmt(worst_uniform);
  o.require(cfg.decay == 0.7 && cfg.temperature == 0.9, "defaults");
  o.require(worst <= 1e-9, "closed form");
  o.require(worst_uniform <= 1e-9, "uniform weights");
}

// --- 4 ---------------------------------------------------------------------

void criterion_losses(Outcome& o) {
  const int C = 5;
  DcsConfig cfg;
  cfg.num_classes = C;
  cfg.ignore_index = C;
  Rng rng(404);
  Tensor<double> logits(Shape{3, C + 1, 8, 8});
  for (auto& v : logits.storage()) v = 2.0 * rng.normal();
  std::vector<LabelMap> labels(3, LabelMap(8, 8));
  for (auto& l : labels) {
    for (auto& v : l.entries) v = static_cast<std::int32_t>(rng.uniform_int(0, C));  // includes ignore
  }
  const auto probs = nn::softmax_channels(logits);
  const std::span<const LabelMap> ls(labels);

  // plain mean cross-entropy
  double ce = 0.0;
  int counted = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t p = 0; p < 64; ++p) {
      const int c = labels[b].entries[p];
      if (c == C) continue;
      ce -= std::log(probs[(b * (C + 1) + static_cast<std::size_t>(c)) * 64 + p]);
      ++counted;
    }
  }
  ce /= counted;
  const double ones = weighted_seg_loss(probs, ls, DcsState::initial(C), cfg);
  o.detail << "|ones-CE| " << fmt(std::abs(ones - ce));
  o.require(std::abs(ones - ce) <= 1e-6, "all-ones weights vs plain CE");

  // ignored pixels: perturb their logits, loss and other gradients unchanged, own gradient zero
  const DcsState w{{0.5, 1.5, 0.7, 1.1, 1.2}, 3};
  const double base = weighted_seg_loss(probs, ls, w, cfg);
  const auto g = weighted_seg_loss_grad_logits(probs, ls, w, cfg);
  Tensor<double> moved = logits;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t p = 0; p < 64; ++p) {
      if (labels[b].entries[p] != C) continue;
      for (std::size_t k = 0; k < C + 1; ++k) moved[(b * (C + 1) + k) * 64 + p] += 5.0 * rng.normal();
    }
  }
  const auto mprobs = nn::softmax_channels(moved);
  const double after = weighted_seg_loss(mprobs, ls, w, cfg);
  const auto g2 = weighted_seg_loss_grad_logits(mprobs, ls, w, cfg);
  bool zero = true, same = true;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t p = 0; p < 64; ++p) {
      for (std::size_t k = 0; k < C + 1; ++k) {
        const std::size_t i = (b * (C + 1) + k) * 64 + p;
        if (labels[b].entries[p] == C) {
          zero = zero && g[i] == 0.0 && g2[i] == 0.0;
        } else {
          same = same && g[i] == g2[i];
        }
      }
    }
  }
  o.detail << ", ignore perturbation |dL| " << fmt(std::abs(after - base));
  o.require(after == base, "ignored pixels change the loss");
  o.require(zero, "ignored pixels receive gradient");
  o.require(same, "ignored pixels change other gradients");

  // additivity at every step of a short run with every term active
  RunConfig run;
  run.set_seed(4);
  run.synthetic.patches_per_domain = 8;
  run.train.components = {true, true, true};
  run.train.time_head.use_hour = true;
  run.train.time_head.noise = true;
  run.train.max_epochs = 1;
  run.train.patience = 0;
  run.train.learning_rate = 1e-3;
  const RunData data = synthetic_run_data(run.synthetic);
  double worst = 0.0;
  int steps = 0;
  FitHooks hooks;
  hooks.on_step = [&](const LossReport& r) {
    worst = std::max(worst, std::abs(r.total - (r.l_seg + r.l_coord_source + r.l_coord_target + r.l_time)));
    ++steps;
  };
  train_run<float>(run, data, std::nullopt, hooks);
  o.detail << ", additivity |diff| " << fmt(worst) << " over " << steps << " steps";
  o.require(steps > 0 && worst <= 1e-9, "additivity");
}

// --- 5 ---------------------------------------------------------------------

void criterion_gradients(Outcome& o) {
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.set_num_classes(SyntheticConfig{}.num_classes);
  cfg.components = {true, true, true};
  cfg.time_head.use_hour = true;
  SegModel<double> model(cfg.model_config(), 55);
  Rng rng(505);
  const std::size_t n = 4, size = static_cast<std::size_t>(cfg.net.input_size);
  Tensor<double> x(Shape{n, static_cast<std::size_t>(cfg.net.in_bands), size, size});
  for (auto& v : x.storage()) v = rng.normal();
  const int C = cfg.num_classes();
  std::vector<LabelMap> labels(n, LabelMap(size, size));
  for (auto& l : labels) {
    for (auto& v : l.entries) v = static_cast<std::int32_t>(rng.uniform_int(0, C));
  }
  DcsState w = DcsState::initial(C);
  for (auto& v : w.weights) v = rng.uniform(0.5, 1.5);
  const PassRequest req{true, true, true};
  const auto first = model.forward(x, req);
  Tensor<double> geo_t(first.geo->out.shape()), time_t(first.time->out.shape());
  for (auto& v : geo_t.storage()) v = rng.uniform(-1, 1);
  for (auto& v : time_t.storage()) v = rng.uniform(-1, 1);
  const std::span<const LabelMap> ls(labels);

  auto loss = [&] {
    const auto p = model.forward(x, req);
    return weighted_seg_loss(p.decoder->probs, ls, w, cfg.dcs) + coord_loss(p.geo->out, geo_t) +
           coord_loss(p.time->out, time_t);
  };
  model.zero_grad();
  const auto pass = model.forward(x, req);
  const auto dlogits = weighted_seg_loss_grad_logits(pass.decoder->probs, ls, w, cfg.dcs);
  const auto dgeo = coord_loss_grad(pass.geo->out, geo_t);
  const auto dtime = coord_loss_grad(pass.time->out, time_t);
  model.backward(pass, &dlogits, &dgeo, &dtime);

  // Coordinates are drawn tensor-first so small layers are covered too.
  auto reg = model.registry();
  auto& params = reg.params;
  auto central = [&](nn::Parameter<double>& p, std::size_t i, double h) {
    const double keep = p.value[i];
    p.value[i] = keep + h;
    const double up = loss();
    p.value[i] = keep - h;
    const double down = loss();
    p.value[i] = keep;
    return (up - down) / (2.0 * h);
  };
  const double rel = 1e-3, floor = 1e-7;
  auto agrees = [&](double fd, double an) {
    return std::abs(fd - an) <= rel * std::max(std::abs(fd), std::abs(an)) + floor;
  };
  int bad = 0, bad_fine = 0;
  double worst_rel = 0.0;
  std::string worst_name;
  for (int k = 0; k < 100; ++k) {
    auto& np = params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
    auto& p = *np.param;
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
    const double fd = central(p, i, 1e-4), an = p.grad[i];
    const double err = std::abs(fd - an), scale = std::max(std::abs(fd), std::abs(an));
    if (!agrees(fd, an)) {
      ++bad;
      // A miss at the prescribed step is re-measured with a much smaller one:
      // agreement there means the wide step straddled a ReLU or max-pool kink.
      bad_fine += !agrees(central(p, i, 1e-6), an);
    }
    if (scale > floor && err / scale > worst_rel) {
      worst_rel = err / scale;
      worst_name = np.name + "[" + std::to_string(i) + "]";
    }
  }
  const double t = seconds_since(t0);
  o.detail << model.parameter_count() << " params, " << n << "x" << size << "x" << size
           << " input, 100 coordinates at step 1e-4: " << bad << " outside tolerance (worst rel " << fmt(worst_rel)
           << " at " << worst_name << "); of those, " << bad_fine << " still disagree at step 1e-6; " << fmt(t, 3)
           << " s";
  o.require(bad == 0, "finite-difference mismatch");
  o.require(t < 300.0, "runtime");
}

// --- 6 ---------------------------------------------------------------------

RunConfig experiment_config(std::uint64_t seed, bool full) {
  RunConfig run;
  run.set_seed(seed);
  run.train.learning_rate = 1e-3;
  run.train.max_epochs = 40;
  run.train.patience = 40;
  run.train.components.geo_mt = full;
  run.train.components.dcs = full;
  run.train.components.time_mt = false;
  return run;
}

void criterion_uda(Outcome& o) {
  const auto t0 = Clock::now();
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  double sum_full = 0.0, sum_base = 0.0;
  for (auto seed : seeds) {
    for (bool full : {true, false}) {
      const RunConfig run = experiment_config(seed, full);
      TargetLabels held;
      const RunData data = synthetic_run_data(run.synthetic, &held);
      std::vector<double> coord_t;
      FitHooks hooks;
      hooks.on_epoch = [&](const EpochRecord& r) { coord_t.push_back(r.mean.l_coord_target); };
      const auto out = train_run<float>(run, data, std::nullopt, hooks);
      const auto rep = evaluate_checkpoint(out.fit.best, std::span<const Patch>(data.target),
                                           std::span<const LabelMap>(held.labels), data.gsd_m);
      (full ? sum_full : sum_base) += rep.miou;
      std::cerr << "  seed " << seed << (full ? " full    " : " baseline") << " val " << fmt(out.fit.best_val_miou)
                << " target " << fmt(rep.miou) << " epochs " << out.fit.epochs_run << " (" << fmt(seconds_since(t0), 4)
                << " s)\n";
      o.require(out.fit.best_val_miou >= 0.90, "seed " + std::to_string(seed) + (full ? " full" : " baseline") +
                                                   " source val " + fmt(out.fit.best_val_miou));
      if (full) {
        const double drop = coord_t.empty() ? 0.0 : 1.0 - coord_t.back() / coord_t.front();
        o.detail << "seed " << seed << " L_coord^T " << fmt(coord_t.front()) << " -> " << fmt(coord_t.back()) << "; ";
        o.require(drop >= 0.5, "seed " + std::to_string(seed) + " target coordinate loss drop " + fmt(drop));
      }
    }
  }
  const double t = seconds_since(t0);
  const double mf = sum_full / static_cast<double>(seeds.size()), mb = sum_base / static_cast<double>(seeds.size());
  o.detail << "target mIoU full " << fmt(mf) << " vs baseline " << fmt(mb) << ", " << fmt(t, 4) << " s";
  o.require(mf >= mb, "full below baseline on target");
  o.require(t <= 1800.0, "runtime");
}

// --- CLI helpers -----------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

// --- 7 ---------------------------------------------------------------------

void criterion_ablation(Outcome& o, const fs::path& work, const std::string& cli) {
  const auto t0 = Clock::now();
  const fs::path out = work / "ablation";
  fs::remove_all(out);
  const int rc = run_cli(cli,
                         "ablate --preset standard --out \"" + out.string() +
                             "\" --set train.max_epochs=3 --set train.patience=3 --set train.learning_rate=0.001",
                         work / "ablation.log");
  const double t = seconds_since(t0);
  o.require(rc == 0, "ablate exit status " + std::to_string(rc));
  std::ifstream in(out / "results.csv");
  std::string line;
  std::getline(in, line);
  o.require(line == "cell_id,miou,val_miou,params,epochs_run,status", "results header");
  std::set<std::string> ids;
  int rows = 0, good = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> f = text::split(line, ',');
    if (f.size() < 6) continue;
    ids.insert(f[0]);
    double miou = 0.0;
    long long params = 0;
    const bool ok = text::parse_double(f[1], miou) && std::isfinite(miou) && miou >= 0.0 && miou <= 1.0 &&
                    std::sscanf(f[3].c_str(), "%lld", &params) == 1 && params > 0 && f[5] == "ok";
    good += ok;
  }
  std::set<std::string> expected;
  for (const auto& c : standard_grid()) expected.insert(c.id);
  o.detail << rows << " rows, " << good << " complete with mIoU and params, " << fmt(t, 4) << " s total ("
           << fmt(t / std::max(rows, 1), 3) << " s per cell at 3 epochs)";
  o.require(rows == 15 && good == 15, "rows");
  o.require(ids == expected, "cell ids");
  o.require(t / std::max(rows, 1) <= 1800.0, "per-cell runtime");
}

// --- 8 ---------------------------------------------------------------------

void criterion_determinism(Outcome& o, const fs::path& work, const std::string& cli) {
  const auto t0 = Clock::now();
  std::vector<std::string> hist;
  std::vector<std::map<std::string, std::string>> data;
  for (int k = 0; k < 2; ++k) {
    const fs::path d = work / ("det_data_" + std::to_string(k)), r = work / ("det_run_" + std::to_string(k));
    fs::remove_all(d);
    fs::remove_all(r);
    const std::string tag = std::to_string(k);
    int rc = run_cli(cli, "gen-data --seed 7 --out \"" + d.string() + "\"", work / ("det_gen_" + tag + ".log"));
    o.require(rc == 0, "gen-data exit status");
    rc = run_cli(cli,
                 "train --seed 7 --data \"" + d.string() + "\" --out \"" + r.string() +
                     "\" --set train.max_epochs=2 --set train.patience=2 --set train.learning_rate=0.001",
                 work / ("det_train_" + tag + ".log"));
    o.require(rc == 0, "train exit status");
    rc = run_cli(cli, "eval --checkpoint \"" + (r / "checkpoint.bin").string() + "\" --data \"" + d.string() +
                          "\" --out \"" + (r / "eval.csv").string() + "\"",
                 work / ("det_eval_" + tag + ".log"));
    o.require(rc == 0, "eval exit status");
    data.push_back(tree(d));
    hist.push_back(slurp(r / "history.csv"));
  }
  o.detail << data[0].size() << " dataset files, history " << hist[0].size() << " bytes, " << fmt(seconds_since(t0), 3)
           << " s";
  o.require(!data[0].empty() && data[0] == data[1], "datasets differ");
  o.require(!hist[0].empty() && hist[0] == hist[1], "history.csv differs");
}

// --- 9 ---------------------------------------------------------------------

void criterion_metrics(Outcome& o) {
  Rng rng(909);
  const int C = 4;
  bool exact = true;
  for (int trial = 0; trial < 10; ++trial) {
    LabelMap pred(8, 8), ref(8, 8);
    for (auto& v : pred.entries) v = static_cast<std::int32_t>(rng.uniform_int(0, C - 1));
    for (auto& v : ref.entries) v = static_cast<std::int32_t>(rng.uniform_int(0, C - 1));
    const auto cm = accumulate(ConfusionMatrix(C), pred, ref, std::nullopt);
    const auto rep = iou(cm);
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < C; ++c) {
      std::uint64_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < 64; ++i) {
        const bool r = ref.entries[i] == c, p = pred.entries[i] == c;
        tp += r && p;
        fp += !r && p;
        fn += r && !p;
      }
      for (int k = 0; k < C; ++k) {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < 64; ++i) n += ref.entries[i] == c && pred.entries[i] == k;
        exact = exact && cm(static_cast<std::size_t>(c), static_cast<std::size_t>(k)) == n;
      }
      if (tp + fp + fn == 0) {
        exact = exact && !rep.defined[static_cast<std::size_t>(c)];
        continue;
      }
      const double v = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      exact = exact && rep.per_class[static_cast<std::size_t>(c)] == v;
      sum += v;
      ++used;
    }
    exact = exact && rep.miou == sum / used;
  }
  const auto worked = iou(ConfusionMatrix(2, {3, 1, 2, 4}));
  o.detail << "10 random 8x8 pairs " << (exact ? "exact" : "mismatch") << ", worked example miou " << fmt(worked.miou);
  o.require(exact, "oracle mismatch");
  o.require(std::abs(worked.miou - 0.536) <= 1e-3, "worked example");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string workdir = "acceptance_work", cli;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--cli", cli, "path to the geomtnet executable")->required();
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  const fs::path work = fs::absolute(workdir);

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"encoding oracle", criterion_encoding},
      {"centering", criterion_centering},
      {"DCS closed form", criterion_dcs},
      {"loss equivalences", criterion_losses},
      {"gradient check", criterion_gradients},
      {"synthetic UDA", criterion_uda},
      {"ablation grid", [&](Outcome& o) { criterion_ablation(o, work, cli); }},
      {"determinism", [&](Outcome& o) { criterion_determinism(o, work, cli); }},
      {"metrics oracle", criterion_metrics},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << criteria[k].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
