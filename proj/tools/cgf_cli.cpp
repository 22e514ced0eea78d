// cgf: synthesize data, train, evaluate, dump frequency separations, bench.
//
// Every command takes --config FILE with key=value lines named like the long
// flags (without dashes); flags given on the command line win. Unknown keys
// are rejected. The resolved configuration is echoed first, in the same
// key=value form, so it can be fed back through --config. Switches are
// boolean options (--ncb false) rather than bare flags so the echo round-trips.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "cgf/data/dataset.hpp"
#include "cgf/metrics/report.hpp"
#include "cgf/train/checkpoint.hpp"
#include "cgf/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace cgf;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Raised for bad option combinations found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void echo_config(const CLI::App& app) {
  std::cout << "# config\n" << app.config_to_str(true, false) << "# end config\n";
}

// ---------------------------------------------------------------- options

struct ModelOptions {
  model::ModelConfig cfg;
  std::string separator = "cluster", mgb_tokens = "channel", sfa_mode = "full";

  void add(CLI::App& app) {
    app.add_option("--clusters", cfg.clusters, "Clusters K in the CAN blocks")->capture_default_str();
    app.add_option("--window", cfg.window, "Neighborhood size k (odd)")->capture_default_str();
    app.add_option("--rank", cfg.rank, "Rank of the generated filters")->capture_default_str();
    app.add_option("--can-hidden", cfg.can_hidden, "Hidden width of the filter generators")->capture_default_str();
    app.add_option("--d", cfg.d, "Projection width")->capture_default_str();
    app.add_option("--heads", cfg.heads, "Attention heads")->capture_default_str();
    app.add_option("--stages", cfg.dsr_stages, "Refinement stages (0 disables DSR)")->capture_default_str();
    app.add_option("--kmeans-iters", cfg.kmeans_iters, "Lloyd iteration cap")->capture_default_str();
    app.add_option("--separator", separator, "cluster|gaussian|fourier|local")->capture_default_str();
    app.add_option("--ncb", cfg.ncb, "Noise calibration in DSR (true|false)")->capture_default_str();
    app.add_option("--gating", cfg.gating, "Feature gating in DSR (true|false)")->capture_default_str();
    app.add_option("--mgb-tokens", mgb_tokens, "channel|spatial attention tokens in DSR")->capture_default_str();
    app.add_option("--sfa-mode", sfa_mode, "full|no-sfa|no-sfa-s|no-sfa-f")->capture_default_str();
    app.add_option("--global-skip", cfg.global_skip, "Add the upsampled MS to the output (true|false)")->capture_default_str();
  }

  model::ModelConfig resolve(std::size_t channels, std::size_t ratio, std::uint64_t seed) {
    try {
      cfg.separator = cafs::parse_separator(separator);
      cfg.mgb_tokens = model::parse_layout(mgb_tokens);
      cfg.sfa_mode = sfa::parse_mode(sfa_mode);
      cfg.channels = channels;
      cfg.ratio = ratio;
      cfg.seed = seed;
      cfg.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

data::Manifest require_dataset(const fs::path& dir, std::vector<data::SamplePair>& pairs) {
  const data::Manifest m = data::read_manifest(dir);
  pairs = data::load_dataset(dir);
  if (pairs.empty()) throw FormatError(FormatError::Kind::malformed, dir.string() + ": dataset has no samples");
  return m;
}

// ---------------------------------------------------------------- synth

struct SynthCmd {
  std::string out;
  std::size_t n = 4, size = 64, channels = 4, ratio = data::kDefaultRatio;
  std::uint64_t seed = 0;
  bool gt = true;

  void add(CLI::App& app) {
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--n", n, "Number of scenes")->capture_default_str();
    app.add_option("--size", size, "PAN/GT side length")->capture_default_str();
    app.add_option("--channels", channels, "Multispectral bands")->capture_default_str();
    app.add_option("--ratio", ratio, "PAN/MS resolution ratio")->capture_default_str();
    app.add_option("--seed", seed, "Seed of the first scene")->capture_default_str();
    app.add_option("--gt", gt, "Also write the reference images (true|false)")->capture_default_str();
  }

  int run() {
    if (size == 0 || channels == 0 || ratio == 0 || size % ratio != 0) throw UsageError("size must be a positive multiple of ratio");
    const auto m = data::write_synthetic_dataset(out, n, size, channels, seed, gt, ratio);
    std::cout << "wrote " << m.samples.size() << " samples to " << out << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
  std::string data_dir, out, log;
  ModelOptions model;
  train::TrainConfig tc;

  void add(CLI::App& app) {
    app.add_option("--data", data_dir, "Dataset directory (with manifest)")->required();
    app.add_option("--out", out, "Checkpoint path")->required();
    app.add_option("--log", log, "Step log (default: <out>.log.jsonl)");
    model.add(app);
    app.add_option("--lr", tc.lr, "AdamW learning rate")->capture_default_str();
    app.add_option("--batch", tc.batch, "Batch size")->capture_default_str();
    app.add_option("--steps", tc.steps, "Optimizer steps")->capture_default_str();
    app.add_option("--beta1", tc.beta1)->capture_default_str();
    app.add_option("--beta2", tc.beta2)->capture_default_str();
    app.add_option("--weight-decay", tc.weight_decay)->capture_default_str();
    app.add_option("--eps", tc.eps)->capture_default_str();
    app.add_option("--seed", tc.seed, "Initialization, clustering and batching seed")->capture_default_str();
  }

  int run() {
    try {
      tc.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    std::vector<data::SamplePair> pairs;
    const auto manifest = require_dataset(data_dir, pairs);
    const auto cfg = model.resolve(pairs.front().lrms.channels, manifest.ratio, tc.seed);
    model::Model<float> m(cfg);
    std::vector<train::Example<float>> examples;
    for (const auto& p : pairs) examples.push_back(train::make_example(m, p));
    const std::string log_path = log.empty() ? out + ".log.jsonl" : log;
    std::ofstream log_out(log_path);
    if (!log_out) throw FormatError(FormatError::Kind::io, "cannot write " + log_path);
    train::train_loop(m, examples, tc, [&](const train::StepRecord& r) {
      const std::string line = train::to_json(r).dump();
      log_out << line << '\n';
      log_out.flush();
      std::cout << line << '\n';
    });
    train::save_checkpoint(out, train::snapshot(m.params(), {{"model", model::to_json(cfg)}, {"train", train::to_json(tc)}}));
    std::cout << "checkpoint " << out << "\nlog " << log_path << "\n";
    return 0;
  }
};

model::ModelConfig load_model(const std::string& path, train::Checkpoint& ck) {
  ck = train::load_checkpoint(path);
  if (!ck.config.contains("model")) throw FormatError(FormatError::Kind::malformed, path + ": checkpoint has no model config");
  return model::model_config_from_json(ck.config.at("model"));
}

// ---------------------------------------------------------------- eval

struct EvalCmd {
  std::string checkpoint, data_dir, mode = "reduced", out;
  std::vector<std::size_t> clusters_override;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "CGF1 checkpoint")->required();
    app.add_option("--data", data_dir, "Dataset directory")->required();
    app.add_option("--mode", mode, "reduced (vs reference) or full (no reference)")->capture_default_str();
    app.add_option("--clusters-override", clusters_override, "Re-cluster with these K values, one table row each")->delimiter(',');
    app.add_option("--out", out, "Also write per-image records (JSON lines) here");
  }

  int run() {
    if (mode != "reduced" && mode != "full") throw UsageError("--mode must be reduced or full, got '" + mode + "'");
    train::Checkpoint ck;
    const auto cfg = load_model(checkpoint, ck);
    model::Model<float> m(cfg);
    train::restore(m.params(), ck);
    std::vector<data::SamplePair> pairs;
    require_dataset(data_dir, pairs);
    if (mode == "reduced") {
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!pairs[i].gt) throw FormatError(FormatError::Kind::malformed, "reduced mode needs reference images; sample " + std::to_string(i) + " has none");
      }
    }
    std::vector<std::optional<std::size_t>> ks;
    for (std::size_t k : clusters_override) {
      if (k == 0) throw UsageError("--clusters-override values must be positive");
      ks.emplace_back(k);
    }
    if (ks.empty()) ks.emplace_back(std::nullopt);
    std::ofstream records;
    if (!out.empty()) {
      records.open(out);
      if (!records) throw FormatError(FormatError::Kind::io, "cannot write " + out);
    }
    std::vector<std::pair<std::string, metrics::MetricsReport>> groups;
    for (const auto& k : ks) {
      metrics::MetricsReport rep;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const data::Image fused = m.predict(pairs[i], k);
        metrics::ReportRow row{"sample_" + std::to_string(i), std::nullopt, std::nullopt};
        if (mode == "reduced") {
          try {
            row.reduced = metrics::reduced(fused, *pairs[i].gt, pairs[i].ratio);
          } catch (const InvalidArgument& e) {
            throw FormatError(FormatError::Kind::malformed, row.label + ": " + e.what());
          }
        } else {
          row.full = metrics::full(fused, pairs[i].pan, pairs[i].lrms);
        }
        auto j = metrics::to_json(row);
        j["clusters"] = k.value_or(cfg.clusters);
        j["mode"] = mode;
        std::cout << j.dump() << '\n';
        if (records.is_open()) records << j.dump() << '\n';
        rep.add(std::move(row));
      }
      groups.emplace_back("K=" + std::to_string(k.value_or(cfg.clusters)), std::move(rep));
    }
    std::cout << metrics::aggregate_table(groups);
    return 0;
  }
};

// ---------------------------------------------------------------- separate

struct SeparateCmd {
  std::string input, checkpoint, baseline, out_dir;
  std::size_t clusters = 0;

  void add(CLI::App& app) {
    app.add_option("--input", input, "MSR1 raster to separate")->required();
    auto* ck = app.add_option("--checkpoint", checkpoint, "Use the trained CAN branch of this checkpoint");
    auto* bl = app.add_option("--baseline", baseline, "Fixed separator: gaussian|fourier|local");
    ck->excludes(bl);
    app.add_option("--out", out_dir, "Output directory")->required();
    app.add_option("--clusters", clusters, "K override for cluster separation (0 keeps the checkpoint's)")->capture_default_str();
  }

  int run() {
    if (checkpoint.empty() == baseline.empty()) throw UsageError("give exactly one of --checkpoint or --baseline");
    const data::Image img = data::read_raster(input);
    const Tensor x = data::to_tensor<float>(img);
    cafs::FreqPair<float> parts;
    std::optional<cafs::ClusterPlan<float>> plan;
    nlohmann::json summary{{"input", input}};
    NoGradGuard ng;
    if (!baseline.empty()) {
      cafs::Separator s;
      try {
        s = cafs::parse_separator(baseline);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      if (s == cafs::Separator::cluster) throw UsageError("cluster separation is learned; pass --checkpoint instead of --baseline cluster");
      parts = cafs::baseline_separate(x, s);
      summary["separator"] = baseline;
    } else {
      train::Checkpoint ck;
      const auto cfg = load_model(checkpoint, ck);
      model::Model<float> m(cfg);
      train::restore(m.params(), ck);
      summary["separator"] = cafs::to_string(cfg.separator);
      if (cfg.separator != cafs::Separator::cluster) {
        parts = cafs::baseline_separate(x, cfg.separator);
      } else {
        const bool is_pan = img.channels == 1;
        if (!is_pan && img.channels != cfg.channels) {
          throw ShapeError("input has " + std::to_string(img.channels) + " bands; model takes 1 (PAN) or " + std::to_string(cfg.channels));
        }
        const std::size_t K = clusters ? clusters : cfg.clusters;
        plan = cafs::plan_clusters(x, K, cfg.window, is_pan ? cfg.seed : cfg.seed + 1, cfg.kmeans_iters);
        parts = cafs::can_apply(x, *plan, is_pan ? m.can_pan() : m.can_ms());
        summary["branch"] = is_pan ? "pan" : "ms";
        summary["clusters"] = plan->K;
      }
    }
    fs::create_directories(out_dir);
    data::Image high = data::from_tensor(parts.high), low = data::from_tensor(parts.low);
    double residual = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      residual = std::max(residual, std::abs(static_cast<double>(high.pixels[i]) + low.pixels[i] - img.pixels[i]));
    }
    data::Image high_view = high;
    for (float& v : high_view.pixels) v += 0.5f;  // signed detail, centred for display
    const std::size_t g = img.channels >= 3 ? 1 : 0, b = img.channels >= 3 ? 2 : 0;
    data::write_ppm(fs::path(out_dir) / "high.ppm", high_view, 0, g, b);
    data::write_ppm(fs::path(out_dir) / "low.ppm", low, 0, g, b);
    data::write_raster(fs::path(out_dir) / "high.msr", high);
    data::write_raster(fs::path(out_dir) / "low.msr", low);
    if (plan) {
      data::write_index_pgm(fs::path(out_dir) / "clusters.pgm", *plan->labels, plan->H, plan->W, plan->K);
      summary["distinct_labels"] = std::set<std::uint32_t>(plan->labels->begin(), plan->labels->end()).size();
    }
    summary["residual_max"] = residual;
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << '\n';
    std::cout << summary.dump() << '\n';
    return 0;
  }
};

// ---------------------------------------------------------------- bench

struct BenchCmd {
  std::vector<std::size_t> sizes{64, 128};
  std::size_t channels = 4, clusters = 32, window = 3, rank = 4, can_hidden = 64, d = 32, heads = 8, kmeans_iters = 50;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--sizes", sizes, "Image side lengths")->delimiter(',')->capture_default_str();
    app.add_option("--channels", channels)->capture_default_str();
    app.add_option("--clusters", clusters)->capture_default_str();
    app.add_option("--window", window)->capture_default_str();
    app.add_option("--rank", rank)->capture_default_str();
    app.add_option("--can-hidden", can_hidden)->capture_default_str();
    app.add_option("--d", d, "Attention width")->capture_default_str();
    app.add_option("--heads", heads)->capture_default_str();
    app.add_option("--kmeans-iters", kmeans_iters)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
  }

  struct Cell {
    double ms = 0;
    std::uint64_t ops = 0;
  };

  template <typename F>
  static double time_ms(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }

  // Op counts are multiply-adds (element copies for unfold), derived from
  // shapes and the iteration count actually run, so they repeat exactly.
  std::vector<Cell> measure(std::size_t S) const {
    NoGradGuard ng;
    const Tensor img = data::to_tensor<float>(data::synth_scene(seed, S, channels));
    const std::size_t N = S * S, F = window * window * channels;
    std::vector<Cell> row(4);
    row[0].ms = time_ms([&] { (void)unfold(reshape(img, {channels, S, S}), window); });
    row[0].ops = N * F;
    cafs::KMeansResult km;
    row[1].ms = time_ms([&] {
      const Tensor feats = cafs::window_features(img, window);
      km = cafs::kmeans(std::vector<double>(feats.data().begin(), feats.data().end()), N, channels, std::min(clusters, N), seed, kmeans_iters);
    });
    row[1].ops = km.inertia_trace.size() * N * km.K * channels;
    nn::ParamStore<float> store(seed);
    const cafs::CanBranch<float> branch(store, "can", channels, window, rank, can_hidden);
    const auto plan = cafs::plan_clusters(img, clusters, window, seed, kmeans_iters);
    std::uint64_t branch_params = 0;
    for (const auto& e : store.entries()) branch_params += e.tensor.numel();
    row[2].ms = time_ms([&] { (void)cafs::can_apply(img, plan, branch); });
    row[2].ops = plan.K * branch_params + N * F * channels;
    Rng rng(seed);
    auto rnd = [&](Shape s) {
      Tensor t(std::move(s));
      for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
      return t;
    };
    const std::size_t Dh = d / heads;
    const Tensor q = rnd({heads, N, Dh}), k = rnd({heads, N, Dh}), v = rnd({heads, N, Dh});
    row[3].ms = time_ms([&] { (void)attention(q, k, v, static_cast<float>(1.0 / std::sqrt(double(Dh)))); });
    row[3].ops = static_cast<std::uint64_t>(heads) * N * N * 2 * Dh;
    return row;
  }

  int run() {
    if (heads == 0 || d % heads != 0) throw UsageError("--d must be divisible by --heads");
    if (window % 2 == 0) throw UsageError("--window must be odd");
    for (std::size_t s : sizes) {
      if (s == 0) throw UsageError("--sizes must be positive");
    }
    std::vector<std::vector<Cell>> cols;
    for (std::size_t s : sizes) cols.push_back(measure(s));
    const char* names[] = {"unfold", "kmeans", "filtergen", "attention"};
    std::printf("%-10s", "stage");
    for (std::size_t s : sizes) std::printf("  %12s  %14s", ("ms@" + std::to_string(s)).c_str(), ("ops@" + std::to_string(s)).c_str());
    std::printf("\n");
    for (int r = 0; r < 4; ++r) {
      std::printf("%-10s", names[r]);
      for (const auto& c : cols) std::printf("  %12.2f  %14llu", c[r].ms, static_cast<unsigned long long>(c[r].ops));
      std::printf("\n");
    }
    return 0;
  }
};

void usage() {
  std::cout << "usage: cgf <command> [options]\n\n"
               "commands:\n"
               "  synth     write synthetic PAN/LRMS/GT rasters and a manifest\n"
               "  train     train a model on a dataset and write a checkpoint\n"
               "  eval      score a checkpoint on a dataset (reduced or full resolution)\n"
               "  separate  dump the high/low split of one raster\n"
               "  bench     time the main kernels at a few image sizes\n\n"
               "run 'cgf <command> --help' for the options of a command\n";
}

template <typename Cmd>
int dispatch(const std::string& name, const std::string& about, int argc, char** argv) {
  CLI::App app{about, "cgf " + name};
  app.set_config("--config", "", "key=value file; command-line flags take precedence");
  app.allow_config_extras(false);
  Cmd cmd;
  cmd.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  echo_config(app);
  return cmd.run();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return kExitUsage;
  }
  const std::string cmd = argv[1];
  if (cmd == "-h" || cmd == "--help" || cmd == "help") {
    usage();
    return 0;
  }
  try {
    if (cmd == "synth") return dispatch<SynthCmd>(cmd, "Write a synthetic dataset", argc - 1, argv + 1);
    if (cmd == "train") return dispatch<TrainCmd>(cmd, "Train a model", argc - 1, argv + 1);
    if (cmd == "eval") return dispatch<EvalCmd>(cmd, "Evaluate a checkpoint", argc - 1, argv + 1);
    if (cmd == "separate") return dispatch<SeparateCmd>(cmd, "Dump a frequency separation", argc - 1, argv + 1);
    if (cmd == "bench") return dispatch<BenchCmd>(cmd, "Benchmark the main kernels", argc - 1, argv + 1);
  } catch (const UsageError& e) {
    std::cerr << "cgf " << cmd << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "cgf " << cmd << ": numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "cgf " << cmd << ": " << e.what() << "\n";
    return kExitData;
  }
  std::cerr << "cgf: unknown command '" << cmd << "'\n";
  usage();
  return kExitUsage;
}
