// Experiment runner: train / eval / audit / bench over the adagan library.
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "adagan/adagan.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

using namespace adagan;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t at = 0;
  while (at <= s.size()) {
    const size_t comma = s.find(',', at);
    out.push_back(s.substr(at, comma == std::string::npos ? comma : comma - at));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

// dataset spec: shapes | two-gaussians-image | cifar10:<file>[,<file>...]
Dataset build_dataset(const ExperimentConfig& cfg, int side) {
  if (cfg.dataset.rfind("cifar10:", 0) == 0) {
    Dataset ds = load_cifar10_binary(split_csv(cfg.dataset.substr(8)));
    if (ds.side() != side) {
      throw ConfigError("cifar10 images are 32x32 but the generator outputs " +
                        std::to_string(side) + "x" + std::to_string(side));
    }
    return ds;
  }
  const uint64_t data_seed = Rng(cfg.seed).split(3).state();
  return synth_dataset(cfg.dataset, cfg.data_n, side, data_seed);
}

void apply_threads(int threads) {
  if (threads > 0) set_thread_count(threads);
}

// ---- train -----------------------------------------------------------------

int cmd_train(const ExperimentConfig& cfg, const std::string& resume_path) {
  apply_threads(cfg.threads);
  const Profile profile = parse_profile(cfg.profile);
  GeneratorSpec gspec = parse_architecture(cfg.arch, profile, 4, cfg.k_adaptive);
  const std::string arch = name_architecture(gspec);
  Dataset dataset = build_dataset(cfg, gspec.output_side());

  Rng model_rng = Rng(cfg.seed).split(0);
  Generator g(gspec, model_rng);
  Discriminator d(make_discriminator_spec(profile, gspec.output_side()), model_rng);

  TrainConfig tc;
  tc.batch_size = cfg.batch;
  tc.total_iterations = cfg.iters;
  tc.seed = cfg.seed;
  tc.log_every = cfg.log_every;
  tc.snapshot_every = cfg.snapshot_every;
  tc.out_dir = cfg.out;
  tc.g_loss = parse_gan_loss(cfg.g_loss);
  tc.extra_meta = {{"profile", cfg.profile},
                   {"dataset.spec", cfg.dataset},
                   {"dataset.n", std::to_string(cfg.data_n)}};

  GanTrainer trainer(g, d, dataset, tc, arch);
  if (!resume_path.empty()) trainer.restore(load_checkpoint(resume_path));

  std::filesystem::create_directories(cfg.out);
  {
    std::ofstream f(cfg.out + "/config.txt");
    f << render_config(cfg);
  }
  const uint64_t grid_seed = Rng(cfg.seed).split(4).state();
  trainer.set_snapshot_hook([&](int64_t iteration, const std::string&) {
    Rng rng(grid_seed + static_cast<uint64_t>(iteration));
    Tensor samples = sample_images(g, 64, rng);
    char name[64];
    std::snprintf(name, sizeof(name), "/samples_%08lld.ppm", static_cast<long long>(iteration));
    write_sample_grid(samples, 8, cfg.out + name);
  });

  TrainResult result = trainer.run();
  std::printf("trained %s for %lld iterations (D updates %lld, G updates %lld)\n", arch.c_str(),
              static_cast<long long>(result.iterations), static_cast<long long>(result.d_updates),
              static_cast<long long>(result.g_updates));
  std::printf("metrics: %s\nlast checkpoint: %s\n", result.metrics_path.c_str(),
              result.last_checkpoint.c_str());
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, std::string arch_flag, std::string dataset_flag,
             int64_t n_samples, uint64_t seed, int threads, const std::string& out_json) {
  apply_threads(threads);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (!arch_flag.empty() && arch_flag != ck.arch) {
    throw ConfigError("checkpoint holds architecture '" + ck.arch + "' but --arch asked for '" +
                      arch_flag + "'");
  }
  const std::string profile_str = ck.get_meta("profile").value_or("tiny");
  const Profile profile = parse_profile(profile_str);
  GeneratorSpec gspec = parse_architecture(ck.arch, profile);
  Rng model_rng(0);
  Generator g(gspec, model_rng);
  restore_model_tensors(ck, g.params(), g.buffers());

  ExperimentConfig data_cfg;
  data_cfg.dataset = dataset_flag.empty() ? ck.get_meta("dataset.spec").value_or("shapes")
                                          : dataset_flag;
  data_cfg.data_n = std::stoll(ck.get_meta("dataset.n").value_or("3200"));
  data_cfg.seed = std::stoull(ck.get_meta("seed").value_or("0"));
  Dataset dataset = build_dataset(data_cfg, gspec.output_side());

  const int64_t n = std::min<int64_t>(n_samples, dataset.count());
  Rng sample_rng = Rng(seed).split(7);
  Tensor fake = sample_images(g, n, sample_rng);

  // Seeded draw of n real images.
  std::vector<int64_t> idx(static_cast<size_t>(dataset.count()));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  Rng pick_rng = Rng(seed).split(8);
  shuffle(idx, pick_rng);
  const int side = dataset.side();
  const int64_t img = int64_t{side} * side * 3;
  Tensor real = Tensor::uninit({n, side, side, 3});
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(real.data() + i * img, dataset.images.data() + idx[static_cast<size_t>(i)] * img,
                sizeof(float) * static_cast<size_t>(img));
  }

  TwoSampleResult ts = classifier_two_sample(real, fake, Rng(seed).split(9).state());
  std::printf("checkpoint: %s\narchitecture: %s  profile: %s  iteration: %s\n",
              checkpoint_path.c_str(), ck.arch.c_str(), profile_str.c_str(),
              ck.get_meta("iteration").value_or("?").c_str());
  std::printf("two-sample proxy: held-out accuracy %.4f over %lld samples\n", ts.overall_accuracy,
              static_cast<long long>(ts.n_held));
  std::printf("  per-group (%zu groups): %.4f +/- %.4f\n", ts.groups.per_group.size(),
              ts.groups.mean, ts.groups.stddev);

  nlohmann::json report;
  report["checkpoint"] = checkpoint_path;
  report["architecture"] = ck.arch;
  report["two_sample_accuracy"] = ts.overall_accuracy;
  report["two_sample_group_mean"] = ts.groups.mean;
  report["two_sample_group_stddev"] = ts.groups.stddev;
  report["n_samples"] = n;

  if (dataset.name == "shapes") {
    GroupedMetric mc = mode_coverage(fake);
    std::printf("mode coverage (shapes): %.4f +/- %.4f\n", mc.mean, mc.stddev);
    report["mode_coverage_mean"] = mc.mean;
    report["mode_coverage_stddev"] = mc.stddev;
  }
  if (!out_json.empty()) {
    std::ofstream f(out_json);
    if (!f) throw IoError("cannot open '" + out_json + "'");
    f << report.dump(2) << '\n';
  }
  return kExitOk;
}

// ---- audit -----------------------------------------------------------------

int cmd_audit(const std::string& arch, const std::string& profile_str, int k_adaptive) {
  const Profile profile = parse_profile(profile_str);
  GeneratorSpec gspec = parse_architecture(arch, profile, 4, k_adaptive);
  if (gspec.n_ada == 0) {
    throw ConfigError("audit needs an AdaGAN architecture; Baseline has no AdaConvBlocks");
  }
  std::printf("%-6s %6s %6s %16s %16s %12s %8s\n", "layer", "C_in", "C_out", "params_naive",
              "params_separable", "flops/px", "ratio");
  int64_t total_naive = 0, total_sep = 0;
  for (int i = 0; i < gspec.n_ada; ++i) {
    AdaConvBlockSpec spec = gspec.ada_spec(i);
    const AdaConvCost cost = cost_model(spec);

    AdaConvBlockSpec naive_spec = spec;
    naive_spec.variant = AdaConvVariant::kNaive;
    AdaConvBlockSpec sep_spec = spec;
    sep_spec.variant = AdaConvVariant::kSeparable;
    const int64_t built_naive = AdaConvBlockParams::zeros(naive_spec).weight_path_param_count();
    const int64_t built_sep = AdaConvBlockParams::zeros(sep_spec).weight_path_param_count();
    if (built_naive != cost.params_naive || built_sep != cost.params_separable) {
      throw DivergenceError("cost model disagrees with constructed tensors on layer " +
                            std::to_string(i + 3));
    }
    std::printf("l%-5d %6lld %6lld %16lld %16lld %12lld %8.3f\n", i + 3,
                static_cast<long long>(spec.c_in), static_cast<long long>(spec.c_out),
                static_cast<long long>(cost.params_naive),
                static_cast<long long>(cost.params_separable),
                static_cast<long long>(cost.flops_separable), cost.ratio);
    total_naive += cost.params_naive;
    total_sep += cost.params_separable;
  }
  std::printf("%-6s %6s %6s %16lld %16lld %12s %8.3f\n", "total", "", "",
              static_cast<long long>(total_naive), static_cast<long long>(total_sep), "",
              static_cast<double>(total_naive) / static_cast<double>(total_sep));
  std::printf("constructed parameter tensors match the cost model exactly\n");
  return kExitOk;
}

// ---- bench -----------------------------------------------------------------

struct BenchSpec {
  int k_filter = 3;
  int k_adaptive = 3;
  int64_t c_in = 64;
  int64_t c_out = 32;
  int side = 8;
  int64_t batch = 2;
};

BenchSpec parse_bench_spec(const std::string& s) {
  BenchSpec b;
  for (const std::string& part : split_csv(s)) {
    const size_t eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("bench spec entry '" + part + "' is not k=v");
    const std::string key = part.substr(0, eq);
    const int64_t v = std::stoll(part.substr(eq + 1));
    if (key == "kf") b.k_filter = static_cast<int>(v);
    else if (key == "ka") b.k_adaptive = static_cast<int>(v);
    else if (key == "cin") b.c_in = v;
    else if (key == "cout") b.c_out = v;
    else if (key == "side") b.side = static_cast<int>(v);
    else if (key == "batch") b.batch = v;
    else throw ConfigError("bench spec: unknown key '" + key + "'");
  }
  return b;
}

double bench_block_ms(const AdaConvBlockSpec& spec, int side, int64_t batch, int runs,
                      int warmup) {
  Rng rng(1234);
  AdaConvBlockParams params = AdaConvBlockParams::init(spec, rng);
  Tensor x = sample_gaussian(rng, {batch, side, side, spec.c_in});
  std::vector<double> times;
  for (int r = 0; r < runs + warmup; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    Var xv = tape.leaf(x);
    AdaConvBlockVars v = bind_adaconv(tape, params);
    Var y = ops::adaconv_block(tape, xv, v, spec);
    Var loss = ops::sum(tape, y);
    tape.backward(loss);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (r >= warmup) times.push_back(ms);
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

int cmd_bench(const std::vector<std::string>& spec_strs, int runs, int warmup, int threads) {
  apply_threads(threads);
  std::vector<BenchSpec> specs;
  if (spec_strs.empty()) {
    specs.push_back(BenchSpec{});                                  // kf3 ka3 64->32 8x8
    specs.push_back(parse_bench_spec("ka=5,cin=32,cout=16,side=8"));
    specs.push_back(parse_bench_spec("cin=32,cout=16,side=16"));
  } else {
    for (const std::string& s : spec_strs) specs.push_back(parse_bench_spec(s));
  }
  for (const BenchSpec& b : specs) {
    AdaConvBlockSpec spec;
    spec.k_filter = b.k_filter;
    spec.k_adaptive = b.k_adaptive;
    spec.c_in = b.c_in;
    spec.c_out = b.c_out;
    spec.variant = AdaConvVariant::kNaive;
    const double naive_ms = bench_block_ms(spec, b.side, b.batch, runs, warmup);
    spec.variant = AdaConvVariant::kSeparable;
    const double sep_ms = bench_block_ms(spec, b.side, b.batch, runs, warmup);
    nlohmann::json row;
    row["k_filter"] = b.k_filter;
    row["k_adaptive"] = b.k_adaptive;
    row["c_in"] = b.c_in;
    row["c_out"] = b.c_out;
    row["side"] = b.side;
    row["batch"] = b.batch;
    row["runs"] = runs;
    row["naive_ms"] = naive_ms;
    row["separable_ms"] = sep_ms;
    row["speedup"] = naive_ms / sep_ms;
    std::printf("%s\n", row.dump().c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adagan: adaptive-convolution GAN experiments"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path, resume_path;

  CLI::App* train = app.add_subcommand("train", "train a GAN and write checkpoints + samples");
  auto* o_arch = train->add_option("--arch", cfg.arch, "architecture name (Baseline, AdaGAN-1-3x3, AdaGAN-5x5, ...)");
  auto* o_profile = train->add_option("--profile", cfg.profile, "paper|tiny");
  auto* o_dataset = train->add_option("--dataset", cfg.dataset, "shapes|two-gaussians-image|cifar10:<files>");
  auto* o_iters = train->add_option("--iters", cfg.iters, "total training iterations");
  auto* o_seed = train->add_option("--seed", cfg.seed, "experiment seed");
  auto* o_batch = train->add_option("--batch", cfg.batch, "batch size");
  auto* o_k = train->add_option("--k-adaptive", cfg.k_adaptive, "K_adaptive when not in the name");
  auto* o_out = train->add_option("--out", cfg.out, "output directory");
  auto* o_log = train->add_option("--log-every", cfg.log_every, "metrics cadence");
  auto* o_snap = train->add_option("--snapshot-every", cfg.snapshot_every, "checkpoint cadence");
  auto* o_datan = train->add_option("--data-n", cfg.data_n, "synthetic dataset size");
  auto* o_threads = train->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
  auto* o_gloss = train->add_option("--g-loss", cfg.g_loss, "non-saturating|minimax");
  train->add_option("--config", config_path, "key=value config file (flags override)");
  train->add_option("--resume", resume_path, "checkpoint to continue from");

  std::string e_checkpoint, e_arch, e_dataset, e_out;
  int64_t e_n_samples = 1000;
  uint64_t e_seed = 0;
  int e_threads = 0;
  CLI::App* eval = app.add_subcommand("eval", "two-sample proxy + mode coverage for a checkpoint");
  eval->add_option("--checkpoint", e_checkpoint, "checkpoint file")->required();
  eval->add_option("--arch", e_arch, "expected architecture (errors on mismatch)");
  eval->add_option("--dataset", e_dataset, "override the checkpoint's dataset");
  eval->add_option("--n-samples", e_n_samples, "samples per side");
  eval->add_option("--seed", e_seed, "evaluation seed");
  eval->add_option("--threads", e_threads, "worker threads");
  eval->add_option("--out", e_out, "write a JSON report here");

  std::string a_arch = "AdaGAN-3x3", a_profile = "paper";
  int a_k = 0;
  CLI::App* audit = app.add_subcommand("audit", "cost model vs constructed parameter tensors");
  audit->add_option("--arch", a_arch, "architecture to audit");
  audit->add_option("--profile", a_profile, "paper|tiny");
  audit->add_option("--k-adaptive", a_k, "K_adaptive when not in the name");

  std::vector<std::string> b_specs;
  int b_runs = 5, b_warmup = 2, b_threads = 0;
  CLI::App* bench = app.add_subcommand("bench", "naive vs separable block timings");
  bench->add_option("--spec", b_specs, "kf=3,ka=3,cin=64,cout=32,side=8,batch=2 (repeatable)");
  bench->add_option("--runs", b_runs, "timed runs per spec (median)");
  bench->add_option("--warmup", b_warmup, "warmup runs");
  bench->add_option("--threads", b_threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) {
      if (!config_path.empty()) {
        ExperimentConfig from_file = load_config_file(config_path);
        ExperimentConfig flags = cfg;
        cfg = from_file;
        if (o_arch->count()) cfg.arch = flags.arch;
        if (o_profile->count()) cfg.profile = flags.profile;
        if (o_dataset->count()) cfg.dataset = flags.dataset;
        if (o_iters->count()) cfg.iters = flags.iters;
        if (o_seed->count()) cfg.seed = flags.seed;
        if (o_batch->count()) cfg.batch = flags.batch;
        if (o_k->count()) cfg.k_adaptive = flags.k_adaptive;
        if (o_out->count()) cfg.out = flags.out;
        if (o_log->count()) cfg.log_every = flags.log_every;
        if (o_snap->count()) cfg.snapshot_every = flags.snapshot_every;
        if (o_datan->count()) cfg.data_n = flags.data_n;
        if (o_threads->count()) cfg.threads = flags.threads;
        if (o_gloss->count()) cfg.g_loss = flags.g_loss;
      }
      return cmd_train(cfg, resume_path);
    }
    if (*eval) {
      return cmd_eval(e_checkpoint, e_arch, e_dataset, e_n_samples, e_seed, e_threads, e_out);
    }
    if (*audit) return cmd_audit(a_arch, a_profile, a_k);
    if (*bench) return cmd_bench(b_specs, b_runs, b_warmup, b_threads);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
