// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   nirvis_acceptance [--work DIR] [criterion ...]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "nirvis/dataset.hpp"
#include "nirvis/experiment.hpp"
#include "nirvis/losses.hpp"
#include "nirvis/metrics.hpp"
#include "nirvis/networks.hpp"
#include "nirvis/runtime.hpp"
#include "nirvis/training.hpp"

namespace {

using namespace nirvis;
using test::gradient_error;
using test::projected;
using test::random_tensor;
using test::TensorD;
using Fn = std::function<TensorD(const std::vector<TensorD>&)>;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Appends `name=value` to the detail and folds `ok` into the verdict.
void note(Outcome& o, const std::string& name, const std::string& value, bool ok) {
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += name + "=" + value + (ok ? "" : " (FAILED)");
  o.pass = o.pass && ok;
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

Outcome metric_oracles() {
  Outcome o;
  Rng rng(1);
  Raster a(64, 64, 3, ColorSpace::RGB), b = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.storage()[i] = static_cast<float>(rng.uniform(0.0, 0.4));
    b.storage()[i] = a.storage()[i] + 0.1f;
  }
  const double p = metrics::psnr(a, b);
  note(o, "psnr(a,a+0.1)", fmt("%.9f", p), std::abs(p - 20.0) <= 1e-6);

  const double s = metrics::ssim(a, a);
  note(o, "ssim(x,x)", fmt("%.17g", s), s == 1.0);

  Raster gray(32, 32, 3, ColorSpace::RGB);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const auto v = static_cast<float>(rng.uniform());
      for (int c = 0; c < 3; ++c) gray.at(y, x, c) = v;
    }
  const double cg = metrics::colourfulness(gray);
  note(o, "colourfulness(gray)", fmt("%g", cg), cg == 0.0);

  Raster red(32, 32, 3, ColorSpace::RGB);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) red.at(y, x, 0) = 1.0f;
  const double cr = metrics::colourfulness(red);
  note(o, "colourfulness(red)", fmt("%.4f", cr) + " vs 85.55+/-0.01", std::abs(cr - 85.55) <= 0.01);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient integrity

Outcome gradient_integrity() {
  using namespace ops;
  Outcome o;
  Rng rng(2);
  const double tol = 1e-4;
  double worst = 0.0;
  std::string worst_name;
  int checked = 0;
  std::size_t kinks = 0;
  // Composed losses are O(100) while some gradient entries nearly cancel, so
  // they use a wider step and judge entries below 1e-4 on absolute error.
  double h = 1e-6, floor = 1e-6;
  auto check = [&](const std::string& name, std::vector<TensorD> in, const Fn& f) {
    const double e = gradient_error(std::move(in), f, 1u << 30, h, floor, &kinks);
    ++checked;
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
    if (e > tol) note(o, name, fmt("%.3g", e), false);
  };
  auto unary = [&](const std::string& name, double lo, double hi, std::function<TensorD(const TensorD&)> g) {
    Fn f = [g](const std::vector<TensorD>& in) { return g(in[0]); };
    const TensorD x = random_tensor({1, 16, 16, 3}, rng, lo, hi);
    Shape out;
    {
      NoGradGuard guard;
      out = g(x).shape();
    }
    check(name, {x}, projected(f, out));
  };
  auto binary = [&](const std::string& name, const Shape& bs, std::function<TensorD(const TensorD&, const TensorD&)> g) {
    const Shape s{2, 8, 8, 3};
    Fn f = [g](const std::vector<TensorD>& in) { return g(in[0], in[1]); };
    check(name, {random_tensor(s, rng), random_tensor(bs, rng, 0.5, 1.5)}, projected(f, s));
  };

  for (const Shape& bs : {Shape{2, 8, 8, 3}, Shape{2, 8, 8, 1}, Shape{1, 1, 1, 1}}) {
    const std::string tag = "[" + bs.str() + "]";
    binary("add" + tag, bs, [](const TensorD& a, const TensorD& b) { return add(a, b); });
    binary("sub" + tag, bs, [](const TensorD& a, const TensorD& b) { return sub(a, b); });
    binary("mul" + tag, bs, [](const TensorD& a, const TensorD& b) { return mul(a, b); });
    binary("div" + tag, bs, [](const TensorD& a, const TensorD& b) { return div(a, b); });
  }
  unary("add_scalar", -1, 1, [](const TensorD& x) { return add_scalar(x, 0.3); });
  unary("mul_scalar", -1, 1, [](const TensorD& x) { return mul_scalar(x, -1.7); });
  unary("rsub_scalar", -1, 1, [](const TensorD& x) { return rsub_scalar(0.5, x); });
  unary("square", -1, 1, [](const TensorD& x) { return square(x); });
  unary("abs", 0.1, 1, [](const TensorD& x) { return abs(mul_scalar(x, -1.0)); });
  unary("exp", -1, 1, [](const TensorD& x) { return exp(x); });
  unary("logit", 0.05, 0.95, [](const TensorD& x) { return logit(x); });
  unary("relu", -1, 1, [](const TensorD& x) { return relu(x); });
  unary("leaky_relu", -1, 1, [](const TensorD& x) { return leaky_relu(x); });
  unary("sigmoid", -3, 3, [](const TensorD& x) { return sigmoid(x); });
  unary("tanh", -2, 2, [](const TensorD& x) { return tanh(x); });
  unary("clamp", -0.5, 1.5, [](const TensorD& x) { return clamp(x, 0.0, 1.0); });
  unary("channel_matrix", 0, 1, [](const TensorD& x) { return channel_matrix(x, kRgbToYuv); });
  unary("hsv_to_rgb", 0.02, 0.98, [](const TensorD& x) { return hsv_to_rgb(x); });
  unary("upsample2x", -1, 1, [](const TensorD& x) { return upsample2x(slice_channels(x, 0, 2)); });
  unary("avg_pool2x", -1, 1, [](const TensorD& x) { return avg_pool2x(x); });
  unary("slice_channels", -1, 1, [](const TensorD& x) { return slice_channels(x, 1, 2); });
  unary("mean_channels", -1, 1, [](const TensorD& x) { return mean_channels(x); });
  unary("max_channels", -1, 1, [](const TensorD& x) { return max_channels(x); });
  unary("spatial_mean", -1, 1, [](const TensorD& x) { return spatial_mean(x); });
  unary("forward_diff_y", -1, 1, [](const TensorD& x) { return forward_diff(x, 1); });
  unary("forward_diff_x", -1, 1, [](const TensorD& x) { return forward_diff(x, 2); });
  const auto kernel = gaussian_kernel<double>(5, 1.5);
  unary("gaussian_blur_valid", -1, 1, [kernel](const TensorD& x) { return gaussian_blur_valid(x, kernel); });
  unary("correlate_valid", -1, 1, [](const TensorD& x) { return correlate_valid(x, std::vector<double>{0.2, -0.5, 0.7}, 2); });
  check("sum", {random_tensor({1, 16, 16, 3}, rng)}, [](const std::vector<TensorD>& in) { return sum(in[0]); });
  check("mean", {random_tensor({1, 16, 16, 3}, rng)}, [](const std::vector<TensorD>& in) { return mean(in[0]); });
  {
    Fn f = [](const std::vector<TensorD>& in) { return concat_channels(in[0], in[1]); };
    check("concat_channels", {random_tensor({1, 8, 8, 2}, rng), random_tensor({1, 8, 8, 3}, rng)},
          projected(f, {1, 8, 8, 5}));
  }
  for (int stride : {1, 2}) {
    Fn f = [stride](const std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], stride); };
    const int ho = (16 + stride - 1) / stride;
    check("conv2d/stride" + std::to_string(stride),
          {random_tensor({1, 16, 16, 3}, rng), random_tensor({3, 3, 3, 4}, rng), random_tensor({1, 1, 1, 4}, rng)},
          projected(f, {1, ho, ho, 4}));
  }
  {
    Fn f = [](const std::vector<TensorD>& in) { return resize_conv(in[0], in[1], in[2]); };
    check("resize_conv",
          {random_tensor({1, 8, 8, 3}, rng), random_tensor({3, 3, 3, 2}, rng), random_tensor({1, 1, 1, 2}, rng)},
          projected(f, {1, 16, 16, 2}));
  }
  {
    Fn f = [](const std::vector<TensorD>& in) { return instance_norm(in[0], in[1], in[2]); };
    check("instance_norm",
          {random_tensor({2, 8, 8, 3}, rng), random_tensor({1, 1, 1, 3}, rng), random_tensor({1, 1, 1, 3}, rng)},
          projected(f, {2, 8, 8, 3}));
  }

  // Composed losses on 16x16 images.
  h = 3e-6;
  floor = 1e-4;
  const LossWeights w;
  const Shape img{1, 16, 16, 3}, gray{1, 16, 16, 1};
  auto u01 = [&](const Shape& s, bool grad = true) { return random_tensor(s, rng, 0.02, 0.98, grad); };
  const TensorD nir_gt = u01(img, false), vis_gt = u01(img, false), mixed = u01(img, false), y_gt = u01(gray, false);
  check("mae", {u01(img), u01(img)}, [](const std::vector<TensorD>& in) { return losses::mae(in[0], in[1]); });
  check("ssim", {u01(img), u01(img)}, [](const std::vector<TensorD>& in) { return losses::ssim(in[0], in[1]); });
  check("smoothness", {u01(img), u01(gray)},
        [w](const std::vector<TensorD>& in) { return losses::smoothness(in[0], in[1], w.lambda_g); });
  check("perceptual", {u01(img), u01(img)}, [](const std::vector<TensorD>& in) { return losses::perceptual(in[0], in[1]); });
  const Fn sep = [&](const std::vector<TensorD>& in) { return losses::separation(in[0], in[1], nir_gt, vis_gt, mixed, w); };
  check("separation_loss", {u01(img), u01(img)}, sep);
  const Fn res = [&](const std::vector<TensorD>& in) {
    return losses::restoration(in[0], in[1], vis_gt, y_gt, in[2], w);
  };
  check("restoration_loss", {u01(img), u01(gray), u01(img)}, res);
  const Fn tot = [&](const std::vector<TensorD>& in) {
    return losses::total(losses::separation(in[0], in[1], nir_gt, vis_gt, mixed, w),
                         losses::restoration(in[2], in[3], vis_gt, y_gt, in[0], w), w);
  };
  check("total_loss", {u01(img), u01(img), u01(img), u01(gray)}, tot);

  note(o, "checks", std::to_string(checked) + " (" + std::to_string(kinks) + " entries at kinks skipped)", true);
  note(o, "worst", worst_name + " " + fmt("%.3g", worst), worst <= tol);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Physical-model fidelity

Outcome physical_model() {
  Outcome o;
  SynthesisConfig cfg;
  cfg.noise = false;
  cfg.height = cfg.width = 32;
  cfg.seed = 3;
  const double levels = cfg.sensor.quant_levels();
  long long worst_codes = 0;
  for (int id = 0; id < 10; ++id) {
    const ScenePair pair = synthesize_scene(cfg, id);
    for (const SceneTriple* t : {&pair.day, &pair.night})
      for (std::size_t i = 0; i < t->mixed.size(); ++i) {
        // Compare in integer codes; the rasters hold code / quant_levels.
        auto code = [levels](float v) { return std::llround(double(v) * levels); };
        const long long sum = std::clamp<long long>(
            code(t->vis.storage()[i]) + code(t->nir.storage()[i]) + code(t->deviation.storage()[i]), 0,
            static_cast<long long>(levels));
        worst_codes = std::max(worst_codes, std::llabs(code(t->mixed.storage()[i]) - sum));
      }
  }
  note(o, "additivity", std::to_string(worst_codes) + " code(s) over 10 scenes", worst_codes <= 1);

  const std::size_t n = 1000000;
  auto moments = [n](const std::function<double()>& draw) {
    double s = 0.0, s2 = 0.0;
    std::vector<double> v(n);
    for (auto& x : v) x = draw();
    for (double x : v) s += x;
    const double mean = s / n;
    for (double x : v) s2 += (x - mean) * (x - mean);
    return std::pair<double, double>{mean, s2 / (n - 1)};
  };
  Rng rng(4);
  for (double lambda : {4.0, 25.0, 50.0, 400.0}) {
    const auto [m, v] = moments([&] { return rng.poisson(lambda); });
    const double sm = std::sqrt(lambda / n), sv = std::sqrt((lambda + 2.0 * lambda * lambda) / n);
    const bool ok = std::abs(m - lambda) <= 3 * sm && std::abs(v - lambda) <= 3 * sv;
    note(o, "poisson(" + fmt("%g", lambda) + ")",
         "mean " + fmt("%.3f", (m - lambda) / sm) + "sd, var " + fmt("%.3f", (v - lambda) / sv) + "sd", ok);
  }
  for (double sigma : {0.5, 3.0}) {
    const auto [m, v] = moments([&] { return rng.normal(0.0, sigma); });
    const double sm = sigma / std::sqrt(double(n)), sv = sigma * sigma * std::sqrt(2.0 / (n - 1));
    const bool ok = std::abs(m) <= 3 * sm && std::abs(v - sigma * sigma) <= 3 * sv;
    note(o, "gaussian(" + fmt("%g", sigma) + ")",
         "mean " + fmt("%.3f", m / sm) + "sd, var " + fmt("%.3f", (v - sigma * sigma) / sv) + "sd", ok);
  }
  // Shot plus thermal noise through the sensor model.
  SensorConfig sc;
  sc.thermal_sigma = 2.0;
  const ElectronImage flat{1000, 1000, std::vector<double>(n * 3, 30.0)};
  const ElectronImage noisy = apply_noise(flat, sc, rng);
  double s = 0.0, s2 = 0.0;
  for (double x : noisy.data) s += x;
  const double mean = s / noisy.data.size();
  for (double x : noisy.data) s2 += (x - mean) * (x - mean);
  const double var = s2 / (noisy.data.size() - 1), expect_var = 30.0 + 4.0;
  const double count = static_cast<double>(noisy.data.size());
  // Var of the sample variance: (mu4 - sigma^4) / n = (2 var^2 + lambda) / n for Poisson plus Gaussian.
  const double sm = std::sqrt(expect_var / count), sv = std::sqrt((2.0 * expect_var * expect_var + 30.0) / count);
  note(o, "sensor noise(30e, sigma 2)",
       "mean " + fmt("%.3f", (mean - 30.0) / sm) + "sd, var " + fmt("%.3f", (var - expect_var) / sv) + "sd",
       std::abs(mean - 30.0) <= 3 * sm && std::abs(var - expect_var) <= 3 * sv);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Oracle inversion

Outcome oracle_inversion() {
  Outcome o;
  SynthesisConfig cfg;
  cfg.noise = false;
  cfg.seed = 4;
  double worst = metrics::kInfinity;
  for (int id = 0; id < 5; ++id) {
    const ScenePair pair = synthesize_scene(cfg, id);
    for (const SceneTriple* t : {&pair.day, &pair.night}) {
      const Raster p = proportion_target(t->deviation, t->nir, 1e-3f, std::numeric_limits<float>::infinity());
      const auto vis = estimate_vis(tensor_from_raster<double>(t->mixed), tensor_from_raster<double>(t->nir),
                                    tensor_from_raster<double>(p));
      worst = std::min(worst, metrics::psnr(raster_from_tensor(vis, 0, ColorSpace::RGB), t->vis));
    }
  }
  note(o, "min psnr over 10 captures", fmt("%.2f dB", worst), worst >= 40.0);
  return o;
}

// ---------------------------------------------------------------------------
// 5 and 6. Desk-scale learning and ablation ordering

struct DeskRun {
  std::vector<TrainingSample> train, test;
  std::vector<EpochStats> history;
  Evaluation eval;
  double wall_s = 0.0;
  double cpu_s = 0.0;
};

std::optional<DeskRun> g_desk;

const DeskRun& desk_run(const fs::path& work) {
  if (g_desk) return *g_desk;
  DeskRun r;
  SynthesisConfig sc;
  sc.scenes = 32;
  sc.height = sc.width = 64;
  sc.seed = 7;
  const auto wall0 = std::chrono::steady_clock::now();
  const std::clock_t cpu0 = std::clock();
  const Manifest m = synthesize_dataset(sc, work / "desk_data");
  r.train = load_split(work / "desk_data", m, m.train_ids);
  r.test = load_split(work / "desk_data", m, m.test_ids);
  const TrainConfig cfg = TrainConfig::desk();
  Pipeline<float> net(PipelineTopology{}, cfg.seed);
  Trainer trainer(net, cfg);
  trainer.train(r.train, work / "desk_ckpt", [](const EpochStats& s) {
    if (s.epoch == 1 || s.epoch % 20 == 0)
      std::printf("  desk epoch %d total %.4f (%.1fs)\n", s.epoch, s.total, s.seconds), std::fflush(stdout);
  });
  r.history = trainer.history();
  r.eval = evaluate(net, r.test);
  r.cpu_s = double(std::clock() - cpu0) / CLOCKS_PER_SEC;
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  g_desk = std::move(r);
  return *g_desk;
}

Outcome desk_learning(const fs::path& work) {
  Outcome o;
  const DeskRun& r = desk_run(work);
  const double first = r.history.front().total, last = r.history.back().total;
  const double drop = 1.0 - last / first;
  note(o, "(a) loss drop", fmt("%.1f%%", 100 * drop) + " (" + fmt("%.2f", first) + " -> " + fmt("%.2f", last) + ")",
       drop >= 0.6);
  const double nir_gain = r.eval.nir_psnr - r.eval.mixed_as_nir_psnr;
  note(o, "(b) nir psnr gain", fmt("%.2f dB", nir_gain), nir_gain >= 3.0);
  const double luma_gain = r.eval.night_luma_restored_psnr - r.eval.night_luma_vis_psnr;
  note(o, "(c) night luma gain",
       fmt("%.2f dB", luma_gain) + " (" + fmt("%.2f", r.eval.night_luma_restored_psnr) + " vs " +
           fmt("%.2f", r.eval.night_luma_vis_psnr) + ")",
       luma_gain >= 2.0);
  note(o, "cpu time", fmt("%.1f min", r.cpu_s / 60) + ", wall " + fmt("%.1f min", r.wall_s / 60), r.cpu_s <= 1800);
  return o;
}

Outcome ablation_ordering(const fs::path& work) {
  Outcome o;
  const DeskRun& r = desk_run(work);
  PipelineTopology topo;
  const AblationRow c5 = run_condition(5, topo, TrainConfig::desk(), r.train, r.test, work / "condition_5");
  const double full = r.eval.final_rgb.mean.psnr;
  note(o, "condition 1", fmt("%.2f dB", full), true);
  note(o, "condition 5", fmt("%.2f dB", c5.psnr), true);
  note(o, "gap", fmt("%.2f dB", full - c5.psnr), full - c5.psnr >= 1.0);
  return o;
}

// ---------------------------------------------------------------------------
// 7. Determinism

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + NIRVIS_CLI_PATH + "' " + args + " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Relative path -> bytes of every regular file below `root`.
std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_bytes(e.path());
  return files;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  const fs::path d = work / "determinism";
  fs::create_directories(d);
  const fs::path log = d / "log.txt";
  io::write_text(d / "config.json", R"({"training": {"epochs": 3, "patch_size": 32, "batch_size": 2, "seed": 9}})");
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const std::string r = (d / run).string();
    ran = ran && run_cli("synth --scenes 4 --size 32x32 --seed 21 --out '" + r + "/data'", log) == 0;
    ran = ran && run_cli("train --data '" + r + "/data' --config '" + (d / "config.json").string() + "' --out '" + r +
                             "/ckpt'",
                         log) == 0;
    const Manifest m = read_manifest(fs::path(r) / "data");
    const fs::path input = fs::path(r) / "data" / m.find(m.test_ids.front(), Phase::Night)->roles.at("mixed");
    ran = ran && run_cli("infer --ckpt '" + r + "/ckpt' --input '" + input.string() + "' --out '" + r +
                             "/infer' --intermediates",
                         log) == 0;
  }
  if (!ran) {
    note(o, "cli", "a command failed: " + io::read_text(log), false);
    return o;
  }
  for (const char* part : {"data", "ckpt", "infer"}) {
    const auto a = snapshot(d / "a" / part), b = snapshot(d / "b" / part);
    note(o, part, std::to_string(a.size()) + " files " + (a == b ? "identical" : "differ"), a == b && !a.empty());
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  fs::path work = fs::temp_directory_path() / "nirvis_acceptance";
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      wanted.push_back(std::atoi(arg.c_str()));
    }
  }
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7};
  fs::remove_all(work);
  fs::create_directories(work);

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"metric oracles", metric_oracles}},
      {2, {"gradient integrity", gradient_integrity}},
      {3, {"physical-model fidelity", physical_model}},
      {4, {"oracle inversion", oracle_inversion}},
      {5, {"desk-scale learning", [&] { return desk_learning(work); }}},
      {6, {"ablation ordering", [&] { return ablation_ordering(work); }}},
      {7, {"determinism", [&] { return determinism(work); }}},
  };

  int failed = 0;
  for (int id : wanted) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = it->second.second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s (%s) [%.1fs]\n", id, it->second.first.c_str(), out.pass ? "PASS" : "FAIL",
                out.detail.c_str(), secs);
    std::fflush(stdout);
    failed += out.pass ? 0 : 1;
  }
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
