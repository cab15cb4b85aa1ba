#include "nirvis/networks.hpp"

#include "nirvis/dataset.hpp"
#include "nirvis/io.hpp"
#include "nirvis/metrics.hpp"
#include "support.hpp"

namespace nirvis {
namespace {

using test::random_tensor;
using test::TempDir;
using test::TensorD;

PipelineTopology small_topology() {
  PipelineTopology t;
  t.separation = {2, 4, nn::Activation::LeakyRelu};
  t.proportion = {2, 4, nn::Activation::Relu};
  t.colorization = {2, 4, nn::Activation::LeakyRelu};
  t.restoration_blocks = 1;
  t.restoration_features = 4;
  return t;
}

void expect_within(const TensorD& t, double lo, double hi) {
  for (double v : t.storage()) {
    EXPECT_GE(v, lo);
    EXPECT_LE(v, hi);
  }
}

SceneTriple noise_free_triple(std::uint64_t seed, bool zero_gap) {
  SynthesisConfig cfg;
  const SpectralGrid grid;
  const auto illum = day_night_schedule(grid, cfg.day_vis_level, cfg.night_vis_level, cfg.nir_level, cfg.nir_continuum);
  SimulatorOptions opt;
  opt.noise = false;
  SensorConfig sc = cfg.sensor;
  sc.exposure = cfg.day_exposure;
  Rng rng(seed);
  return synthesize_triple(generate_scene(32, 32, seed, grid), illum, 0, sc, default_sensitivity(grid, zero_gap), rng,
                           opt);
}

TEST(Topology, DefaultsAndFullScalePreset) {
  PipelineTopology t;
  EXPECT_EQ(t.separation.depth, 3);
  EXPECT_EQ(t.separation.base_features, 16);
  EXPECT_EQ(t.proportion.activation, nn::Activation::Relu);
  EXPECT_EQ(t.restoration_blocks, 4);
  EXPECT_EQ(t.restoration_features, 32);
  EXPECT_EQ(t.spatial_multiple(), 8);
  EXPECT_EQ(PipelineTopology::full_scale().separation.base_features, 64);
}

TEST(Topology, JsonRoundTrip) {
  PipelineTopology t = small_topology();
  t.color_space = ColorSpace::HSV;
  t.chroma_full_res = true;
  nlohmann::json j = t;
  EXPECT_EQ(j.get<PipelineTopology>(), t);
}

TEST(Pipeline, ShapesAndRangesOnUntrainedNet) {
  Pipeline<double> net(PipelineTopology{}, 1);
  Rng rng(2);
  auto mixed = random_tensor({2, 16, 24, 3}, rng, 0.0, 1.0, false);
  const auto out = net.forward(mixed);
  EXPECT_EQ(out.final_rgb.shape(), mixed.shape());
  EXPECT_EQ(out.nir_est.shape(), mixed.shape());
  EXPECT_EQ(out.proportion.shape(), mixed.shape());
  EXPECT_EQ(out.vis_est.shape(), mixed.shape());
  EXPECT_EQ(out.luma_restored.shape(), (Shape{2, 16, 24, 1}));
  EXPECT_EQ(out.chroma.shape(), (Shape{2, 8, 12, 2}));
  expect_within(out.final_rgb, 0.0, 1.0);
  expect_within(out.nir_est, 0.0, 1.0);
  expect_within(out.proportion, 0.0, 1.0);
  expect_within(out.vis_est, 0.0, 1.0);
  expect_within(out.chroma, -0.5, 0.5);
}

TEST(Pipeline, BoundsHoldForExtremeInputs) {
  Pipeline<double> net(small_topology(), 3);
  Rng rng(4);
  const auto out = net.forward(random_tensor({1, 8, 8, 3}, rng, -50.0, 50.0, false));
  expect_within(out.nir_est, 0.0, 1.0);
  expect_within(out.proportion, 0.0, 1.0);
  expect_within(out.chroma, -0.5, 0.5);
  expect_within(out.final_rgb, 0.0, 1.0);
}

TEST(Pipeline, RejectsIndivisibleOrWrongChannels) {
  Pipeline<float> net(PipelineTopology{}, 1);
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 12, 16, 3})), ValidationError);
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 16, 16, 1})), ValidationError);
}

TEST(Pipeline, SeedDeterminesParameters) {
  Pipeline<float> a(small_topology(), 9), b(small_topology(), 9), c(small_topology(), 10);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params().items()[i].tensor.storage(), b.params().items()[i].tensor.storage());
    differs |= a.params().items()[i].tensor.storage() != c.params().items()[i].tensor.storage();
  }
  EXPECT_TRUE(differs);
  EXPECT_TRUE(a.params().all_finite());
}

TEST(Pipeline, ForwardIsPure) {
  Pipeline<float> net(small_topology(), 5);
  Rng rng(6);
  const Raster mixed = test::random_raster(16, 16, 3, rng);
  const auto r1 = run_pipeline(net, mixed), r2 = run_pipeline(net, mixed);
  EXPECT_EQ(r1.final_rgb, r2.final_rgb);
  EXPECT_EQ(*r1.nir_est, *r2.nir_est);
}

TEST(Pipeline, IntermediatesSatisfyTheirContracts) {
  Pipeline<float> net(small_topology(), 7);
  Rng rng(8);
  const Raster mixed = test::random_raster(16, 16, 3, rng);
  const auto r = run_pipeline(net, mixed);
  ASSERT_TRUE(r.nir_est && r.proportion && r.vis_est && r.y_restored && r.chroma);
  EXPECT_EQ(r.chroma->height(), 8);
  EXPECT_EQ(r.chroma->channels(), 2);
  EXPECT_EQ(r.y_restored->channels(), 1);
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const float expect = std::clamp(
        mixed.storage()[i] - (1.0f + r.proportion->storage()[i]) * r.nir_est->storage()[i], 0.0f, 1.0f);
    EXPECT_NEAR(r.vis_est->storage()[i], expect, 1e-6);
  }
  EXPECT_NO_THROW(r.final_rgb.validate());
}

TEST(Pipeline, AblationTopologiesRun) {
  std::vector<PipelineTopology> variants(6, small_topology());
  variants[0].use_separation = false;
  variants[1].use_restoration = false;
  variants[2].direct_unet = true;
  variants[3].chroma_full_res = true;
  variants[4].color_space = ColorSpace::HSV;
  variants[5].color_space = ColorSpace::RGB;
  Rng rng(9);
  auto x = random_tensor({1, 8, 8, 3}, rng, 0.0, 1.0, false);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    Pipeline<double> net(variants[i], 1);
    const auto out = net.forward(x);
    EXPECT_EQ(out.final_rgb.shape(), x.shape()) << "variant " << i;
    expect_within(out.final_rgb, 0.0, 1.0);
  }
  EXPECT_FALSE(Pipeline<double>(variants[2], 1).forward(x).nir_est.defined());
  EXPECT_EQ(Pipeline<double>(variants[3], 1).forward(x).chroma.shape(), (Shape{1, 8, 8, 2}));
}

TEST(Pipeline, EveryParameterReceivesGradient) {
  Pipeline<double> net(small_topology(), 11);
  Rng rng(12);
  const auto out = net.forward(random_tensor({1, 8, 8, 3}, rng, 0.0, 1.0, false));
  backward(ops::add(ops::sum(out.final_rgb), ops::sum(out.nir_est)));
  for (auto& p : net.params().items()) EXPECT_TRUE(p.tensor.has_grad()) << p.name;
}

TEST(EstimateVis, ZeroNirReturnsMixed) {
  Rng rng(13);
  auto mixed = random_tensor({1, 4, 4, 3}, rng, 0.0, 1.0, false);
  auto p = random_tensor({1, 4, 4, 3}, rng, 0.0, 1.0, false);
  EXPECT_EQ(estimate_vis(mixed, TensorD::zeros(mixed.shape()), p).storage(), mixed.storage());
  EXPECT_THROW(estimate_vis(mixed, TensorD::zeros({1, 4, 4, 1}), p), ValidationError);
}

TEST(EstimateVis, TrueNirWithoutDeviationRecoversVis) {
  const auto tr = noise_free_triple(21, true);
  for (float d : tr.deviation.data()) ASSERT_EQ(d, 0.0f);
  const double step = 1.0 / SensorConfig{}.quant_levels();
  auto vis = estimate_vis(tensor_from_raster<double>(tr.mixed), tensor_from_raster<double>(tr.nir),
                          TensorD::zeros({1, 32, 32, 3}));
  for (std::size_t i = 0; i < tr.vis.size(); ++i) EXPECT_NEAR(vis.storage()[i], tr.vis.storage()[i], 2 * step + 1e-7);
}

TEST(EstimateVis, OracleInversionAboveFortyDecibels) {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    const auto tr = noise_free_triple(seed, false);
    const Raster p = proportion_target(tr.deviation, tr.nir, 1e-3f, std::numeric_limits<float>::infinity());
    auto vis = estimate_vis(tensor_from_raster<double>(tr.mixed), tensor_from_raster<double>(tr.nir),
                            tensor_from_raster<double>(p));
    const Raster est = raster_from_tensor(vis, 0, ColorSpace::RGB);
    EXPECT_GE(metrics::psnr(est, tr.vis), 40.0) << "seed " << seed;
  }
}

TEST(ProportionTarget, RatioClampedToUnitInterval) {
  Raster d(1, 3, 1, ColorSpace::RGB), n(1, 3, 1, ColorSpace::RGB);
  d.at(0, 0, 0) = 0.1f;
  n.at(0, 0, 0) = 0.4f;
  d.at(0, 1, 0) = 0.5f;
  n.at(0, 1, 0) = 0.1f;
  d.at(0, 2, 0) = 1e-4f;
  const Raster p = proportion_target(d, n);
  EXPECT_FLOAT_EQ(p.at(0, 0, 0), 0.25f);
  EXPECT_EQ(p.at(0, 1, 0), 1.0f);
  EXPECT_FLOAT_EQ(p.at(0, 2, 0), 0.1f);
  const Raster exact = proportion_target(d, n, 1e-3f, std::numeric_limits<float>::infinity());
  EXPECT_FLOAT_EQ(exact.at(0, 1, 0), 5.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  Pipeline<float> net(small_topology(), 14);
  for (auto& p : net.params().items())
    for (float& v : p.tensor.storage()) v += 0.001f * static_cast<float>(&v - p.tensor.storage().data());
  io::save_checkpoint(dir.path(), net);
  const auto loaded = io::load_checkpoint<float>(dir.path());
  EXPECT_EQ(loaded.topology(), net.topology());
  ASSERT_EQ(loaded.params().size(), net.params().size());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    EXPECT_EQ(loaded.params().items()[i].name, net.params().items()[i].name);
    EXPECT_EQ(loaded.params().items()[i].tensor.storage(), net.params().items()[i].tensor.storage());
  }
  Rng rng(15);
  const Raster mixed = test::random_raster(8, 8, 3, rng);
  EXPECT_EQ(run_pipeline(loaded, mixed).final_rgb, run_pipeline(net, mixed).final_rgb);
}

TEST(Checkpoint, MissingOrMismatchedIsDataError) {
  TempDir dir("ckpt_bad");
  EXPECT_THROW(io::load_checkpoint<float>(dir.path() / "nothing"), DataError);
  Pipeline<float> net(small_topology(), 1);
  io::save_checkpoint(dir.path(), net);
  Pipeline<float> other(PipelineTopology{}, 1);
  EXPECT_THROW(io::load_parameters(dir.path(), other.params()), DataError);
}

TEST(RasterTensor, RoundTrip) {
  Rng rng(16);
  const Raster a = test::random_raster(5, 7, 3, rng), b = test::random_raster(5, 7, 3, rng);
  const auto t = tensor_from_rasters<float>({&a, &b});
  EXPECT_EQ(t.shape(), (Shape{2, 5, 7, 3}));
  EXPECT_EQ(raster_from_tensor(t, 1, ColorSpace::RGB), b);
  EXPECT_THROW(raster_from_tensor(t, 2, ColorSpace::RGB), ValidationError);
}

}  // namespace
}  // namespace nirvis
