#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sofpi/jrrt.hpp"
#include "sofpi/phantoms.hpp"

using namespace sofpi;
namespace fs = std::filesystem;

namespace {

std::size_t ring_pixels(const Tensor& img, double level) {
  std::size_t n = 0;
  for (double v : img.vec()) n += std::abs(v - level) < 0.1 ? 1 : 0;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetManifest smoke_manifest() {
  DatasetManifest m;
  m.n_train = 8;
  m.n_test = 2;
  m.height = m.width = 32;
  m.seed = 5;
  return m;
}

}  // namespace

TEST(Phantom, RangeAndDeterminism) {
  const PhantomSpec spec;
  const DeformSpec d;
  const Tensor a = render_phantom(spec, d, 0.0);
  EXPECT_EQ(a, render_phantom(spec, d, 0.0));
  EXPECT_EQ(a.shape(), (Shape{64, 64}));
  for (double v : a.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Phantom, ZeroAmplitudeFreezesMotion) {
  const PhantomSpec spec;
  DeformSpec d;
  d.amplitude = 0.0;
  const Tensor rest = render_phantom(spec, d, 0.0);
  for (double p : {0.1, 0.5, 0.9}) EXPECT_EQ(render_phantom(spec, d, p), rest);
}

TEST(Phantom, ContractionShrinksTheRing) {
  const PhantomSpec spec;
  const DeformSpec d;
  EXPECT_LT(ring_pixels(render_phantom(spec, d, 0.5), spec.myocardium),
            ring_pixels(render_phantom(spec, d, 0.0), spec.myocardium));
}

TEST(Phantom, RandomSpecsAreValidAndSeeded) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = PhantomSpec::random(s, 32, 32);
    EXPECT_NO_THROW(spec.validate());
    EXPECT_EQ(render_phantom(spec, DeformSpec{}, 0.3), render_phantom(PhantomSpec::random(s, 32, 32), DeformSpec{}, 0.3));
  }
}

TEST(Phantom, InvalidInputsAreRejected) {
  PhantomSpec bad;
  bad.ring_inner = 0.3;  // inside-out ring
  EXPECT_THROW(render_phantom(bad, DeformSpec{}, 0.0), Error);
  EXPECT_THROW(render_phantom(PhantomSpec{}, DeformSpec{}, 1.0), Error);
}

TEST(Phantom, MaxDisplacementIsPositiveAndBounded) {
  const double d = max_displacement(PhantomSpec{}, DeformSpec{});
  EXPECT_GT(d, 1.0);
  EXPECT_LT(d, 16.0);
}

TEST(Pair, SamePhaseGivesIdenticalImages) {
  const auto p = make_pair(PhantomSpec{}, DeformSpec{}, 0.25, 0.25);
  EXPECT_EQ(p.g, p.f);
}

TEST(Pair, AdjacentPhasesDifferSlightly) {
  const auto p = make_pair(PhantomSpec{}, DeformSpec{}, 0.25, 0.25 + 1.0 / 24.0);
  const double d = max_abs_diff(p.g, p.f);
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 0.5);
}

TEST(Pair, RegistrationReachesTenPercent) {
  const auto p = make_pair(PhantomSpec{}, DeformSpec{}, 0.0, 0.5);
  const auto r = lddmm_register(p.f, p.g, KernelConfig{}, IntegratorConfig{}, RegisterConfig{});
  EXPECT_LE(r.final_ssd, 0.1 * r.initial_ssd) << "ratio " << r.final_ssd / r.initial_ssd;
}

TEST(Dataset, SmokeBuildLayoutValidationAndDeterminism) {
  const fs::path a = fs::temp_directory_path() / "sofpi_ds_a", b = fs::temp_directory_path() / "sofpi_ds_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto m = build_dataset(smoke_manifest(), a);
  ASSERT_EQ(m.samples.size(), 10u);
  std::size_t tensors = 0;
  for (std::size_t idx = 0; idx < 10; ++idx)
    for (const char* part : {"g", "f", "y", "m"})
      tensors += fs::exists(a / ("sample_" + std::to_string(idx) + "_" + part + ".jrrt")) ? 1 : 0;
  EXPECT_EQ(tensors, 40u);
  EXPECT_TRUE(fs::exists(a / "manifest.txt"));

  const Dataset ds = load_dataset(a);
  ASSERT_EQ(ds.train.size(), 8u);
  ASSERT_EQ(ds.test.size(), 2u);
  // Every stored momentum reproduces its pair.
  for (const auto* set : {&ds.train, &ds.test})
    for (const auto& s : *set) {
      const Tensor u = shoot_warp(s.m, s.g, m.kernel, m.integrator);
      EXPECT_LE(ssd(u, s.f), 0.1 * ssd(s.g, s.f));
    }

  build_dataset(smoke_manifest(), b);
  for (const auto& entry : fs::directory_iterator(a))
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path().filename();
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, CtModalitiesUseRayTransforms) {
  DatasetManifest m = smoke_manifest();
  m.modality = Modality::ct_sparse;
  const auto a = make_dataset_operator(m);
  EXPECT_EQ(a->kind(), OperatorKind::ray_transform);
  EXPECT_EQ(a->range_shape()[0], 18u);
  m.modality = Modality::ct_lowdose;
  EXPECT_EQ(make_dataset_operator(m)->range_shape()[0], 181u);
  EXPECT_DOUBLE_EQ(m.effective_sigma(), 0.10);
}

TEST(Dataset, ManifestRoundTrip) {
  DatasetManifest m = smoke_manifest();
  m.pattern = SamplingPattern::random_1d;
  m.rate = 1.0 / 3.0;
  const auto back = DatasetManifest::from_key_values(m.to_key_values());
  EXPECT_EQ(back.to_key_values().text(), m.to_key_values().text());
}
