// Synthetic cardiac-like phantoms with an analytic radial contraction,
// template/target pairs and dataset assembly (measurements plus
// ground-truth momenta).

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sofpi/lddmm.hpp"
#include "sofpi/operators.hpp"
#include "sofpi/pipeline.hpp"

namespace sofpi {

/// Geometry is given in fractions: centres of the grid extents, radii and
/// semi-axes of min(H, W).
struct PhantomSpec {
  std::size_t height = 64, width = 64;
  double center_x = 0.5, center_y = 0.5;
  double ellipse_ax = 0.42, ellipse_ay = 0.36;
  double ring_inner = 0.16, ring_outer = 0.24;
  int discs = 2;
  double disc_radius = 0.035;
  double background = 0.25, myocardium = 0.55, blood = 0.95, disc_level = 0.55;
  /// Disc placement.
  std::uint64_t seed = 0;

  void validate() const;
  /// A jittered variant of the defaults, deterministic in seed.
  static PhantomSpec random(std::uint64_t seed, std::size_t height, std::size_t width);
};

/// Radial contraction about the ring centre, r -> r (1 - c(p) w(r)) with
/// w(r) = exp(-r^2 / (2 sigma_d^2)) and c(p) = c_max (1 - cos 2 pi p) / 2,
/// where c_max contracts the ring mid-line by `amplitude` of its radius.
struct DeformSpec {
  double amplitude = 0.25;
  /// Pixels; <= 0 selects 1.2 times the ring mid-radius.
  double sigma_d = 0.0;
  std::uint64_t seed = 0;
};

/// Largest displacement (pixels) the deformation produces at any phase.
double max_displacement(const PhantomSpec& spec, const DeformSpec& deform);

/// Anti-aliased (4x4 supersampled) phantom at a cardiac phase in [0,1).
Tensor render_phantom(const PhantomSpec& spec, const DeformSpec& deform, double phase);

struct ImagePair {
  Tensor g, f;
};

ImagePair make_pair(const PhantomSpec& spec, const DeformSpec& deform, double template_phase, double target_phase);

// ---------------------------------------------------------------------------

enum class Modality { mri, ct_sparse, ct_lowdose };

std::string to_string(Modality m);
Modality parse_modality(const std::string& name);

struct SampleEntry {
  std::size_t index = 0;
  bool test = false;
  int template_phase = 0;  // of `phases`
  int target_phase = 0;
  std::uint64_t seed = 0;
  int attempts = 1;
  double registration_ratio = 0.0;  // SSD(g o phi, f) / SSD(g, f)
};

struct DatasetManifest {
  Modality modality = Modality::mri;
  std::size_t n_train = 8, n_test = 2;
  std::size_t height = 64, width = 64;
  std::uint64_t seed = 1;
  int phases = 24;
  double amplitude = 0.25;
  /// Minimum difference of the normalised contraction level (1 - cos 2 pi p)/2
  /// between template and target phase.
  double min_contrast = 0.5;

  // MRI sampling
  SamplingPattern pattern = SamplingPattern::radial;
  double rate = 0.25;
  /// < 0 selects the pattern default.
  double center = -1.0;
  // CT views; 0 selects 18 (sparse) or 181 (low-dose).
  std::size_t views = 0;
  /// < 0 selects 0.05 (MRI), 0 (sparse CT) or 0.10 (low-dose CT).
  double sigma = -1.0;

  KernelConfig kernel;
  IntegratorConfig integrator;
  RegisterConfig registration{10000.0, 60, 1e-4, 20, 1e-9};
  double max_ratio = 0.1;
  int max_attempts = 8;

  std::vector<SampleEntry> samples;

  double effective_sigma() const;
  std::size_t effective_views() const;
  KeyValues to_key_values() const;
  static DatasetManifest from_key_values(const KeyValues& kv);
};

/// Builds the operator described by a manifest. For MRI the mask is generated
/// from the manifest seed.
OperatorPtr make_dataset_operator(const DatasetManifest& m, SamplingMask* mask = nullptr);

using LogFn = std::function<void(const std::string&)>;

/// Generates every sample, writes manifest.txt, sample_<idx>_{g,f,y,m}.jrrt
/// and (MRI) the mask, and returns the manifest with its sample index.
DatasetManifest build_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir,
                              const LogFn& log = {});

struct Dataset {
  DatasetManifest manifest;
  OperatorPtr op;
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> test;
  std::vector<std::size_t> train_ids, test_ids;
};

/// Reads any directory in the build_dataset layout.
Dataset load_dataset(const std::filesystem::path& dir);

/// SplitMix64 step, used to derive per-sample seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace sofpi
