#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldct/data.hpp"
#include "ldct/rng.hpp"
#include "ldct/tensor.hpp"

namespace ldct {

/// Additive ellipse in normalized field coordinates: the image square spans
/// [-1, 1] on both axes.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double ax = 0.0;        // semi-axis along the ellipse's own x
  double ay = 0.0;
  double angle_rad = 0.0;
  double delta_mu = 0.0;  // additive attenuation, 1/mm
  bool lesion = false;
};

struct Phantom {
  TensorF mu;  // (1, 1, N, N) linear attenuation, 1/mm, clamped >= 0
  double pixel_spacing_mm = 1.0;
  std::vector<Ellipse> ellipses;
};

/// Parallel-beam line integrals p = integral of mu dl (dimensionless),
/// angle-major storage, angles equally spaced over [0, pi).
struct Sinogram {
  std::size_t n_angles = 0;
  std::size_t n_detectors = 0;
  double detector_spacing_mm = 1.0;
  std::vector<float> values;

  float& at(std::size_t angle, std::size_t det) {
    return values[angle * n_detectors + det];
  }
  float at(std::size_t angle, std::size_t det) const {
    return values[angle * n_detectors + det];
  }
};

struct DoseModel {
  double incident_photons = 1e5;  // counts per detector bin at full dose
  double dose_fraction = 1.0;     // quarter dose = 0.25
};

void validate_dose(const DoseModel& dose);

struct PhantomSpec {
  bool body = true;
  int organs_min = 2;
  int organs_max = 5;
  int lesions_max = 3;
  double lesion_contrast_min = 0.01;  // |delta_mu| / mu_water
  double lesion_contrast_max = 0.05;
  double mu_water = 0.02;  // 1/mm

  /// No ellipses at all: the attenuation map is identically zero.
  static PhantomSpec none();
};

/// Deterministic-from-seed ellipse phantom: body, organs, and 0..lesions_max
/// low-contrast lesions inside the body.
Phantom make_phantom(std::size_t size, Rng& rng, const PhantomSpec& spec,
                     double pixel_spacing_mm = 1.0);

TensorF rasterize_ellipses(std::size_t size, const std::vector<Ellipse>& ellipses);

/// The standard head phantom (unitless attenuation values).
TensorF shepp_logan(std::size_t size);

/// Equally-spaced ray samples with bilinear interpolation, scaled by the
/// pixel spacing. n_detectors must cover the image diagonal.
Sinogram radon(const TensorF& image, std::size_t n_angles,
               std::size_t n_detectors, double pixel_spacing_mm = 1.0);

/// counts ~ Poisson(I0 * fraction * exp(-p)) per bin;
/// noisy p = ln(I0 * fraction / max(counts, 1)).
Sinogram apply_poisson_dose(const Sinogram& sinogram, const DoseModel& dose,
                            Rng& rng);

/// Ram-Lak filtering in the frequency domain (zero-padded to the next power
/// of two >= 2x detectors), then bilinear backprojection weighted by
/// pi / n_angles.
TensorF fbp(const Sinogram& sinogram, std::size_t size);

TensorF mu_to_hu(const TensorF& mu, double mu_water);
TensorF hu_to_mu(const TensorF& hu, double mu_water);

struct DatasetOptions {
  int n_patients = 10;
  int n_train = 7;
  int slices_per_patient = 40;
  int size = 64;
  double dose_fraction = 0.25;
  double incident_photons = 1e5;
  std::uint64_t seed = 1;
  int n_angles = 180;
  int n_detectors = 0;          // 0: smallest odd count covering the diagonal
  double pixel_spacing_mm = 0;  // 0: 340 mm field of view / size
  double mu_water = 0.02;
  int threads = 1;
  PhantomSpec phantom;
};

/// Simulates the full dataset: per patient a smoothly varying family of
/// phantoms across slices; normal dose runs the projection/noise/FBP pipeline
/// at fraction 1.0 (so normal-dose images are not noise free), low dose at
/// dose_fraction. Slices are written in HU under out_dir with manifest.json.
DatasetManifest generate_dataset(const DatasetOptions& options,
                                 const std::filesystem::path& out_dir);

}  // namespace ldct
