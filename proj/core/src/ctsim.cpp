#include "ldct/ctsim.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include "ldct/fft.hpp"
#include "ldct/parallel.hpp"
#include "ldct/tensor_io.hpp"

namespace ldct {

namespace {

// Seed-stream purposes for dataset generation.
constexpr std::uint64_t kSeedPatient = 0x50;
constexpr std::uint64_t kSeedNoiseNormal = 0x51;
constexpr std::uint64_t kSeedNoiseLow = 0x52;

double sq(double v) { return v * v; }

}  // namespace

void validate_dose(const DoseModel& dose) {
  if (dose.incident_photons < 1.0) {
    throw ParameterError("incident_photons must be >= 1");
  }
  if (!(dose.dose_fraction > 0.0 && dose.dose_fraction <= 1.0)) {
    throw ParameterError("dose_fraction must lie in (0, 1]");
  }
}

PhantomSpec PhantomSpec::none() {
  PhantomSpec s;
  s.body = false;
  s.organs_min = 0;
  s.organs_max = 0;
  s.lesions_max = 0;
  return s;
}

TensorF rasterize_ellipses(std::size_t size,
                           const std::vector<Ellipse>& ellipses) {
  // 8x8 subpixel coverage: keeps line integrals of round structures close
  // to rotation invariant instead of following the pixel grid's jaggies.
  constexpr int kSub = 8;
  TensorF mu(1, 1, size, size);
  if (size == 0) return mu;
  const double scale = 2.0 / static_cast<double>(size);
  float* out = mu.plane(0, 0);

  struct Frame {
    double ca, sa, inv_ax2, inv_ay2;
  };
  std::vector<Frame> frames;
  frames.reserve(ellipses.size());
  for (const Ellipse& e : ellipses) {
    frames.push_back({std::cos(e.angle_rad), std::sin(e.angle_rad),
                      1.0 / sq(e.ax), 1.0 / sq(e.ay)});
  }

  for (std::size_t yi = 0; yi < size; ++yi) {
    for (std::size_t xi = 0; xi < size; ++xi) {
      double v = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        const double y = (static_cast<double>(yi) +
                          (static_cast<double>(sy) + 0.5) / kSub) * scale - 1.0;
        for (int sx = 0; sx < kSub; ++sx) {
          const double x = (static_cast<double>(xi) +
                            (static_cast<double>(sx) + 0.5) / kSub) * scale - 1.0;
          for (std::size_t ei = 0; ei < ellipses.size(); ++ei) {
            const Ellipse& e = ellipses[ei];
            const Frame& f = frames[ei];
            const double dx = x - e.cx;
            const double dy = y - e.cy;
            const double ex = dx * f.ca + dy * f.sa;
            const double ey = -dx * f.sa + dy * f.ca;
            if (sq(ex) * f.inv_ax2 + sq(ey) * f.inv_ay2 <= 1.0) v += e.delta_mu;
          }
        }
      }
      out[yi * size + xi] =
          static_cast<float>(std::max(v / (kSub * kSub), 0.0));
    }
  }
  return mu;
}

namespace {

std::vector<Ellipse> sample_phantom_ellipses(Rng& rng, const PhantomSpec& spec) {
  std::vector<Ellipse> ellipses;
  if (spec.body) {
    Ellipse body;
    body.cx = rng.uniform(-0.03, 0.03);
    body.cy = rng.uniform(-0.03, 0.03);
    body.ax = rng.uniform(0.72, 0.88);
    body.ay = rng.uniform(0.58, 0.78);
    body.angle_rad = rng.uniform(-0.15, 0.15);
    body.delta_mu = spec.mu_water * rng.uniform(0.97, 1.03);
    ellipses.push_back(body);

    const int organs =
        spec.organs_max >= spec.organs_min
            ? spec.organs_min + static_cast<int>(rng.uniform_index(
                                    spec.organs_max - spec.organs_min + 1))
            : 0;
    for (int i = 0; i < organs; ++i) {
      Ellipse organ;
      organ.cx = rng.uniform(-0.45, 0.45);
      organ.cy = rng.uniform(-0.38, 0.38);
      organ.ax = rng.uniform(0.08, 0.32);
      organ.ay = rng.uniform(0.08, 0.32);
      organ.angle_rad = rng.uniform(0.0, std::numbers::pi);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      organ.delta_mu = sign * spec.mu_water * rng.uniform(0.05, 0.15);
      ellipses.push_back(organ);
    }

    const int lesions =
        spec.lesions_max > 0
            ? static_cast<int>(rng.uniform_index(spec.lesions_max + 1))
            : 0;
    for (int i = 0; i < lesions; ++i) {
      Ellipse lesion;
      lesion.cx = rng.uniform(-0.5, 0.5);
      lesion.cy = rng.uniform(-0.4, 0.4);
      lesion.ax = rng.uniform(0.03, 0.10);
      lesion.ay = rng.uniform(0.03, 0.10);
      lesion.angle_rad = rng.uniform(0.0, std::numbers::pi);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      lesion.delta_mu =
          sign * spec.mu_water *
          rng.uniform(spec.lesion_contrast_min, spec.lesion_contrast_max);
      lesion.lesion = true;
      ellipses.push_back(lesion);
    }
  }
  return ellipses;
}

}  // namespace

Phantom make_phantom(std::size_t size, Rng& rng, const PhantomSpec& spec,
                     double pixel_spacing_mm) {
  if (size < 32) {
    throw ParameterError("phantom size must be >= 32");
  }
  Phantom ph;
  ph.pixel_spacing_mm = pixel_spacing_mm;
  ph.ellipses = sample_phantom_ellipses(rng, spec);
  ph.mu = rasterize_ellipses(size, ph.ellipses);
  return ph;
}

TensorF shepp_logan(std::size_t size) {
  // Shepp & Logan's head phantom table: (value, a, b, x0, y0, angle deg).
  static const double table[10][6] = {
      {2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0},
      {-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0},
      {-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0},
      {-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0},
      {0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0},
      {0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0},
      {0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0},
      {0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0},
      {0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0},
      {0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0},
  };
  std::vector<Ellipse> ellipses;
  ellipses.reserve(10);
  for (const auto& row : table) {
    Ellipse e;
    e.delta_mu = row[0];
    e.ax = row[1];
    e.ay = row[2];
    e.cx = row[3];
    e.cy = row[4];
    e.angle_rad = row[5] * std::numbers::pi / 180.0;
    ellipses.push_back(e);
  }
  return rasterize_ellipses(size, ellipses);
}

// ---------------------------------------------------------------------------
// Projection

Sinogram radon(const TensorF& image, std::size_t n_angles,
               std::size_t n_detectors, double pixel_spacing_mm) {
  if (image.batch() != 1 || image.channels() != 1 ||
      image.height() != image.width()) {
    throw ShapeError("radon expects a square (1,1,N,N) image");
  }
  if (n_angles < 1) {
    throw ParameterError("radon requires n_angles >= 1");
  }
  const std::size_t n = image.height();
  const double diag = static_cast<double>(n) * std::numbers::sqrt2;
  if (static_cast<double>(n_detectors) < diag) {
    throw ParameterError("n_detectors must cover the image diagonal (" +
                         std::to_string(diag) + " pixels)");
  }

  Sinogram sino;
  sino.n_angles = n_angles;
  sino.n_detectors = n_detectors;
  sino.detector_spacing_mm = pixel_spacing_mm;
  sino.values.assign(n_angles * n_detectors, 0.0f);

  const float* img = image.plane(0, 0);
  const double center = (static_cast<double>(n) - 1.0) / 2.0;
  const double det_center = (static_cast<double>(n_detectors) - 1.0) / 2.0;
  const double step = 0.25;  // ray sample spacing, pixels
  const double half_len = diag / 2.0 + 1.0;
  const auto n_steps = static_cast<std::size_t>(std::ceil(2.0 * half_len / step));

  for (std::size_t a = 0; a < n_angles; ++a) {
    const double theta = std::numbers::pi * static_cast<double>(a) /
                         static_cast<double>(n_angles);
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    for (std::size_t d = 0; d < n_detectors; ++d) {
      const double s = static_cast<double>(d) - det_center;  // pixels
      double acc = 0.0;
      for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = -half_len + (static_cast<double>(k) + 0.5) * step;
        // Point = s * omega + t * omega_perp, in pixel units from center.
        const double px = s * cos_t - t * sin_t + center;
        const double py = s * sin_t + t * cos_t + center;
        if (px < 0.0 || py < 0.0 || px > static_cast<double>(n - 1) ||
            py > static_cast<double>(n - 1)) {
          continue;
        }
        const auto x0 = static_cast<std::size_t>(px);
        const auto y0 = static_cast<std::size_t>(py);
        const std::size_t x1 = std::min(x0 + 1, n - 1);
        const std::size_t y1 = std::min(y0 + 1, n - 1);
        const double fx = px - static_cast<double>(x0);
        const double fy = py - static_cast<double>(y0);
        const double v00 = img[y0 * n + x0];
        const double v01 = img[y0 * n + x1];
        const double v10 = img[y1 * n + x0];
        const double v11 = img[y1 * n + x1];
        acc += (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy) +
               (v10 * (1.0 - fx) + v11 * fx) * fy;
      }
      sino.at(a, d) = static_cast<float>(acc * step * pixel_spacing_mm);
    }
  }
  return sino;
}

Sinogram apply_poisson_dose(const Sinogram& sinogram, const DoseModel& dose,
                            Rng& rng) {
  validate_dose(dose);
  const double i0 = dose.incident_photons * dose.dose_fraction;
  Sinogram out = sinogram;
  for (float& p : out.values) {
    const double lambda = i0 * std::exp(-static_cast<double>(p));
    const long long counts = rng.poisson(lambda);
    // Photon-starvation clamp: a bin never reports fewer than 1 count.
    p = static_cast<float>(
        std::log(i0 / static_cast<double>(std::max<long long>(counts, 1))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtered backprojection

TensorF fbp(const Sinogram& sinogram, std::size_t size) {
  const std::size_t n_det = sinogram.n_detectors;
  const std::size_t n_angles = sinogram.n_angles;
  if (n_det == 0 || n_angles == 0) {
    throw ParameterError("fbp requires a nonempty sinogram");
  }
  const double ds = sinogram.detector_spacing_mm;
  const std::size_t padded = next_pow2(2 * n_det);

  // Band-limited ramp: the discrete spatial kernel of the Ram-Lak filter
  // (value 1/(4 ds^2) at 0, -1/(pi n ds)^2 at odd lags), transformed once.
  std::vector<std::complex<double>> filter(padded, {0.0, 0.0});
  filter[0] = {1.0 / (4.0 * ds * ds), 0.0};
  for (std::size_t k = 1; k < padded / 2; k += 2) {
    const double v = -1.0 / sq(std::numbers::pi * static_cast<double>(k) * ds);
    filter[k] = {v, 0.0};
    filter[padded - k] = {v, 0.0};
  }
  fft_inplace(filter, false);

  // Filter every projection row: q = IFFT(FFT(p) * H) * ds.
  std::vector<double> filtered(n_angles * n_det);
  std::vector<std::complex<double>> row(padded);
  for (std::size_t a = 0; a < n_angles; ++a) {
    std::fill(row.begin(), row.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t d = 0; d < n_det; ++d) {
      row[d] = {static_cast<double>(sinogram.at(a, d)), 0.0};
    }
    fft_inplace(row, false);
    for (std::size_t k = 0; k < padded; ++k) row[k] *= filter[k].real();
    fft_inplace(row, true);
    for (std::size_t d = 0; d < n_det; ++d) {
      filtered[a * n_det + d] = row[d].real() * ds;
    }
  }

  // Backproject with linear interpolation along the detector axis.
  TensorF image(1, 1, size, size);
  float* out = image.plane(0, 0);
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  const double det_center = (static_cast<double>(n_det) - 1.0) / 2.0;
  const double weight = std::numbers::pi / static_cast<double>(n_angles);

  std::vector<double> cos_t(n_angles);
  std::vector<double> sin_t(n_angles);
  for (std::size_t a = 0; a < n_angles; ++a) {
    const double theta = std::numbers::pi * static_cast<double>(a) /
                         static_cast<double>(n_angles);
    cos_t[a] = std::cos(theta);
    sin_t[a] = std::sin(theta);
  }

  for (std::size_t yi = 0; yi < size; ++yi) {
    const double py = static_cast<double>(yi) - center;  // pixel units
    for (std::size_t xi = 0; xi < size; ++xi) {
      const double px = static_cast<double>(xi) - center;
      double acc = 0.0;
      for (std::size_t a = 0; a < n_angles; ++a) {
        const double s = px * cos_t[a] + py * sin_t[a] + det_center;
        if (s < 0.0 || s > static_cast<double>(n_det - 1)) continue;
        const auto d0 = static_cast<std::size_t>(s);
        const std::size_t d1 = std::min(d0 + 1, n_det - 1);
        const double f = s - static_cast<double>(d0);
        acc += filtered[a * n_det + d0] * (1.0 - f) +
               filtered[a * n_det + d1] * f;
      }
      out[yi * size + xi] = static_cast<float>(acc * weight);
    }
  }
  return image;
}

TensorF mu_to_hu(const TensorF& mu, double mu_water) {
  if (!(mu_water > 0.0)) {
    throw ParameterError("mu_water must be positive");
  }
  // Single-precision throughout: mu == mu_water then maps to exactly 0 HU.
  const auto w = static_cast<float>(mu_water);
  TensorF out(mu.shape());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    out[i] = 1000.0f * (mu[i] - w) / w;
  }
  return out;
}

TensorF hu_to_mu(const TensorF& hu, double mu_water) {
  if (!(mu_water > 0.0)) {
    throw ParameterError("mu_water must be positive");
  }
  const auto w = static_cast<float>(mu_water);
  TensorF out(hu.shape());
  for (std::size_t i = 0; i < hu.size(); ++i) {
    out[i] = w * (1.0f + hu[i] / 1000.0f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation

namespace {

/// Per-ellipse smooth drift across a patient's slice stack.
struct EllipseTrack {
  Ellipse base;
  double drift_cx = 0, drift_cy = 0, drift_ax = 0, drift_ay = 0;
  double phase = 0;
};

std::vector<EllipseTrack> sample_anatomy(Rng& rng, const PhantomSpec& spec) {
  const std::vector<Ellipse> base = sample_phantom_ellipses(rng, spec);
  std::vector<EllipseTrack> tracks;
  tracks.reserve(base.size());
  for (const Ellipse& e : base) {
    EllipseTrack t;
    t.base = e;
    const double scale = e.lesion ? 0.3 : 1.0;
    t.drift_cx = scale * rng.uniform(-0.04, 0.04);
    t.drift_cy = scale * rng.uniform(-0.04, 0.04);
    t.drift_ax = scale * rng.uniform(-0.08, 0.08) * e.ax;
    t.drift_ay = scale * rng.uniform(-0.08, 0.08) * e.ay;
    t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    tracks.push_back(t);
  }
  return tracks;
}

std::vector<Ellipse> slice_anatomy(const std::vector<EllipseTrack>& tracks,
                                   double t /* 0..1 through the stack */) {
  std::vector<Ellipse> out;
  out.reserve(tracks.size());
  for (const EllipseTrack& tr : tracks) {
    const double m = std::sin(std::numbers::pi * t + tr.phase);
    Ellipse e = tr.base;
    e.cx += tr.drift_cx * m;
    e.cy += tr.drift_cy * m;
    e.ax = std::max(0.015, e.ax + tr.drift_ax * m);
    e.ay = std::max(0.015, e.ay + tr.drift_ay * m);
    out.push_back(e);
  }
  return out;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetOptions& options,
                                 const std::filesystem::path& out_dir) {
  if (options.n_patients < 1 || options.slices_per_patient < 1) {
    throw ParameterError("patient and slice counts must be >= 1");
  }
  if (options.n_train < 0 || options.n_train > options.n_patients) {
    throw ParameterError("train split must lie within the patient count");
  }
  if (options.size < 32) {
    throw ParameterError("slice size must be >= 32");
  }
  DoseModel low_dose{options.incident_photons, options.dose_fraction};
  validate_dose(low_dose);

  const auto size = static_cast<std::size_t>(options.size);
  const double spacing = options.pixel_spacing_mm > 0.0
                             ? options.pixel_spacing_mm
                             : 340.0 / static_cast<double>(options.size);
  int n_det = options.n_detectors;
  if (n_det <= 0) {
    n_det = static_cast<int>(
                std::ceil(static_cast<double>(options.size) * std::numbers::sqrt2)) +
            3;
    if (n_det % 2 == 0) ++n_det;  // odd count centers the detector array
  }

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.seed = options.seed;
  manifest.dose_fraction = options.dose_fraction;
  manifest.incident_photons = options.incident_photons;
  manifest.size = options.size;
  manifest.n_angles = options.n_angles;
  manifest.n_detectors = n_det;
  manifest.pixel_spacing_mm = spacing;
  manifest.mu_water = options.mu_water;

  PhantomSpec phantom_spec = options.phantom;
  phantom_spec.mu_water = options.mu_water;

  char name[32];
  for (int p = 0; p < options.n_patients; ++p) {
    PatientRecord rec;
    std::snprintf(name, sizeof(name), "patient_%02d", p);
    rec.id = name;
    rec.split = p < options.n_train ? Split::train : Split::test;
    rec.patient_seed = derive_seed(options.seed, kSeedPatient, p);
    for (int s = 0; s < options.slices_per_patient; ++s) {
      SliceRef ref;
      ref.index = s;
      std::snprintf(name, sizeof(name), "slice_%03d", s);
      ref.normal_path = rec.id + "/" + name + "_normal.ten";
      ref.low_path = rec.id + "/" + name + "_low.ten";
      ref.seed_normal = derive_seed(options.seed, kSeedNoiseNormal, p, s);
      ref.seed_low = derive_seed(options.seed, kSeedNoiseLow, p, s);
      rec.slices.push_back(std::move(ref));
    }
    manifest.patients.push_back(std::move(rec));
  }

  std::filesystem::create_directories(out_dir);
  for (const PatientRecord& rec : manifest.patients) {
    std::filesystem::create_directories(out_dir / rec.id);
  }

  const auto slices_total = static_cast<std::size_t>(options.n_patients) *
                            options.slices_per_patient;
  parallel_for(slices_total, options.threads, [&](std::size_t flat) {
    const std::size_t p = flat / options.slices_per_patient;
    const std::size_t s = flat % options.slices_per_patient;
    const PatientRecord& rec = manifest.patients[p];
    const SliceRef& ref = rec.slices[s];

    // Anatomy re-derived per slice from the patient seed, so parallel order
    // cannot change the output.
    Rng anatomy_rng(rec.patient_seed);
    const std::vector<EllipseTrack> tracks =
        sample_anatomy(anatomy_rng, phantom_spec);
    const double t = options.slices_per_patient > 1
                         ? static_cast<double>(s) /
                               static_cast<double>(options.slices_per_patient - 1)
                         : 0.0;
    const TensorF mu = rasterize_ellipses(size, slice_anatomy(tracks, t));
    const Sinogram clean =
        radon(mu, options.n_angles, static_cast<std::size_t>(n_det), spacing);

    DoseModel full{options.incident_photons, 1.0};
    Rng rng_normal(ref.seed_normal);
    Rng rng_low(ref.seed_low);
    const TensorF normal_hu = mu_to_hu(
        fbp(apply_poisson_dose(clean, full, rng_normal), size), options.mu_water);
    DoseModel low{options.incident_photons, options.dose_fraction};
    const TensorF low_hu = mu_to_hu(
        fbp(apply_poisson_dose(clean, low, rng_low), size), options.mu_water);

    write_tensor(out_dir / ref.normal_path, normal_hu);
    write_tensor(out_dir / ref.low_path, low_hu);
  });

  save_manifest(manifest);
  return manifest;
}

}  // namespace ldct
