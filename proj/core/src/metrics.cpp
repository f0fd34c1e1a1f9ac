#include "ldct/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "ldct/parallel.hpp"

namespace ldct {

namespace {

constexpr double kRawMax = 4095.0;  // 12-bit convention
constexpr double kWindowLo = -160.0;
constexpr double kWindowHi = 240.0;

double clamp_raw(double hu) {
  return std::min(std::max(hu + 1024.0, 0.0), kRawMax);
}

/// Valid-mode separable filtering with an odd 1-D kernel, rows then columns.
/// in is h x w; out is (h - k + 1) x (w - k + 1).
void gaussian_filter_valid(const std::vector<double>& in, std::size_t h,
                           std::size_t w, const std::vector<double>& kernel,
                           std::vector<double>& tmp, std::vector<double>& out) {
  const std::size_t k = kernel.size();
  const std::size_t wv = w - k + 1;
  const std::size_t hv = h - k + 1;
  tmp.assign(h * wv, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const double* row = in.data() + y * w;
    double* trow = tmp.data() + y * wv;
    for (std::size_t x = 0; x < wv; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += kernel[i] * row[x + i];
      trow[x] = s;
    }
  }
  out.assign(hv * wv, 0.0);
  for (std::size_t y = 0; y < hv; ++y) {
    double* orow = out.data() + y * wv;
    for (std::size_t i = 0; i < k; ++i) {
      const double kv = kernel[i];
      const double* trow = tmp.data() + (y + i) * wv;
      for (std::size_t x = 0; x < wv; ++x) orow[x] += kv * trow[x];
    }
  }
}

}  // namespace

double psnr_hu(const TensorF& a, const TensorF& b) {
  check_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = clamp_raw(a[i]) - clamp_raw(b[i]);
    mse += diff * diff;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kRawMax * kRawMax / mse);
}

double ssim_hu(const TensorF& a, const TensorF& b) {
  check_same_shape(a, b, "ssim");
  if (a.batch() != 1 || a.channels() != 1) {
    throw ShapeError("ssim expects single (1,1,H,W) slices");
  }
  const std::size_t h = a.height();
  const std::size_t w = a.width();
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kK1 = 0.01;
  constexpr double kK2 = 0.03;
  constexpr double kL = 1.0;
  if (h < kWin || w < kWin) {
    throw ParameterError("ssim requires slices of at least 11x11");
  }

  // Display-window clamp, rescaled to [0, 1].
  std::vector<double> xa(h * w);
  std::vector<double> xb(h * w);
  const double span = kWindowHi - kWindowLo;
  for (std::size_t i = 0; i < h * w; ++i) {
    xa[i] = (std::min(std::max(static_cast<double>(a[i]), kWindowLo), kWindowHi) -
             kWindowLo) / span;
    xb[i] = (std::min(std::max(static_cast<double>(b[i]), kWindowLo), kWindowHi) -
             kWindowLo) / span;
  }

  std::vector<double> kernel(kWin);
  double ksum = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& kv : kernel) kv /= ksum;

  std::vector<double> aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }

  std::vector<double> tmp, mu1, mu2, e_aa, e_bb, e_ab;
  gaussian_filter_valid(xa, h, w, kernel, tmp, mu1);
  gaussian_filter_valid(xb, h, w, kernel, tmp, mu2);
  gaussian_filter_valid(aa, h, w, kernel, tmp, e_aa);
  gaussian_filter_valid(bb, h, w, kernel, tmp, e_bb);
  gaussian_filter_valid(ab, h, w, kernel, tmp, e_ab);

  const double c1 = (kK1 * kL) * (kK1 * kL);
  const double c2 = (kK2 * kL) * (kK2 * kL);
  double total = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i];
    const double m2 = mu2[i];
    const double var1 = e_aa[i] - m1 * m1;
    const double var2 = e_bb[i] - m2 * m2;
    const double cov = e_ab[i] - m1 * m2;
    // Grouped products keep the formula bitwise symmetric in (a, b).
    const double num = (2.0 * (m1 * m2) + c1) * (2.0 * cov + c2);
    const double den = (m1 * m1 + m2 * m2 + c1) * (var1 + var2 + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu1.size());
}

TensorF blend(const TensorF& denoised, const TensorF& low_dose, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("blend fraction must lie in [0, 1]");
  }
  check_same_shape(denoised, low_dose, "blend");
  TensorF out(denoised.shape());
  const auto af = static_cast<float>(alpha);
  const auto bf = static_cast<float>(1.0 - alpha);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = af * denoised[i] + bf * low_dose[i];
  }
  return out;
}

EvalReport evaluate_chain(const CascadeChain& chain,
                          const DatasetManifest& dataset, double blend_alpha,
                          int threads) {
  if (chain.networks.empty()) {
    throw ParameterError("evaluate_chain requires a nonempty chain");
  }
  std::vector<const SliceRef*> refs;
  for (const PatientRecord& p : dataset.patients) {
    if (p.split == Split::test) {
      for (const SliceRef& s : p.slices) refs.push_back(&s);
    }
  }
  if (refs.empty()) {
    throw ParameterError("dataset has no test slices");
  }

  const std::size_t k_count = chain.length();
  struct SliceMetrics {
    std::vector<double> psnr, ssim, psnr_blend, ssim_blend;
    double input_psnr = 0.0, input_ssim = 0.0;
  };
  std::vector<SliceMetrics> per_slice(refs.size());

  parallel_for(refs.size(), threads, [&](std::size_t i) {
    const SlicePair pair = load_slice_pair(dataset, *refs[i]);
    const DenoiseResult result = denoise_chain(chain, pair.low);
    SliceMetrics& m = per_slice[i];
    m.input_psnr = psnr_hu(pair.low, pair.normal);
    m.input_ssim = ssim_hu(pair.low, pair.normal);
    m.psnr.reserve(k_count);
    for (const TensorF& xd : result.intermediates) {
      m.psnr.push_back(psnr_hu(xd, pair.normal));
      m.ssim.push_back(ssim_hu(xd, pair.normal));
      const TensorF mixed = blend(xd, pair.low, blend_alpha);
      m.psnr_blend.push_back(psnr_hu(mixed, pair.normal));
      m.ssim_blend.push_back(ssim_hu(mixed, pair.normal));
    }
  });

  EvalReport report;
  report.blend_alpha = blend_alpha;
  const auto n = static_cast<double>(refs.size());
  for (const SliceMetrics& m : per_slice) {
    report.input_psnr_db += m.input_psnr / n;
    report.input_ssim += m.input_ssim / n;
  }
  for (int variant = 0; variant < 2; ++variant) {
    for (std::size_t k = 0; k < k_count; ++k) {
      EvalRow row;
      row.variant = variant == 0 ? "original" : "blended";
      row.cascade = static_cast<int>(k) + 1;
      row.n_slices = static_cast<int>(refs.size());
      for (const SliceMetrics& m : per_slice) {
        row.psnr_db += (variant == 0 ? m.psnr[k] : m.psnr_blend[k]) / n;
        row.ssim += (variant == 0 ? m.ssim[k] : m.ssim_blend[k]) / n;
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void write_report_csv(const EvalReport& report,
                      const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw FormatError("cannot write report: " + path.string());
  }
  f << "variant,cascade,psnr_db,ssim,n_slices\n";
  char line[128];
  for (const EvalRow& row : report.rows) {
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%d\n",
                  row.variant.c_str(), row.cascade, row.psnr_db, row.ssim,
                  row.n_slices);
    f << line;
  }
}

void write_pgm_hu(const TensorF& slice_hu, const std::filesystem::path& path) {
  if (slice_hu.batch() != 1 || slice_hu.channels() != 1) {
    throw ShapeError("pgm export expects a (1,1,H,W) slice");
  }
  const std::size_t h = slice_hu.height();
  const std::size_t w = slice_hu.width();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw FormatError("cannot write image: " + path.string());
  }
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  const double span = kWindowHi - kWindowLo;
  for (std::size_t y = 0; y < h; ++y) {
    const float* src = slice_hu.plane(0, 0) + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      const double v =
          (std::min(std::max(static_cast<double>(src[x]), kWindowLo), kWindowHi) -
           kWindowLo) / span;
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(w));
  }
}

}  // namespace ldct
