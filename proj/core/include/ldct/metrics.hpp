#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ldct/cascade.hpp"
#include "ldct/data.hpp"
#include "ldct/tensor.hpp"

namespace ldct {

/// 12-bit PSNR between HU slices: raw = clamp(HU + 1024, 0, 4095),
/// PSNR = 10*log10(4095^2 / MSE(raw_a, raw_b)); +inf for identical inputs.
double psnr_hu(const TensorF& a, const TensorF& b);

/// Structural similarity inside the [-160, 240] HU display window, rescaled
/// to [0, 1]: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1,
/// averaged over all fully interior window positions.
double ssim_hu(const TensorF& a, const TensorF& b);

/// alpha * denoised + (1 - alpha) * low_dose, computed in HU.
TensorF blend(const TensorF& denoised, const TensorF& low_dose,
              double alpha = 0.7);

struct EvalRow {
  std::string variant;  // "original" or "blended"
  int cascade = 0;      // 1-based
  double psnr_db = 0.0;
  double ssim = 0.0;
  int n_slices = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // original rows first, then blended rows
  double blend_alpha = 0.7;
  // Low-dose input baseline against the normal dose (not part of the CSV).
  double input_psnr_db = 0.0;
  double input_ssim = 0.0;
};

/// Denoises every test slice, keeps all intermediates, and reports
/// per-cascade mean PSNR/SSIM for the raw intermediates and their blends.
EvalReport evaluate_chain(const CascadeChain& chain,
                          const DatasetManifest& dataset,
                          double blend_alpha = 0.7, int threads = 1);

/// CSV columns: variant,cascade,psnr_db,ssim,n_slices.
void write_report_csv(const EvalReport& report,
                      const std::filesystem::path& path);

/// 8-bit binary PGM under the [-160, 240] HU display window.
void write_pgm_hu(const TensorF& slice_hu, const std::filesystem::path& path);

}  // namespace ldct
