// Acceptance suite: one criterion per function, one PASS/FAIL line each.
// Criteria 5 and 8 drive the installed CLI binary end to end; everything
// else runs in process against independent oracles.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ldct/cascade.hpp"
#include "ldct/ctsim.hpp"
#include "ldct/gradcheck.hpp"
#include "ldct/metrics.hpp"
#include "ldct/tensor_io.hpp"

#ifndef LDCT_CLI_PATH
#define LDCT_CLI_PATH "ldct"
#endif

namespace fs = std::filesystem;
using namespace ldct;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work = "acceptance_work";

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

TensorF random_tensor(const Shape4& shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  TensorF t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  }
  return t;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(LDCT_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  return std::system(cmd.c_str());
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary);
  std::ifstream fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::vector<char> da((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  std::vector<char> db((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  return da == db;
}

/// Byte-compares two directory trees; `skip` names are ignored.
bool same_tree(const fs::path& a, const fs::path& b,
               const std::vector<std::string>& skip, std::string& mismatch) {
  std::vector<fs::path> rel;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path r = fs::relative(entry.path(), a);
    bool skipped = false;
    for (const std::string& s : skip) {
      if (r.filename() == s) skipped = true;
    }
    if (!skipped) rel.push_back(r);
  }
  for (const fs::path& r : rel) {
    if (!fs::exists(b / r)) {
      mismatch = r.string() + " missing in second run";
      return false;
    }
    if (!same_bytes(a / r, b / r)) {
      mismatch = r.string() + " differs";
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness across >= 20 seeds, < 1 minute.

Outcome criterion_1() {
  const auto start = Clock::now();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const GradCheckRow& row : run_layer_gradchecks(seed)) {
      if (!row.report.pass) {
        return {false, format("%s failed at seed %llu (max rel %.3e)",
                              row.primitive.c_str(),
                              static_cast<unsigned long long>(seed),
                              row.report.max_rel_error)};
      }
    }
  }
  const double elapsed = seconds_since(start);
  if (elapsed >= 60.0) {
    return {false, format("passed but took %.1fs (budget 60s)", elapsed)};
  }
  return {true, format("6 primitives x 20 seeds at 1e-4, %.1fs", elapsed)};
}

// ---------------------------------------------------------------------------
// 2. Optimized conv vs the naive six-loop oracle, 100 shapes, < 1 minute.

TensorF oracle_conv2d(const TensorF& input, const TensorF& kernels) {
  const std::size_t batch = input.batch();
  const std::size_t in_ch = input.channels();
  const std::size_t h = input.height();
  const std::size_t w = input.width();
  const std::size_t out_ch = kernels.batch();
  const std::size_t kh = kernels.height();
  const std::size_t kw = kernels.width();
  const auto ph = static_cast<std::ptrdiff_t>((kh - 1) / 2);
  const auto pw = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  TensorF out(batch, out_ch, h, w);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oc = 0; oc < out_ch; ++oc)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < in_ch; ++ic)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto sy = static_cast<std::ptrdiff_t>(y + ky) - ph;
                const auto sx = static_cast<std::ptrdiff_t>(x + kx) - pw;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx < 0 ||
                    sx >= static_cast<std::ptrdiff_t>(w)) {
                  continue;
                }
                acc += static_cast<double>(
                           input(b, ic, static_cast<std::size_t>(sy),
                                 static_cast<std::size_t>(sx))) *
                       kernels(oc, ic, ky, kx);
              }
          out(b, oc, y, x) = static_cast<float>(acc);
        }
  return out;
}

Outcome criterion_2() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(2025, trial));
    const std::size_t b = 1 + rng.uniform_index(4);
    const std::size_t ic = 1 + rng.uniform_index(8);
    const std::size_t oc = 1 + rng.uniform_index(8);
    const std::size_t h = 1 + rng.uniform_index(16);
    const std::size_t w = 1 + rng.uniform_index(16);
    const std::size_t k = 1 + 2 * rng.uniform_index(3);
    const TensorF input = random_tensor({b, ic, h, w}, rng);
    const TensorF kernels = random_tensor({oc, ic, k, k}, rng);
    const TensorF fast = conv2d_forward(input, kernels);
    const TensorF slow = oracle_conv2d(input, kernels);
    for (std::size_t i = 0; i < fast.size(); ++i) {
      worst = std::max(worst, std::fabs(static_cast<double>(fast[i]) - slow[i]));
    }
    if (worst >= 1e-5) {
      return {false, format("trial %d: max abs diff %.3e", trial, worst)};
    }
  }
  const double elapsed = seconds_since(start);
  if (elapsed >= 60.0) {
    return {false, format("passed but took %.1fs (budget 60s)", elapsed)};
  }
  return {true, format("100 shapes, max abs diff %.2e, %.1fs", worst, elapsed)};
}

// ---------------------------------------------------------------------------
// 3. Noiseless tomography round trip on the 128 head phantom, < 30 s.

double interior_nrmse(const TensorF& phantom, const TensorF& recon) {
  const std::size_t size = phantom.height();
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double nx = (static_cast<double>(x) - c) / (size / 2.0);
      const double ny = (static_cast<double>(y) - c) / (size / 2.0);
      const double ex = nx / (0.85 * 0.6624);
      const double ey = (ny + 0.0184) / (0.85 * 0.8740);
      if (ex * ex + ey * ey > 1.0) continue;
      const double diff = recon(0, 0, y, x) - phantom(0, 0, y, x);
      err += diff * diff;
      ref += static_cast<double>(phantom(0, 0, y, x)) * phantom(0, 0, y, x);
    }
  }
  return std::sqrt(err / ref);
}

Outcome criterion_3() {
  const auto start = Clock::now();
  const TensorF phantom = shepp_logan(128);
  const std::size_t n_det = 185;
  const double nrmse180 =
      interior_nrmse(phantom, fbp(radon(phantom, 180, n_det), 128));
  const double nrmse64 =
      interior_nrmse(phantom, fbp(radon(phantom, 64, n_det), 128));
  const double elapsed = seconds_since(start);
  if (!(nrmse180 < 0.05)) {
    return {false, format("interior NRMSE %.4f at 180 angles (limit 0.05)",
                          nrmse180)};
  }
  if (!(nrmse64 > nrmse180)) {
    return {false, format("no monotone improvement: %.4f @64 vs %.4f @180",
                          nrmse64, nrmse180)};
  }
  if (elapsed >= 30.0) {
    return {false, format("passed but took %.1fs (budget 30s)", elapsed)};
  }
  return {true, format("NRMSE %.4f @180 < 0.05, %.4f @64, %.1fs", nrmse180,
                       nrmse64, elapsed)};
}

// ---------------------------------------------------------------------------
// 4. Quarter dose gives 4x the line-integral variance at p = 1, I0 = 1e5.

Outcome criterion_4() {
  const int draws = 10000;
  Sinogram s;
  s.n_angles = 1;
  s.n_detectors = draws;
  s.values.assign(draws, 1.0f);

  auto variance = [](const Sinogram& sg) {
    double mean = 0.0;
    for (const float v : sg.values) mean += v;
    mean /= static_cast<double>(sg.values.size());
    double var = 0.0;
    for (const float v : sg.values) var += (v - mean) * (v - mean);
    return var / static_cast<double>(sg.values.size());
  };

  Rng r_full(41001);
  Rng r_quarter(41002);
  const double var_full =
      variance(apply_poisson_dose(s, DoseModel{1e5, 1.0}, r_full));
  const double var_quarter =
      variance(apply_poisson_dose(s, DoseModel{1e5, 0.25}, r_quarter));
  const double ratio = var_quarter / var_full;
  if (ratio < 4.0 * 0.8 || ratio > 4.0 * 1.2) {
    return {false, format("variance ratio %.3f outside 4x +/- 20%%", ratio)};
  }
  return {true, format("variance ratio %.3f (target 4, 10^4 draws)", ratio)};
}

// ---------------------------------------------------------------------------
// 5. Desk-scale cascade trend through the CLI, <= 15 minutes.

double mean_input_psnr(const DatasetManifest& manifest) {
  double total = 0.0;
  std::size_t count = 0;
  for (const PatientRecord* p : manifest.split_patients(Split::test)) {
    for (const SliceRef& ref : p->slices) {
      const SlicePair pair = load_slice_pair(manifest, ref);
      total += psnr_hu(pair.low, pair.normal);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::map<std::pair<std::string, int>, double> read_report_psnr(
    const fs::path& csv) {
  std::map<std::pair<std::string, int>, double> out;
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string variant, cascade, psnr;
    std::getline(ss, variant, ',');
    std::getline(ss, cascade, ',');
    std::getline(ss, psnr, ',');
    out[{variant, std::stoi(cascade)}] = std::stod(psnr);
  }
  return out;
}

Outcome criterion_5() {
  const auto start = Clock::now();
  const fs::path work = g_work / "c5";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path log = work / "cli.log";

  const std::string data = (work / "data").string();
  if (run_cli("simulate --patients 10 --train 7 --slices 40 --size 64 "
              "--dose 0.25 --seed 1 --out " + data, log) != 0) {
    return {false, "simulate failed (see " + log.string() + ")"};
  }
  const std::string run = (work / "run").string();
  if (run_cli("train --data " + data + " --out " + run +
              " --cascades 2 --preset desk --seed 7 --threads 1", log) != 0) {
    return {false, "train failed (see " + log.string() + ")"};
  }
  const std::string eval = (work / "eval").string();
  if (run_cli("evaluate --chain " + run + "/chain --data " + data + " --out " +
              eval + " --alpha 0.7 --threads 1", log) != 0) {
    return {false, "evaluate failed (see " + log.string() + ")"};
  }

  const double input_psnr = mean_input_psnr(load_manifest(data));
  const auto rows = read_report_psnr(fs::path(eval) / "report.csv");
  const double c1 = rows.at({"original", 1});
  const double c2 = rows.at({"original", 2});
  const double elapsed = seconds_since(start);

  if (!(c1 >= input_psnr + 2.0)) {
    return {false, format("cascade 1 gain %.2f dB < 2 dB (input %.2f, c1 %.2f)",
                          c1 - input_psnr, input_psnr, c1)};
  }
  if (!(c2 >= c1 - 0.1)) {
    return {false, format("cascade 2 dropped: c1 %.2f dB, c2 %.2f dB", c1, c2)};
  }
  if (elapsed > 900.0) {
    return {false, format("trend holds but took %.0fs (budget 900s)", elapsed)};
  }
  return {true, format("input %.2f dB, c1 %.2f dB (+%.2f), c2 %.2f dB, %.0fs",
                       input_psnr, c1, c1 - input_psnr, c2, elapsed)};
}

// ---------------------------------------------------------------------------
// 6. Metric closed forms.

Outcome criterion_6() {
  for (const double d : {1.0, 64.0, 512.0}) {
    const TensorF a(1, 1, 8, 8, 0.0f);
    const TensorF b(1, 1, 8, 8, static_cast<float>(d));
    const double expected = 20.0 * std::log10(4095.0 / d);
    if (std::fabs(psnr_hu(a, b) - expected) >= 0.01) {
      return {false, format("psnr at d=%.0f: %.4f vs %.4f", d, psnr_hu(a, b),
                            expected)};
    }
  }

  Rng rng(6001);
  const TensorF a = random_tensor({1, 1, 24, 24}, rng, -300, 400);
  const TensorF b = random_tensor({1, 1, 24, 24}, rng, -300, 400);
  if (ssim_hu(a, a) != 1.0) {
    return {false, "ssim(a, a) is not exactly 1"};
  }
  if (ssim_hu(a, b) != ssim_hu(b, a)) {
    return {false, "ssim is not bitwise symmetric"};
  }

  const TensorF mixed = blend(a, b, 0.7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float lhs = mixed[i] - b[i];
    const float rhs = 0.7f * (a[i] - b[i]);
    if (std::fabs(lhs - rhs) > 1e-4f * std::max(1.0f, std::fabs(rhs))) {
      return {false, "blend linearity violated beyond rounding"};
    }
  }
  return {true, "psnr closed forms within 0.01 dB; ssim exact; blend linear"};
}

// ---------------------------------------------------------------------------
// 7. MLP aggregation identity on 10 random slices.

Outcome criterion_7() {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(7001, trial));
    const std::size_t h = 16 + rng.uniform_index(80);
    const std::size_t w = 16 + rng.uniform_index(80);
    const TensorF slice = random_tensor({1, 1, h, w}, rng, -1.0, 1.0);
    const MlpPatchGrid grid = mlp_extract(slice);
    const TensorF rebuilt = mlp_aggregate(grid.inputs, grid.positions, h, w);
    for (std::size_t i = 0; i < slice.size(); ++i) {
      worst = std::max(worst,
                       std::fabs(static_cast<double>(rebuilt[i]) - slice[i]));
    }
    if (worst >= 1e-5) {
      return {false, format("trial %d (%zux%zu): max abs error %.3e", trial, h,
                            w, worst)};
    }
  }
  return {true, format("10 slices, max abs error %.2e", worst)};
}

// ---------------------------------------------------------------------------
// 8. Byte-identical simulate + train + evaluate for a fixed seed.

Outcome criterion_8() {
  const fs::path work = g_work / "c8";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path log = work / "cli.log";

  for (const char* tag : {"a", "b"}) {
    const std::string data = (work / (std::string("data_") + tag)).string();
    const std::string run = (work / (std::string("run_") + tag)).string();
    const std::string eval = (work / (std::string("eval_") + tag)).string();
    if (run_cli("simulate --patients 3 --train 2 --slices 3 --size 48 "
                "--angles 90 --dose 0.25 --seed 11 --out " + data, log) != 0) {
      return {false, "simulate failed (see " + log.string() + ")"};
    }
    if (run_cli("train --data " + data + " --out " + run +
                " --cascades 2 --depth 2 --features 8 --iters 40 --batch 8 "
                "--patch 12 --seed 3 --threads 1", log) != 0) {
      return {false, "train failed (see " + log.string() + ")"};
    }
    if (run_cli("evaluate --chain " + run + "/chain --data " + data +
                " --out " + eval + " --threads 1", log) != 0) {
      return {false, "evaluate failed (see " + log.string() + ")"};
    }
  }

  std::string mismatch;
  if (!same_tree(work / "data_a", work / "data_b", {}, mismatch)) {
    return {false, "dataset differs: " + mismatch};
  }
  // Checkpoints and loss traces must match bitwise. run_config.json embeds
  // the two runs' distinct paths and train_records.csv a wall-clock column,
  // so those two are out of scope.
  if (!same_tree(work / "run_a", work / "run_b",
                 {"train_records.csv", "run_config.json"}, mismatch)) {
    return {false, "training run differs: " + mismatch};
  }
  if (!same_bytes(work / "eval_a" / "report.csv",
                  work / "eval_b" / "report.csv")) {
    return {false, "evaluation reports differ"};
  }
  return {true, "dataset, chain checkpoint, and reports byte-identical"};
}

// ---------------------------------------------------------------------------
// 9. Prefix chains reproduce the long chain's intermediates bitwise.

Outcome criterion_9() {
  Rng rng(9001);
  CascadeChain chain;
  for (int k = 1; k <= 3; ++k) {
    const int channels = cascade_in_channels(chain.policy, k);
    Network net = build_network<float>(dncnn_spec(2, channels, 6), rng);
    net.set_mode(Mode::training);
    net.forward(random_tensor(
        {2, static_cast<std::size_t>(channels), 16, 16}, rng));
    chain.networks.push_back(std::move(net));
  }

  for (int trial = 0; trial < 5; ++trial) {
    const TensorF x_low = random_tensor({1, 1, 24, 24}, rng, -200.0, 300.0);
    const DenoiseResult full = denoise_chain(chain, x_low);
    for (std::size_t k = 1; k <= chain.length(); ++k) {
      const DenoiseResult part = denoise_chain(chain.prefix(k), x_low);
      for (std::size_t i = 0; i < k; ++i) {
        if (!(part.intermediates[i] == full.intermediates[i])) {
          return {false, format("trial %d: prefix %zu diverges at cascade %zu",
                                trial, k, i + 1)};
        }
      }
    }
  }
  return {true, "5 slices, every prefix bitwise equal"};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only.push_back(std::atoi(argv[++i]));
    } else if (arg == "--work-dir" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N]... [--work-dir PATH]\n",
                   argv[0]);
      return 2;
    }
  }

  struct Criterion {
    int number;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient correctness", criterion_1},
      {2, "convolution oracle equivalence", criterion_2},
      {3, "tomography round trip", criterion_3},
      {4, "dose-noise statistics", criterion_4},
      {5, "desk-scale cascade trend", criterion_5},
      {6, "metric closed forms", criterion_6},
      {7, "mlp aggregation identity", criterion_7},
      {8, "determinism", criterion_8},
      {9, "prefix consistency", criterion_9},
  };

  bool all_pass = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), c.number) == only.end()) {
      continue;
    }
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %d: %s -- %s\n",
                outcome.pass ? "PASS" : "FAIL", c.number, c.name,
                outcome.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && outcome.pass;
  }
  return all_pass ? 0 : 1;
}
