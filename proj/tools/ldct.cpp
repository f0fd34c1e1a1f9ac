// Command-line front end: simulate / train / denoise / evaluate / gradcheck.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ldct/cascade.hpp"
#include "ldct/ctsim.hpp"
#include "ldct/gradcheck.hpp"
#include "ldct/metrics.hpp"
#include "ldct/parallel.hpp"
#include "ldct/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Resolved parameters land on disk before any work starts, so a crashed
/// run still leaves its configuration for post-mortem.
void write_run_config(const fs::path& out_dir, const std::string& command,
                      json params) {
  fs::create_directories(out_dir);
  json j{{"command", command}, {"parameters", std::move(params)}};
  std::ofstream f(out_dir / "run_config.json");
  if (!f) {
    throw ldct::FormatError("cannot write run_config.json in " +
                            out_dir.string());
  }
  f << j.dump(2) << "\n";
}

std::string checksum_hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string out;
  int patients = 10;
  int train = 7;
  int slices = 40;
  int size = 64;
  double dose = 0.25;
  double i0 = 1e5;
  std::uint64_t seed = 1;
  int angles = 180;
  int detectors = 0;
  double spacing = 0.0;
  double mu_water = 0.02;
  int threads = 1;
};

int run_simulate(const SimulateArgs& args) {
  ldct::DatasetOptions opts;
  opts.n_patients = args.patients;
  opts.n_train = args.train;
  opts.slices_per_patient = args.slices;
  opts.size = args.size;
  opts.dose_fraction = args.dose;
  opts.incident_photons = args.i0;
  opts.seed = args.seed;
  opts.n_angles = args.angles;
  opts.n_detectors = args.detectors;
  opts.pixel_spacing_mm = args.spacing;
  opts.mu_water = args.mu_water;
  opts.threads = args.threads;

  write_run_config(args.out, "simulate",
                   json{{"patients", args.patients},
                        {"train", args.train},
                        {"slices", args.slices},
                        {"size", args.size},
                        {"dose", args.dose},
                        {"i0", args.i0},
                        {"seed", args.seed},
                        {"angles", args.angles},
                        {"detectors", args.detectors},
                        {"spacing", args.spacing},
                        {"mu_water", args.mu_water},
                        {"threads", args.threads}});

  const ldct::DatasetManifest manifest = ldct::generate_dataset(opts, args.out);
  std::printf("simulate: %zu train + %zu test patients, %d slices each -> %s\n",
              manifest.split_patients(ldct::Split::train).size(),
              manifest.split_patients(ldct::Split::test).size(), args.slices,
              args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string model = "dncnn";
  std::string preset;
  std::string policy = "latest";
  std::string mlp_activation = "tanh";
  int cascades = 2;
  int depth = 5;
  int features = 64;
  std::uint64_t iters = 0;  // 0: model default (90k CNN / 900k MLP)
  double lr = 1e-4;
  std::size_t batch = 100;
  std::size_t patch = 40;
  std::size_t patches_per_slice = 0;  // 0: model default (150 CNN / 500 MLP)
  double weight_penalty = 1e-4;
  std::uint64_t seed = 1;
  int threads = 1;
  bool audit = false;
};

/// Named profiles. "desk" runs in minutes on one core; "paper" mirrors the
/// full-scale training recipe and is the flag default.
void apply_preset(TrainArgs& args, const CLI::App* cmd) {
  if (args.preset.empty() || args.preset == "paper") return;
  if (args.preset != "desk") {
    throw ldct::ParameterError("unknown preset: " + args.preset);
  }
  if (cmd->count("--depth") == 0) args.depth = 3;
  if (cmd->count("--iters") == 0) args.iters = 2000;
  if (cmd->count("--patch") == 0) args.patch = 16;
  if (cmd->count("--batch") == 0) args.batch = 16;
  // Optimizer settings stay at the full-scale defaults: hotter rates make
  // later cascades inject more update jitter than the residual they fix.
}

int run_train(const TrainArgs& args) {
  const bool is_mlp = args.model == "mlp";
  if (!is_mlp && args.model != "dncnn") {
    throw ldct::ParameterError("unknown model kind: " + args.model);
  }

  ldct::NetworkSpec spec = is_mlp
                               ? ldct::mlp_spec(1)
                               : ldct::dncnn_spec(args.depth, 1, args.features);
  if (is_mlp) {
    spec.mlp_activation = args.mlp_activation == "relu"
                              ? ldct::MlpActivation::relu
                              : ldct::MlpActivation::tanh;
  }

  ldct::TrainConfig config;
  config.learning_rate = args.lr;
  config.weight_penalty = args.weight_penalty;
  config.minibatch = args.batch;
  config.total_iterations =
      args.iters > 0 ? args.iters : (is_mlp ? 900'000 : 90'000);
  config.seed = args.seed;

  ldct::CascadeTrainOptions options;
  options.patch_size = args.patch;
  options.patches_per_slice = args.patches_per_slice > 0
                                  ? args.patches_per_slice
                                  : (is_mlp ? 500 : 150);
  options.policy = args.policy == "all"
                       ? ldct::StackingPolicy::all_intermediates
                       : ldct::StackingPolicy::low_dose_and_latest;
  options.threads = args.threads;
  std::vector<ldct::PatchCoord> audit;
  if (args.audit) options.audit = &audit;

  write_run_config(args.out, "train",
                   json{{"data", args.data},
                        {"model", args.model},
                        {"cascades", args.cascades},
                        {"depth", args.depth},
                        {"features", args.features},
                        {"iters", config.total_iterations},
                        {"lr", config.learning_rate},
                        {"batch", config.minibatch},
                        {"patch", options.patch_size},
                        {"patches_per_slice", options.patches_per_slice},
                        {"weight_penalty", config.weight_penalty},
                        {"seed", config.seed},
                        {"policy", ldct::to_string(options.policy)},
                        {"preset", args.preset},
                        {"threads", args.threads},
                        {"mlp_activation", args.mlp_activation}});

  const ldct::DatasetManifest manifest = ldct::load_manifest(args.data);
  const ldct::CascadeChain chain =
      ldct::train_cascade(manifest, args.cascades, spec, config, options);

  const fs::path out(args.out);
  ldct::save_chain(chain, out / "chain");
  {
    std::ofstream rec(out / "train_records.csv");
    rec << "cascade,seed,denoised_checksum,iterations,wall_seconds\n";
    for (const ldct::CascadeTrainRecord& r : chain.records) {
      char line[160];
      std::snprintf(line, sizeof(line), "%d,%llu,%s,%zu,%.3f\n",
                    r.cascade_index, static_cast<unsigned long long>(r.seed),
                    checksum_hex(r.denoised_checksum).c_str(), r.iterations,
                    r.wall_seconds);
      rec << line;
    }
  }
  for (const ldct::CascadeTrainRecord& r : chain.records) {
    ldct::write_loss_trace_csv(
        r.loss_trace,
        out / ("loss_cascade_" + std::to_string(r.cascade_index) + ".csv"));
  }
  if (args.audit) {
    ldct::write_patch_audit_csv(audit, out / "patch_audit.csv");
  }

  std::printf("train: %zu cascade(s) -> %s\n", chain.length(),
              (out / "chain").string().c_str());
  for (const ldct::CascadeTrainRecord& r : chain.records) {
    std::printf("  cascade %d: %zu iters, final loss %.6g, %.1fs, set %s\n",
                r.cascade_index, r.iterations,
                r.loss_trace.empty() ? 0.0 : r.loss_trace.back().loss,
                r.wall_seconds, checksum_hex(r.denoised_checksum).c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct DenoiseArgs {
  std::string chain;
  std::string out;
  std::string data;
  std::string split = "test";
  std::vector<std::string> inputs;
  double blend_alpha = -1.0;  // < 0: no blended output
  bool emit_intermediates = false;
  int threads = 1;
};

int run_denoise(const DenoiseArgs& args) {
  write_run_config(args.out, "denoise",
                   json{{"chain", args.chain},
                        {"data", args.data},
                        {"split", args.split},
                        {"inputs", args.inputs},
                        {"blend", args.blend_alpha},
                        {"emit_intermediates", args.emit_intermediates},
                        {"threads", args.threads}});

  const ldct::CascadeChain chain = ldct::load_chain(args.chain);

  struct Job {
    std::string stem;
    fs::path path;
  };
  std::vector<Job> jobs;
  for (const std::string& in : args.inputs) {
    jobs.push_back({fs::path(in).stem().string(), fs::path(in)});
  }
  if (!args.data.empty()) {
    const ldct::DatasetManifest manifest = ldct::load_manifest(args.data);
    const ldct::Split split =
        args.split == "train" ? ldct::Split::train : ldct::Split::test;
    for (const ldct::PatientRecord* p : manifest.split_patients(split)) {
      for (const ldct::SliceRef& s : p->slices) {
        jobs.push_back({p->id + "_" + fs::path(s.low_path).stem().string(),
                        manifest.root / s.low_path});
      }
    }
  }
  if (jobs.empty()) {
    throw ldct::ParameterError(
        "no inputs: pass .ten files or --data with a manifest");
  }

  const fs::path out(args.out);
  ldct::parallel_for(jobs.size(), args.threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    const ldct::TensorF low = ldct::read_tensor(job.path);
    const ldct::DenoiseResult result = ldct::denoise_chain(chain, low);
    ldct::write_tensor(out / (job.stem + "_denoised.ten"), result.denoised);
    if (args.emit_intermediates) {
      for (std::size_t k = 0; k < result.intermediates.size(); ++k) {
        ldct::write_tensor(
            out / (job.stem + "_cascade_" + std::to_string(k + 1) + ".ten"),
            result.intermediates[k]);
      }
    }
    if (args.blend_alpha >= 0.0) {
      ldct::write_tensor(out / (job.stem + "_blend.ten"),
                         ldct::blend(result.denoised, low, args.blend_alpha));
    }
  });
  std::printf("denoise: %zu slice(s) through %zu cascade(s) -> %s\n",
              jobs.size(), chain.length(), args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string chain;
  std::string data;
  std::string out;
  double alpha = 0.7;
  bool export_images = false;
  int threads = 1;
};

int run_evaluate(const EvaluateArgs& args) {
  write_run_config(args.out, "evaluate",
                   json{{"chain", args.chain},
                        {"data", args.data},
                        {"alpha", args.alpha},
                        {"export_images", args.export_images},
                        {"threads", args.threads}});

  const ldct::CascadeChain chain = ldct::load_chain(args.chain);
  const ldct::DatasetManifest manifest = ldct::load_manifest(args.data);
  const ldct::EvalReport report =
      ldct::evaluate_chain(chain, manifest, args.alpha, args.threads);

  const fs::path out(args.out);
  ldct::write_report_csv(report, out / "report.csv");

  std::printf("evaluate: input PSNR %.3f dB, SSIM %.4f\n", report.input_psnr_db,
              report.input_ssim);
  for (const ldct::EvalRow& row : report.rows) {
    std::printf("  %-8s cascade %d: PSNR %.3f dB, SSIM %.4f (%d slices)\n",
                row.variant.c_str(), row.cascade, row.psnr_db, row.ssim,
                row.n_slices);
  }

  if (args.export_images) {
    const fs::path img_dir = out / "images";
    fs::create_directories(img_dir);
    for (const ldct::PatientRecord* p :
         manifest.split_patients(ldct::Split::test)) {
      for (const ldct::SliceRef& s : p->slices) {
        const ldct::SlicePair pair = ldct::load_slice_pair(manifest, s);
        const ldct::DenoiseResult result = ldct::denoise_chain(chain, pair.low);
        const std::string stem =
            p->id + "_" + fs::path(s.low_path).stem().string();
        ldct::write_pgm_hu(pair.normal, img_dir / (stem + "_normal.pgm"));
        ldct::write_pgm_hu(pair.low, img_dir / (stem + "_low.pgm"));
        ldct::write_pgm_hu(result.denoised, img_dir / (stem + "_denoised.pgm"));
        ldct::write_pgm_hu(ldct::blend(result.denoised, pair.low, args.alpha),
                           img_dir / (stem + "_blended.pgm"));
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string corrupt = "none";
};

int run_gradcheck(const GradcheckArgs& args) {
  ldct::GradCheckCorruption corrupt = ldct::GradCheckCorruption::none;
  if (args.corrupt == "conv") {
    corrupt = ldct::GradCheckCorruption::conv;
  } else if (args.corrupt == "relu") {
    corrupt = ldct::GradCheckCorruption::relu;
  } else if (args.corrupt == "batchnorm") {
    corrupt = ldct::GradCheckCorruption::batchnorm;
  } else if (args.corrupt == "linear") {
    corrupt = ldct::GradCheckCorruption::linear;
  } else if (args.corrupt == "loss") {
    corrupt = ldct::GradCheckCorruption::loss;
  } else if (args.corrupt == "network") {
    corrupt = ldct::GradCheckCorruption::network;
  } else if (args.corrupt != "none") {
    throw ldct::ParameterError("unknown corruption target: " + args.corrupt);
  }

  const auto rows = ldct::run_layer_gradchecks(args.seed, corrupt);
  bool all_pass = true;
  std::printf("%-14s %-6s %12s %8s %9s\n", "primitive", "status", "max_rel_err",
              "checked", "excluded");
  for (const ldct::GradCheckRow& row : rows) {
    all_pass = all_pass && row.report.pass;
    std::printf("%-14s %-6s %12.3e %8zu %9zu\n", row.primitive.c_str(),
                row.report.pass ? "pass" : "FAIL", row.report.max_rel_error,
                row.report.checked, row.report.excluded);
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded CNN denoising for simulated low-dose CT"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a config file");

  SimulateArgs sim;
  CLI::App* cmd_sim = app.add_subcommand(
      "simulate", "Generate a synthetic low/normal-dose dataset");
  cmd_sim->add_option("--out", sim.out, "Output dataset directory")->required();
  cmd_sim->add_option("--patients", sim.patients, "Total patient count");
  cmd_sim->add_option("--train", sim.train, "Patients assigned to the train split");
  cmd_sim->add_option("--slices", sim.slices, "Slices per patient");
  cmd_sim->add_option("--size", sim.size, "Slice edge length in pixels");
  cmd_sim->add_option("--dose", sim.dose, "Low-dose fraction (0.25 = quarter dose)");
  cmd_sim->add_option("--i0", sim.i0, "Incident photons per bin at full dose");
  cmd_sim->add_option("--seed", sim.seed, "Master seed");
  cmd_sim->add_option("--angles", sim.angles, "Projection angles over [0, pi)");
  cmd_sim->add_option("--detectors", sim.detectors, "Detector bins (0 = auto)");
  cmd_sim->add_option("--spacing", sim.spacing, "Pixel spacing in mm (0 = auto)");
  cmd_sim->add_option("--mu-water", sim.mu_water, "Water attenuation, 1/mm");
  cmd_sim->add_option("--threads", sim.threads, "Worker threads");

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "Train a cascade of denoisers");
  cmd_train->add_option("--data", train.data, "Dataset directory")
      ->envname("LDCT_DATA_ROOT")
      ->required();
  cmd_train->add_option("--out", train.out, "Run output directory")->required();
  cmd_train->add_option("--cascades", train.cascades, "Cascade count K");
  cmd_train->add_option("--model", train.model, "dncnn or mlp");
  cmd_train->add_option("--depth", train.depth, "Middle Conv+BN+ReLU modules");
  cmd_train->add_option("--features", train.features, "Feature channels");
  cmd_train->add_option("--iters", train.iters, "Iterations per cascade");
  cmd_train->add_option("--lr", train.lr, "Learning rate");
  cmd_train->add_option("--batch", train.batch, "Minibatch size");
  cmd_train->add_option("--patch", train.patch, "Patch edge length");
  cmd_train->add_option("--patches-per-slice", train.patches_per_slice,
                        "Patches sampled per slice per cascade");
  cmd_train->add_option("--weight-penalty", train.weight_penalty,
                        "L2 weight penalty");
  cmd_train->add_option("--seed", train.seed, "Master seed");
  cmd_train->add_option("--threads", train.threads, "Worker threads");
  cmd_train->add_option("--policy", train.policy, "Channel stacking: latest or all");
  cmd_train->add_option("--preset", train.preset, "desk or paper profile");
  cmd_train->add_option("--mlp-activation", train.mlp_activation, "tanh or relu");
  cmd_train->add_flag("--audit", train.audit, "Write the patch audit CSV");

  DenoiseArgs den;
  CLI::App* cmd_den = app.add_subcommand("denoise", "Run a trained chain over slices");
  cmd_den->add_option("--chain", den.chain, "Chain checkpoint directory")->required();
  cmd_den->add_option("--out", den.out, "Output directory")->required();
  cmd_den->add_option("--data", den.data, "Dataset directory (optional)")
      ->envname("LDCT_DATA_ROOT");
  cmd_den->add_option("--split", den.split, "Manifest split to denoise");
  cmd_den->add_option("inputs", den.inputs, "Input .ten slices");
  cmd_den->add_option("--blend", den.blend_alpha,
                      "Also write an alpha-blended output");
  cmd_den->add_flag("--emit-intermediates", den.emit_intermediates,
                    "Write every cascade's intermediate");
  cmd_den->add_option("--threads", den.threads, "Worker threads");

  EvaluateArgs eval;
  CLI::App* cmd_eval =
      app.add_subcommand("evaluate", "PSNR/SSIM per cascade on the test split");
  cmd_eval->add_option("--chain", eval.chain, "Chain checkpoint directory")->required();
  cmd_eval->add_option("--data", eval.data, "Dataset directory")
      ->envname("LDCT_DATA_ROOT")
      ->required();
  cmd_eval->add_option("--out", eval.out, "Output directory")->required();
  cmd_eval->add_option("--alpha", eval.alpha, "Blend fraction");
  cmd_eval->add_flag("--export-images", eval.export_images,
                     "Write display-window PGMs for every test slice");
  cmd_eval->add_option("--threads", eval.threads, "Worker threads");

  GradcheckArgs grad;
  CLI::App* cmd_grad = app.add_subcommand(
      "gradcheck", "Finite-difference checks over the layer primitives");
  cmd_grad->add_option("--seed", grad.seed, "Seed for the probe instances");
  cmd_grad->add_option("--corrupt", grad.corrupt,
                       "Negative control: bias one gradient by 10%");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_sim->parsed()) return run_simulate(sim);
    if (cmd_train->parsed()) {
      apply_preset(train, cmd_train);
      return run_train(train);
    }
    if (cmd_den->parsed()) return run_denoise(den);
    if (cmd_eval->parsed()) return run_evaluate(eval);
    if (cmd_grad->parsed()) return run_gradcheck(grad);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
