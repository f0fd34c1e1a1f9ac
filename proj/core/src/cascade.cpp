#include "ldct/cascade.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ldct/parallel.hpp"

namespace ldct {

using nlohmann::json;

namespace {

constexpr int kChainVersion = 1;

// Seed-stream purposes within a training run.
constexpr std::uint64_t kSeedInit = 0x10;
constexpr std::uint64_t kSeedPatch = 0x11;
constexpr std::uint64_t kSeedShuffle = 0x12;
constexpr std::uint64_t kSeedTrain = 0x13;

/// Batched whole-grid MLP inference: extract, predict, aggregate.
TensorF mlp_denoise_slice(Network& net, const TensorF& stacked) {
  const auto patch = static_cast<std::size_t>(net.spec.mlp_patch);
  MlpPatchGrid grid = mlp_extract(stacked, patch, 3);
  const std::size_t n = grid.positions.size();
  const std::size_t chunk = 512;
  TensorF predictions(n, 1, patch, patch);
  net.set_mode(Mode::inference);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    TensorF batch(count, stacked.channels(), patch, patch);
    std::copy(grid.inputs.plane(start, 0),
              grid.inputs.plane(start, 0) + batch.size(), batch.data());
    const TensorF out = net.forward(batch);
    if (out.size() != count * patch * patch) {
      throw ShapeError("mlp output is not patch-sized");
    }
    std::copy(out.data(), out.data() + out.size(),
              predictions.plane(start, 0));
  }
  return mlp_aggregate(predictions, grid.positions, stacked.height(),
                       stacked.width(), patch);
}

/// One cascade step on a normalized slice: returns x_D^(k) given the
/// stacked input and the latest intermediate.
TensorF cascade_step(Network& net, const TensorF& stacked,
                     const TensorF& x_prev_norm) {
  if (net.spec.residual) {
    return predict_denoised(net, x_prev_norm, stacked);
  }
  return mlp_denoise_slice(net, stacked);
}

TensorF build_stack(StackingPolicy policy, const TensorF& x_low,
                    const std::vector<TensorF>& intermediates, int k) {
  if (k == 1) return x_low;
  if (policy == StackingPolicy::low_dose_and_latest) {
    return make_cascade_input(x_low, &intermediates.back(), k);
  }
  std::vector<const TensorF*> parts;
  parts.reserve(intermediates.size() + 1);
  parts.push_back(&x_low);
  for (const TensorF& t : intermediates) parts.push_back(&t);
  return stack_channels(parts);
}

}  // namespace

const char* to_string(StackingPolicy policy) {
  return policy == StackingPolicy::low_dose_and_latest ? "low_dose_and_latest"
                                                       : "all_intermediates";
}

int cascade_in_channels(StackingPolicy policy, int k) {
  if (k <= 1) return 1;
  return policy == StackingPolicy::low_dose_and_latest ? 2 : k;
}

CascadeChain CascadeChain::prefix(std::size_t k) const {
  if (k < 1 || k > networks.size()) {
    throw ParameterError("prefix length out of range");
  }
  CascadeChain out;
  out.policy = policy;
  out.networks.assign(networks.begin(), networks.begin() + k);
  const std::size_t nrec = std::min(k, records.size());
  out.records.assign(records.begin(), records.begin() + nrec);
  return out;
}

TensorF make_cascade_input(const TensorF& x_low, const TensorF* x_prev, int k) {
  if (k < 1) {
    throw ParameterError("cascade index must be >= 1");
  }
  if ((k >= 2) != (x_prev != nullptr)) {
    throw ParameterError(
        "x_prev must be present exactly for cascade indices >= 2");
  }
  if (k == 1) return x_low;
  const TensorF* parts[2] = {&x_low, x_prev};
  return stack_channels(parts);
}

TensorF stack_channels(std::span<const TensorF* const> slices) {
  if (slices.empty()) {
    throw ParameterError("stack_channels requires at least one slice");
  }
  const TensorF& first = *slices.front();
  std::size_t channels = 0;
  for (const TensorF* s : slices) {
    if (s->batch() != 1 || s->height() != first.height() ||
        s->width() != first.width()) {
      throw ShapeError("stack_channels: slice extents differ");
    }
    channels += s->channels();
  }
  TensorF out(1, channels, first.height(), first.width());
  std::size_t c = 0;
  for (const TensorF* s : slices) {
    std::copy(s->data(), s->data() + s->size(), out.plane(0, c));
    c += s->channels();
  }
  return out;
}

DenoiseResult denoise_chain(const CascadeChain& chain, const TensorF& x_low_hu) {
  if (chain.networks.empty()) {
    throw ParameterError("denoise_chain requires a nonempty chain");
  }
  if (!x_low_hu.all_finite()) {
    throw NumericError("denoise_chain input contains non-finite values");
  }

  // The whole recursion runs in normalized units; /512 and *512 are exact.
  const TensorF x_low = normalize_hu(x_low_hu);
  std::vector<TensorF> normalized;
  normalized.reserve(chain.length());

  DenoiseResult result;
  result.intermediates.reserve(chain.length());
  for (std::size_t i = 0; i < chain.networks.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    // Inference caches nothing, but batch-norm touches its cache flag, so
    // work on a copy to keep the chain const for concurrent callers.
    Network net = chain.networks[i];
    const TensorF stacked = build_stack(chain.policy, x_low, normalized, k);
    const TensorF& prev = normalized.empty() ? x_low : normalized.back();
    normalized.push_back(cascade_step(net, stacked, prev));
    result.intermediates.push_back(denormalize_hu(normalized.back()));
  }
  result.denoised = result.intermediates.back();
  return result;
}

// ---------------------------------------------------------------------------
// Training

CascadeChain train_cascade(const DatasetManifest& dataset, int cascades,
                           const NetworkSpec& spec_template,
                           const TrainConfig& config,
                           const CascadeTrainOptions& options) {
  if (cascades < 1) {
    throw ParameterError("cascade count must be >= 1");
  }
  validate_config(config);
  validate_spec(spec_template);

  struct TrainSlice {
    int patient_index;
    int slice_index;
    TensorF low;     // normalized
    TensorF normal;  // normalized
  };
  std::vector<TrainSlice> slices;
  {
    int patient_index = 0;
    for (const PatientRecord& patient : dataset.patients) {
      if (patient.split == Split::train) {
        for (const SliceRef& ref : patient.slices) {
          SlicePair pair = load_slice_pair(dataset, ref);
          slices.push_back({patient_index, ref.index,
                            normalize_hu(pair.low), normalize_hu(pair.normal)});
        }
      }
      ++patient_index;
    }
  }
  if (slices.empty()) {
    throw ParameterError("dataset has no training slices");
  }

  const bool is_mlp = spec_template.kind == NetworkKind::mlp;
  const std::size_t patch_size =
      is_mlp ? static_cast<std::size_t>(spec_template.mlp_patch)
             : options.patch_size;

  CascadeChain chain;
  chain.policy = options.policy;

  // x_D^(0) = x_L; denoising between cascades is always whole-image.
  std::vector<std::vector<TensorF>> intermediates(slices.size());

  for (int k = 1; k <= cascades; ++k) {
    const auto wall_start = std::chrono::steady_clock::now();

    if (k >= 2) {
      Network& prev_net = chain.networks.back();
      parallel_for(slices.size(), options.threads, [&](std::size_t i) {
        Network net = prev_net;  // per-slice copy: inference is not shared-state safe
        const TensorF stacked =
            build_stack(chain.policy, slices[i].low, intermediates[i], k - 1);
        const TensorF& prev = intermediates[i].empty() ? slices[i].low
                                                       : intermediates[i].back();
        intermediates[i].push_back(cascade_step(net, stacked, prev));
      });
    }

    std::uint64_t checksum = 0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const TensorF& cur =
          intermediates[i].empty() ? slices[i].low : intermediates[i].back();
      checksum = fnv1a(cur.values(), checksum);
    }

    // Fresh patch locations every cascade, per-slice seed streams.
    std::vector<int> patient_order;
    std::vector<std::vector<PatchSet>> grouped;
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const TrainSlice& ts = slices[i];
      const TensorF& cur =
          intermediates[i].empty() ? ts.low : intermediates[i].back();
      const TensorF stacked = build_stack(chain.policy, ts.low,
                                          intermediates[i], k);
      const TensorF target = is_mlp ? ts.normal : subtract(cur, ts.normal);
      Rng patch_rng(derive_seed(config.seed, kSeedPatch ^ (std::uint64_t(k) << 8),
                                ts.patient_index, ts.slice_index));
      PatchSet set = extract_patches(stacked, target, options.patches_per_slice,
                                     patch_size, patch_rng);
      for (PatchCoord& c : set.coords) {
        c.patient_index = ts.patient_index;
        c.slice_index = ts.slice_index;
      }
      if (patient_order.empty() || patient_order.back() != ts.patient_index) {
        patient_order.push_back(ts.patient_index);
        grouped.emplace_back();
      }
      grouped.back().push_back(std::move(set));
    }
    std::vector<PatientPatches> per_patient;
    per_patient.reserve(patient_order.size());
    for (std::size_t g = 0; g < grouped.size(); ++g) {
      per_patient.push_back({patient_order[g], concat_patches(grouped[g])});
    }

    Rng shuffle_rng(derive_seed(config.seed, kSeedShuffle, k));
    PatchSet stream = shuffle_within_patient(per_patient, shuffle_rng);
    if (options.audit != nullptr) {
      options.audit->insert(options.audit->end(), stream.coords.begin(),
                            stream.coords.end());
    }

    NetworkSpec spec = spec_template;
    spec.in_channels = cascade_in_channels(chain.policy, k);
    const std::uint64_t init_seed = derive_seed(config.seed, kSeedInit, k);
    Rng init_rng(init_seed);
    Network net = build_network<float>(spec, init_rng);
    net.creation_seed = init_seed;

    TrainConfig cascade_config = config;
    cascade_config.seed = derive_seed(config.seed, kSeedTrain, k);

    MinibatchCycler cycler(stream, cascade_config.minibatch);
    const bool reshape_targets = is_mlp;
    const auto out_features =
        static_cast<std::size_t>(spec.mlp_patch * spec.mlp_patch);
    TrainResult trained = training_loop(
        net,
        [&](TensorF& in, TensorF& tgt) {
          cycler.next(in, tgt);
          if (reshape_targets) {
            tgt = tgt.reshaped({tgt.batch(), out_features, 1, 1});
          }
        },
        cascade_config);

    const auto wall_end = std::chrono::steady_clock::now();
    CascadeTrainRecord record;
    record.cascade_index = k;
    record.seed = cascade_config.seed;
    record.denoised_checksum = checksum;
    record.loss_trace = std::move(trained.trace);
    record.wall_seconds =
        std::chrono::duration<double>(wall_end - wall_start).count();
    record.iterations = cascade_config.total_iterations;
    record.learning_rate = cascade_config.learning_rate;
    record.minibatch = cascade_config.minibatch;
    record.patch_size = patch_size;
    record.patches_per_slice = options.patches_per_slice;
    chain.records.push_back(std::move(record));
    chain.networks.push_back(std::move(net));
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Chain checkpoints

void save_chain(const CascadeChain& chain, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json records = json::array();
  for (const CascadeTrainRecord& r : chain.records) {
    records.push_back(json{{"cascade", r.cascade_index},
                           {"seed", r.seed},
                           {"denoised_checksum", r.denoised_checksum},
                           {"iterations", r.iterations},
                           {"learning_rate", r.learning_rate},
                           {"minibatch", r.minibatch},
                           {"patch_size", r.patch_size},
                           {"patches_per_slice", r.patches_per_slice}});
  }
  json j{{"format_version", kChainVersion},
         {"cascades", chain.networks.size()},
         {"stacking_policy", to_string(chain.policy)},
         {"records", std::move(records)}};
  std::ofstream f(dir / "chain.json");
  if (!f) {
    throw FormatError("cannot write chain manifest in " + dir.string());
  }
  f << j.dump(2) << "\n";

  char name[32];
  for (std::size_t i = 0; i < chain.networks.size(); ++i) {
    std::snprintf(name, sizeof(name), "cascade_%02zu", i + 1);
    save_network(chain.networks[i], dir / name);
  }
}

CascadeChain load_chain(const std::filesystem::path& dir) {
  std::ifstream f(dir / "chain.json");
  if (!f) {
    throw FormatError("missing chain manifest: " + (dir / "chain.json").string());
  }
  json j;
  try {
    f >> j;
    if (j.at("format_version").get<int>() != kChainVersion) {
      throw FormatError("unsupported chain format version");
    }
    CascadeChain chain;
    const std::string policy = j.at("stacking_policy").get<std::string>();
    if (policy == "low_dose_and_latest") {
      chain.policy = StackingPolicy::low_dose_and_latest;
    } else if (policy == "all_intermediates") {
      chain.policy = StackingPolicy::all_intermediates;
    } else {
      throw FormatError("unknown stacking policy: " + policy);
    }
    const auto count = j.at("cascades").get<std::size_t>();
    for (const auto& rj : j.at("records")) {
      CascadeTrainRecord r;
      r.cascade_index = rj.at("cascade").get<int>();
      r.seed = rj.at("seed").get<std::uint64_t>();
      r.denoised_checksum = rj.at("denoised_checksum").get<std::uint64_t>();
      r.iterations = rj.at("iterations").get<std::size_t>();
      r.learning_rate = rj.at("learning_rate").get<double>();
      r.minibatch = rj.at("minibatch").get<std::size_t>();
      r.patch_size = rj.at("patch_size").get<std::size_t>();
      r.patches_per_slice = rj.at("patches_per_slice").get<std::size_t>();
      chain.records.push_back(std::move(r));
    }

    char name[32];
    for (std::size_t i = 0; i < count; ++i) {
      std::snprintf(name, sizeof(name), "cascade_%02zu", i + 1);
      chain.networks.push_back(load_network(dir / name));
      const int expect = cascade_in_channels(chain.policy, static_cast<int>(i) + 1);
      if (chain.networks.back().spec.in_channels != expect) {
        throw FormatError("cascade " + std::to_string(i + 1) + " expects " +
                          std::to_string(expect) + " input channels, found " +
                          std::to_string(chain.networks.back().spec.in_channels));
      }
    }
    return chain;
  } catch (const json::exception& e) {
    throw FormatError("malformed chain manifest: " + std::string(e.what()));
  }
}

std::uint64_t fnv1a(std::span<const float> values, std::uint64_t seed) {
  std::uint64_t h = seed == 0 ? 0xcbf29ce484222325ULL : seed;
  for (const float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int byte = 0; byte < 4; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace ldct
