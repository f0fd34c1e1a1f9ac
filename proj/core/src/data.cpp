#include "ldct/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "ldct/tensor_io.hpp"

namespace ldct {

using nlohmann::json;

namespace {
constexpr int kManifestVersion = 1;
constexpr float kHuScale = 512.0f;
}  // namespace

const char* to_string(Split split) {
  return split == Split::train ? "train" : "test";
}

std::vector<const PatientRecord*> DatasetManifest::split_patients(
    Split split) const {
  std::vector<const PatientRecord*> out;
  for (const PatientRecord& p : patients) {
    if (p.split == split) out.push_back(&p);
  }
  return out;
}

std::size_t DatasetManifest::slice_count(Split split) const {
  std::size_t n = 0;
  for (const PatientRecord& p : patients) {
    if (p.split == split) n += p.slices.size();
  }
  return n;
}

void save_manifest(const DatasetManifest& manifest) {
  json patients_json = json::array();
  for (const PatientRecord& p : manifest.patients) {
    json slices_json = json::array();
    for (const SliceRef& s : p.slices) {
      slices_json.push_back(json{{"index", s.index},
                                 {"normal", s.normal_path},
                                 {"low", s.low_path},
                                 {"seed_normal", s.seed_normal},
                                 {"seed_low", s.seed_low}});
    }
    patients_json.push_back(json{{"id", p.id},
                                 {"split", to_string(p.split)},
                                 {"patient_seed", p.patient_seed},
                                 {"slices", std::move(slices_json)}});
  }

  json j{{"format_version", kManifestVersion},
         {"seed", manifest.seed},
         {"dose_fraction", manifest.dose_fraction},
         {"incident_photons", manifest.incident_photons},
         {"size", manifest.size},
         {"n_angles", manifest.n_angles},
         {"n_detectors", manifest.n_detectors},
         {"pixel_spacing_mm", manifest.pixel_spacing_mm},
         {"mu_water", manifest.mu_water},
         {"patients", std::move(patients_json)}};

  std::filesystem::create_directories(manifest.root);
  std::ofstream f(manifest.root / "manifest.json");
  if (!f) {
    throw FormatError("cannot write manifest in " + manifest.root.string());
  }
  f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) {
    throw FormatError("missing dataset manifest: " +
                      (dir / "manifest.json").string());
  }
  json j;
  try {
    f >> j;
    if (j.at("format_version").get<int>() != kManifestVersion) {
      throw FormatError("unsupported dataset manifest version");
    }
    DatasetManifest m;
    m.root = dir;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dose_fraction = j.at("dose_fraction").get<double>();
    m.incident_photons = j.at("incident_photons").get<double>();
    m.size = j.at("size").get<int>();
    m.n_angles = j.at("n_angles").get<int>();
    m.n_detectors = j.at("n_detectors").get<int>();
    m.pixel_spacing_mm = j.at("pixel_spacing_mm").get<double>();
    m.mu_water = j.at("mu_water").get<double>();
    for (const auto& pj : j.at("patients")) {
      PatientRecord p;
      p.id = pj.at("id").get<std::string>();
      const std::string split = pj.at("split").get<std::string>();
      if (split == "train") {
        p.split = Split::train;
      } else if (split == "test") {
        p.split = Split::test;
      } else {
        throw FormatError("unknown split label: " + split);
      }
      p.patient_seed = pj.at("patient_seed").get<std::uint64_t>();
      for (const auto& sj : pj.at("slices")) {
        SliceRef s;
        s.index = sj.at("index").get<int>();
        s.normal_path = sj.at("normal").get<std::string>();
        s.low_path = sj.at("low").get<std::string>();
        s.seed_normal = sj.at("seed_normal").get<std::uint64_t>();
        s.seed_low = sj.at("seed_low").get<std::uint64_t>();
        p.slices.push_back(std::move(s));
      }
      m.patients.push_back(std::move(p));
    }
    // Co-registration invariant: every pair shares the manifest's extent.
    for (const PatientRecord& p : m.patients) {
      if (p.id.empty()) throw FormatError("empty patient id in manifest");
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
}

TensorF load_slice(const DatasetManifest& manifest, const std::string& rel_path) {
  return read_tensor(manifest.root / rel_path);
}

SlicePair load_slice_pair(const DatasetManifest& manifest, const SliceRef& ref) {
  SlicePair pair{load_slice(manifest, ref.normal_path),
                 load_slice(manifest, ref.low_path)};
  check_same_shape(pair.normal, pair.low, "slice pair");
  return pair;
}

TensorF normalize_hu(const TensorF& hu) {
  return scaled(hu, 1.0f / kHuScale);
}

TensorF denormalize_hu(const TensorF& normalized) {
  return scaled(normalized, kHuScale);
}

// ---------------------------------------------------------------------------
// Patch sampling

PatchSet extract_patches(const TensorF& stacked_input,
                         const TensorF& target_slice, std::size_t n,
                         std::size_t size, Rng& rng) {
  const std::size_t h = stacked_input.height();
  const std::size_t w = stacked_input.width();
  if (size == 0 || size > h || size > w) {
    throw ParameterError("patch size " + std::to_string(size) +
                         " exceeds slice extents " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  if (stacked_input.batch() != 1 || target_slice.batch() != 1 ||
      target_slice.channels() != 1) {
    throw ShapeError("extract_patches expects (1,C,H,W) input and (1,1,H,W) target");
  }
  if (target_slice.height() != h || target_slice.width() != w) {
    throw ShapeError("extract_patches input/target extents differ");
  }

  const std::size_t channels = stacked_input.channels();
  PatchSet set;
  set.inputs = TensorF(n, channels, size, size);
  set.targets = TensorF(n, 1, size, size);
  set.coords.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = rng.uniform_index(h - size + 1);
    const std::size_t x = rng.uniform_index(w - size + 1);
    set.coords.push_back(
        {-1, -1, static_cast<int>(y), static_cast<int>(x)});
    for (std::size_t c = 0; c < channels; ++c) {
      const float* src = stacked_input.plane(0, c);
      float* dst = set.inputs.plane(i, c);
      for (std::size_t r = 0; r < size; ++r) {
        const float* s = src + (y + r) * w + x;
        std::copy(s, s + size, dst + r * size);
      }
    }
    const float* src = target_slice.plane(0, 0);
    float* dst = set.targets.plane(i, 0);
    for (std::size_t r = 0; r < size; ++r) {
      const float* s = src + (y + r) * w + x;
      std::copy(s, s + size, dst + r * size);
    }
  }
  return set;
}

PatchSet concat_patches(const std::vector<PatchSet>& sets) {
  PatchSet out;
  if (sets.empty()) return out;
  std::size_t total = 0;
  for (const PatchSet& s : sets) total += s.count();
  const Shape4 in_shape = sets.front().inputs.shape();
  const Shape4 tgt_shape = sets.front().targets.shape();
  out.inputs = TensorF(total, in_shape[1], in_shape[2], in_shape[3]);
  out.targets = TensorF(total, tgt_shape[1], tgt_shape[2], tgt_shape[3]);
  out.coords.reserve(total);

  std::size_t offset = 0;
  const std::size_t in_stride = in_shape[1] * in_shape[2] * in_shape[3];
  const std::size_t tgt_stride = tgt_shape[1] * tgt_shape[2] * tgt_shape[3];
  for (const PatchSet& s : sets) {
    if (s.inputs.channels() != in_shape[1] || s.inputs.height() != in_shape[2]) {
      throw ShapeError("concat_patches: inconsistent patch shapes");
    }
    std::copy(s.inputs.data(), s.inputs.data() + s.inputs.size(),
              out.inputs.data() + offset * in_stride);
    std::copy(s.targets.data(), s.targets.data() + s.targets.size(),
              out.targets.data() + offset * tgt_stride);
    out.coords.insert(out.coords.end(), s.coords.begin(), s.coords.end());
    offset += s.count();
  }
  return out;
}

PatchSet shuffle_within_patient(const std::vector<PatientPatches>& per_patient,
                                Rng& rng) {
  std::vector<PatchSet> blocks;
  blocks.reserve(per_patient.size());
  for (const PatientPatches& pp : per_patient) {
    const PatchSet& src = pp.patches;
    const std::size_t n = src.count();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    // Fisher-Yates, one patient block at a time.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng.uniform_index(i);
      std::swap(perm[i - 1], perm[j]);
    }

    PatchSet block;
    block.inputs = TensorF(n, src.inputs.channels(), src.inputs.height(),
                           src.inputs.width());
    block.targets = TensorF(n, 1, src.targets.height(), src.targets.width());
    block.coords.resize(n);
    const std::size_t in_stride = src.inputs.size() / std::max<std::size_t>(n, 1);
    const std::size_t tgt_stride =
        src.targets.size() / std::max<std::size_t>(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = perm[i];
      std::copy(src.inputs.data() + j * in_stride,
                src.inputs.data() + (j + 1) * in_stride,
                block.inputs.data() + i * in_stride);
      std::copy(src.targets.data() + j * tgt_stride,
                src.targets.data() + (j + 1) * tgt_stride,
                block.targets.data() + i * tgt_stride);
      block.coords[i] = src.coords[j];
      block.coords[i].patient_index = pp.patient_index;
    }
    blocks.push_back(std::move(block));
  }
  return concat_patches(blocks);
}

void write_patch_audit_csv(const std::vector<PatchCoord>& coords,
                           const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw FormatError("cannot write patch audit: " + path.string());
  }
  f << "patient,slice,y,x\n";
  for (const PatchCoord& c : coords) {
    f << c.patient_index << ',' << c.slice_index << ',' << c.y << ',' << c.x
      << '\n';
  }
}

MinibatchCycler::MinibatchCycler(const PatchSet& stream, std::size_t minibatch)
    : stream_(&stream), minibatch_(minibatch) {
  if (stream.count() == 0) {
    throw ParameterError("minibatch cycling requires a nonempty patch stream");
  }
  if (minibatch < 1) {
    throw ParameterError("minibatch must be >= 1");
  }
}

void MinibatchCycler::next(TensorF& inputs, TensorF& targets) {
  const PatchSet& s = *stream_;
  const std::size_t n = s.count();
  const Shape4 in_shape{minibatch_, s.inputs.channels(), s.inputs.height(),
                        s.inputs.width()};
  const Shape4 tgt_shape{minibatch_, 1, s.targets.height(), s.targets.width()};
  if (inputs.shape() != in_shape) inputs = TensorF(in_shape);
  if (targets.shape() != tgt_shape) targets = TensorF(tgt_shape);

  const std::size_t in_stride = in_shape[1] * in_shape[2] * in_shape[3];
  const std::size_t tgt_stride = tgt_shape[1] * tgt_shape[2] * tgt_shape[3];
  for (std::size_t b = 0; b < minibatch_; ++b) {
    const std::size_t j = pos_;
    std::copy(s.inputs.data() + j * in_stride,
              s.inputs.data() + (j + 1) * in_stride,
              inputs.data() + b * in_stride);
    std::copy(s.targets.data() + j * tgt_stride,
              s.targets.data() + (j + 1) * tgt_stride,
              targets.data() + b * tgt_stride);
    pos_ = (pos_ + 1) % n;
  }
}

// ---------------------------------------------------------------------------
// MLP patch grid

namespace {

std::vector<std::size_t> stride_positions(std::size_t extent, std::size_t patch,
                                          std::size_t stride) {
  if (extent < patch) {
    throw ParameterError("slice extent " + std::to_string(extent) +
                         " smaller than patch " + std::to_string(patch));
  }
  const std::size_t last = extent - patch;
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < last; p += stride) out.push_back(p);
  out.push_back(last);  // clamp so the final patch touches the border
  return out;
}

}  // namespace

MlpPatchGrid mlp_extract(const TensorF& slice_stack, std::size_t patch,
                         std::size_t stride) {
  if (stride < 1) throw ParameterError("stride must be >= 1");
  const std::size_t h = slice_stack.height();
  const std::size_t w = slice_stack.width();
  const std::size_t channels = slice_stack.channels();
  const auto ys = stride_positions(h, patch, stride);
  const auto xs = stride_positions(w, patch, stride);

  MlpPatchGrid grid;
  grid.positions.reserve(ys.size() * xs.size());
  grid.inputs = TensorF(ys.size() * xs.size(), channels, patch, patch);
  std::size_t i = 0;
  for (const std::size_t y : ys) {
    for (const std::size_t x : xs) {
      grid.positions.emplace_back(static_cast<int>(y), static_cast<int>(x));
      for (std::size_t c = 0; c < channels; ++c) {
        const float* src = slice_stack.plane(0, c);
        float* dst = grid.inputs.plane(i, c);
        for (std::size_t r = 0; r < patch; ++r) {
          const float* s = src + (y + r) * w + x;
          std::copy(s, s + patch, dst + r * patch);
        }
      }
      ++i;
    }
  }
  return grid;
}

TensorF mlp_aggregate(const TensorF& predictions,
                      const std::vector<std::pair<int, int>>& positions,
                      std::size_t height, std::size_t width, std::size_t patch,
                      double sigma) {
  if (predictions.batch() != positions.size()) {
    throw ShapeError("mlp_aggregate: prediction count does not match positions");
  }
  if (predictions.size() != positions.size() * patch * patch) {
    throw ShapeError("mlp_aggregate: prediction payload is not patch-sized");
  }

  // Gaussian weights, strictly positive, symmetric under 90-degree rotation.
  std::vector<double> weight(patch * patch);
  const double c = (static_cast<double>(patch) - 1.0) / 2.0;
  for (std::size_t y = 0; y < patch; ++y) {
    for (std::size_t x = 0; x < patch; ++x) {
      const double dy = static_cast<double>(y) - c;
      const double dx = static_cast<double>(x) - c;
      weight[y * patch + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  }

  std::vector<double> acc(height * width, 0.0);
  std::vector<double> wsum(height * width, 0.0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto [py, px] = positions[i];
    const float* pred = predictions.data() + i * patch * patch;
    for (std::size_t y = 0; y < patch; ++y) {
      const std::size_t row = (static_cast<std::size_t>(py) + y) * width +
                              static_cast<std::size_t>(px);
      for (std::size_t x = 0; x < patch; ++x) {
        const double wv = weight[y * patch + x];
        acc[row + x] += wv * static_cast<double>(pred[y * patch + x]);
        wsum[row + x] += wv;
      }
    }
  }

  TensorF out(1, 1, height, width);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (wsum[i] <= 0.0) {
      throw ContractError("mlp_aggregate: uncovered pixel (grid must clamp to borders)");
    }
    out[i] = static_cast<float>(acc[i] / wsum[i]);
  }
  return out;
}

}  // namespace ldct
