#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ldct/rng.hpp"
#include "ldct/tensor.hpp"

namespace ldct {

enum class Split { train, test };
const char* to_string(Split split);

struct SliceRef {
  int index = 0;
  std::string normal_path;  // relative to the manifest root
  std::string low_path;
  std::uint64_t seed_normal = 0;
  std::uint64_t seed_low = 0;
};

struct PatientRecord {
  std::string id;
  Split split = Split::train;
  std::uint64_t patient_seed = 0;
  std::vector<SliceRef> slices;
};

/// Patient-grouped collection of co-registered normal/low-dose slice pairs
/// with generation provenance. Serialized as manifest.json next to the
/// per-slice .ten files (stored in HU).
struct DatasetManifest {
  std::filesystem::path root;  // not serialized
  std::uint64_t seed = 0;
  double dose_fraction = 0.25;
  double incident_photons = 1e5;
  int size = 64;
  int n_angles = 180;
  int n_detectors = 0;
  double pixel_spacing_mm = 1.0;
  double mu_water = 0.02;
  std::vector<PatientRecord> patients;

  std::vector<const PatientRecord*> split_patients(Split split) const;
  std::size_t slice_count(Split split) const;
};

void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& dir);

struct SlicePair {
  TensorF normal;  // HU
  TensorF low;     // HU
};

TensorF load_slice(const DatasetManifest& manifest, const std::string& rel_path);
SlicePair load_slice_pair(const DatasetManifest& manifest, const SliceRef& ref);

/// HU normalization for training: value / 512 and its exact inverse.
TensorF normalize_hu(const TensorF& hu);
TensorF denormalize_hu(const TensorF& normalized);

// ---------------------------------------------------------------------------
// Patch sampling

struct PatchCoord {
  int patient_index = -1;
  int slice_index = -1;
  int y = 0;
  int x = 0;
};

struct PatchSet {
  TensorF inputs;   // (n, channels, size, size)
  TensorF targets;  // (n, 1, size, size)
  std::vector<PatchCoord> coords;
  std::size_t count() const { return coords.size(); }
};

/// n patch pairs at uniform top-left corners (with replacement), input and
/// target cropped at identical coordinates; patches never cross the border.
PatchSet extract_patches(const TensorF& stacked_input,
                         const TensorF& target_slice, std::size_t n,
                         std::size_t size, Rng& rng);

PatchSet concat_patches(const std::vector<PatchSet>& sets);

struct PatientPatches {
  int patient_index = -1;
  PatchSet patches;
};

/// Permutes each patient's block independently; patient block order is
/// preserved. The result is the flat training stream.
PatchSet shuffle_within_patient(const std::vector<PatientPatches>& per_patient,
                                Rng& rng);

void write_patch_audit_csv(const std::vector<PatchCoord>& coords,
                           const std::filesystem::path& path);

/// Fixed-size minibatches cycling the stream in order; a partial batch at the
/// end of a pass is completed from the front of the next pass.
class MinibatchCycler {
 public:
  MinibatchCycler(const PatchSet& stream, std::size_t minibatch);
  void next(TensorF& inputs, TensorF& targets);
  std::size_t stream_size() const { return stream_->count(); }

 private:
  const PatchSet* stream_;
  std::size_t minibatch_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// MLP patch grid

struct MlpPatchGrid {
  TensorF inputs;  // (n, channels, patch, patch)
  std::vector<std::pair<int, int>> positions;  // top-left (y, x)
};

/// Dense stride-3 grid of patch top-left corners; the final row/column is
/// clamped so the last patch touches the border.
MlpPatchGrid mlp_extract(const TensorF& slice_stack, std::size_t patch = 13,
                         std::size_t stride = 3);

/// Gaussian-weighted overlap-add of predicted patches back into a slice.
/// predictions may be (n, 1, patch, patch) or (n, patch*patch, 1, 1).
TensorF mlp_aggregate(const TensorF& predictions,
                      const std::vector<std::pair<int, int>>& positions,
                      std::size_t height, std::size_t width,
                      std::size_t patch = 13, double sigma = 13.0 / 3.0);

}  // namespace ldct
