#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ldct/data.hpp"
#include "ldct/models.hpp"
#include "ldct/optim.hpp"

namespace ldct {

/// Channel layout of a cascade's network input. The default stacks the
/// original low-dose slice with the latest intermediate (2 channels for
/// every cascade past the first); all_intermediates grows the stack by one
/// channel per cascade instead.
enum class StackingPolicy { low_dose_and_latest, all_intermediates };
const char* to_string(StackingPolicy policy);

struct CascadeTrainRecord {
  int cascade_index = 0;  // 1-based
  std::uint64_t seed = 0;
  std::uint64_t denoised_checksum = 0;  // over the cascade's denoised training set
  std::vector<LossTracePoint> loss_trace;  // not persisted in the checkpoint
  double wall_seconds = 0.0;               // not persisted in the checkpoint
  std::size_t iterations = 0;
  double learning_rate = 0.0;
  std::size_t minibatch = 0;
  std::size_t patch_size = 0;
  std::size_t patches_per_slice = 0;
};

/// Ordered denoisers f_1..f_K plus the stacking policy. f_1 takes 1 channel;
/// each later cascade's channel count follows the policy. All networks share
/// kind and depth.
struct CascadeChain {
  std::vector<Network> networks;
  StackingPolicy policy = StackingPolicy::low_dose_and_latest;
  std::vector<CascadeTrainRecord> records;

  std::size_t length() const { return networks.size(); }

  /// First k cascades (1 <= k <= length), provenance included.
  CascadeChain prefix(std::size_t k) const;
};

/// Expected input channels for cascade k (1-based) under a policy.
int cascade_in_channels(StackingPolicy policy, int k);

/// k = 1: [x_low]; k >= 2: [x_low, x_prev] across channels. x_prev must be
/// present exactly when k >= 2 and must match x_low's extents.
TensorF make_cascade_input(const TensorF& x_low, const TensorF* x_prev, int k);

/// Concatenates single-channel slices of equal extents across channels.
TensorF stack_channels(std::span<const TensorF* const> slices);

struct DenoiseResult {
  TensorF denoised;                    // x_D^(K), HU
  std::vector<TensorF> intermediates;  // x_D^(1)..x_D^(K), HU
};

/// Test-phase chain: x_D^(k) = x_D^(k-1) - f_k(stack), with x_D^(0) = x_low.
/// MLP cascades predict patches directly and are re-assembled by Gaussian
/// overlap-add. Whole-image inference at any extents.
DenoiseResult denoise_chain(const CascadeChain& chain, const TensorF& x_low_hu);

struct CascadeTrainOptions {
  std::size_t patches_per_slice = 150;
  std::size_t patch_size = 40;  // dncnn only; the MLP uses its own patch edge
  StackingPolicy policy = StackingPolicy::low_dose_and_latest;
  int threads = 1;
  /// When set, sampled patch coordinates are appended here per cascade for
  /// the audit log.
  std::vector<PatchCoord>* audit = nullptr;
};

/// Iterative retraining: for k = 1..K, denoise the whole training images
/// with the chain built so far, sample fresh patches from the stacked inputs
/// against the residual (or clean, for MLP) targets, and train f_k. Earlier
/// cascades are never revisited.
CascadeChain train_cascade(const DatasetManifest& dataset, int cascades,
                           const NetworkSpec& spec_template,
                           const TrainConfig& config,
                           const CascadeTrainOptions& options = {});

/// Chain checkpoint: chain.json (cascade count, policy, per-cascade
/// provenance) plus one network checkpoint directory per cascade.
/// Round-trips are bitwise lossless for parameters and statistics.
void save_chain(const CascadeChain& chain, const std::filesystem::path& dir);
CascadeChain load_chain(const std::filesystem::path& dir);

/// FNV-1a over raw float bytes; provenance checksums.
std::uint64_t fnv1a(std::span<const float> values, std::uint64_t seed = 0);

}  // namespace ldct
