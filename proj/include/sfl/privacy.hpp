#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfl/rng.hpp"
#include "sfl/tensor.hpp"

namespace sfl::privacy {

enum class BoundsMode { kPerBatch, kCalibration };

struct PrivacyConfig {
  // Mechanism switches.
  bool dp_sgd = false;   // clipped + noised client-portion gradients
  bool dp_fl = false;    // clipped + noised FedAvg server update
  bool laplace = false;  // Laplace noise layer on smashed data
  bool nopeek = false;   // distance-correlation regularizer on smashed data

  double epsilon = 1.0;  // recorded budget; noise is set by noise_multiplier
  double delta = 1e-5;
  double clip_norm = 1.0;         // S
  double noise_multiplier = 1.0;  // sigma; Gaussian std is sigma * S
  double laplace_epsilon = 1.0;   // epsilon' of the smashed-data layer
  BoundsMode bounds = BoundsMode::kPerBatch;
  double alpha1 = 0.1;  // distance-correlation weight
  double alpha2 = 1.0;  // cross-entropy weight
  std::size_t nopeek_max_batch = 256;

  bool any() const { return dp_sgd || dp_fl || laplace || nopeek; }
  // Throws ConfigError when a parameter is out of range for an enabled mechanism.
  void validate() const;
};

// update / max(1, ||update||_2 / S). Inputs already within S come back
// bit-identical; clipped outputs are guaranteed to have norm <= S.
std::vector<float> clip_by_norm(std::span<const float> update, double clip_norm);
Tensor clip_by_norm(const Tensor& update, double clip_norm);

// (1/n_k) * (sum_i clip(g_i) + N(0, (sigma*S)^2 I)). Noise is drawn once for
// the summed gradient.
std::vector<float> dp_local_gradient(const std::vector<std::vector<float>>& per_example,
                                     double clip_norm, double noise_multiplier,
                                     std::size_t n_k, Rng& rng);

// w + (1/K) * (sum_k clip(delta_k) + N(0, (sigma*S)^2 I)).
std::vector<float> dp_fl_server_update(std::span<const float> weights,
                                       const std::vector<std::vector<float>>& deltas,
                                       double clip_norm, double noise_multiplier, Rng& rng);

// Per-unit activation bounds of smashed data (one unit per feature of a row).
struct SmashBounds {
  std::vector<float> max;
  std::vector<float> min;

  static SmashBounds of(const Tensor& batch);
  void merge(const Tensor& batch);
  std::vector<double> intervals() const;
  bool empty() const { return max.empty(); }
};

// Adds Laplace(0, interval_i / epsilon') noise to every unit i; units with a
// zero interval are left untouched.
Tensor laplace_smash(const Tensor& smashed, double laplace_epsilon, const SmashBounds& bounds,
                     Rng& rng);
double sample_laplace(double scale, Rng& rng);

// Distance correlation between the rows of X (n x p) and Z (n x q) via the
// double-centred pairwise distance matrices. Returns 0 when either side is
// constant. Throws for n < 2 or mismatched row counts.
double distance_correlation(const Tensor& x, const Tensor& z);

struct DcorWithGrad {
  double value = 0.0;
  Tensor grad_z;  // d dcor / d z, same shape as z
};
DcorWithGrad distance_correlation_grad(const Tensor& x, const Tensor& z);

struct NoPeekResult {
  double loss = 0.0;
  double dcor = 0.0;
  double cross_entropy = 0.0;
  Tensor grad_smashed;  // alpha1 * d dcor / d smashed
  Tensor grad_logits;   // alpha2 * d xent / d logits
  std::size_t correct = 0;
};

// alpha1 * DCOR(raw, smashed) + alpha2 * CCE(labels, logits).
NoPeekResult nopeek_loss(const Tensor& raw, const Tensor& smashed,
                         std::span<const uint32_t> labels, const Tensor& logits, double alpha1,
                         double alpha2);

// sum_i X_i ln(X_i / Z_i) in nats. Throws DataError when X_i > 0 and Z_i == 0
// or the supports differ in length.
double kl_divergence(std::span<const double> x, std::span<const double> z);
double entropy(std::span<const double> x);
double cross_entropy(std::span<const double> x, std::span<const double> z);

struct LeakageReport {
  double dcor = 0.0;
  double kl_nats = 0.0;
};

// DCOR on the raw rows, plus KL between equal-width histograms of raw and
// smashed values over their union range. When the per-sample widths match the
// KL is averaged over dimensions; otherwise pooled values are compared. Every
// bin gets a pseudo-count of 0.5 so the divergence stays finite.
LeakageReport smashed_leakage_report(const Tensor& raw, const Tensor& smashed, std::size_t bins);

}  // namespace sfl::privacy
