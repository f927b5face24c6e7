#include "sfl/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sfl/error.hpp"
#include "sfl/kernels.hpp"
#include "sfl/loss.hpp"

namespace sfl::privacy {

namespace {

double l2_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(acc);
}

// Rows of `t` as an n x p binary64 matrix.
std::vector<double> as_rows(const Tensor& t, std::size_t& n, std::size_t& p) {
  if (t.rank() < 1) throw ShapeError("expected a batch tensor");
  n = t.dim(0);
  p = t.row_size();
  return std::vector<double>(t.data().begin(), t.data().end());
}

// Double-centres a symmetric n x n distance matrix in place.
void double_center(std::vector<double>& d, std::size_t n) {
  std::vector<double> row_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += d[i * n + j];
    grand += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] += grand - row_mean[i] - row_mean[j];
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

struct DcorParts {
  std::size_t n = 0, q = 0;
  std::vector<double> z;       // raw rows of z
  std::vector<double> dist_z;  // uncentred distances of z
  std::vector<double> a, b;    // centred distance matrices
  double s_ab = 0, s_aa = 0, s_bb = 0;
};

DcorParts dcor_parts(const Tensor& x, const Tensor& z) {
  DcorParts r;
  std::size_t nx = 0, p = 0;
  const std::vector<double> xr = as_rows(x, nx, p);
  r.z = as_rows(z, r.n, r.q);
  if (nx != r.n) throw ShapeError("distance correlation needs equal row counts");
  if (r.n < 2) throw DataError("distance correlation needs at least two samples");
  const std::size_t n = r.n;
  r.a.resize(n * n);
  r.dist_z.resize(n * n);
  kernels::pairwise_distances(n, p, xr, r.a);
  kernels::pairwise_distances(n, r.q, r.z, r.dist_z);
  r.b = r.dist_z;
  double_center(r.a, n);
  double_center(r.b, n);
  r.s_ab = dot(r.a, r.b);
  r.s_aa = dot(r.a, r.a);
  r.s_bb = dot(r.b, r.b);
  return r;
}

double dcor_value(const DcorParts& p) {
  if (p.s_aa <= 0.0 || p.s_bb <= 0.0) return 0.0;
  const double r2 = p.s_ab / std::sqrt(p.s_aa * p.s_bb);
  return std::sqrt(std::clamp(r2, 0.0, 1.0));
}

std::vector<double> histogram(std::span<const double> values, double lo, double hi,
                              std::size_t bins) {
  std::vector<double> h(bins, 0.5);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h[std::min(b, bins - 1)] += 1.0;
  }
  double total = 0.0;
  for (double c : h) total += c;
  for (double& c : h) c /= total;
  return h;
}

double histogram_kl(std::span<const double> raw, std::span<const double> smashed,
                    std::size_t bins) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto vals : {raw, smashed}) {
    for (double v : vals) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return kl_divergence(histogram(raw, lo, hi, bins), histogram(smashed, lo, hi, bins));
}

}  // namespace

void PrivacyConfig::validate() const {
  if ((dp_sgd || dp_fl) && !(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("delta must be in [0, 1)");
  if ((dp_sgd || dp_fl) && !(clip_norm > 0.0)) throw ConfigError("clip_norm S must be > 0");
  if ((dp_sgd || dp_fl) && !(noise_multiplier >= 0.0)) {
    throw ConfigError("noise_multiplier must be >= 0");
  }
  if (laplace && !(laplace_epsilon > 0.0)) throw ConfigError("laplace_epsilon must be > 0");
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw ConfigError("alpha1 and alpha2 must be >= 0");
  if (nopeek && (nopeek_max_batch < 2 || nopeek_max_batch > 256)) {
    throw ConfigError("nopeek_max_batch must be in [2, 256]");
  }
}

std::vector<float> clip_by_norm(std::span<const float> update, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  std::vector<float> out(update.begin(), update.end());
  const double norm = l2_norm(update);
  if (norm <= clip_norm) return out;
  double scale = clip_norm / norm;
  while (true) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(static_cast<double>(update[i]) * scale);
    }
    if (l2_norm(out) <= clip_norm) return out;
    scale *= 1.0 - 0x1p-23;
  }
}

Tensor clip_by_norm(const Tensor& update, double clip_norm) {
  return Tensor(update.shape(), clip_by_norm(update.data(), clip_norm));
}

std::vector<float> dp_local_gradient(const std::vector<std::vector<float>>& per_example,
                                     double clip_norm, double noise_multiplier, std::size_t n_k,
                                     Rng& rng) {
  if (n_k < 1) throw std::invalid_argument("n_k must be >= 1");
  if (per_example.empty()) throw std::invalid_argument("no per-example gradients");
  const std::size_t dim = per_example.front().size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& g : per_example) {
    if (g.size() != dim) throw ShapeError("per-example gradients differ in size");
    const std::vector<float> c = clip_by_norm(g, clip_norm);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += c[i];
  }
  const double stddev = noise_multiplier * clip_norm;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double n = stddev > 0.0 ? stddev * noise(rng) : 0.0;
    out[i] = static_cast<float>((sum[i] + n) / static_cast<double>(n_k));
  }
  return out;
}

std::vector<float> dp_fl_server_update(std::span<const float> weights,
                                       const std::vector<std::vector<float>>& deltas,
                                       double clip_norm, double noise_multiplier, Rng& rng) {
  if (deltas.empty()) throw std::invalid_argument("need at least one client update");
  std::vector<double> sum(weights.size(), 0.0);
  for (const auto& d : deltas) {
    if (d.size() != weights.size()) throw ShapeError("client update size mismatch");
    const std::vector<float> c = clip_by_norm(d, clip_norm);
    for (std::size_t i = 0; i < c.size(); ++i) sum[i] += c[i];
  }
  const double stddev = noise_multiplier * clip_norm;
  const double k = static_cast<double>(deltas.size());
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double n = stddev > 0.0 ? stddev * noise(rng) : 0.0;
    out[i] = static_cast<float>(static_cast<double>(weights[i]) + (sum[i] + n) / k);
  }
  return out;
}

SmashBounds SmashBounds::of(const Tensor& batch) {
  SmashBounds b;
  b.merge(batch);
  return b;
}

void SmashBounds::merge(const Tensor& batch) {
  const std::size_t n = batch.rank() ? batch.dim(0) : 0, units = batch.row_size();
  if (n == 0) return;
  if (max.empty()) {
    max.assign(units, -std::numeric_limits<float>::infinity());
    min.assign(units, std::numeric_limits<float>::infinity());
  } else if (max.size() != units) {
    throw ShapeError("smash bounds unit count mismatch");
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < units; ++i) {
      const float v = batch[r * units + i];
      max[i] = std::max(max[i], v);
      min[i] = std::min(min[i], v);
    }
  }
}

std::vector<double> SmashBounds::intervals() const {
  std::vector<double> out(max.size());
  for (std::size_t i = 0; i < max.size(); ++i) {
    out[i] = static_cast<double>(max[i]) - static_cast<double>(min[i]);
  }
  return out;
}

double sample_laplace(double scale, Rng& rng) {
  if (scale <= 0.0) return 0.0;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double x;
  do {
    x = u(rng);
  } while (x == -0.5);
  return -scale * std::copysign(1.0, x) * std::log1p(-2.0 * std::abs(x));
}

Tensor laplace_smash(const Tensor& smashed, double laplace_epsilon, const SmashBounds& bounds,
                     Rng& rng) {
  if (!(laplace_epsilon > 0.0)) throw std::invalid_argument("epsilon' must be positive");
  const std::size_t units = smashed.row_size();
  if (bounds.max.size() != units) throw ShapeError("bounds do not match smashed width");
  const std::vector<double> delta = bounds.intervals();
  Tensor out = smashed;
  const std::size_t n = smashed.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < units; ++i) {
      const double scale = delta[i] / laplace_epsilon;
      if (scale > 0.0) {
        out[r * units + i] = static_cast<float>(out[r * units + i] + sample_laplace(scale, rng));
      }
    }
  }
  return out;
}

double distance_correlation(const Tensor& x, const Tensor& z) {
  return dcor_value(dcor_parts(x, z));
}

DcorWithGrad distance_correlation_grad(const Tensor& x, const Tensor& z) {
  const DcorParts p = dcor_parts(x, z);
  DcorWithGrad out;
  out.value = dcor_value(p);
  out.grad_z = Tensor(z.shape());
  if (out.value <= 0.0 || out.value >= 1.0) return out;
  const std::size_t n = p.n, q = p.q;
  // d(dcor^2)/d(raw z distance) = A / sqrt(Saa Sbb) - Sab B / (sqrt(Saa) Sbb^1.5);
  // centring is a projection that leaves A unchanged, so it drops out.
  const double c1 = 1.0 / std::sqrt(p.s_aa * p.s_bb);
  const double c2 = p.s_ab / (std::sqrt(p.s_aa) * p.s_bb * std::sqrt(p.s_bb));
  const double outer = 1.0 / (2.0 * out.value);
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t k = 0; k < n; ++k) {
      const double dist = p.dist_z[m * n + k];
      if (k == m || dist <= 0.0) continue;
      const double g = outer * (c1 * p.a[m * n + k] - c2 * p.b[m * n + k]);
      const double coef = 2.0 * g / dist;
      for (std::size_t j = 0; j < q; ++j) {
        const double diff = p.z[m * q + j] - p.z[k * q + j];
        out.grad_z[m * q + j] = static_cast<float>(out.grad_z[m * q + j] + coef * diff);
      }
    }
  }
  return out;
}

NoPeekResult nopeek_loss(const Tensor& raw, const Tensor& smashed,
                         std::span<const uint32_t> labels, const Tensor& logits, double alpha1,
                         double alpha2) {
  if (raw.dim(0) != smashed.dim(0) || smashed.dim(0) != logits.dim(0)) {
    throw ShapeError("nopeek_loss: batch sizes differ");
  }
  NoPeekResult r;
  LossResult ce = cross_entropy_loss(logits, labels);
  r.cross_entropy = ce.loss;
  r.correct = ce.correct;
  r.grad_logits = std::move(ce.grad);
  for (float& g : r.grad_logits.data()) g = static_cast<float>(alpha2 * g);
  r.grad_smashed = Tensor(smashed.shape());
  if (alpha1 != 0.0) {
    DcorWithGrad d = distance_correlation_grad(raw, smashed);
    r.dcor = d.value;
    for (std::size_t i = 0; i < d.grad_z.numel(); ++i) {
      r.grad_smashed[i] = static_cast<float>(alpha1 * d.grad_z[i]);
    }
    r.loss = alpha1 * r.dcor + alpha2 * r.cross_entropy;
  } else {
    r.loss = alpha2 * r.cross_entropy;
  }
  return r;
}

double entropy(std::span<const double> x) {
  double h = 0.0;
  for (double p : x) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double cross_entropy(std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size()) throw DataError("distributions have different support sizes");
  double h = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0) continue;
    if (z[i] <= 0.0) {
      throw DataError("KL support violation: X > 0 where Z = 0 at index " + std::to_string(i));
    }
    h -= x[i] * std::log(z[i]);
  }
  return h;
}

double kl_divergence(std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size()) throw DataError("distributions have different support sizes");
  double kl = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 || z[i] < 0.0) throw DataError("negative probability");
    if (x[i] == 0.0) continue;
    if (z[i] == 0.0) {
      throw DataError("KL support violation: X > 0 where Z = 0 at index " + std::to_string(i));
    }
    kl += x[i] * std::log(x[i] / z[i]);
  }
  const double via_entropies = cross_entropy(x, z) - entropy(x);
  if (std::abs(kl - via_entropies) > 1e-12 * std::max(1.0, std::abs(kl))) {
    throw std::logic_error("KL and H(X,Z) - H(X) disagree beyond 1e-12");
  }
  return kl;
}

LeakageReport smashed_leakage_report(const Tensor& raw, const Tensor& smashed, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("bins must be >= 2");
  if (raw.empty() || smashed.empty() || raw.dim(0) == 0) throw DataError("empty batch");
  LeakageReport r;
  r.dcor = distance_correlation(raw, smashed);
  const std::size_t n = raw.dim(0), pr = raw.row_size(), ps = smashed.row_size();
  if (pr == ps) {
    double total = 0.0;
    std::vector<double> a(n), b(n);
    for (std::size_t j = 0; j < pr; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = raw[i * pr + j];
        b[i] = smashed[i * ps + j];
      }
      total += histogram_kl(a, b, bins);
    }
    r.kl_nats = total / static_cast<double>(pr);
  } else {
    const std::vector<double> a(raw.data().begin(), raw.data().end());
    const std::vector<double> b(smashed.data().begin(), smashed.data().end());
    r.kl_nats = histogram_kl(a, b, bins);
  }
  return r;
}

}  // namespace sfl::privacy
