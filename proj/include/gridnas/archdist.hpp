#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridnas/rng.hpp"
#include "gridnas/supergrid.hpp"

namespace gridnas {

// Probability floor applied after every search update so densities stay
// strictly positive (keeps importance ratios finite and score terms bounded).
inline constexpr double kProbClamp = 1e-3;

// Independent per-bit Bernoulli distribution over binary masks.
// p(a) = prod_b pi_b^{a_b} (1-pi_b)^{1-a_b}.
class BernoulliDist {
 public:
  explicit BernoulliDist(std::vector<double> probs) : probs_(std::move(probs)) {
    for (double p : probs_) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("BernoulliDist: probs must lie in [0, 1]");
      }
    }
  }

  static BernoulliDist constant(std::size_t n, double p) {
    return BernoulliDist(std::vector<double>(n, p));
  }

  std::size_t size() const { return probs_.size(); }
  const std::vector<double>& probs() const { return probs_; }
  double prob_of_bit(std::size_t b) const { return probs_[b]; }
  void set_prob(std::size_t b, double p) { probs_[b] = p; }

  void clamp(double eps = kProbClamp) {
    for (double& p : probs_) p = std::min(1.0 - eps, std::max(eps, p));
  }

  // Density of a full bit assignment. Computed as a direct product: factors
  // are exact for pinned bits (0/1 probabilities) and the dynamic range is
  // harmless at the mask sizes this library enumerates.
  double prob(const MaskBits& mask) const {
    check_len(mask);
    double p = 1.0;
    for (std::size_t b = 0; b < probs_.size(); ++b) {
      p *= mask[b] ? probs_[b] : 1.0 - probs_[b];
    }
    return p;
  }

  MaskBits sample(Rng& rng) const {
    MaskBits m(probs_.size());
    for (std::size_t b = 0; b < probs_.size(); ++b) {
      m[b] = rng.bernoulli(probs_[b]);
    }
    return m;
  }

  // Per-bit derivative of log p(a): a_b/pi_b - (1-a_b)/(1-pi_b).
  // The unsigned variant replaces the inactive branch's sign with +, which
  // breaks the zero-mean property E_p[score] = 0; it exists only so the
  // validation tool can demonstrate that failure.
  std::vector<double> score(const MaskBits& mask, bool signed_form = true) const {
    check_len(mask);
    std::vector<double> s(probs_.size());
    for (std::size_t b = 0; b < probs_.size(); ++b) {
      if (mask[b]) {
        s[b] = 1.0 / probs_[b];
      } else {
        s[b] = (signed_form ? -1.0 : 1.0) / (1.0 - probs_[b]);
      }
    }
    return s;
  }

 private:
  void check_len(const MaskBits& mask) const {
    if (mask.size() != probs_.size()) {
      throw std::invalid_argument("mask length does not match distribution size");
    }
  }
  std::vector<double> probs_;
};

// Equal-weight mixture of the per-task distributions: the shared sampling
// proxy that lets one architecture sample serve every task.
// q(a) = (1/T) sum_t p_t(a).
class ProxyMixture {
 public:
  explicit ProxyMixture(std::vector<BernoulliDist> components)
      : components_(std::move(components)) {
    if (components_.empty()) {
      throw std::invalid_argument("ProxyMixture: needs at least one component");
    }
    for (const auto& c : components_) {
      if (c.size() != components_.front().size()) {
        throw std::invalid_argument("ProxyMixture: component sizes differ");
      }
    }
  }

  std::size_t num_tasks() const { return components_.size(); }
  std::size_t size() const { return components_.front().size(); }
  const BernoulliDist& component(std::size_t t) const { return components_[t]; }

  double prob(const MaskBits& mask) const {
    double acc = 0.0;
    for (const auto& c : components_) acc += c.prob(mask);
    return acc / static_cast<double>(components_.size());
  }

  // Draw a component uniformly, then sample it.
  MaskBits sample(Rng& rng) const {
    const int t = rng.uniform_int(static_cast<int>(components_.size()));
    return components_[static_cast<std::size_t>(t)].sample(rng);
  }

  // Importance ratio p_t(a) / q(a). Bounded above by T since q >= p_t / T.
  double importance_weight(std::size_t task, const MaskBits& mask) const {
    const double q = prob(mask);
    if (q <= 0.0) {
      throw std::domain_error("importance_weight: proxy density vanished");
    }
    return components_[task].prob(mask) / q;
  }

 private:
  std::vector<BernoulliDist> components_;
};

// Normalizes raw importance weights to sum to 1 over a gathered batch.
inline std::vector<double> self_normalize(std::span<const double> raw) {
  if (raw.empty()) {
    throw std::invalid_argument("self_normalize: empty weight batch");
  }
  double sum = 0.0;
  for (double r : raw) {
    if (r < 0.0) throw std::invalid_argument("self_normalize: negative weight");
    sum += r;
  }
  if (sum <= 0.0) {
    throw std::invalid_argument("self_normalize: weights sum to zero");
  }
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / sum;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one probability per line (full precision); '#' lines
// are metadata and ignored by the reader.

inline void write_probs_file(const std::string& path, const BernoulliDist& dist,
                             const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open probs file for writing: " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  char buf[64];
  for (double p : dist.probs()) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out << buf << "\n";
  }
}

inline BernoulliDist read_probs_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open probs file: " + path);
  std::vector<double> probs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    probs.push_back(std::stod(line));
  }
  if (probs.empty()) throw std::runtime_error("probs file has no values: " + path);
  return BernoulliDist(std::move(probs));
}

}  // namespace gridnas
