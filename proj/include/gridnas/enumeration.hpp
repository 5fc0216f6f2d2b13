#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridnas/archdist.hpp"
#include "gridnas/supergrid.hpp"

namespace gridnas {

// Exhaustive-enumeration utilities. Everything here walks all 2^B masks,
// so B is capped; these serve as exact references for the sampled
// estimators and as the brute-force baseline for search results.

inline constexpr int kMaxEnumerationBits = 16;

inline void check_enumeration_bits(std::size_t bits) {
  if (bits > kMaxEnumerationBits) {
    throw std::domain_error("enumeration limited to " +
                            std::to_string(kMaxEnumerationBits) + " bits");
  }
}

// Dense table index: bit b of the mask is bit b of the index.
inline std::size_t mask_index(const MaskBits& mask) {
  std::size_t idx = 0;
  for (std::size_t b = 0; b < mask.size(); ++b) {
    if (mask[b]) idx |= std::size_t{1} << b;
  }
  return idx;
}

inline MaskBits index_mask(std::size_t idx, std::size_t bits) {
  MaskBits m(bits);
  for (std::size_t b = 0; b < bits; ++b) m[b] = (idx >> b) & 1;
  return m;
}

// Dense loss table over every mask of `bits` bits.
class LossTable {
 public:
  LossTable(std::size_t bits, std::vector<double> values)
      : bits_(bits), values_(std::move(values)) {
    check_enumeration_bits(bits_);
    if (values_.size() != (std::size_t{1} << bits_)) {
      throw std::invalid_argument("LossTable: values must cover all 2^bits masks");
    }
  }

  std::size_t bits() const { return bits_; }
  const std::vector<double>& values() const { return values_; }

  double value(const MaskBits& mask) const {
    if (mask.size() != bits_) {
      throw std::invalid_argument("LossTable: mask outside table domain");
    }
    return values_[mask_index(mask)];
  }
  double value_at(std::size_t idx) const { return values_[idx]; }

  // Builds a table from "bits value" entries; every mask must appear
  // exactly once.
  static LossTable from_entries(
      std::size_t bits, const std::vector<std::pair<std::string, double>>& entries) {
    check_enumeration_bits(bits);
    const std::size_t n = std::size_t{1} << bits;
    std::vector<double> values(n, 0.0);
    std::vector<bool> seen(n, false);
    for (const auto& [key, v] : entries) {
      const MaskBits m = mask_from_string(key);
      if (m.size() != bits) {
        throw std::invalid_argument("LossTable entry has wrong mask length: " + key);
      }
      const std::size_t idx = mask_index(m);
      if (seen[idx]) throw std::invalid_argument("LossTable entry repeated: " + key);
      seen[idx] = true;
      values[idx] = v;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!seen[i]) {
        throw std::invalid_argument("LossTable is missing mask " +
                                    mask_to_string(index_mask(i, bits)));
      }
    }
    return LossTable(bits, std::move(values));
  }

 private:
  std::size_t bits_;
  std::vector<double> values_;
};

// E_{a~p}[loss(a)] by full enumeration.
template <class LossFn>
double enumerate_expected_loss(const BernoulliDist& dist, LossFn&& loss) {
  check_enumeration_bits(dist.size());
  const std::size_t n = std::size_t{1} << dist.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const MaskBits m = index_mask(i, dist.size());
    acc += dist.prob(m) * loss(m);
  }
  return acc;
}

// d/dpi_b E_{a~p}[loss(a)], computed by differentiating the enumerated sum:
// for each b, sum over the other bits of prod_{j!=b} factor_j *
// (loss(..b=1..) - loss(..b=0..)). Deliberately a different computation
// path from the score-function identity it serves as reference for.
template <class LossFn>
std::vector<double> enumerate_grad_pi(const BernoulliDist& dist, LossFn&& loss) {
  check_enumeration_bits(dist.size());
  const std::size_t bits = dist.size();
  std::vector<double> grad(bits, 0.0);
  const std::size_t n_rest = bits == 0 ? 0 : std::size_t{1} << (bits - 1);
  for (std::size_t b = 0; b < bits; ++b) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n_rest; ++r) {
      // Spread the B-1 "rest" bits around position b.
      MaskBits m(bits, 0);
      double p_rest = 1.0;
      std::size_t rr = r;
      for (std::size_t j = 0; j < bits; ++j) {
        if (j == b) continue;
        m[j] = rr & 1;
        rr >>= 1;
        p_rest *= m[j] ? dist.prob_of_bit(j) : 1.0 - dist.prob_of_bit(j);
      }
      m[b] = 1;
      const double up = loss(m);
      m[b] = 0;
      const double down = loss(m);
      acc += p_rest * (up - down);
    }
    grad[b] = acc;
  }
  return grad;
}

// Lowest-loss mask whose selected cost stays within `budget`; ties go to
// the lexicographically smallest bit string (bit 0 most significant).
// Throws when no mask is feasible.
template <class LossFn>
MaskBits brute_force_best(std::size_t bits, LossFn&& loss,
                          const std::vector<double>& costs, double budget) {
  check_enumeration_bits(bits);
  if (costs.size() != bits) {
    throw std::invalid_argument("brute_force_best: cost table length mismatch");
  }
  const std::size_t n = std::size_t{1} << bits;
  bool found = false;
  double best_loss = 0.0;
  MaskBits best;
  for (std::size_t i = 0; i < n; ++i) {
    // Iterate in lexicographic bit-string order so the first strict
    // improvement wins ties.
    MaskBits m(bits);
    for (std::size_t b = 0; b < bits; ++b) m[b] = (i >> (bits - 1 - b)) & 1;
    double c = 0.0;
    for (std::size_t b = 0; b < bits; ++b) {
      if (m[b]) c += costs[b];
    }
    if (c > budget) continue;
    const double l = loss(m);
    if (!found || l < best_loss) {
      found = true;
      best_loss = l;
      best = m;
    }
  }
  if (!found) throw std::runtime_error("brute_force_best: no mask satisfies the budget");
  return best;
}

// Most probable mask of an independent Bernoulli distribution: bit set
// exactly when its probability exceeds one half (ties resolve to 0).
inline MaskBits most_probable_mask(const BernoulliDist& dist) {
  MaskBits m(dist.size());
  for (std::size_t b = 0; b < dist.size(); ++b) m[b] = dist.prob_of_bit(b) > 0.5;
  return m;
}

}  // namespace gridnas
