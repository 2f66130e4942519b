#pragma once

#include <array>
#include <cstdint>

namespace dlcm {

/// Order-invariant exact accumulator for nonnegative doubles.
///
/// Values are added into a wide fixed-point register (base 2^64 limbs spanning
/// binary exponents [-1088, 1280)), so accumulation is exact and merging two
/// accumulators is limb-wise integer addition: associative and commutative.
/// Two shard layouts that sum the same multiset of values produce bit-identical
/// results, which is the reduction contract distributed statistics need.
class ExactSum {
 public:
  static constexpr int kLimbs = 37;           // 37*64 = 2368 bits
  static constexpr int kBitOffset = 1088;     // bit 0 of limb 0 == 2^-1088

  ExactSum() : limbs_{} {}

  /// Adds v. Requires v >= 0 and finite; |v| must be < 2^1279.
  void add(double v);

  /// Merges another accumulator into this one (exact).
  void merge(const ExactSum& other);

  /// Rounds the exact total to the nearest double (ties to even).
  double value() const;

  bool operator==(const ExactSum& other) const { return limbs_ == other.limbs_; }

 private:
  std::array<std::uint64_t, kLimbs> limbs_;
};

}  // namespace dlcm
