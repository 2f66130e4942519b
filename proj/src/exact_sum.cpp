#include "dlcm/exact_sum.hpp"

#include "dlcm/common.hpp"

#include <cmath>

namespace dlcm {

void ExactSum::add(double v) {
  if (v == 0.0) return;
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw NumericError("ExactSum::add requires finite nonnegative values");
  }
  int exp = 0;
  const double mant = std::frexp(v, &exp);  // v = mant * 2^exp, mant in [0.5,1)
  const auto mi = static_cast<std::uint64_t>(std::ldexp(mant, 53));  // exact, 53 bits
  // v = mi * 2^(exp-53)
  const int bitpos = exp - 53 + kBitOffset;
  if (bitpos < 0 || bitpos + 53 >= kLimbs * 64) {
    throw NumericError("ExactSum::add value out of representable range");
  }
  const int limb = bitpos >> 6;
  const int shift = bitpos & 63;
  unsigned __int128 wide = static_cast<unsigned __int128>(mi) << shift;
  int i = limb;
  while (wide != 0) {
    wide += limbs_[i];
    limbs_[i] = static_cast<std::uint64_t>(wide);
    wide >>= 64;
    ++i;
  }
}

void ExactSum::merge(const ExactSum& other) {
  unsigned __int128 carry = 0;
  for (int i = 0; i < kLimbs; ++i) {
    const unsigned __int128 s =
        static_cast<unsigned __int128>(limbs_[i]) + other.limbs_[i] + carry;
    limbs_[i] = static_cast<std::uint64_t>(s);
    carry = s >> 64;
  }
  if (carry != 0) throw NumericError("ExactSum::merge overflow");
}

double ExactSum::value() const {
  int top = kLimbs - 1;
  while (top >= 0 && limbs_[top] == 0) --top;
  if (top < 0) return 0.0;

  int hi_bit = 63;
  while (((limbs_[top] >> hi_bit) & 1ULL) == 0) --hi_bit;
  const long total_msb = top * 64 + hi_bit;  // exponent of the leading bit

  // Collect the 54 bits below and including the MSB, then round to 53.
  auto get_bit = [&](long pos) -> int {
    if (pos < 0) return 0;
    return static_cast<int>((limbs_[pos >> 6] >> (pos & 63)) & 1ULL);
  };
  std::uint64_t mant = 0;
  for (long p = total_msb; p > total_msb - 54 && p >= 0; --p) {
    mant = (mant << 1) | static_cast<std::uint64_t>(get_bit(p));
  }
  long lowest = total_msb - 53;
  if (lowest < 0) {
    mant <<= -lowest;  // fewer than 54 bits available
    lowest = 0;
  }
  // mant holds bits [lowest, total_msb]; the last bit is the rounding bit.
  const std::uint64_t keep = mant >> 1;
  const int round_bit = static_cast<int>(mant & 1ULL);
  bool sticky = false;
  for (long p = lowest - 1; p >= 0 && !sticky; --p) sticky = get_bit(p) != 0;
  std::uint64_t rounded = keep;
  if (round_bit && (sticky || (keep & 1ULL))) ++rounded;

  double out = std::ldexp(static_cast<double>(rounded), static_cast<int>(lowest + 1 - kBitOffset));
  return out;
}

}  // namespace dlcm
