#include "regime/sobol.hpp"

#include "regime/error.hpp"

#include <array>
#include <bit>
#include <random>
#include <string>

namespace regime {

namespace {

struct Primitive {
  int degree;
  std::uint32_t coeffs;
  std::array<std::uint32_t, 7> m;
};

// new-joe-kuo-6.21201, dimensions 2..32.
constexpr std::array<Primitive, kSobolMaxDimension - 1> kDirections{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
    {7, 7, {1, 1, 3, 13, 7, 35, 63}},
    {7, 8, {1, 3, 5, 9, 1, 25, 53}},
    {7, 14, {1, 3, 1, 13, 9, 35, 107}},
    {7, 19, {1, 3, 1, 5, 27, 61, 31}},
    {7, 21, {1, 1, 5, 11, 19, 41, 61}},
    {7, 28, {1, 3, 5, 3, 3, 13, 69}},
    {7, 31, {1, 1, 7, 13, 1, 19, 1}},
    {7, 32, {1, 3, 7, 5, 13, 19, 59}},
    {7, 37, {1, 1, 3, 9, 25, 29, 41}},
    {7, 41, {1, 3, 5, 13, 23, 1, 55}},
    {7, 42, {1, 3, 7, 3, 13, 59, 17}},
}};

constexpr int kBits = 32;

using DirectionTable = std::array<std::uint32_t, kBits>;

DirectionTable direction_numbers(int dim) {
  DirectionTable v{};
  if (dim == 0) {
    for (int j = 0; j < kBits; ++j) v[j] = std::uint32_t{1} << (kBits - 1 - j);
    return v;
  }
  const Primitive& p = kDirections[static_cast<std::size_t>(dim - 1)];
  const int s = p.degree;
  for (int j = 0; j < s && j < kBits; ++j) v[j] = p.m[j] << (kBits - 1 - j);
  for (int j = s; j < kBits; ++j) {
    std::uint32_t x = v[j - s] ^ (v[j - s] >> s);
    for (int k = 1; k < s; ++k) {
      if ((p.coeffs >> (s - 1 - k)) & 1U) x ^= v[j - k];
    }
    v[j] = x;
  }
  return v;
}

}  // namespace

Matrix sobol_design(Eigen::Index n, int m, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("sobol_design: n must be at least 1");
  if (m < 1) throw ArgumentError("sobol_design: dimension must be at least 1");
  if (m > kSobolMaxDimension) {
    throw UnsupportedDimensionError("sobol_design: dimension " + std::to_string(m) +
                                    " exceeds the " + std::to_string(kSobolMaxDimension) +
                                    " supported by the direction-number table");
  }
  if (static_cast<std::uint64_t>(n) >= (std::uint64_t{1} << kBits)) {
    throw ArgumentError("sobol_design: n exceeds 2^32 - 1");
  }

  std::vector<std::uint32_t> shift(static_cast<std::size_t>(m), 0U);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    for (auto& s : shift) s = static_cast<std::uint32_t>(rng() >> 32);
  }

  constexpr double kScale = 1.0 / 4294967296.0;
  Matrix out(n, m);
  for (int d = 0; d < m; ++d) {
    const DirectionTable v = direction_numbers(d);
    std::uint32_t x = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      // Gray-code step from point k to k + 1; point 0 is the origin.
      const auto c = std::countr_one(static_cast<std::uint64_t>(k));
      x ^= v[static_cast<std::size_t>(c)];
      out(k, d) = static_cast<double>(x ^ shift[static_cast<std::size_t>(d)]) * kScale;
    }
  }
  return out;
}

}  // namespace regime
