#pragma once

// Shared error types, deterministic RNG helpers and small utilities used
// across the crimemap library.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crimemap {

// ---------------------------------------------------------------------------
// Errors

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FetchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// String helpers

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Case-folded, trimmed category key.
inline std::string normalize_category(std::string_view s) { return to_lower(trim(s)); }

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64-bit). Used for cache keys, config hashes and model
// checksums; stability across platforms matters, cryptographic strength does
// not.

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Deterministic randomness. std::mt19937_64 has a fully specified sequence;
// the distribution helpers below are hand-rolled because the standard
// distributions are implementation-defined.

using Rng = std::mt19937_64;

// Derive an independent stream from a base seed and a stream tag.
inline Rng make_rng(uint64_t seed, uint64_t stream = 0) {
  uint64_t mixed = fnv1a64(&seed, sizeof(seed));
  mixed = fnv1a64(&stream, sizeof(stream), mixed);
  return Rng(mixed);
}

// Unbiased integer in [0, bound) via rejection sampling.
inline uint64_t rand_below(Rng& rng, uint64_t bound) {
  if (bound == 0) throw RangeError("rand_below: bound must be positive");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

inline double rand_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
}

inline double rand_normal(Rng& rng) {
  // Box-Muller, one value per call (second discarded for simplicity).
  double u1 = rand_unit(rng);
  double u2 = rand_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rand_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// k sorted indices sampled without replacement from [0, n).
inline std::vector<size_t> sample_without_replacement(size_t n, size_t k, Rng& rng) {
  if (k > n) throw RangeError("sample_without_replacement: k > n");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  shuffle_inplace(idx, rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace crimemap
