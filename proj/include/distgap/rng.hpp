#pragma once

// Counter-based random streams (Philox4x32-10). A draw is a pure function of
// (seed, counter), so any particle can be simulated independently of the others.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace distgap {

enum class Stream : std::uint32_t {
  Increment = 0,
  Initial = 1,
  Bootstrap = 2,
  Quadrature = 3,
  Subset = 4,
  Auxiliary = 5,
};

class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Block operator()(Block ctr) const {
    std::array<std::uint32_t, 2> k = key_;
    for (int r = 0; r < 10; ++r) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  std::array<std::uint32_t, 2> key_;
};

/// Keyed normal and uniform draws. Key layout: (particle, agent, step, stream|block).
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t seed) : philox_(seed) {}

  /// Two uniforms in (0,1) for the given key.
  std::array<double, 2> uniforms(std::uint32_t particle, std::uint32_t agent, std::uint32_t step,
                                 Stream stream, std::uint32_t block = 0) const {
    const auto b = philox_({particle, agent, step, (static_cast<std::uint32_t>(stream) << 24) | block});
    return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
  }

  /// Fill out[0..count) with standard normals for the given key.
  void normals(std::uint32_t particle, std::uint32_t agent, std::uint32_t step, Stream stream,
               double* out, int count) const {
    for (int j = 0; j < count; j += 2) {
      const auto u = uniforms(particle, agent, step, stream, static_cast<std::uint32_t>(j / 2));
      const double r = std::sqrt(-2.0 * std::log(u[0]));
      const double th = 2.0 * std::numbers::pi * u[1];
      out[j] = r * std::cos(th);
      if (j + 1 < count) out[j + 1] = r * std::sin(th);
    }
  }

  double normal(std::uint32_t particle, std::uint32_t agent, std::uint32_t step, Stream stream) const {
    double z[1];
    normals(particle, agent, step, stream, z, 1);
    return z[0];
  }

  double uniform(std::uint32_t particle, std::uint32_t agent, std::uint32_t step, Stream stream) const {
    return uniforms(particle, agent, step, stream)[0];
  }

  Philox::Block raw(Philox::Block ctr) const { return philox_(ctr); }

 private:
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox philox_;
};

}  // namespace distgap
