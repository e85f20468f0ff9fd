// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace sslcap {

/// Pinned pseudo-random source shared by every stochastic component.
///
/// Engine: std::mt19937_64 (fully specified by the C++ standard).
/// uniform_open(): ((x >> 11) + 0.5) * 2^-53, strictly inside (0, 1).
/// normal(): Box-Muller on two fresh uniforms, cosine branch only, so
/// every call consumes exactly two engine outputs.
/// uniform_index(n): floor(uniform_open() * n).
///
/// These conversions are written out here instead of using the
/// <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform_open();
  double normal();
  std::size_t uniform_index(std::size_t n);

  /// Textual engine state; set_state(state()) restores the stream exactly.
  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// 64-bit FNV-1a, used for config digests and per-item seed derivation.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 14695981039346656037ULL);

/// Lower-case 16-digit hex rendering of a 64-bit value.
std::string hex64(std::uint64_t value);

}  // namespace sslcap
