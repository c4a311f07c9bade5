// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

namespace mtlc {

/// 64-bit FNV-1a. Used for config hashes, file digests and seed derivation;
/// not a cryptographic digest.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) noexcept;
  Fnv1a& update(std::uint64_t value) noexcept;
  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);
std::string digest_file(const std::filesystem::path& path);

/// SplitMix64 finalizer; mixes a master seed with a list of integers.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) noexcept;

}  // namespace mtlc
