// SPDX-License-Identifier: Apache-2.0
#include "mtlc/hash.hpp"

#include <cstdio>

#include "mtlc/csv.hpp"

namespace mtlc {

Fnv1a& Fnv1a::update(std::string_view bytes) noexcept {
  for (unsigned char ch : bytes) {
    state_ ^= ch;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fnv1a& Fnv1a::update(std::uint64_t value) noexcept {
  for (int i = 0; i < 8; ++i) {
    state_ ^= (value >> (8 * i)) & 0xffU;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string digest_file(const std::filesystem::path& path) {
  return Fnv1a().update(read_file(path)).hex();
}

namespace {

std::uint64_t splitmix(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = splitmix(master);
  for (auto p : parts) h = splitmix(h ^ splitmix(p + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace mtlc
