#include "dyntreat/rng.hpp"

#include <cmath>

namespace dyntreat {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  // FNV-1a, then a final mix so short strings spread over all bits
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

Rng::Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

Rng Rng::substream(std::uint64_t master, std::string_view name, std::uint64_t index) {
  return Rng(mix64(mix64(master) ^ hash_string(name)) + mix64(index ^ 0x5851f42d4c957f2dULL));
}

std::size_t Rng::index(std::size_t n) {
  // Lemire's multiply-shift is enough here; the bias for n << 2^64 is negligible
  return static_cast<std::size_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
}

double Rng::exponential(double rate) {
  // 1 - u lies in (0, 1], so the log is finite
  return -std::log1p(-uniform()) / rate;
}

double Rng::normal() { return normal_(engine_); }

}  // namespace dyntreat
