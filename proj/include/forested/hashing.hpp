#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace forested {

/// 64-bit FNV-1a. `seed` is mixed into the offset basis; seed 0 is the standard basis.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace forested
