#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace kale {

// FNV-1a, 64-bit. Enough to detect stale or hand-edited artifacts.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ull);

std::string digest_hex(std::uint64_t digest);
std::string bytes_digest(const void* data, std::size_t size);
std::string file_digest(const std::string& path);

template <typename S>
std::string values_digest(const std::vector<S>& values) {
  return bytes_digest(values.data(), values.size() * sizeof(S));
}

}  // namespace kale
