#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <string>

namespace tnerm {

using Engine = std::mt19937_64;

/// Independent stream for (seed, keys...). Streams depend only on their keys,
/// never on the order in which they are created, so parallel runs reproduce.
Engine derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// Stable 64-bit key for an area id (FNV-1a).
std::uint64_t area_key(const std::string& id);

/// Runs body(i) for i in [0, count) on `threads` workers (<= 0: all cores).
/// The first exception by index is rethrown after every worker has stopped.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

int resolve_threads(int threads);

}  // namespace tnerm
