#ifndef MAGFLOW_UTIL_HPP
#define MAGFLOW_UTIL_HPP

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <functional>
#include <algorithm>

namespace magflow {

/** Configuration or input problem: maps to CLI exit code 2. */
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/** Iteration failed to reach its tolerance: maps to CLI exit code 3. */
struct NonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/** A checked identity failed: maps to CLI exit code 4. */
struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/** FNV-1a, used to fingerprint configs and perturbation tables in reports. */
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/** Concurrency cap: TOOL_THREADS if set, else 1 thread per core. */
inline int tool_threads() {
  if (const char* env = std::getenv("TOOL_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

/**
 * Runs fn(i) for i in [0,n). Results must be written to pre-sized slots so
 * the merge order, and with it every report, is independent of scheduling.
 */
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int nt = std::min(tool_threads(), n);
  if (nt <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += nt) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace magflow

#endif
