#pragma once

#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace htk {

// Error taxonomy. The CLI maps ShapeError/ValueError/ConfigError/IoError to
// exit code 1 and NumericError to exit code 2.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void warn(const std::string& msg) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[htk] warning: " << msg << "\n";
}

// SplitMix64. Used to derive independent per-item seeds from one master seed
// so results do not depend on generation order or thread count.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 0x51ed2701ULL));
}

// FNV-1a, used as the provenance fingerprint of canonicalized configs.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    for (int i = 15; i >= 0; --i) os << ((v >> (4 * i)) & 0xF);
    return os.str();
}

// Worker-thread cap, HTK_THREADS env var; default 1 keeps every code path
// sequential unless the operator opts in.
inline int max_threads() {
    const char* env = std::getenv("HTK_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// Chunked parallel loop over [0, n). Work items must be independent; callers
// that aggregate do so by index after the join, keeping results identical for
// any thread count.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    const int threads = max_threads();
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const int used = static_cast<int>(std::min<std::int64_t>(threads, n));
    std::int64_t chunk = (n + used - 1) / used;
    for (int t = 0; t < used; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn]() {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace htk
