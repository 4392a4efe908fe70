#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace seka {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error { using Error::Error; };
struct NumericalFailure : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct InvalidPlan : Error { using Error::Error; };
struct InvalidSample : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct UnsupportedVersion : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

struct ParseError : Error {
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::size_t byte_offset;
};

struct SpanResolutionError : Error {
    SpanResolutionError(const std::string& what, std::size_t index)
        : Error(what + " (triplet " + std::to_string(index) + ")"), triplet_index(index) {}
    std::size_t triplet_index;
};

struct SchemaError : Error {
    SchemaError(const std::string& what, std::string path)
        : Error(what + " at " + path), json_path(std::move(path)) {}
    std::string json_path;
};

inline void warn(const std::string& msg) {
    std::cerr << "[seka] warning: " << msg << "\n";
}

/// Deterministic 64-bit generator; every random draw in the library comes
/// from one of these, keyed explicitly so results never depend on call order
/// across components.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
};

inline std::uint64_t mix64(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derives an independent substream seed from (seed, a, b).
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = mix64(seed + 0x9E3779B97F4A7C15ull * (a + 1));
    return mix64(s + 0x9E3779B97F4A7C15ull * (b + 1));
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Shortest decimal form with 17 significant digits; round-trips exactly
/// through strtod. Callers must reject non-finite values first.
inline std::string format_double17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline unsigned max_threads() {
    if (const char* env = std::getenv("SEKA_THREADS")) {
        long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
        return 1;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs f(0..n-1); cells must be independent so the result does not depend
/// on scheduling.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    std::size_t threads = std::min<std::size_t>(max_threads(), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = cursor.fetch_add(1);
                if (i >= n) return;
                f(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace seka
