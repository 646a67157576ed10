#include "deepchoice/common.hpp"

#include <algorithm>

#include <atomic>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

namespace deepchoice {

double correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("correlation: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    // Exactly constant inputs can leave rounding residue in the centered sums.
    const auto [a0, a1] = std::minmax_element(a.begin(), a.end());
    const auto [b0, b1] = std::minmax_element(b.begin(), b.end());
    if (*a0 == *a1 || *b0 == *b1) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double correlation(const Vector& a, const Vector& b) {
    return correlation(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                       std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

double twoSidedNormalPValue(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

namespace {

std::mutex& warningMutex() {
    static std::mutex m;
    return m;
}

WarningHandler& currentHandler() {
    static WarningHandler h = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return h;
}

}  // namespace

void warn(const std::string& message) {
    std::lock_guard lock(warningMutex());
    if (currentHandler()) currentHandler()(message);
}

WarningHandler setWarningHandler(WarningHandler handler) {
    std::lock_guard lock(warningMutex());
    WarningHandler old = std::move(currentHandler());
    currentHandler() = std::move(handler);
    return old;
}

std::size_t resolveThreads(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void parallelFor(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(resolveThreads(threads), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::uint64_t mixSeed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t combineSeeds(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6A09E667F3BCC908ULL;
    for (auto p : parts) h = mixSeed(h ^ mixSeed(p));
    return h;
}

}  // namespace deepchoice
