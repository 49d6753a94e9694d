#include "talk/alloc_stats.hpp"

#include <atomic>

namespace talk::allocstats {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<bool> g_active{false};
}  // namespace

void note_alloc(std::size_t bytes) noexcept {
    const std::size_t cur = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t pk = g_peak.load(std::memory_order_relaxed);
    while (cur > pk && !g_peak.compare_exchange_weak(pk, cur, std::memory_order_relaxed)) {
    }
}

void note_free(std::size_t bytes) noexcept {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

void mark_hooks_active() noexcept { g_active.store(true, std::memory_order_relaxed); }

bool hooks_active() noexcept { return g_active.load(std::memory_order_relaxed); }

std::size_t current() noexcept { return g_current.load(std::memory_order_relaxed); }

std::size_t peak() noexcept { return g_peak.load(std::memory_order_relaxed); }

void reset_peak() noexcept { g_peak.store(g_current.load(std::memory_order_relaxed)); }

}  // namespace talk::allocstats
