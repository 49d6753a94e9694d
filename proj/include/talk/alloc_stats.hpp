#pragma once

#include <cstddef>

// Byte counters fed by the instrumented global allocator (alloc_hooks.cpp).
// Binaries that do not link the hooks see all-zero counters.
namespace talk::allocstats {

void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;
void mark_hooks_active() noexcept;

bool hooks_active() noexcept;
std::size_t current() noexcept;
std::size_t peak() noexcept;
void reset_peak() noexcept;  // peak := current

}  // namespace talk::allocstats
