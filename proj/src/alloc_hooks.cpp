// Global operator new/delete overrides that report every allocation to the
// byte counters in alloc_stats. Each block carries its size and the original
// malloc pointer just below the returned address, so unsized deletes can be
// accounted for exactly.

#include <cstdint>
#include <cstdlib>
#include <new>

#include "talk/alloc_stats.hpp"

namespace {

constexpr std::size_t kOverhead = 2 * sizeof(std::uintptr_t);

struct HooksMarker {
    HooksMarker() { talk::allocstats::mark_hooks_active(); }
};
HooksMarker g_marker;

void* alloc_impl(std::size_t size, std::size_t align) noexcept {
    if (align < alignof(std::max_align_t)) align = alignof(std::max_align_t);
    void* raw = std::malloc(size + align + kOverhead);
    if (!raw) return nullptr;
    const std::uintptr_t base = reinterpret_cast<std::uintptr_t>(raw) + kOverhead;
    const std::uintptr_t aligned = (base + align - 1) / align * align;
    reinterpret_cast<std::uintptr_t*>(aligned)[-1] = size;
    reinterpret_cast<std::uintptr_t*>(aligned)[-2] = reinterpret_cast<std::uintptr_t>(raw);
    talk::allocstats::note_alloc(size);
    return reinterpret_cast<void*>(aligned);
}

void free_impl(void* p) noexcept {
    if (!p) return;
    std::uintptr_t* q = static_cast<std::uintptr_t*>(p);
    talk::allocstats::note_free(q[-1]);
    std::free(reinterpret_cast<void*>(q[-2]));
}

void* alloc_or_throw(std::size_t size, std::size_t align) {
    void* p = alloc_impl(size, align);
    if (!p) throw std::bad_alloc();
    return p;
}

}  // namespace

void* operator new(std::size_t size) { return alloc_or_throw(size, alignof(std::max_align_t)); }
void* operator new[](std::size_t size) { return alloc_or_throw(size, alignof(std::max_align_t)); }
void* operator new(std::size_t size, std::align_val_t align) {
    return alloc_or_throw(size, static_cast<std::size_t>(align));
}
void* operator new[](std::size_t size, std::align_val_t align) {
    return alloc_or_throw(size, static_cast<std::size_t>(align));
}
void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
    return alloc_impl(size, alignof(std::max_align_t));
}
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
    return alloc_impl(size, alignof(std::max_align_t));
}

void operator delete(void* p) noexcept { free_impl(p); }
void operator delete[](void* p) noexcept { free_impl(p); }
void operator delete(void* p, std::size_t) noexcept { free_impl(p); }
void operator delete[](void* p, std::size_t) noexcept { free_impl(p); }
void operator delete(void* p, std::align_val_t) noexcept { free_impl(p); }
void operator delete[](void* p, std::align_val_t) noexcept { free_impl(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { free_impl(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { free_impl(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { free_impl(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { free_impl(p); }
