// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

// Global allocation at SIMD-packet alignment. Eigen peels loop heads based
// on the runtime alignment of mapped buffers; with plain 16-byte malloc the
// peel offset (and therefore floating-point summation order) depends on
// where the heap happens to place each std::vector, which breaks bit-for-bit
// reproducibility of repeated runs inside one process. Fixing every
// allocation to 64 bytes pins the peel offset to zero.

#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t kAlign = 64;

void* aligned_new(std::size_t size) {
  if (size == 0) size = 1;
  const std::size_t rounded = (size + kAlign - 1) / kAlign * kAlign;
  return std::aligned_alloc(kAlign, rounded);
}

}  // namespace

void* operator new(std::size_t size) {
  if (void* p = aligned_new(size)) return p;
  throw std::bad_alloc();
}

void* operator new[](std::size_t size) {
  if (void* p = aligned_new(size)) return p;
  throw std::bad_alloc();
}

void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
  return aligned_new(size);
}

void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
  return aligned_new(size);
}

void* operator new(std::size_t size, std::align_val_t align) {
  const auto want = std::max(static_cast<std::size_t>(align), kAlign);
  const std::size_t rounded = (size + want - 1) / want * want;
  if (void* p = std::aligned_alloc(want, rounded)) return p;
  throw std::bad_alloc();
}

void* operator new[](std::size_t size, std::align_val_t align) {
  return operator new(size, align);
}

void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
