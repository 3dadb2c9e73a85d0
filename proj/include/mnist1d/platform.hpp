#pragma once
// Process-level tuning shared by the CLI and test drivers.

#include <cstddef>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mnist1d {

/// Tensor buffers are freed and reallocated every step. With glibc's default
/// thresholds each large buffer is a fresh mmap whose pages fault in zeroed;
/// keeping them on the heap roughly halves system time for the conv models.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace mnist1d
