#pragma once

// Process-level tuning for the training loop.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nirvis {

/// Keeps freed activation buffers in the heap instead of returning them to the
/// kernel. Autodiff graphs allocate and drop many multi-megabyte buffers per
/// step; with the default glibc thresholds each of them is a fresh mmap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace nirvis
