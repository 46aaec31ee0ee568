"""Keep large numpy temporaries heap-resident on glibc systems.

numpy hands big buffers straight to mmap/munmap, so every large temporary
pays page-fault costs on first touch. Raising the malloc mmap/trim
thresholds keeps freed buffers cached on the heap, which speeds the batched
FFT/GEMM hot loops several-fold. No semantic effect; silently skipped where
mallopt is unavailable.
"""

import ctypes

M_TRIM_THRESHOLD = -1
M_MMAP_THRESHOLD = -3
_THRESHOLD_BYTES = 1 << 30


def tune_allocator() -> None:
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(M_MMAP_THRESHOLD, _THRESHOLD_BYTES)
        libc.mallopt(M_TRIM_THRESHOLD, _THRESHOLD_BYTES)
    except Exception:
        pass
