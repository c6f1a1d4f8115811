"""Process-level allocator tuning for the training hot path.

The reverse-mode tape keeps a few hundred multi-megabyte temporaries alive
per loss evaluation.  With glibc defaults those cross the mmap threshold, so
every evaluation pays mmap/munmap plus page-zeroing costs (measured ~5x
slowdown).  Raising the mmap and trim thresholds keeps the buffers on the
heap for reuse at the cost of retained RSS.

Disabled by setting XVAPINN_NO_MALLOC_TUNE; a missing/foreign libc makes
this a no-op.
"""

from __future__ import annotations

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_applied = False


def tune_allocator():
    global _applied
    if _applied or os.environ.get("XVAPINN_NO_MALLOC_TUNE"):
        return
    _applied = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass
