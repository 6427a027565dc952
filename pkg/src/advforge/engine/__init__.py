import ctypes
import os


def _tune_allocator() -> None:
    """Keep multi-MB scratch buffers on the heap free-list instead of
    mmap/munmap per allocation; the page-fault churn otherwise dominates the
    conv hot loop.  Opt out with ADVFORGE_NO_MALLOC_TUNING=1."""
    if os.environ.get("ADVFORGE_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL(None)
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(128 * 1024 * 1024))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(128 * 1024 * 1024))  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()

from .kernels import BACKEND
from .tensor import ShapeMismatch, Tape, Tensor, active_tape, backward, frozen, record
from . import ops

__all__ = [
    "BACKEND",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "frozen",
    "record",
    "ops",
]
