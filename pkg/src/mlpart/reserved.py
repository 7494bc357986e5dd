"""Over-committed output buffers.

A ``ReservedBuffer`` maps an anonymous region sized by an upper bound. The
kernel hands out physical pages only when they are first written, so the
resident cost is the committed prefix plus at most one partial page.
"""

from __future__ import annotations

import mmap

import numpy as np

_MAP_NORESERVE = getattr(mmap, "MAP_NORESERVE", 0x4000)


class CapacityExceeded(RuntimeError):
    """Written past the reserved upper bound (the bound computation is wrong)."""


class ReservedBuffer:
    def __init__(self, capacity: int, dtype=np.uint8):
        self.dtype = np.dtype(dtype)
        self.capacity = int(capacity)
        nbytes = max(self.capacity * self.dtype.itemsize, 1)
        try:
            self._map = mmap.mmap(-1, nbytes, flags=mmap.MAP_PRIVATE | mmap.MAP_ANONYMOUS | _MAP_NORESERVE)
            self.array = np.frombuffer(self._map, dtype=self.dtype, count=self.capacity)
        except (OSError, ValueError, TypeError):
            # portable fallback: plain allocation of the upper bound
            self._map = None
            self.array = np.zeros(self.capacity, dtype=self.dtype)
        self.committed = 0

    @property
    def capacity_upper_bound(self) -> int:
        return self.capacity

    @property
    def committed_length(self) -> int:
        return self.committed

    def commit(self, length: int) -> None:
        if length > self.capacity:
            raise CapacityExceeded(f"committed {length} entries, reserved {self.capacity}")
        self.committed = int(length)

    def view(self) -> np.ndarray:
        """The committed prefix (never anything past it)."""
        return self.array[: self.committed]
