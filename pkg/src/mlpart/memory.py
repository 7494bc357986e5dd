"""Instrumented allocation counters.

Peak memory is reported from explicit accounting of the auxiliary arrays
each phase allocates, not from OS sampling, so numbers are reproducible.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MemoryTracker:
    live: int = 0
    peak: int = 0
    phase_peaks: dict[str, int] = field(default_factory=dict)
    _sizes: dict[int, tuple[str, int]] = field(default_factory=dict)
    _active: list[str] = field(default_factory=list)

    def zeros(self, tag: str, shape, dtype) -> np.ndarray:
        return self.track(tag, np.zeros(shape, dtype=dtype))

    def empty(self, tag: str, shape, dtype) -> np.ndarray:
        return self.track(tag, np.empty(shape, dtype=dtype))

    def track(self, tag: str, arr: np.ndarray, nbytes: int | None = None) -> np.ndarray:
        size = arr.nbytes if nbytes is None else nbytes
        self._sizes[id(arr)] = (tag, size)
        self._bump(size)
        return arr

    def add_bytes(self, tag: str, nbytes: int) -> object:
        """Account for memory not backed by a single array; returns a handle."""
        handle = object()
        self._sizes[id(handle)] = (tag, nbytes)
        self._bump(nbytes)
        return handle

    def release(self, *objs) -> None:
        for obj in objs:
            entry = self._sizes.pop(id(obj), None)
            if entry is not None:
                self.live -= entry[1]

    def _bump(self, size: int) -> None:
        self.live += size
        if self.live > self.peak:
            self.peak = self.live
        for name in self._active:
            if self.live > self.phase_peaks.get(name, 0):
                self.phase_peaks[name] = self.live

    @contextlib.contextmanager
    def phase(self, name: str):
        self._active.append(name)
        self.phase_peaks[name] = max(self.phase_peaks.get(name, 0), self.live)
        try:
            yield self
        finally:
            self._active.remove(name)

    def breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for tag, size in self._sizes.values():
            out[tag] = out.get(tag, 0) + size
        return out


class _NullTracker(MemoryTracker):
    """Tracker that allocates but records nothing."""

    def track(self, tag, arr, nbytes=None):
        return arr

    def add_bytes(self, tag, nbytes):
        return None

    def release(self, *objs):
        pass

    @contextlib.contextmanager
    def phase(self, name):
        yield self


NULL_TRACKER = _NullTracker()
