"""Fixed-stride window segmentation with annotation-rate labeling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DEFAULT_LENGTH = 256
DEFAULT_STRIDE = 64
DEFAULT_GAMMA = 0.5


@dataclass(frozen=True)
class WindowSpec:
    length: int = DEFAULT_LENGTH
    stride: int = DEFAULT_STRIDE
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 1 <= self.stride <= self.length:
            raise ConfigurationError(f"need 1 <= stride <= length, got S={self.stride}, L={self.length}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class Window:
    index: int
    start: int
    data: np.ndarray
    positive_fraction: float
    label: int


def window_starts(n: int, spec: WindowSpec, t0: int = 0) -> list[int]:
    starts = []
    t = t0
    while t + spec.length <= n:
        starts.append(t)
        t += spec.stride
    return starts


def segment_windows(stream, annotations, spec: WindowSpec = WindowSpec(), t0: int = 0) -> list[Window]:
    """Cut ``stream`` into windows of ``spec.length`` every ``spec.stride`` samples.

    A window is positive when the fraction of positive annotations inside it
    is strictly greater than ``gamma``.
    """
    x = np.asarray(stream)
    ann = np.asarray(annotations, dtype=float)
    if len(ann) != len(x):
        raise ConfigurationError("stream and annotations must have equal length")
    if len(x) - t0 < spec.length:
        warnings.warn(f"stream of {len(x)} samples is shorter than window length {spec.length}",
                      stacklevel=2)
        return []
    out = []
    for k, start in enumerate(window_starts(len(x), spec, t0)):
        frac = float(np.mean(ann[start:start + spec.length] > 0))
        out.append(Window(k, start, x[start:start + spec.length], frac, int(frac > spec.gamma)))
    return out
