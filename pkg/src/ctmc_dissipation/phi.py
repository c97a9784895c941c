"""Convex entropy generators ``Phi`` with ``Phi(1) = 0``.

Each preset carries closed forms for ``Phi``, ``phi = Phi'``, ``Phi''`` and
``Phi'''`` so no quantity downstream needs numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ChainError


@dataclass(frozen=True)
class PhiFunction:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second: Callable[[np.ndarray], np.ndarray]
    third: Callable[[np.ndarray], np.ndarray]
    # limit of Phi at 0+, used for boundary probability vectors
    value_at_zero: float = np.inf

    def __call__(self, x):
        return self.value(x)

    def __repr__(self) -> str:
        return f"PhiFunction({self.name!r})"


def _xlogx_value(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


XLOGX = PhiFunction(
    "xlogx",
    _xlogx_value,
    lambda x: 1.0 + np.log(x),
    lambda x: 1.0 / np.asarray(x, dtype=float),
    lambda x: -1.0 / np.asarray(x, dtype=float) ** 2,
    value_at_zero=0.0,
)

QUADRATIC = PhiFunction(
    "quadratic",
    lambda x: np.asarray(x, dtype=float) ** 2 - 1.0,
    lambda x: 2.0 * np.asarray(x, dtype=float),
    lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
    lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    value_at_zero=-1.0,
)


def renyi(m: float) -> PhiFunction:
    """``Phi(x) = (x**m - 1) / (m - 1)`` for ``m > 1``."""
    m = float(m)
    if not m > 1.0:
        raise ChainError(f"renyi order must exceed 1, got {m}")
    c = 1.0 / (m - 1.0)
    return PhiFunction(
        f"renyi:{m:g}",
        lambda x: c * (np.asarray(x, dtype=float) ** m - 1.0),
        lambda x: c * m * np.asarray(x, dtype=float) ** (m - 1.0),
        lambda x: m * np.asarray(x, dtype=float) ** (m - 2.0),
        lambda x: m * (m - 2.0) * np.asarray(x, dtype=float) ** (m - 3.0),
        value_at_zero=-c,
    )


PRESETS = ("xlogx", "quadratic", "renyi:2", "renyi:3")


def parse_phi(text: str | PhiFunction) -> PhiFunction:
    """Parse ``xlogx`` | ``quadratic`` | ``renyi:<m>``; ``renyi:1`` is the ``xlogx`` limit."""
    if isinstance(text, PhiFunction):
        return text
    s = text.strip().lower()
    if s in ("xlogx", "kl"):
        return XLOGX
    if s in ("quadratic", "variance"):
        return QUADRATIC
    if s.startswith("renyi:"):
        try:
            m = float(s.split(":", 1)[1])
        except ValueError:
            raise ChainError(f"bad renyi order in {text!r}") from None
        if m == 1.0:
            return XLOGX
        return renyi(m)
    raise ChainError(f"unknown phi preset {text!r}; expected xlogx, quadratic or renyi:<m>")
