"""Parametric demand families with closed-form distribution functions.

A family may depend on the order level ``a``: parameters move linearly from
``params_low`` at a <= 0 to ``params`` at a >= saturation_level and stay fixed
beyond it.  Without a saturation level the family is the same for every a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ParameterError

KINDS = {"uniform": ("lo", "hi"), "triangular": ("lo", "mode", "hi"),
         "truncexp": ("rate", "lo", "hi"), "deterministic": ("d",)}

QUAD_TOL = 1e-10


@dataclass(frozen=True)
class DemandFamily:
    kind: str
    params: tuple
    params_low: Optional[tuple] = None
    saturation_level: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown demand kind {self.kind!r}; choose from {sorted(KINDS)}")
        n = len(KINDS[self.kind])
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(self.params) != n:
            raise ParameterError(f"{self.kind} demand takes parameters {KINDS[self.kind]}")
        if self.params_low is not None:
            object.__setattr__(self, "params_low", tuple(float(p) for p in self.params_low))
            if len(self.params_low) != n:
                raise ParameterError("params_low must match params in length")
            if self.saturation_level is None or self.saturation_level <= 0:
                raise ParameterError("an a-dependent family needs a positive saturation_level")
        for p in (self.params, self.params_low):
            if p is not None:
                self._check(p)

    def _check(self, p: tuple) -> None:
        if self.kind == "uniform" and not (0 <= p[0] < p[1]):
            raise ParameterError("uniform demand needs 0 <= lo < hi")
        if self.kind == "triangular" and not (0 <= p[0] <= p[1] <= p[2] and p[0] < p[2]):
            raise ParameterError("triangular demand needs 0 <= lo <= mode <= hi, lo < hi")
        if self.kind == "truncexp" and not (p[0] > 0 and 0 <= p[1] < p[2]):
            raise ParameterError("truncexp demand needs rate > 0 and 0 <= lo < hi")
        if self.kind == "deterministic" and p[0] < 0:
            raise ParameterError("deterministic demand must be nonnegative")

    # -- parameters ---------------------------------------------------------
    def params_at(self, a: float) -> tuple:
        if self.params_low is None:
            return self.params
        t = min(1.0, max(0.0, float(a) / self.saturation_level))
        return tuple(lo + t * (hi - lo) for lo, hi in zip(self.params_low, self.params))

    def is_constant(self) -> bool:
        return self.params_low is None or self.params_low == self.params

    @property
    def has_density(self) -> bool:
        return self.kind != "deterministic"

    # -- distribution functions --------------------------------------------
    def support(self, a: float) -> tuple[float, float]:
        p = self.params_at(a)
        if self.kind == "deterministic":
            return p[0], p[0]
        if self.kind == "truncexp":
            return p[1], p[2]
        return p[0], p[-1]

    def cdf(self, y, a: float):
        """Right-continuous P(xi(a) <= y)."""
        y = np.asarray(y, dtype=float)
        p = self.params_at(a)
        if self.kind == "deterministic":
            return (y >= p[0]).astype(float)
        if self.kind == "uniform":
            return np.clip((y - p[0]) / (p[1] - p[0]), 0.0, 1.0)
        if self.kind == "truncexp":
            rate, lo, hi = p
            t = np.clip(y, lo, hi) - lo
            return np.expm1(-rate * t) / np.expm1(-rate * (hi - lo))
        lo, mode, hi = p
        yc = np.clip(y, lo, hi)
        width = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            left = (yc - lo) ** 2 / (width * (mode - lo))
            right = 1.0 - (hi - yc) ** 2 / (width * (hi - mode))
        return np.where(yc <= mode, np.where(mode > lo, left, 0.0), np.where(hi > mode, right, 1.0))

    def _pdf_scalar(self, y: float, p: tuple) -> float:
        if self.kind == "uniform":
            return 1.0 / (p[1] - p[0]) if p[0] <= y <= p[1] else 0.0
        if self.kind == "truncexp":
            rate, lo, hi = p
            if not lo <= y <= hi:
                return 0.0
            return rate * math.exp(-rate * (y - lo)) / -math.expm1(-rate * (hi - lo))
        lo, mode, hi = p
        if not lo <= y <= hi:
            return 0.0
        if y < mode:
            return 2.0 * (y - lo) / ((hi - lo) * (mode - lo))
        if y > mode:
            return 2.0 * (hi - y) / ((hi - lo) * (hi - mode))
        return 2.0 / (hi - lo)

    def pdf(self, y, a: float):
        if self.kind == "deterministic":
            raise ParameterError("deterministic demand has no density")
        p = self.params_at(a)
        y = np.asarray(y, dtype=float)
        return np.vectorize(lambda t: self._pdf_scalar(t, p), otypes=[float])(y)

    def ppf(self, u, a: float):
        return self.sample(u, a)

    def params_vec(self, a) -> list[np.ndarray]:
        a = np.asarray(a, dtype=float)
        if self.params_low is None:
            return [np.full(a.shape, p) for p in self.params]
        t = np.clip(a / self.saturation_level, 0.0, 1.0)
        return [lo + t * (hi - lo) for lo, hi in zip(self.params_low, self.params)]

    def sample(self, u, a) -> np.ndarray:
        """Inverse-CDF draws of xi(a[i]) from uniforms u[i], closed form per kind."""
        u = np.asarray(u, dtype=float)
        p = self.params_vec(np.broadcast_to(a, u.shape))
        if self.kind == "uniform":
            return p[0] + u * (p[1] - p[0])
        if self.kind == "deterministic":
            return p[0].copy()
        if self.kind == "truncexp":
            rate, lo, hi = p
            return lo - np.log1p(-u * -np.expm1(-rate * (hi - lo))) / rate
        lo, mode, hi = p
        width = hi - lo
        cut = np.divide(mode - lo, width)
        left = lo + np.sqrt(u * width * (mode - lo))
        right = hi - np.sqrt((1.0 - u) * width * (hi - mode))
        return np.where(u < cut, left, right)

    def mean(self, a: float) -> float:
        p = self.params_at(a)
        if self.kind in ("deterministic",):
            return p[0]
        if self.kind == "uniform":
            return 0.5 * (p[0] + p[1])
        if self.kind == "triangular":
            return (p[0] + p[1] + p[2]) / 3.0
        rate, lo, hi = p
        w = hi - lo
        return lo + 1.0 / rate - w * math.exp(-rate * w) / -math.expm1(-rate * w)

    def density_bound(self, a: float) -> float:
        """sup_y f_a(y); infinite for an atom."""
        if self.kind == "deterministic":
            return float("inf")
        p = self.params_at(a)
        if self.kind == "uniform":
            return 1.0 / (p[1] - p[0])
        if self.kind == "triangular":
            return 2.0 / (p[2] - p[0])
        return self._pdf_scalar(p[1], p)

    def expect(self, func: Callable[[float], float], a: float,
               lb: Optional[float] = None, ub: Optional[float] = None) -> float:
        """E[func(xi(a)) ; lb < xi <= ub] by adaptive quadrature on the density."""
        lo, hi = self.support(a)
        if self.kind == "deterministic":
            d = lo
            inside = (lb is None or d > lb) and (ub is None or d <= ub)
            return float(func(d)) if inside else 0.0
        left = lo if lb is None else max(lo, lb)
        right = hi if ub is None else min(hi, ub)
        if right <= left:
            return 0.0
        p = self.params_at(a)
        pts = None
        if self.kind == "triangular":
            mode = self.params_at(a)[1]
            pts = [mode] if left < mode < right else None
        val, _ = integrate.quad(lambda y: func(y) * self._pdf_scalar(y, p), left, right,
                                epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200, points=pts)
        return float(val)

    def tail_mean(self, level: float, a: float) -> float:
        """E[xi(a) 1(xi(a) > level)]."""
        return self.expect(lambda y: y, a, lb=level)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "params": list(self.params)}
        if self.params_low is not None:
            out["params_low"] = list(self.params_low)
        if self.saturation_level is not None:
            out["saturation_level"] = self.saturation_level
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DemandFamily":
        low = data.get("params_low")
        return cls(data["kind"], tuple(data["params"]), tuple(low) if low is not None else None,
                   data.get("saturation_level"))
