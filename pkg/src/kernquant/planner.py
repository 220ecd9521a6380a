"""Multiplication-count model, acceleration ratios and parameter planning.

All counts are exact integers and all ratios exact fractions; the MAC of a
dot product is charged as one multiplication.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .core import LayerShape
from .exceptions import InfeasibleSparsity, NonDivisibleChannels, NonOverlappingCurves


def _exact(x) -> Fraction:
    """Fraction from an int/float/str/Fraction, reading floats by their decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _subspaces(shape: LayerShape, Nprime: int) -> int:
    if Nprime < 1 or shape.N % Nprime:
        raise NonDivisibleChannels(f"N'={Nprime} does not divide N={shape.N}")
    return shape.N // Nprime


def cost_original(shape: LayerShape) -> int:
    """``m^2 p^2 M N`` multiplications for the direct layer."""
    return shape.m**2 * shape.p**2 * shape.M * shape.N


def cost_vq(shape: LayerShape, Nprime: int, K_vq: int) -> int:
    """``m^2 N K_vq``: dot products of every input sub-vector with every centroid."""
    _subspaces(shape, Nprime)
    return shape.m**2 * shape.N * K_vq


def cost_dl(shape: LayerShape, Nprime: int, K_dl: int, L_dl: int, alpha: int) -> int:
    """``m^2 (N L_dl + alpha S K_dl)``: atom dot products plus sparse combination."""
    S = _subspaces(shape, Nprime)
    return shape.m**2 * (shape.N * L_dl + alpha * S * K_dl)


@dataclass(frozen=True)
class CostReport:
    T_o: int
    T_vq: int
    T_dl: int

    def __post_init__(self):
        if min(self.T_o, self.T_vq, self.T_dl) <= 0:
            raise ValueError("multiplication counts must be positive")

    @property
    def rho_vq(self) -> Fraction:
        return Fraction(self.T_o, self.T_vq)

    @property
    def rho_dl(self) -> Fraction:
        return Fraction(self.T_o, self.T_dl)


@dataclass(frozen=True)
class AccelPlan:
    """Equal-budget VQ/DL configuration for one layer."""

    shape: LayerShape
    Nprime: int
    S: int
    rho_target: Fraction
    c: Fraction
    alpha: int
    K_vq: int
    K_dl: int
    L_dl: int
    costs: CostReport

    def to_dict(self) -> dict:
        """JSON-ready view; ratios are given both exactly and as floats."""
        c = self.costs
        return {
            "shape": asdict(self.shape),
            "Nprime": self.Nprime,
            "S": self.S,
            "rho_target": float(self.rho_target),
            "c": float(self.c),
            "alpha": self.alpha,
            "K_vq": self.K_vq,
            "K_dl": self.K_dl,
            "L_dl": self.L_dl,
            "T_o": c.T_o,
            "T_vq": c.T_vq,
            "T_dl": c.T_dl,
            "rho_vq": float(c.rho_vq),
            "rho_dl": float(c.rho_dl),
            "rho_vq_exact": str(c.rho_vq),
            "rho_dl_exact": str(c.rho_dl),
        }

    def table(self) -> str:
        rows = [
            ("layer (MxNxpxm)", str(self.shape)),
            ("N' / S", f"{self.Nprime} / {self.S}"),
            ("target rho", f"{float(self.rho_target):g}"),
            ("c / alpha", f"{float(self.c):g} / {self.alpha}"),
            ("K_vq", self.K_vq),
            ("K_dl", self.K_dl),
            ("L_dl", self.L_dl),
            ("T_o", self.costs.T_o),
            ("T_vq", self.costs.T_vq),
            ("T_dl", self.costs.T_dl),
            ("rho_vq", f"{float(self.costs.rho_vq):.4f}"),
            ("rho_dl", f"{float(self.costs.rho_dl):.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def plan(shape: LayerShape, Nprime: int, rho_target, c, alpha: int) -> AccelPlan:
    """Pick ``K_vq``, ``K_dl`` and ``L_dl`` for a target acceleration.

    ``K_vq = floor(p^2 M / rho)``, ``K_dl = floor(c K_vq)`` and
    ``L_dl = floor(K_vq (1 - alpha c / N'))``; flooring keeps both methods
    within the multiplication budget, so ``T_dl <= T_vq`` holds exactly.

    Raises
    ------
    InfeasibleSparsity
        If ``alpha * c >= N'`` or the budget leaves fewer than ``max(1, alpha)`` atoms.
    """
    S = _subspaces(shape, Nprime)
    rho = _exact(rho_target)
    c = _exact(c)
    if rho <= 1:
        raise ValueError(f"target acceleration must exceed 1, got {rho_target}")
    if c < 1:
        raise ValueError(f"c must be >= 1, got {c}")
    if int(alpha) != alpha or alpha < 0:
        raise ValueError(f"alpha must be a non-negative integer, got {alpha!r}")
    alpha = int(alpha)
    share = 1 - alpha * c / Nprime
    if share <= 0:
        raise InfeasibleSparsity(
            f"alpha*c = {float(alpha * c):g} >= N' = {Nprime}: no dictionary size fits the budget"
        )
    K_vq = max(1, math.floor(shape.n_subvectors / rho))
    K_dl = max(1, math.floor(c * K_vq))
    L_dl = math.floor(K_vq * share)
    if L_dl < max(1, alpha):
        raise InfeasibleSparsity(
            f"K_vq={K_vq} leaves room for L_dl={L_dl} atoms, fewer than max(1, alpha={alpha}); lower rho or alpha*c"
        )
    costs = CostReport(
        T_o=cost_original(shape),
        T_vq=cost_vq(shape, Nprime, K_vq),
        T_dl=cost_dl(shape, Nprime, K_dl, L_dl, alpha),
    )
    return AccelPlan(shape, Nprime, S, rho, c, alpha, K_vq, K_dl, L_dl, costs)


def _prepare_curve(points, name):
    pts = sorted((float(r), float(e)) for r, e in points)
    if len(pts) < 2:
        raise ValueError(f"{name} needs at least two points")
    rho = np.array([p[0] for p in pts])
    err = np.array([p[1] for p in pts])
    if np.any(rho <= 0):
        raise ValueError(f"{name} has non-positive acceleration values")
    if np.any(np.diff(err) <= 0):
        raise ValueError(f"{name} error must increase strictly with acceleration")
    return np.log(rho), err


def gain_at_equal_error(curve_vq, curve_dl):
    """Acceleration gain of DL over VQ at equal error.

    Each curve is a list of ``(rho, error)`` pairs.  ``log(rho)`` is linearly
    interpolated as a function of error on the union of both curves' error
    values inside their common range; no extrapolation is done.  Returns
    ``(error, gain_percent)`` pairs with ``gain = 100 (rho_dl / rho_vq - 1)``.
    """
    log_vq, err_vq = _prepare_curve(curve_vq, "curve_vq")
    log_dl, err_dl = _prepare_curve(curve_dl, "curve_dl")
    lo = max(err_vq[0], err_dl[0])
    hi = min(err_vq[-1], err_dl[-1])
    if lo > hi:
        raise NonOverlappingCurves(f"error ranges [{err_vq[0]}, {err_vq[-1]}] and [{err_dl[0]}, {err_dl[-1]}] do not overlap")
    grid = np.unique(np.concatenate([err_vq, err_dl]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    rho_vq = np.exp(np.interp(grid, err_vq, log_vq))
    rho_dl = np.exp(np.interp(grid, err_dl, log_dl))
    gain = 100.0 * (rho_dl / rho_vq - 1.0)
    return [(float(e), float(g)) for e, g in zip(grid, gain)]
