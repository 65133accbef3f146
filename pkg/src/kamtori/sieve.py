"""Diophantine sieves over actions and step sizes, and non-degeneracy diagnostics.

Every cell of a grid is tested against

    |exp(i<k, t omega>) - 1| >= t gamma / |k|^tau,   0 < |k|_1 <= Kmax,

by brute force.  Excluded measure is estimated by counting cells.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, FitError, ParamError
from .homological import wavevectors

__all__ = [
    "SieveResult",
    "sieve_actions",
    "sieve_steps",
    "measure_vs_gamma",
    "ruessmann_index",
    "kolmogorov_bounds",
]


@dataclass
class SieveResult:
    kind: str
    coords: np.ndarray
    admissible: np.ndarray
    margin: np.ndarray
    worst_k: np.ndarray
    worst_l: np.ndarray
    cell_volume: float
    params: dict
    extra: dict = field(default_factory=dict)

    @property
    def excluded_fraction(self) -> float:
        return float(1.0 - self.admissible.mean()) if self.admissible.size else 0.0

    @property
    def excluded_measure(self) -> float:
        return float((~self.admissible).sum() * self.cell_volume)

    def ledger(self) -> dict:
        """Excluded cell counts per resonance ``(k, l)``, keyed ``"k|l"``."""
        out: dict[str, int] = {}
        for k, l in zip(self.worst_k[~self.admissible], self.worst_l[~self.admissible]):
            key = f"{','.join(str(int(x)) for x in k)}|{int(l)}"
            out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "cells": int(self.admissible.size),
            "excluded_fraction": self.excluded_fraction,
            "excluded_measure": self.excluded_measure,
            "params": self.params,
            "resonances": self.ledger(),
            **self.extra,
        }

    def to_csv(self, path) -> None:
        n = self.coords.shape[1]
        names = ["t"] if self.kind == "steps" else [f"xi{j + 1}" for j in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["admissible"] + [f"k{j + 1}" for j in range(self.worst_k.shape[1])]
                       + ["l", "margin"])
            for c, a, k, l, m in zip(self.coords, self.admissible, self.worst_k, self.worst_l, self.margin):
                w.writerow([repr(float(x)) for x in c] + [int(a)] + [int(x) for x in k]
                           + [int(l), repr(float(m))])


def _default_kmax(n: int) -> int:
    return 100 if n == 1 else 30


def _cell_centers(domain: np.ndarray, cells: int):
    n = domain.shape[0]
    axes = [lo + (hi - lo) * (np.arange(cells) + 0.5) / cells for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1).reshape(-1, n)
    volume = float(np.prod((domain[:, 1] - domain[:, 0]) / cells))
    return pts, volume


def _sieve_phases(phases, norms, scale_floor, tau):
    """Per-row minimum margin over wavevectors.

    ``phases`` has shape (cells, kcount) and holds ``<k, t omega>``;
    ``scale_floor`` holds ``t*gamma`` per cell.
    """
    div = 2.0 * np.abs(np.sin(0.5 * phases))
    floor = scale_floor[:, None] / norms[None, :] ** tau
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(floor > 0, div / floor, np.where(div > 0, np.inf, 0.0))
    idx = np.argmin(ratio, axis=1)
    rows = np.arange(phases.shape[0])
    margin = ratio[rows, idx]
    # with gamma = 0 an exact resonance gets ratio 0 and is the only exclusion
    ok = margin >= 1.0
    l = np.rint(phases[rows, idx] / (2 * np.pi)).astype(int)
    return ok, margin, idx, l


def _chunks(count, width, budget=2 ** 23):
    step = max(1, budget // max(width, 1))
    for s in range(0, count, step):
        yield slice(s, min(count, s + step))


def sieve_actions(model, t: float, gamma: float, tau: float, Kmax: int | None = None,
                  cells: int | None = None, omega=None, domain=None) -> SieveResult:
    """Admissible actions on a cell grid of ``domain`` (default: the model's ``V``).

    ``omega`` is the frequency map to sieve (default: the unperturbed one).
    """
    n = model.n
    domain = np.asarray(model.action_domain if domain is None else domain, dtype=float).reshape(n, 2)
    Kmax = _default_kmax(n) if Kmax is None else int(Kmax)
    cells = (10 ** 4 if n == 1 else 100) if cells is None else int(cells)
    minimum = 10 ** 3 if n == 1 else 10 ** 2
    if cells < minimum:
        raise ParamError(f"at least {minimum} cells per action dimension are required, got {cells}")
    if gamma < 0 or t <= 0:
        raise ParamError("gamma must be non-negative and t positive")
    omega = model.h0_grad if omega is None else omega
    pts, volume = _cell_centers(domain, cells)
    ks = wavevectors(n, Kmax, half=True)
    norms = np.abs(ks).sum(axis=1).astype(float)
    w = omega(pts)
    ok = np.empty(pts.shape[0], dtype=bool)
    margin = np.empty(pts.shape[0])
    worst = np.empty((pts.shape[0], n), dtype=int)
    ls = np.empty(pts.shape[0], dtype=int)
    for sl in _chunks(pts.shape[0], ks.shape[0]):
        phases = t * (w[sl] @ ks.T)
        o, m, idx, l = _sieve_phases(phases, norms, np.full(phases.shape[0], t * gamma), tau)
        ok[sl], margin[sl], worst[sl], ls[sl] = o, m, ks[idx], l
    params = {"t": t, "gamma": gamma, "tau": tau, "Kmax": Kmax, "cells": cells,
              "domain": domain.tolist(), "model": model.name}
    return SieveResult("actions", pts, ok, margin, worst, ls, volume, params)


def sieve_steps(model, xi, gamma: float, tau: float, delta: float = 1.0, Kmax: int | None = None,
                resolution: int = 10 ** 4, fractions=(1, 2, 5, 10, 20, 50, 100)) -> SieveResult:
    """Admissible step sizes ``t in (0, delta]`` for a fixed action.

    The grid is ``t_i = delta * i / resolution``; the density of admissible
    steps on ``(0, delta / f]`` is reported for each ``f`` in ``fractions``.
    """
    if not 0 < delta <= 1:
        raise ParamError(f"delta must lie in (0, 1], got {delta}")
    if resolution < 10 ** 4:
        raise ParamError(f"resolution must be at least 10**4, got {resolution}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n = xi.size
    Kmax = _default_kmax(n) if Kmax is None else int(Kmax)
    omega = np.atleast_1d(model.h0_grad(xi))
    ts = delta * np.arange(1, resolution + 1) / resolution
    ks = wavevectors(n, Kmax, half=True)
    norms = np.abs(ks).sum(axis=1).astype(float)
    kw = ks @ omega
    ok = np.empty(ts.size, dtype=bool)
    margin = np.empty(ts.size)
    worst = np.empty((ts.size, n), dtype=int)
    ls = np.empty(ts.size, dtype=int)
    for sl in _chunks(ts.size, ks.shape[0]):
        phases = ts[sl, None] * kw[None, :]
        o, m, idx, l = _sieve_phases(phases, norms, ts[sl] * gamma, tau)
        ok[sl], margin[sl], worst[sl], ls[sl] = o, m, ks[idx], l
    density = []
    for f in fractions:
        upto = delta / f
        sel = ts <= upto + 1e-15
        density.append({"delta_prime": upto, "points": int(sel.sum()),
                        "density": float(ok[sel].mean()) if sel.any() else float("nan")})
    trend_ok = density[-1]["density"] >= density[0]["density"] - 0.02
    params = {"xi": xi.tolist(), "gamma": gamma, "tau": tau, "Kmax": Kmax, "delta": delta,
              "resolution": resolution, "model": model.name}
    return SieveResult("steps", ts.reshape(-1, 1), ok, margin, worst, ls, delta / resolution, params,
                       {"density": density, "trend_ok": bool(trend_ok)})


def measure_vs_gamma(model, t: float, tau: float, gammas, cells: int | None = None,
                     Kmax: int | None = None, domain=None) -> dict:
    """Excluded measure as a function of ``gamma`` and its log-log slope."""
    from .verify import order_fit
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ParamError("the gamma list is empty")
    rows = []
    for g in gammas:
        res = sieve_actions(model, t, g, tau, Kmax, cells, domain=domain)
        rows.append({"gamma": g, "excluded_fraction": res.excluded_fraction,
                     "excluded_measure": res.excluded_measure})
    positive = [r for r in rows if r["excluded_measure"] > 0]
    if not positive:
        raise FitError("excluded measure is zero for every gamma; refine the grid")
    slope, intercept, r2 = order_fit([r["gamma"] for r in positive], [r["excluded_measure"] for r in positive])
    span = np.log10(max(gammas) / min(gammas)) if min(gammas) > 0 else float("inf")
    return {"t": t, "tau": tau, "rows": rows, "slope": slope, "intercept": intercept, "r2": r2,
            "decades": float(span), "fitted_points": len(positive)}


_STENCILS = {
    1: (np.array([1, -8, 0, 8, -1]) / 12.0, 1),
    2: (np.array([-1, 16, -30, 16, -1]) / 12.0, 2),
    3: (np.array([-1, 2, 0, -2, 1]) / 2.0, 3),
    4: (np.array([1, -4, 6, -4, 1]) / 1.0, 4),
}


def _directions(n: int) -> np.ndarray:
    dirs = list(np.eye(n))
    for i, j in itertools.combinations(range(n), 2):
        for sgn in (1.0, -1.0):
            u = np.zeros(n)
            u[i], u[j] = 1.0, sgn
            dirs.append(u / np.sqrt(2.0))
    return np.array(dirs)


def ruessmann_index(model, cells: int | None = None, nbar_max: int = 4, kmax: int = 5,
                    ks=None, threshold: float = 1e-6) -> tuple[int, float]:
    """Smallest ``nbar`` with ``min_xi min_k max_{v<=nbar} |D^v <k, omega(xi)>| / |k| > threshold``.

    Derivatives are 5-point central differences along coordinate (and, for
    ``n > 1``, diagonal) directions with step equal to the grid spacing.
    Returns ``(nbar, beta)`` with ``beta`` the attained min-max value.
    """
    if not 0 <= nbar_max <= 4:
        raise ParamError("nbar_max must lie in 0..4")
    n = model.n
    cells = (401 if n == 1 else 41) if cells is None else int(cells)
    dom = model.action_domain
    axes = [np.linspace(lo, hi, cells) for lo, hi in dom]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    h = float(np.min((dom[:, 1] - dom[:, 0]) / (cells - 1)))
    ks = wavevectors(n, kmax, half=True) if ks is None else np.atleast_2d(np.asarray(ks, dtype=float))
    knorm = np.abs(ks).sum(axis=1)
    best = np.abs(model.h0_grad(pts) @ ks.T) / knorm  # order 0, shape (cells, kcount)
    dirs = _directions(n)
    for order in range(0, nbar_max + 1):
        if order > 0:
            weights, power = _STENCILS[order]
            for u in dirs:
                acc = np.zeros_like(best)
                for j, wgt in zip(range(-2, 3), weights):
                    if wgt:
                        acc += wgt * (model.h0_grad(pts + j * h * u) @ ks.T)
                best = np.maximum(best, np.abs(acc) / h ** power / knorm)
        beta = float(best.min())
        if beta > threshold:
            return order, beta
    raise DegenerateError(f"frequency map is degenerate up to order {nbar_max} (min-max {beta:.3e})")


def kolmogorov_bounds(model, cells: int | None = None, local=None) -> tuple[float, float]:
    """Extreme singular values of ``D omega`` over a grid of ``V`` (or of a box ``(center, radius)``)."""
    n = model.n
    cells = (201 if n == 1 else 41) if cells is None else int(cells)
    if local is None:
        dom = model.action_domain
    else:
        center, radius = local
        center = np.atleast_1d(np.asarray(center, dtype=float))
        dom = np.stack([center - radius, center + radius], axis=-1)
    axes = [np.linspace(lo, hi, cells) for lo, hi in dom]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    sv = np.linalg.svd(model.h0_hess(pts).reshape(-1, n, n), compute_uv=False)
    theta1, theta2 = float(sv.min()), float(sv.max())
    if theta1 < 1e-10:
        raise DegenerateError(f"Kolmogorov lower bound {theta1:.3e} vanishes on the grid")
    return theta1, theta2
