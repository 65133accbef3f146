"""Small divisors and the Fourier solution of the discrete homological equation.

For a map whose unperturbed part is the rotation ``theta -> theta + t*omega`` the
generator ``psi`` of the next near-identity change of variables solves

    psi(I, theta + t*omega) - psi(I, theta) + T_K W~(I, theta) = 0,

which in Fourier space reads ``psi_k = -W_k / (exp(i<k, t omega>) - 1)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ParamError, SmallDivisorViolation, ZeroWavevector
from .fourier import FourierTaylor, derivative, sup_norm_estimate

__all__ = [
    "DiophantineParams",
    "DiophantineCheck",
    "small_divisor",
    "diophantine_floor",
    "check_diophantine",
    "wavevectors",
    "solve_psi",
    "psi_norm_report",
]


@dataclass(frozen=True)
class DiophantineParams:
    """Constants of the time-discrete Diophantine condition.

    ``n`` and ``nbar`` are optional; when given, the lower bound on ``tau``
    for the corresponding mode (Kolmogorov or Ruessmann) is enforced.
    """

    gamma: float
    tau: float
    K: int
    t: float
    n: int | None = None
    nbar: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ParamError(f"gamma must be positive, got {self.gamma}")
        if not self.t > 0:
            raise ParamError(f"t must be positive, got {self.t}")
        if self.K < 1:
            raise ParamError(f"K must be at least 1, got {self.K}")
        if self.n is not None:
            need = (self.n + 2) * ((self.nbar or 0) + 1)
            if self.tau < need:
                raise ParamError(f"tau={self.tau} below the admissible bound {need}")

    def with_gamma(self, gamma: float) -> "DiophantineParams":
        return DiophantineParams(gamma, self.tau, self.K, self.t, self.n, self.nbar)


@dataclass(frozen=True)
class DiophantineCheck:
    passed: bool
    worst_k: tuple[int, ...]
    margin: float

    def __bool__(self):
        return self.passed


def small_divisor(k, t_omega) -> float:
    """``|exp(i<k, t omega>) - 1|`` evaluated as ``2|sin(<k, t omega>/2)|``."""
    k = np.atleast_1d(np.asarray(k))
    if not np.any(k):
        raise ZeroWavevector("the divisor is undefined for k = 0")
    phase = float(np.dot(k, np.atleast_1d(t_omega)))
    return 2.0 * abs(np.sin(0.5 * phase))


def diophantine_floor(k, params: DiophantineParams) -> float:
    norm = int(np.abs(np.asarray(k)).sum())
    return params.t * params.gamma / norm ** params.tau


def wavevectors(n: int, K: int, half: bool = False) -> np.ndarray:
    """All nonzero integer vectors with ``|k|_1 <= K``; ``half`` keeps one of each ``+/-k``."""
    ks = [k for k in itertools.product(range(-K, K + 1), repeat=n)
          if 0 < sum(abs(x) for x in k) <= K]
    if half:
        ks = [k for k in ks if next(x for x in k if x) > 0]
    return np.array(ks, dtype=int).reshape(-1, n)


def check_diophantine(t_omega, params: DiophantineParams, Kmax: int) -> DiophantineCheck:
    """Check the Diophantine inequality for all ``0 < |k|_1 <= Kmax``.

    The margin is ``small_divisor / floor``; the check passes when the smallest
    margin is at least one.
    """
    if Kmax < 1:
        raise ParamError("Kmax must be at least 1")
    t_omega = np.atleast_1d(np.asarray(t_omega, dtype=float))
    ks = wavevectors(t_omega.size, Kmax, half=True)
    div = 2.0 * np.abs(np.sin(0.5 * (ks @ t_omega)))
    floor = params.t * params.gamma / np.abs(ks).sum(axis=1).astype(float) ** params.tau
    ratio = div / floor
    i = int(np.argmin(ratio))
    margin = float(ratio[i])
    return DiophantineCheck(margin >= 1.0, tuple(int(x) for x in ks[i]), margin)


def solve_psi(Wstar: FourierTaylor, t_omega, params: DiophantineParams) -> FourierTaylor:
    """Generator ``psi`` with ``psi_k = -W_k / (exp(i<k, t omega>) - 1)`` for ``0 < |k| <= K``.

    The mean of ``Wstar`` is ignored.  Every retained mode must clear the
    floor ``t*gamma/|k|^tau``; otherwise SmallDivisorViolation is raised.
    """
    t_omega = np.atleast_1d(np.asarray(t_omega, dtype=float))
    modes = Wstar.modes
    norms = np.abs(modes).sum(axis=1)
    keep = (norms > 0) & (norms <= params.K)
    modes = modes[keep]
    coeffs = Wstar.coeffs[keep]
    K = min(params.K, Wstar.K)
    if modes.shape[0] == 0:
        return FourierTaylor(Wstar.n, Wstar.xi_star, K, Wstar.d, r=Wstar.r, s=Wstar.s)
    half = 0.5 * (modes @ t_omega)
    div = 2.0 * np.abs(np.sin(half))
    floor = params.t * params.gamma / norms[keep].astype(float) ** params.tau
    bad = np.flatnonzero(div < floor)
    if bad.size:
        i = bad[np.argmin(div[bad] / floor[bad])]
        raise SmallDivisorViolation(modes[i], float(div[i]), float(floor[i]))
    # exp(ix) - 1 = 2i sin(x/2) exp(ix/2), accurate near resonance
    denom = 2j * np.sin(half) * np.exp(1j * half)
    return FourierTaylor(Wstar.n, Wstar.xi_star, K, Wstar.d, modes,
                         -coeffs / denom[:, None], Wstar.r, Wstar.s)


def psi_norm_report(psi: FourierTaylor, Wstar: FourierTaylor, params: DiophantineParams,
                    sigma: float, C: float | None = None) -> dict:
    """Measured derivative norms of ``psi`` against the shape ``|dW|_s / (t gamma sigma^(tau+n))``.

    Norms are weighted coefficient sums on the strip narrowed by ``sigma``
    (for ``psi``) and on the full strip (for ``Wstar``).  The ratio
    ``measured / shape`` is the empirical constant of the run; when ``C`` is
    supplied the record also states whether ``measured <= C * shape``.
    """
    if not sigma > 0:
        raise ParamError("sigma must be positive")
    n = psi.n
    s = Wstar.s
    narrow = max(s - sigma, 0.0)
    scale = params.t * params.gamma * sigma ** (params.tau + n)
    out = {"sigma": sigma, "strip": s, "narrowed_strip": narrow}
    for label, kind in (("d1", "action"), ("d2", "angle")):
        measured = 0.0
        source = 0.0
        for j in range(n):
            if kind == "action" and psi.d == 0:
                continue
            measured = max(measured, sup_norm_estimate(derivative(psi, kind, j), narrow))
            source = max(source, sup_norm_estimate(derivative(Wstar, kind, j), s))
        shape = source / scale
        ratio = measured / shape if shape > 0 else 0.0
        out[label] = {"measured": measured, "bound_shape": shape, "ratio": ratio}
        if C is not None:
            out[label]["within"] = bool(measured <= C * shape)
    return out
