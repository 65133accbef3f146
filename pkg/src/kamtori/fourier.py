"""Fourier-Taylor series on an annulus.

A :class:`FourierTaylor` holds a real function

    f(I, theta) = sum_k  f_k(I) exp(i <k, theta>)

where each ``f_k`` is a polynomial of total degree ``<= d`` in ``I - xi_star``.
Modes are stored for both ``k`` and ``-k``; the coefficient of ``-k`` is kept
equal to the conjugate of the coefficient of ``k`` so that values on real
arguments are real.  All operations return new objects.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AliasError, FitError

__all__ = [
    "PRUNE_TOL",
    "monomials",
    "ActionPolynomial",
    "FourierTaylor",
    "angle_grid",
    "action_nodes",
    "fit_from_grid",
    "mean_part",
    "tilde_part",
    "truncate_modes",
    "truncate_action",
    "derivative",
    "sup_norm_estimate",
]

PRUNE_TOL = 1e-15


@lru_cache(maxsize=None)
def monomials(n: int, d: int) -> np.ndarray:
    """Exponent table of all monomials of total degree ``<= d`` in ``n`` variables.

    Rows are ordered by degree first, so the table for ``d - 1`` is a prefix of
    the table for ``d``.
    """
    rows = []
    for deg in range(d + 1):
        block = [e for e in itertools.product(range(deg + 1), repeat=n) if sum(e) == deg]
        block.sort(reverse=True)
        rows.extend(block)
    out = np.array(rows, dtype=int).reshape(-1, n)
    out.setflags(write=False)
    return out


def _monomial_values(u: np.ndarray, monos: np.ndarray) -> np.ndarray:
    # u: (N, n) offsets -> (N, P)
    out = np.ones((u.shape[0], monos.shape[0]))
    for j in range(monos.shape[1]):
        pw = monos[:, j]
        if pw.any():
            out *= u[:, j:j + 1] ** pw[None, :]
    return out


def _as_points(x, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1) if n == 1 else np.full((1, n), float(arr))
    if arr.ndim == 1:
        return arr.reshape(1, n) if arr.size == n else arr.reshape(-1, n)
    return arr.reshape(-1, n)


@dataclass(frozen=True)
class ActionPolynomial:
    """Real polynomial in ``I - xi_star``; the mean part of a Fourier-Taylor series."""

    n: int
    xi_star: np.ndarray
    d: int
    coeffs: np.ndarray

    def __call__(self, I) -> np.ndarray:
        u = _as_points(I, self.n) - self.xi_star
        return _monomial_values(u, monomials(self.n, self.d)) @ self.coeffs

    def gradient(self, I) -> np.ndarray:
        """Gradient in ``I``, shape ``(N, n)``."""
        u = _as_points(I, self.n) - self.xi_star
        monos = monomials(self.n, self.d)
        out = np.zeros(u.shape)
        for j in range(self.n):
            mask = monos[:, j] > 0
            if not mask.any():
                continue
            lowered = monos[mask].copy()
            lowered[:, j] -= 1
            vals = np.ones((u.shape[0], lowered.shape[0]))
            for i in range(self.n):
                vals *= u[:, i:i + 1] ** lowered[None, :, i]
            out[:, j] = vals @ (self.coeffs[mask] * monos[mask, j])
        return out

    def coefficient(self, powers) -> float:
        monos = monomials(self.n, self.d)
        hit = np.all(monos == np.asarray(powers), axis=1)
        return float(self.coeffs[hit][0]) if hit.any() else 0.0


class FourierTaylor:
    """Fourier modes in angle with polynomial coefficients in the action offset.

    Parameters
    ----------
    n : int
        Dimension (1 to 3).
    xi_star : array_like, shape (n,)
        Reference action.
    K : int
        Mode cutoff; every stored wavevector has ``|k|_1 <= K``.
    d : int
        Action degree of the coefficient polynomials.
    modes : array_like of int, shape (M, n)
    coeffs : array_like of complex, shape (M, P)
        ``P = len(monomials(n, d))``.
    r, s : float
        Declared annulus radii (bookkeeping only).
    """

    __slots__ = ("n", "xi_star", "K", "d", "modes", "coeffs", "r", "s")

    def __init__(self, n, xi_star, K, d=1, modes=None, coeffs=None, r=1.0, s=1.0):
        if not 1 <= n <= 3:
            raise ValueError(f"dimension {n} not supported (1..3)")
        self.n = int(n)
        self.xi_star = np.asarray(xi_star, dtype=float).reshape(self.n)
        self.K = int(K)
        self.d = int(d)
        self.r = float(r)
        self.s = float(s)
        P = monomials(self.n, self.d).shape[0]
        if modes is None:
            modes = np.zeros((0, self.n), dtype=int)
            coeffs = np.zeros((0, P), dtype=complex)
        modes = np.asarray(modes, dtype=int).reshape(-1, self.n)
        if modes.shape[0] == 0:
            coeffs = np.zeros((0, P), dtype=complex)
        else:
            coeffs = np.asarray(coeffs, dtype=complex).reshape(modes.shape[0], -1)
        if coeffs.shape[1] < P:
            coeffs = np.pad(coeffs, ((0, 0), (0, P - coeffs.shape[1])))
        elif coeffs.shape[1] > P:
            coeffs = coeffs[:, :P]
        self.modes, self.coeffs = self._canonical(modes, coeffs)
        self.xi_star.setflags(write=False)
        self.modes.setflags(write=False)
        self.coeffs.setflags(write=False)

    # construction helpers
    def _canonical(self, modes, coeffs):
        table: dict[tuple, np.ndarray] = {}
        for k, c in zip(map(tuple, modes), coeffs):
            if sum(abs(x) for x in k) > self.K:
                continue
            table[k] = table.get(k, 0) + c
        for k in list(table):
            neg = tuple(-x for x in k)
            if neg not in table:
                table[neg] = np.zeros_like(table[k])
        sym = {}
        for k, c in table.items():
            neg = tuple(-x for x in k)
            sym[k] = 0.5 * (c + np.conj(table[neg]))
        keep = sorted(k for k, c in sym.items() if np.any(np.abs(c) >= PRUNE_TOL))
        P = coeffs.shape[1]
        if not keep:
            return np.zeros((0, self.n), dtype=int), np.zeros((0, P), dtype=complex)
        out = np.array([sym[k] for k in keep])
        out[np.abs(out) < PRUNE_TOL] = 0.0
        return np.array(keep, dtype=int), out

    @classmethod
    def zeros(cls, n, xi_star, K, d=1, r=1.0, s=1.0):
        return cls(n, xi_star, K, d, r=r, s=s)

    @classmethod
    def from_modes(cls, n, xi_star, K, d, table, r=1.0, s=1.0):
        """Build from ``{k: poly}``; ``poly`` lists coefficients in :func:`monomials` order.

        Only one of each ``k, -k`` pair needs to be given for a real function
        when the missing partner is meant to be its conjugate; give both for
        full control.
        """
        keys = list(table)
        full = {}
        for k in keys:
            full[tuple(int(x) for x in k)] = np.asarray(table[k], dtype=complex)
        for k in list(full):
            neg = tuple(-x for x in k)
            if neg not in full:
                full[neg] = np.conj(full[k])
        modes = np.array(list(full), dtype=int).reshape(-1, n)
        P = monomials(n, d).shape[0]
        coeffs = np.zeros((len(full), P), dtype=complex)
        for i, c in enumerate(full.values()):
            coeffs[i, :c.size] = c[:P]
        return cls(n, xi_star, K, d, modes, coeffs, r, s)

    def _like(self, modes, coeffs, K=None, d=None):
        return FourierTaylor(self.n, self.xi_star, self.K if K is None else K,
                             self.d if d is None else d, modes, coeffs, self.r, self.s)

    # evaluation
    def __call__(self, I, theta) -> np.ndarray:
        I = _as_points(I, self.n)
        theta = _as_points(theta, self.n)
        I, theta = np.broadcast_arrays(I, theta)
        if self.modes.shape[0] == 0:
            return np.zeros(I.shape[0])
        E = np.exp(1j * (theta @ self.modes.T))
        U = _monomial_values(I - self.xi_star, monomials(self.n, self.d))
        return np.sum((E @ self.coeffs) * U, axis=1).real

    def coefficient(self, k) -> np.ndarray:
        hit = np.all(self.modes == np.asarray(k, dtype=int), axis=1)
        if not hit.any():
            return np.zeros(self.coeffs.shape[1], dtype=complex)
        return self.coeffs[hit][0].copy()

    @property
    def is_zero(self) -> bool:
        return self.modes.shape[0] == 0

    # algebra
    def _aligned(self, other: "FourierTaylor"):
        if other.n != self.n or not np.allclose(other.xi_star, self.xi_star, rtol=0, atol=1e-15):
            raise ValueError("incompatible Fourier-Taylor operands")
        d = max(self.d, other.d)
        P = monomials(self.n, d).shape[0]
        a = np.pad(self.coeffs, ((0, 0), (0, P - self.coeffs.shape[1])))
        b = np.pad(other.coeffs, ((0, 0), (0, P - other.coeffs.shape[1])))
        return d, a, b

    def __add__(self, other):
        d, a, b = self._aligned(other)
        return self._like(np.vstack([self.modes, other.modes]), np.vstack([a, b]),
                          K=max(self.K, other.K), d=d)

    def __neg__(self):
        return self._like(self.modes, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return self._like(self.modes, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return (f"FourierTaylor(n={self.n}, xi_star={self.xi_star.tolist()}, K={self.K}, "
                f"d={self.d}, modes={self.modes.shape[0]})")

    # serialization
    def to_json(self) -> dict:
        return {
            "n": self.n,
            "xi_star": self.xi_star.tolist(),
            "K": self.K,
            "d": self.d,
            "r": self.r,
            "s": self.s,
            "monomials": monomials(self.n, self.d).tolist(),
            "modes": [
                {"k": k.tolist(), "poly": [[float(c.real), float(c.imag)] for c in row]}
                for k, row in zip(self.modes, self.coeffs)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FourierTaylor":
        n = int(obj["n"])
        modes = [m["k"] for m in obj["modes"]]
        coeffs = [[complex(re, im) for re, im in m["poly"]] for m in obj["modes"]]
        P = monomials(n, int(obj["d"])).shape[0]
        return cls(n, obj["xi_star"], obj["K"], obj["d"],
                   np.array(modes, dtype=int).reshape(-1, n),
                   np.array(coeffs, dtype=complex).reshape(-1, P),
                   obj.get("r", 1.0), obj.get("s", 1.0))


def mean_part(f: FourierTaylor) -> ActionPolynomial:
    return ActionPolynomial(f.n, f.xi_star, f.d, f.coefficient(np.zeros(f.n, dtype=int)).real)


def tilde_part(f: FourierTaylor) -> FourierTaylor:
    keep = np.any(f.modes != 0, axis=1)
    return f._like(f.modes[keep], f.coeffs[keep])


def truncate_modes(f: FourierTaylor, K: int) -> FourierTaylor:
    if K > f.K:
        raise ValueError(f"cannot truncate to K={K} above the cutoff {f.K}")
    keep = np.abs(f.modes).sum(axis=1) <= K
    return f._like(f.modes[keep], f.coeffs[keep], K=K)


def truncate_action(f: FourierTaylor, d: int) -> FourierTaylor:
    if d > f.d:
        raise ValueError(f"cannot truncate to degree {d} above {f.d}")
    P = monomials(f.n, d).shape[0]
    return f._like(f.modes, f.coeffs[:, :P], d=d)


def derivative(f: FourierTaylor, kind: str, j: int) -> FourierTaylor:
    """Partial derivative along angle ``j`` (``kind='angle'``) or action ``j`` (``kind='action'``)."""
    if not 0 <= j < f.n:
        raise IndexError(j)
    if kind == "angle":
        return f._like(f.modes, f.coeffs * (1j * f.modes[:, j])[:, None])
    if kind != "action":
        raise ValueError(f"unknown derivative kind {kind!r}")
    if f.d == 0:
        return f._like(f.modes[:0], f.coeffs[:0])
    monos = monomials(f.n, f.d)
    lower = monomials(f.n, f.d - 1)
    index = {tuple(m): i for i, m in enumerate(lower)}
    out = np.zeros((f.coeffs.shape[0], lower.shape[0]), dtype=complex)
    for p, m in enumerate(monos):
        if m[j] == 0:
            continue
        target = m.copy()
        target[j] -= 1
        out[:, index[tuple(target)]] += m[j] * f.coeffs[:, p]
    return f._like(f.modes, out, d=f.d - 1)


def sup_norm_estimate(f: FourierTaylor, s_prime: float = 0.0, action_radius: float | None = None) -> float:
    """Weighted coefficient bound ``sum_k sum_m |c_km| rho^|m| exp(|k| s')``.

    With ``rho`` the action radius (default ``f.r``) this dominates ``|f|`` on
    ``|I - xi_star|_inf <= rho``, ``|Im theta| <= s'``.
    """
    if f.is_zero:
        return 0.0
    rho = f.r if action_radius is None else float(action_radius)
    deg = monomials(f.n, f.d).sum(axis=1)
    weights = rho ** deg
    kabs = np.abs(f.modes).sum(axis=1)
    return float(np.sum(np.abs(f.coeffs) * weights[None, :] * np.exp(kabs * s_prime)[:, None]))


def angle_grid(N: int, n: int) -> np.ndarray:
    """Uniform tensor grid on ``T^n`` as ``(N**n, n)`` points, last axis fastest."""
    axis = 2 * np.pi * np.arange(N) / N
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def action_nodes(xi_star, radius: float, m: int) -> np.ndarray:
    """Tensor grid of ``m`` Chebyshev nodes per coordinate on ``xi_star +/- radius``."""
    xi_star = np.atleast_1d(np.asarray(xi_star, dtype=float))
    n = xi_star.size
    if m == 1:
        base = np.zeros(1)
    else:
        base = np.cos(np.pi * (2 * np.arange(m) + 1) / (2 * m))
    mesh = np.meshgrid(*([base] * n), indexing="ij")
    offsets = np.stack([g.ravel() for g in mesh], axis=-1)
    return xi_star + radius * offsets


def fit_from_grid(samples, actions, K: int, d: int, xi_star, *, N: int | None = None,
                  r: float | None = None, s: float = 1.0, oversampling: int = 1) -> FourierTaylor:
    """Fit a Fourier-Taylor series to samples on ``actions x angle_grid(N, n)``.

    Parameters
    ----------
    samples : array_like, shape (A, N**n) or (N**n,)
        Function values; row ``a`` belongs to ``actions[a]`` and follows the
        point order of :func:`angle_grid`.
    actions : array_like, shape (A, n)
        Action collocation points.
    K, d : int
        Mode cutoff and action degree of the result.
    oversampling : int
        Required factor over ``2K + 1`` angle points per dimension.
    """
    xi_star = np.atleast_1d(np.asarray(xi_star, dtype=float))
    n = xi_star.size
    actions = _as_points(actions, n)
    samples = np.asarray(samples, dtype=float).reshape(actions.shape[0], -1)
    total = samples.shape[1]
    if N is None:
        N = int(round(total ** (1.0 / n)))
    if N ** n != total:
        raise FitError(f"{total} samples per action point is not a tensor grid of dimension {n}")
    if N < oversampling * (2 * K + 1):
        raise AliasError(f"angle grid of {N} points cannot resolve K={K} "
                         f"(need {oversampling * (2 * K + 1)})")
    monos = monomials(n, d)
    if actions.shape[0] < monos.shape[0]:
        raise FitError(f"{actions.shape[0]} action points cannot determine {monos.shape[0]} monomials")

    spec = np.fft.fftn(samples.reshape((actions.shape[0],) + (N,) * n), axes=tuple(range(1, n + 1)))
    spec = spec.reshape(actions.shape[0], -1) / N ** n

    ks = np.array([k for k in itertools.product(range(-K, K + 1), repeat=n)
                   if sum(abs(x) for x in k) <= K], dtype=int).reshape(-1, n)
    flat = np.ravel_multi_index(tuple((ks % N).T), (N,) * n)
    data = spec[:, flat]  # (A, M)

    offsets = actions - xi_star
    scale = float(np.max(np.abs(offsets))) if r is None else float(r)
    if scale == 0.0:
        scale = 1.0
    design = _monomial_values(offsets / scale, monos)
    if np.linalg.matrix_rank(design) < monos.shape[0]:
        raise FitError("action collocation points are degenerate for the requested degree")
    sol, *_ = np.linalg.lstsq(design, data, rcond=None)  # (P, M)
    sol = sol / (scale ** monos.sum(axis=1))[:, None]
    return FourierTaylor(n, xi_star, K, d, ks, sol.T, r if r is not None else scale, s)
