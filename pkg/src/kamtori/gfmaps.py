"""Symplectic one-step maps in implicit generating-function form.

A :class:`GFMap` is the map ``(p, q) -> (p_hat, q_hat)`` defined by

    p_hat = p - d_theta W(p_hat, q)
    q_hat = q + t*omega_ref + d_I W(p_hat, q)

with ``W`` a :class:`~kamtori.fourier.FourierTaylor`.  Maps that are only
available as black boxes (implicit midpoint, the exact flow, conjugated maps)
are wrapped in :class:`MapEvaluator`.  Every map acts on arrays of shape
``(N, n)`` and works on the universal cover: angles are never reduced.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InconsistentGradient, NonConvergence
from .fourier import (FourierTaylor, action_nodes, angle_grid, derivative, fit_from_grid,
                      monomials, truncate_action, _monomial_values)
from .models import HamiltonianModel

__all__ = [
    "GFMap",
    "MapEvaluator",
    "solve_phat",
    "apply",
    "taylor_h0",
    "taylor_h1",
    "from_symplectic_euler",
    "symplectic_euler_step",
    "midpoint_step",
    "reference_flow",
    "extract_generating",
    "symplectic_defect",
    "reproduction_error",
]


def _points(x, n):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    return arr.reshape(-1, n), single


class _FrozenAngles:
    """Evaluate a list of series at fixed angles and varying actions.

    Multiplying the coefficient table by ``exp(i<k, theta>)`` once leaves only a
    polynomial evaluation per fixed-point sweep.
    """

    def __init__(self, series: list[FourierTaylor], theta: np.ndarray, P: int, n: int):
        self.xi_star = series[0].xi_star
        self.monos = monomials(n, max(1, max(f.d for f in series)))[:P]
        self.tables = []
        for f in series:
            if f.is_zero:
                self.tables.append(None)
                continue
            E = np.exp(1j * (theta @ f.modes.T))
            tab = E @ f.coeffs
            self.tables.append(np.pad(tab, ((0, 0), (0, P - tab.shape[1]))))

    def __call__(self, i: int, I: np.ndarray) -> np.ndarray:
        tab = self.tables[i]
        if tab is None:
            return np.zeros(I.shape[0])
        U = _monomial_values(I - self.xi_star, self.monos)
        return np.sum(tab * U, axis=1).real


@dataclass(frozen=True)
class GFMap:
    """Implicit symplectic one-step map in generating-function form."""

    n: int
    t: float
    t_omega_ref: np.ndarray
    W: FourierTaylor
    order: int = 1
    r: float = 1.0
    s: float = 1.0
    _d_angle: tuple = field(init=False, repr=False, compare=False)
    _d_action: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "t_omega_ref", np.asarray(self.t_omega_ref, dtype=float).reshape(self.n))
        object.__setattr__(self, "_d_angle", tuple(derivative(self.W, "angle", j) for j in range(self.n)))
        object.__setattr__(self, "_d_action", tuple(derivative(self.W, "action", j) for j in range(self.n)))

    def lipschitz_estimate(self) -> float:
        """Bound on the Lipschitz constant of ``p_hat -> d_theta W(p_hat, q)`` near ``xi_star``."""
        from .fourier import sup_norm_estimate
        total = 0.0
        for g in self._d_angle:
            for j in range(self.n):
                total = max(total, self.n * sup_norm_estimate(derivative(g, "action", j), 0.0))
        return total

    def _frozen(self, q):
        P = monomials(self.n, max(self.W.d, 1)).shape[0]
        return _FrozenAngles(list(self._d_angle) + list(self._d_action), q, P, self.n)

    def solve_phat(self, p, q, tol: float = 1e-12, max_iter: int = 100, full_output: bool = False):
        return solve_phat(self, p, q, tol, max_iter, full_output)

    def apply(self, p, q, tol: float = 1e-12, max_iter: int = 100):
        return apply(self, p, q, tol, max_iter)

    def as_evaluator(self, tol: float = 1e-14) -> "MapEvaluator":
        return MapEvaluator(lambda p, q: apply(self, p, q, tol), self.n, self.t, self.order, "gfmap")


def solve_phat(gf: GFMap, p, q, tol: float = 1e-12, max_iter: int = 100, full_output: bool = False):
    """Solve ``p_hat = p - d_theta W(p_hat, q)`` by fixed-point iteration.

    Returns ``p_hat`` (and ``(iterations, residual)`` when ``full_output``).
    Raises NonConvergence if ``max_iter`` sweeps do not bring the update
    below ``tol``.
    """
    n = gf.n
    P, single = _points(p, n)
    Q, _ = _points(q, n)
    P, Q = np.broadcast_arrays(P, Q)
    frozen = gf._frozen(Q)
    phat = P.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        new = P - np.stack([frozen(j, phat) for j in range(n)], axis=-1)
        residual = float(np.max(np.abs(new - phat))) if new.size else 0.0
        phat = new
        if not np.isfinite(residual):
            break
        if residual < tol:
            out = phat[0] if single else phat
            return (out, it, residual) if full_output else out
    raise NonConvergence("implicit generating-function equation did not contract", residual, max_iter)


def apply(gf: GFMap, p, q, tol: float = 1e-12, max_iter: int = 100):
    """One step ``(p, q) -> (p_hat, q_hat)`` of a generating-function map."""
    n = gf.n
    Q, single = _points(q, n)
    phat = np.atleast_2d(solve_phat(gf, p, q, tol, max_iter))
    Q = np.broadcast_to(Q, phat.shape)
    frozen = gf._frozen(Q)
    qhat = Q + gf.t_omega_ref + np.stack([frozen(n + j, phat) for j in range(n)], axis=-1)
    if single:
        return phat[0], qhat[0]
    return phat, qhat


@dataclass(frozen=True)
class MapEvaluator:
    """A symplectic one-step map given only by how it evaluates."""

    fn: Callable
    n: int
    t: float
    order: int
    label: str = ""

    def apply(self, p, q):
        P, single = _points(p, self.n)
        Q, _ = _points(q, self.n)
        P, Q = np.broadcast_arrays(P, Q)
        ph, qh = self.fn(np.array(P), np.array(Q))
        if single:
            return ph[0], qh[0]
        return ph, qh

    __call__ = apply


# Exact Taylor data of catalog models

def _binomial_taylor(powers, xi, d):
    """Coefficients of ``prod (xi_j + u_j)^{a_j}`` in the monomials of degree <= d."""
    n = len(powers)
    monos = monomials(n, d)
    out = np.zeros(monos.shape[0])
    for i, m in enumerate(monos):
        if np.any(m > np.asarray(powers)):
            continue
        c = 1.0
        for j in range(n):
            c *= math.comb(powers[j], int(m[j])) * xi[j] ** (powers[j] - m[j])
        out[i] = c
    return out


def taylor_h0(model: HamiltonianModel, xi, d: int) -> np.ndarray:
    """Taylor coefficients of ``h0`` at ``xi`` up to degree ``d`` (monomial order of :func:`monomials`)."""
    xi = np.asarray(xi, dtype=float).reshape(model.n)
    out = np.zeros(monomials(model.n, d).shape[0])
    for term in model.h0_terms:
        out += term.coeff * _binomial_taylor(term.powers, xi, d)
    return out


def taylor_h1(model: HamiltonianModel, xi, d: int, r: float = 1.0, s: float = 1.0) -> FourierTaylor:
    """The perturbation as a Fourier-Taylor series about ``xi``, exact up to action degree ``d``."""
    xi = np.asarray(xi, dtype=float).reshape(model.n)
    table: dict[tuple, np.ndarray] = {}
    K = 1
    for term in model.h1_terms:
        pw = term.powers or (0,) * model.n
        poly = term.coeff * _binomial_taylor(pw, xi, d)
        k = tuple(term.k)
        neg = tuple(-x for x in k)
        # cos = (e^{ik} + e^{-ik})/2, sin = (e^{ik} - e^{-ik})/(2i)
        a, b = (0.5, 0.5) if term.kind == "cos" else (-0.5j, 0.5j)
        table[k] = table.get(k, 0) + a * poly
        table[neg] = table.get(neg, 0) + b * poly
        K = max(K, sum(abs(x) for x in k))
    modes = np.array(list(table), dtype=int).reshape(-1, model.n)
    coeffs = np.array(list(table.values()), dtype=complex).reshape(len(table), monomials(model.n, d).shape[0])
    return FourierTaylor(model.n, xi, K, d, modes, coeffs, r, s)


def from_symplectic_euler(model: HamiltonianModel, xi, eps: float, t: float, d: int = 2,
                          r: float | None = None, s: float | None = None) -> GFMap:
    """Symplectic Euler for ``h0 + eps*h1`` written about ``xi`` in generating form.

    ``W(p_hat, q) = t[eps*h1 + h0(p_hat) - h0(xi) - omega(xi)(p_hat - xi)]``,
    expanded exactly to action degree ``d`` (the expansion is the scheme
    itself whenever ``h0`` and the action dependence of ``h1`` have degree
    at most ``d``).
    """
    xi = np.asarray(xi, dtype=float).reshape(model.n)
    model.check_domain(xi)
    if t < 0 or eps < 0:
        raise ValueError("t and eps must be non-negative")
    r = model.r if r is None else r
    s = model.s if s is None else s
    omega = model.h0_grad(xi)
    twist = taylor_h0(model, xi, d)
    twist[:1 + model.n] = 0.0  # remove h0(xi) and the linear term
    W = taylor_h1(model, xi, d, r, s) * (t * eps)
    mean = FourierTaylor(model.n, xi, W.K, d, np.zeros((1, model.n), dtype=int),
                         (t * twist)[None, :].astype(complex), r, s)
    return GFMap(model.n, t, t * omega, W + mean, 1, r, s)


def symplectic_euler_step(model: HamiltonianModel, eps: float, t: float,
                          tol: float = 1e-15, max_iter: int = 50) -> MapEvaluator:
    """Directly coded symplectic Euler: ``p_hat = p - t H_q(p_hat, q)``, ``q_hat = q + t H_p(p_hat, q)``."""
    n = model.n

    def step(p, q):
        phat = p.copy()
        for _ in range(max_iter):
            _, gq = model.h1_grads(phat, q)
            F = phat - p + t * eps * gq
            if eps == 0.0:
                break
            _, hpq, _ = model.h1_hessians(phat, q)
            J = np.eye(n) + t * eps * np.swapaxes(hpq, -1, -2)
            delta = np.linalg.solve(J, F[..., None])[..., 0]
            phat = phat - delta
            if np.max(np.abs(delta)) < tol:
                break
        else:
            raise NonConvergence("symplectic Euler Newton solve", float(np.max(np.abs(F))), max_iter)
        gp, _ = model.h1_grads(phat, q)
        return phat, q + t * (model.h0_grad(phat) + eps * gp)

    return MapEvaluator(step, n, t, 1, "symplectic_euler")


def _hamiltonian_jacobian(model, eps, p, q):
    hpp, hpq, hqq = model.h1_hessians(p, q)
    Hpp = model.h0_hess(p) + eps * hpp
    Hpq = eps * hpq
    Hqq = eps * hqq
    top = np.concatenate([-np.swapaxes(Hpq, -1, -2), -Hqq], axis=-1)
    bottom = np.concatenate([Hpp, Hpq], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def midpoint_step(model: HamiltonianModel, eps: float, t: float,
                  tol: float = 1e-15, max_iter: int = 50) -> MapEvaluator:
    """Implicit midpoint rule ``z1 = z0 + t f((z0 + z1)/2)`` solved by batched Newton."""
    n = model.n

    def field_(z):
        dp, dq = model.vector_field(z[:, :n], z[:, n:], eps)
        return np.concatenate([dp, dq], axis=-1)

    def step(p, q):
        z0 = np.concatenate([p, q], axis=-1)
        z = z0 + t * field_(z0)
        eye = np.eye(2 * n)
        size = math.inf
        for _ in range(max_iter):
            m = 0.5 * (z0 + z)
            F = z - z0 - t * field_(m)
            J = eye - 0.5 * t * _hamiltonian_jacobian(model, eps, m[:, :n], m[:, n:])
            delta = np.linalg.solve(J, F[..., None])[..., 0]
            z = z - delta
            size = float(np.max(np.abs(delta))) if delta.size else 0.0
            if size < tol * (1.0 + float(np.max(np.abs(z)))):
                break
        else:
            # rounding can keep the last update just above tol; accept it if tiny
            if size > 1e-12:
                raise NonConvergence("implicit midpoint Newton solve", size, max_iter)
        return z[:, :n], z[:, n:]

    return MapEvaluator(step, n, t, 2, "implicit_midpoint")


def _rk4(model, eps, p, q, t_total, m):
    n = model.n
    h = t_total / m
    z = np.concatenate([p, q], axis=-1)

    def f(z):
        dp, dq = model.vector_field(z[:, :n], z[:, n:], eps)
        return np.concatenate([dp, dq], axis=-1)

    for _ in range(m):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def reference_flow(model: HamiltonianModel, eps: float, t_total: float, tol: float = 1e-13,
                   max_substeps: int = 1 << 14, probes: int = 16, seed: int = 12345) -> MapEvaluator:
    """Time-``t_total`` flow of ``h0 + eps*h1`` to accuracy ``tol``.

    Classical RK4 with step doubling and Richardson extrapolation.  The
    substep count is calibrated once on probe points spread over the action
    domain and then used for every evaluation.
    """
    if tol < 1e-13:
        raise ValueError("tol below 1e-13 is not attainable in double precision")
    n = model.n
    rng = np.random.default_rng(seed)
    lo, hi = model.action_domain[:, 0], model.action_domain[:, 1]
    pp = lo + (hi - lo) * rng.random((probes, n))
    qq = 2 * np.pi * rng.random((probes, n))
    m = 4
    coarse = _rk4(model, eps, pp, qq, t_total, m)
    while True:
        fine = _rk4(model, eps, pp, qq, t_total, 2 * m)
        err = float(np.max(np.abs(fine - coarse))) / 15.0
        if err <= tol:
            break
        m *= 2
        coarse = fine
        if m > max_substeps:
            raise NonConvergence("reference flow step-size control", err, m)
    # one more doubling beyond the calibrated level for safety
    m *= 2

    def flow(p, q):
        a = _rk4(model, eps, p, q, t_total, m)
        b = _rk4(model, eps, p, q, t_total, 2 * m)
        z = b + (b - a) / 15.0
        return z[:, :n], z[:, n:]

    return MapEvaluator(flow, n, t_total, 0, f"flow(m={m})")


def symplectic_defect(mapping, p, q, h: float = 1e-5) -> float:
    """Max entry of ``J^T J0 J - J0`` with ``J`` from centered differences, over the given points."""
    n = mapping.n
    P, _ = _points(p, n)
    Q, _ = _points(q, n)
    z = np.concatenate([P, Q], axis=-1)
    N = z.shape[0]
    cols = []
    for j in range(2 * n):
        e = np.zeros(2 * n)
        e[j] = h
        zp, zm = z + e, z - e
        a = np.concatenate(mapping.apply(zp[:, :n], zp[:, n:]), axis=-1)
        b = np.concatenate(mapping.apply(zm[:, :n], zm[:, n:]), axis=-1)
        cols.append((a - b) / (2 * h))
    J = np.stack(cols, axis=-1).reshape(N, 2 * n, 2 * n)
    J0 = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    defect = np.swapaxes(J, -1, -2) @ J0 @ J - J0
    return float(np.max(np.abs(defect)))


def _invert_action(mapping, phat, q, tol, max_iter):
    """Find ``p`` with ``mapping(p, q)[0] = phat`` by the iteration ``p <- p + (phat - p_hat(p))``."""
    p = phat.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        ph, qh = mapping.apply(p, q)
        miss = phat - ph
        residual = float(np.max(np.abs(miss)))
        if not np.isfinite(residual):
            break
        if residual < tol:
            return p, qh, it, residual
        p = p + miss
    raise NonConvergence("inverting the action component of the map", residual, max_iter)


def extract_generating(mapping, t_omega_ref, xi_star, t: float, K: int, d: int = 1, *,
                       r: float = 0.05, s: float = 1.0, N: int | None = None,
                       oversampling: int = 4, nodes: int | None = None,
                       tol: float | None = None, inv_tol: float = 1e-14,
                       max_iter: int = 100, full_output: bool = False):
    """Recover the generating perturbation ``W`` of a near-rotation symplectic map.

    On a grid of ``(p_hat, q)`` the map is inverted for ``p``; then
    ``d_theta W = p - p_hat`` and ``d_I W = q_hat - q - t*omega_ref``.  The
    ``theta``-independent part of each nonzero mode comes from the angle data
    (divided by ``i k_j`` for the largest component of ``k``), every higher
    action term from integrating the action data.  This keeps ``1/r``
    amplification off the action dependence on small annuli.

    The cross-consistency residual is the largest weighted coefficient gap
    between the angle data and the angle derivative of the reconstruction;
    above ``tol`` InconsistentGradient is raised.
    """
    if d < 1:
        raise ValueError("extraction needs action degree d >= 1")
    xi_star = np.atleast_1d(np.asarray(xi_star, dtype=float))
    n = xi_star.size
    t_omega_ref = np.atleast_1d(np.asarray(t_omega_ref, dtype=float))
    if N is None:
        N = oversampling * (2 * K + 1)
    m = d + 2 if nodes is None else nodes
    actions = action_nodes(xi_star, r, m)
    theta = angle_grid(N, n)
    A, G = actions.shape[0], theta.shape[0]
    phat = np.repeat(actions, G, axis=0)
    q = np.tile(theta, (A, 1))
    p, qhat, iters, inv_res = _invert_action(mapping, phat, q, inv_tol, max_iter)
    d2 = (p - phat).reshape(A, G, n)
    d1 = (qhat - q - t_omega_ref).reshape(A, G, n)

    fit = dict(K=K, xi_star=xi_star, N=N, r=r, s=s, oversampling=oversampling)
    G2 = [fit_from_grid(d2[:, :, j], actions, d=d + 1, **fit) for j in range(n)]
    G1 = [fit_from_grid(d1[:, :, j], actions, d=d, **fit) for j in range(n)]

    monos = monomials(n, d)
    index = {tuple(mm): i for i, mm in enumerate(monos)}
    table: dict[tuple, np.ndarray] = {}
    ks = sorted({tuple(k) for g in G1 + G2 for k in g.modes})
    for k in ks:
        kk = np.asarray(k)
        row = np.zeros(monos.shape[0], dtype=complex)
        if np.any(kk):
            j = int(np.argmax(np.abs(kk)))
            row[0] = G2[j].coefficient(kk)[0] / (1j * kk[j])
        for i, mm in enumerate(monos):
            if i == 0:
                continue
            acc, cnt = 0.0, 0
            for j in range(n):
                if mm[j] == 0:
                    continue
                lower = mm.copy()
                lower[j] -= 1
                acc = acc + G1[j].coefficient(kk)[index[tuple(lower)]] / mm[j]
                cnt += 1
            row[i] = acc / cnt
        table[k] = row
    modes = np.array(list(table), dtype=int).reshape(-1, n)
    coeffs = np.array(list(table.values()), dtype=complex).reshape(len(table), monos.shape[0])
    W = FourierTaylor(n, xi_star, K, d, modes, coeffs, r, s)

    from .fourier import sup_norm_estimate
    consistency = 0.0
    for j in range(n):
        gap = truncate_action(G2[j], d) - derivative(W, "angle", j)
        consistency = max(consistency, sup_norm_estimate(gap, 0.0, r))
    if tol is not None and consistency > tol:
        raise InconsistentGradient(consistency, tol)
    if full_output:
        return W, {"consistency": consistency, "inversion_iterations": iters,
                   "inversion_residual": inv_res, "grid": [A, G]}
    return W


def reproduction_error(mapping, gf: GFMap, p, q) -> float:
    """Largest coordinate gap between ``mapping`` and ``gf`` at the given points."""
    a = np.concatenate(mapping.apply(p, q), axis=-1)
    b = np.concatenate(gf.apply(p, q, tol=1e-14), axis=-1)
    return float(np.max(np.abs(a - b)))
