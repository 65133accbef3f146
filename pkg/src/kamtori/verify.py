"""Checks on computed tori: conjugacy residuals, shadowing, step-size and flow comparisons."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateError, FitError, NonConvergence, SkippedNotAdmissible
from .fourier import FourierTaylor, angle_grid, derivative, fit_from_grid

__all__ = [
    "TorusEmbedding",
    "conjugacy_residual",
    "orbit_shadowing",
    "hausdorff_distance",
    "frequency_to_action",
    "compare_step_sizes",
    "flow_vs_algorithm",
    "order_fit",
    "make_scheme",
]


def _wrap(x):
    """Signed angle difference in ``(-pi, pi]``."""
    return np.angle(np.exp(1j * x))


@dataclass(frozen=True)
class TorusEmbedding:
    """Fourier fit of ``theta -> (p(theta), q(theta) - theta)``."""

    n: int
    t_omega: np.ndarray
    p_fit: tuple
    q_fit: tuple
    fit_residual: float = 0.0
    tag: dict = field(default_factory=dict)

    @classmethod
    def from_function(cls, fn, n, t_omega, N: int = 128, K: int | None = None, tag=None):
        """Fit ``fn: theta -> (p, q)`` on an ``N``-point grid per dimension.

        The fit residual is measured at the shifted (midpoint) grid.
        """
        K = (N - 1) // 2 if K is None else K
        theta = angle_grid(N, n)
        p, q = fn(theta)
        zero = np.zeros((1, n))
        p_fit = tuple(fit_from_grid(p[:, j], zero, K, 0, zero[0], N=N) for j in range(n))
        q_fit = tuple(fit_from_grid(q[:, j] - theta[:, j], zero, K, 0, zero[0], N=N) for j in range(n))
        emb = cls(n, np.atleast_1d(np.asarray(t_omega, dtype=float)), p_fit, q_fit, 0.0, dict(tag or {}))
        mid = theta + np.pi / N
        pm, qm = fn(mid)
        pe, qe = emb(mid)
        res = float(max(np.max(np.abs(pm - pe)), np.max(np.abs(_wrap(qm - qe)))))
        return replace(emb, fit_residual=res)

    @classmethod
    def flat(cls, n, action, t_omega):
        action = np.atleast_1d(np.asarray(action, dtype=float))
        zero = np.zeros(n)
        p_fit = tuple(FourierTaylor(n, zero, 1, 0, np.zeros((1, n), dtype=int), [[a]]) for a in action)
        q_fit = tuple(FourierTaylor(n, zero, 1, 0) for _ in range(n))
        return cls(n, np.atleast_1d(np.asarray(t_omega, dtype=float)), p_fit, q_fit, 0.0, {"flat": action.tolist()})

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1, self.n)
        zero = np.zeros((1, self.n))
        p = np.stack([f(zero, theta) for f in self.p_fit], axis=-1)
        q = theta + np.stack([f(zero, theta) for f in self.q_fit], axis=-1)
        return p, q

    def jacobian(self, theta):
        """``d(p, q)/d theta``, shape ``(N, 2n, n)``."""
        theta = np.asarray(theta, dtype=float).reshape(-1, self.n)
        zero = np.zeros((1, self.n))
        rows = []
        for fits, shift in ((self.p_fit, False), (self.q_fit, True)):
            for i, f in enumerate(fits):
                row = [derivative(f, "angle", j)(zero, theta) + (1.0 if shift and i == j else 0.0)
                       for j in range(self.n)]
                rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=1)

    def mean_action(self) -> np.ndarray:
        return np.array([f.coefficient(np.zeros(self.n, dtype=int))[0].real for f in self.p_fit])

    def perturbed(self, dp) -> "TorusEmbedding":
        """A copy with ``dp`` added to every action component."""
        dp = np.broadcast_to(np.asarray(dp, dtype=float), (self.n,))
        zero = np.zeros(self.n)
        bump = [FourierTaylor(self.n, zero, f.K, 0, np.zeros((1, self.n), dtype=int), [[x]])
                for f, x in zip(self.p_fit, dp)]
        p_fit = tuple(f + b for f, b in zip(self.p_fit, bump))
        return replace(self, p_fit=p_fit, tag={**self.tag, "perturbed": dp.tolist()})


def _grid(n, N):
    return angle_grid(N, n) if n > 1 else (2 * np.pi * np.arange(N) / N).reshape(-1, 1)


def _distance(p1, q1, p2, q2):
    return np.sqrt(np.sum((p1 - p2) ** 2 + _wrap(q1 - q2) ** 2, axis=-1))


def conjugacy_residual(embedding: TorusEmbedding, mapping, t_omega=None, N: int = 128) -> float:
    """``sup |G(Phi(theta)) - Phi(theta + t omega)|`` over a grid, angles compared on the circle."""
    t_omega = embedding.t_omega if t_omega is None else np.atleast_1d(t_omega)
    theta = _grid(embedding.n, N)
    p, q = embedding(theta)
    ph, qh = mapping.apply(p, q)
    p2, q2 = embedding(theta + t_omega)
    return float(np.max(_distance(ph, qh, p2, q2)))


def orbit_shadowing(mapping, embedding: TorusEmbedding, theta0, steps: int, t_omega=None,
                    record_every: int | None = None) -> dict:
    """Iterate the map from ``Phi(theta0)`` and track the distance to ``Phi(theta0 + m t omega)``."""
    if steps > 10 ** 6:
        raise ValueError("at most 10**6 steps")
    t_omega = embedding.t_omega if t_omega is None else np.atleast_1d(t_omega)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)).reshape(-1, embedding.n)
    p, q = embedding(theta0)
    every = record_every or max(1, steps // 100)
    profile = []
    worst = 0.0
    for m in range(1, steps + 1):
        p, q = mapping.apply(p, q)
        pe, qe = embedding(theta0 + m * t_omega)
        dev = float(np.max(_distance(p, q, pe, qe)))
        worst = max(worst, dev)
        if m % every == 0 or m == steps:
            profile.append((m, dev))
    return {"max_deviation": worst, "steps": steps, "profile": profile}


def _closest(target_p, target_q, emb: TorusEmbedding, N: int, iterations: int = 8):
    """Distance from each target point to the curve/surface ``emb`` (grid seed + Gauss-Newton)."""
    n = emb.n
    grid = _grid(n, N)
    gp, gq = emb(grid)
    out = np.empty(target_p.shape[0])
    best_theta = np.empty((target_p.shape[0], n))
    chunk = max(1, 2 ** 22 // max(grid.shape[0], 1))
    for s in range(0, target_p.shape[0], chunk):
        tp, tq = target_p[s:s + chunk], target_q[s:s + chunk]
        d = (np.sum((tp[:, None, :] - gp[None]) ** 2, axis=-1)
             + np.sum(_wrap(tq[:, None, :] - gq[None]) ** 2, axis=-1))
        idx = np.argmin(d, axis=1)
        best_theta[s:s + chunk] = grid[idx]
        out[s:s + chunk] = np.sqrt(d[np.arange(idx.size), idx])
    theta = best_theta.copy()
    for _ in range(iterations):
        p, q = emb(theta)
        r = np.concatenate([p - target_p, _wrap(q - target_q)], axis=-1)
        J = emb.jacobian(theta)
        JT = np.swapaxes(J, -1, -2)
        step = np.linalg.solve(JT @ J + 1e-300 * np.eye(n), (JT @ r[..., None]))[..., 0]
        theta = theta - step
    p, q = emb(theta)
    refined = _distance(p, q, target_p, target_q)
    return np.minimum(out, refined)


def hausdorff_distance(a: TorusEmbedding, b: TorusEmbedding, N: int | None = None) -> float:
    """Symmetric Hausdorff distance between two tori.

    Each torus is sampled on a uniform grid; distances to the other torus are
    minimized over its continuous parametrization, so the grid only limits
    which points are tested, not how close the partner can come.
    """
    if a.n != b.n:
        raise ValueError("tori of different dimension")
    N = (512 if a.n == 1 else 64) if N is None else N
    theta = _grid(a.n, N)
    pa, qa = a(theta)
    pb, qb = b(theta)
    return float(max(np.max(_closest(pa, qa, b, N)), np.max(_closest(pb, qb, a, N))))


def frequency_to_action(model, omega_target, xi0, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Solve ``omega(xi) = omega_target`` by Newton's method from ``xi0``."""
    omega_target = np.atleast_1d(np.asarray(omega_target, dtype=float))
    xi = np.atleast_1d(np.asarray(xi0, dtype=float)).copy()
    for _ in range(max_iter):
        H = np.atleast_2d(model.h0_hess(xi))
        if np.linalg.svd(H, compute_uv=False).min() < 1e-10:
            raise DegenerateError(f"frequency map is singular at {xi.tolist()}")
        miss = model.h0_grad(xi) - omega_target
        step = np.linalg.solve(H, miss)
        xi = xi - step
        if np.max(np.abs(step)) < tol and np.max(np.abs(miss)) < tol:
            return xi
    miss = float(np.max(np.abs(model.h0_grad(xi) - omega_target)))
    if miss < tol:
        return xi
    raise NonConvergence("frequency inversion", miss, max_iter)


def order_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: ``(slope, intercept, R^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise FitError("an order fit needs at least three (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("order fits need positive finite data")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def make_scheme(model, scheme: str, eps: float, t: float):
    """Map evaluator for ``scheme`` in ``{'euler', 'midpoint', 'flow'}``."""
    from . import gfmaps
    if scheme == "euler":
        return gfmaps.symplectic_euler_step(model, eps, t)
    if scheme == "midpoint":
        return gfmaps.midpoint_step(model, eps, t)
    if scheme == "flow":
        return gfmaps.reference_flow(model, eps, t)
    raise ValueError(f"unknown scheme {scheme!r}")


def _admissible(model, xi, t, config):
    from .homological import DiophantineParams, check_diophantine
    from .models import frequency
    omega = frequency(model, xi)
    K = config.K_cap
    check = check_diophantine(t * omega, DiophantineParams(config.gamma, config.tau, K, t), K)
    if not check.passed:
        raise SkippedNotAdmissible(f"xi={np.atleast_1d(xi).tolist()} fails the sieve at t={t}: "
                                   f"k={list(check.worst_k)}, margin={check.margin:.3e}")
    return omega


def _kam(model, scheme, eps, t, xi, config):
    from .kamcore import run_kam
    omega = _admissible(model, xi, t, config)
    res = run_kam(make_scheme(model, scheme, eps, t), xi, omega, config)
    if not res.converged:
        raise NonConvergence(f"KAM run for {scheme} at t={t} ended with {res.verdict}")
    return res


def compare_step_sizes(model, xi, eps, t1, t2, scheme: str = "euler", config=None, N: int = 128) -> dict:
    """Embedding and frequency gaps between KAM tori for steps ``t1`` and ``t2`` at the same action."""
    from .kamcore import KamConfig
    config = config or KamConfig()
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r1 = _kam(model, scheme, eps, t1, xi, config)
    r2 = r1 if t2 == t1 else _kam(model, scheme, eps, t2, xi, config)
    theta = _grid(xi.size, N)
    p1, q1 = r1.embed(theta)
    p2, q2 = r2.embed(theta)
    return {
        "scheme": scheme, "t1": t1, "t2": t2,
        "embedding_gap": float(np.max(_distance(p1, q1, p2, q2))),
        "frequency_gap": float(np.max(np.abs(r1.omega - r2.omega))),
        "omega1": r1.omega.tolist(), "omega2": r2.omega.tolist(),
    }


def flow_vs_algorithm(model, xi, eps, t_list, scheme: str = "euler", config=None,
                      N: int | None = None, match_iterations: int = 2) -> dict:
    """Drift of the scheme's KAM torus from the flow's torus as ``t`` shrinks.

    For every ``t`` the flow torus at ``xi`` is compared with the scheme's
    torus at the action ``xi'`` whose scheme frequency equals the flow
    frequency (found by Newton on the model frequency map, refined by
    re-running the scheme).  The frequency gap is recorded at the common
    action ``xi``.
    """
    from .kamcore import KamConfig, torus_embedding
    from .sieve import kolmogorov_bounds
    config = config or KamConfig()
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    theta1, _ = kolmogorov_bounds(model, local=(xi, 0.05))
    rows = []
    for t in t_list:
        flow = _kam(model, "flow", eps, t, xi, config)
        alg = _kam(model, scheme, eps, t, xi, config)
        gap = float(np.max(np.abs(alg.omega - flow.omega)))
        xi_m, alg_m = xi.copy(), alg
        for _ in range(match_iterations):
            miss = alg_m.omega - flow.omega
            if np.max(np.abs(miss)) < 1e-14:
                break
            xi_m = frequency_to_action(model, model.h0_grad(xi_m) - miss, xi_m)
            alg_m = _kam(model, scheme, eps, t, xi_m, config)
        e_flow = torus_embedding(flow, N=128)
        e_alg = torus_embedding(alg_m, N=128)
        rows.append({
            "t": t,
            "omega_flow": flow.omega.tolist(),
            "omega_alg": alg.omega.tolist(),
            "frequency_gap": gap,
            "matched_xi": xi_m.tolist(),
            "matched_frequency_miss": float(np.max(np.abs(alg_m.omega - flow.omega))),
            "hausdorff": hausdorff_distance(e_alg, e_flow, N),
            "fit_residual": max(e_flow.fit_residual, e_alg.fit_residual),
        })
    out = {"scheme": scheme, "xi": xi.tolist(), "eps": eps, "theta1": theta1, "rows": rows}
    ts = [r["t"] for r in rows]
    for key in ("frequency_gap", "hausdorff"):
        try:
            slope, intercept, r2 = order_fit(ts, [r[key] for r in rows])
            out[f"{key}_fit"] = {"slope": slope, "intercept": intercept, "r2": r2}
        except FitError as exc:
            out[f"{key}_fit"] = {"error": str(exc)}
    return out
