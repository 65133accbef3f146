"""The KAM iteration for near-rotation symplectic maps.

Each step removes the angle-dependent part of the current generating
perturbation up to the mode cutoff ``K_v`` with a near-identity change of
variables ``Psi_v`` and corrects the frequency by the mean action gradient.
Rather than bookkeeping the new perturbation through Taylor estimates, the
conjugated map ``Phi_{v+1}^{-1} o G o Phi_{v+1}`` is evaluated exactly and its
generating data re-extracted on the shrunken annulus.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import KamError, NonConvergence, ParamError, ScheduleBlowup, SmallDivisorViolation
from .fourier import (FourierTaylor, _monomial_values, derivative, mean_part, monomials,
                      sup_norm_estimate, tilde_part, truncate_action, truncate_modes)
from .gfmaps import GFMap, MapEvaluator, _FrozenAngles, _points, extract_generating
from .homological import DiophantineParams, check_diophantine, psi_norm_report, solve_psi

__all__ = [
    "KamConfig",
    "KamSchedule",
    "init_schedule",
    "NearIdentity",
    "ConjugatedMap",
    "KamState",
    "ConjugacyResult",
    "compose_transform",
    "kam_step",
    "run_kam",
    "torus_embedding",
]


@dataclass(frozen=True)
class KamConfig:
    """Numerical settings of a KAM run.

    ``nbar=None`` selects Kolmogorov mode (``gamma_v = gamma / 2**v``);
    an integer selects Ruessmann mode with that non-degeneracy index.
    """

    gamma: float = 1e-2
    tau: float = 3.0
    K0: int = 8
    K_cap: int = 32
    r0: float = 0.1
    s0: float = 1.0
    nbar: int | None = None
    eta_init: float = 0.05
    eta_floor: float = 0.05
    target: float = 1e-11
    v_max: int = 12
    fit_degree: int = 2
    oversampling: int = 4
    contraction_tol: float = 1e-15

    @property
    def mode(self) -> str:
        return "kolmogorov" if self.nbar is None else "ruessmann"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode
        return out


_ZETA2 = math.pi ** 2 / 6


class KamSchedule:
    """Iteration-indexed parameters of the KAM scheme.

    Strip widths, Diophantine levels and mode cutoffs are closed-form in
    ``v``.  The radii depend on the shrink factors ``eta_v`` actually used,
    which the run appends as it goes; ``eta_v`` is ``eta_init`` for the first
    three steps and the contraction constant ``c4`` afterwards.
    """

    def __init__(self, s0, r0, K0, gamma, tau, n, nbar=None, eta_init=0.05, eta_floor=0.05):
        if not s0 > 0 or not r0 > 0:
            raise ParamError(f"s0 and r0 must be positive (s0={s0}, r0={r0})")
        if int(K0) != K0 or K0 < 1:
            raise ParamError(f"K0 must be a positive integer, got {K0}")
        if not 0 < gamma < 1:
            raise ParamError(f"gamma must lie in (0, 1), got {gamma}")
        need = (n + 2) * ((nbar or 0) + 1)
        if tau < need:
            raise ParamError(f"tau={tau} below the admissible bound {need}")
        if not 0 < eta_init < 1 or not 0 < eta_floor < 1:
            raise ParamError("shrink factors must lie in (0, 1)")
        self.s0, self.r0, self.K0 = float(s0), float(r0), int(K0)
        self.gamma, self.tau, self.n, self.nbar = float(gamma), float(tau), int(n), nbar
        self.eta_init, self.eta_floor = float(eta_init), float(eta_floor)
        self.etas: list[float] = []
        self.E: list[float] = []
        self.c4: float | None = None
        self.c4_formula: float | None = None
        self.c4_source: str | None = None

    @property
    def mode(self) -> str:
        return "kolmogorov" if self.nbar is None else "ruessmann"

    def tau_v(self, v: int) -> float:
        return sum(1.0 / j ** 2 for j in range(1, v + 1)) / (2 * _ZETA2)

    def s(self, v: int) -> float:
        return (1.0 - self.tau_v(v)) * self.s0 / 4.0

    def sigma(self, v: int) -> float:
        return (self.s(v) - self.s(v + 1)) / 4.0

    def K(self, v: int) -> int:
        return self.K0 * 4 ** v

    def gamma_v(self, v: int) -> float:
        if self.nbar is None:
            return self.gamma / 2.0 ** v
        e = self.nbar + 1
        return self.gamma ** e / 2.0 ** (e * v)

    def eta(self, v: int) -> float:
        if v < len(self.etas):
            return self.etas[v]
        return self.eta_init if v < 3 or self.c4 is None else self.c4

    def r(self, v: int) -> float:
        out = self.r0
        for j in range(v):
            out *= self.eta(j)
        return out

    def rho(self, v: int) -> float:
        return (self.r(v) - self.r(v + 1)) / 4.0

    def F(self, v: int, E: float | None = None) -> float:
        E = self.E[v] if E is None else E
        return E / (self.gamma_v(v) * self.sigma(v) ** (self.tau + self.n + 1) * self.rho(v))

    def fix_c4(self) -> float:
        """Freeze ``c4`` from the measured ``F_3``; falls back to the floor when the formula is no contraction."""
        F3 = self.F(3)
        nbar = self.nbar or 0
        formula = (2.0 ** -(self.tau + nbar + self.n + 4)) * F3 ** (1.0 / 3.0) / 3.0
        self.c4_formula = formula
        if formula >= 0.5 or not np.isfinite(formula):
            self.c4, self.c4_source = self.eta_floor, "floor (formula is not a contraction)"
        elif formula < self.eta_floor:
            self.c4, self.c4_source = self.eta_floor, "floor"
        else:
            self.c4, self.c4_source = formula, "formula"
        return self.c4

    def row(self, v: int) -> dict:
        return {
            "v": v, "s": self.s(v), "sigma": self.sigma(v), "r": self.r(v), "rho": self.rho(v),
            "K": self.K(v), "gamma": self.gamma_v(v), "eta": self.eta(v),
        }

    def to_dict(self, upto: int) -> dict:
        return {
            "mode": self.mode, "s0": self.s0, "r0": self.r0, "K0": self.K0, "gamma": self.gamma,
            "tau": self.tau, "nbar": self.nbar, "c4": self.c4, "c4_formula": self.c4_formula,
            "c4_source": self.c4_source, "table": [self.row(v) for v in range(upto + 1)],
        }


def init_schedule(config: KamConfig, n: int) -> KamSchedule:
    return KamSchedule(config.s0, config.r0, config.K0, config.gamma, config.tau, n,
                       config.nbar, config.eta_init, config.eta_floor)


def _iterate(update, x0, tol, max_iter, label):
    x = x0
    prev = math.inf
    for it in range(1, max_iter + 1):
        new = update(x)
        step = float(np.max(np.abs(new - x))) if new.size else 0.0
        x = new
        if not np.isfinite(step):
            break
        scale = 1.0 + float(np.max(np.abs(x))) if x.size else 1.0
        if step <= tol * scale or (step < 1e-13 * scale and step >= prev):
            return x
        prev = step
    raise NonConvergence(label, step, max_iter)


class _FrozenActions:
    """Evaluate series at fixed actions and varying angles."""

    def __init__(self, series: list[FourierTaylor], I: np.ndarray):
        self.parts = []
        for f in series:
            if f.is_zero:
                self.parts.append(None)
                continue
            U = _monomial_values(I - f.xi_star, monomials(f.n, f.d))
            self.parts.append((f.modes, U @ f.coeffs.T))

    def __call__(self, i: int, theta: np.ndarray) -> np.ndarray:
        part = self.parts[i]
        if part is None:
            return np.zeros(theta.shape[0])
        modes, table = part
        return np.sum(table * np.exp(1j * (theta @ modes.T)), axis=1).real


class NearIdentity:
    """The change of variables generated by ``psi``.

    ``(I, theta) -> (p, q)`` is defined implicitly by
    ``I = p - d_theta psi(I, q)`` and ``theta = q + d_I psi(I, q)``.
    """

    def __init__(self, psi: FourierTaylor, tol: float = 1e-15, max_iter: int = 100):
        self.psi = psi
        self.n = psi.n
        self.tol = tol
        self.max_iter = max_iter
        self.d_angle = [derivative(psi, "angle", j) for j in range(self.n)]
        self.d_action = [derivative(psi, "action", j) for j in range(self.n)]

    @property
    def is_identity(self) -> bool:
        return self.psi.is_zero

    def forward(self, I, theta):
        """``(I, theta) -> (p, q)``: solve ``q = theta - d_I psi(I, q)``, then ``p = I + d_theta psi(I, q)``."""
        if self.is_identity:
            return I.copy(), theta.copy()
        n = self.n
        frozen = _FrozenActions(self.d_action + self.d_angle, I)
        q = _iterate(lambda q: theta - np.stack([frozen(j, q) for j in range(n)], axis=-1),
                     theta.copy(), self.tol, self.max_iter, "angle equation of the transformation")
        p = I + np.stack([frozen(n + j, q) for j in range(n)], axis=-1)
        return p, q

    def inverse(self, p, q):
        """``(p, q) -> (I, theta)``: solve ``I = p - d_theta psi(I, q)``, then ``theta = q + d_I psi(I, q)``."""
        if self.is_identity:
            return p.copy(), q.copy()
        n = self.n
        P = max(monomials(n, max(self.psi.d, 1)).shape[0], 1)
        frozen = _FrozenAngles(self.d_angle + self.d_action, q, P, n)
        I = _iterate(lambda I: p - np.stack([frozen(j, I) for j in range(n)], axis=-1),
                     p.copy(), self.tol, self.max_iter, "action equation of the transformation")
        theta = q + np.stack([frozen(n + j, I) for j in range(n)], axis=-1)
        return I, theta


def compose_transform(generators, I, theta, tol: float = 1e-15):
    """Apply ``Psi_0 o ... o Psi_{v-1}`` to ``(I, theta)``; ``Psi_{v-1}`` acts first."""
    transforms = [g if isinstance(g, NearIdentity) else NearIdentity(g, tol) for g in generators]
    n = transforms[0].n if transforms else np.atleast_1d(np.asarray(I)).shape[-1]
    P, single = _points(I, n)
    Q, _ = _points(theta, n)
    P, Q = (np.array(a) for a in np.broadcast_arrays(P, Q))
    for tr in reversed(transforms):
        P, Q = tr.forward(P, Q)
    return (P[0], Q[0]) if single else (P, Q)


class ConjugatedMap:
    """``Phi^{-1} o G o Phi`` for ``Phi = Psi_0 o ... o Psi_{v-1}``."""

    def __init__(self, base, transforms: list[NearIdentity]):
        self.base = base
        self.transforms = [tr for tr in transforms if not tr.is_identity]
        self.n = base.n
        self.t = base.t

    def apply(self, I, theta):
        P, single = _points(I, self.n)
        Q, _ = _points(theta, self.n)
        P, Q = (np.array(a) for a in np.broadcast_arrays(P, Q))
        for tr in reversed(self.transforms):
            P, Q = tr.forward(P, Q)
        if isinstance(self.base, GFMap):
            P, Q = self.base.apply(P, Q, tol=5e-15)
        else:
            P, Q = self.base.apply(P, Q)
        for tr in self.transforms:
            P, Q = tr.inverse(P, Q)
        return (P[0], Q[0]) if single else (P, Q)


@dataclass
class KamState:
    """Mutable state of one run: current frequency, perturbation and generators."""

    v: int
    xi_star: np.ndarray
    t: float
    omega: np.ndarray
    W: FourierTaylor
    E: float
    schedule: KamSchedule
    transforms: list = field(default_factory=list)
    trace: list = field(default_factory=list)


@dataclass
class ConjugacyResult:
    """Outcome of :func:`run_kam`.

    ``embed(theta)`` evaluates the torus ``theta -> Phi(xi_star, theta)``.
    """

    xi_star: np.ndarray
    t: float
    omega: np.ndarray
    omega0: np.ndarray
    converged: bool
    verdict: str
    iterations: int
    trace: list
    schedule: dict
    config: dict
    transforms: list = field(repr=False, default_factory=list)
    mapping: object = field(repr=False, default=None)
    runtime: float = 0.0

    @property
    def n(self) -> int:
        return self.xi_star.size

    @property
    def t_omega(self) -> np.ndarray:
        return self.t * self.omega

    @property
    def generators(self) -> list[FourierTaylor]:
        return [tr.psi for tr in self.transforms]

    def embed(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1, self.n)
        I = np.broadcast_to(self.xi_star, theta.shape)
        if not self.transforms:
            return np.array(I), theta.copy()
        return compose_transform(self.transforms, I, theta)

    def conjugacy_residual(self, N: int = 128) -> float:
        theta = 2 * np.pi * np.arange(N) / N
        if self.n > 1:
            from .fourier import angle_grid
            theta = angle_grid(N, self.n)
        theta = theta.reshape(-1, self.n)
        p, q = self.embed(theta)
        ph, qh = self.mapping.apply(p, q)
        p2, q2 = self.embed(theta + self.t_omega)
        dq = np.angle(np.exp(1j * (qh - q2)))
        return float(np.max(np.sqrt(np.sum((ph - p2) ** 2 + dq ** 2, axis=-1))))

    def to_dict(self) -> dict:
        return {
            "xi_star": self.xi_star.tolist(),
            "t": self.t,
            "omega": self.omega.tolist(),
            "omega0": self.omega0.tolist(),
            "converged": self.converged,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "trace": self.trace,
            "schedule": self.schedule,
            "config": self.config,
            "generators": [g.to_json() for g in self.generators],
            "superlinear": superlinear_check([rec["E"] for rec in self.trace]),
        }


def superlinear_check(E: list[float], slack: float = 0.2, v_min: int = 3) -> dict:
    """Compare ``log E_{v+1} / log E_v`` with ``(v+1)/v - slack`` for ``v >= v_min``.

    Only levels with ``0 < E_v < 1`` enter (the ratio is meaningless otherwise).
    ``strictly_decreasing`` covers the whole trace.
    """
    rows = []
    for v in range(max(v_min, 1), len(E) - 1):
        a, b = E[v], E[v + 1]
        if not (0 < a < 1 and 0 < b):
            continue
        ratio = float(np.log(b) / np.log(a))
        bound = (v + 1) / v - slack
        rows.append({"v": v, "ratio": ratio, "bound": bound, "ok": bool(ratio >= bound)})
    decreasing = all(E[i + 1] < E[i] for i in range(len(E) - 1))
    return {"rows": rows, "strictly_decreasing": decreasing,
            "passed": decreasing and all(r["ok"] for r in rows)}


def _norms(W: FourierTaylor, t: float, r: float) -> tuple[float, float]:
    """(E, torus defect): derivative sizes of ``W/t`` on the annulus and on ``I = xi_star``."""
    E = 0.0
    defect = 0.0
    for j in range(W.n):
        da = derivative(W, "action", j)
        dq = derivative(W, "angle", j)
        E = max(E, sup_norm_estimate(da, 0.0, r), sup_norm_estimate(dq, 0.0, r))
        defect = max(defect, sup_norm_estimate(tilde_part(truncate_action(da, 0)), 0.0),
                     sup_norm_estimate(truncate_action(dq, 0), 0.0))
    return E / t, defect / t


def _extract(mapping, omega, xi_star, t, K, radius, config: KamConfig):
    return extract_generating(mapping, t * omega, xi_star, t, K, config.fit_degree,
                              r=radius, oversampling=config.oversampling, full_output=True)


def kam_step(state: KamState, mapping, config: KamConfig) -> KamState:
    """One iteration: truncate, update the frequency, solve for ``psi``, conjugate and re-extract."""
    v = state.v
    sched = state.schedule
    n = state.xi_star.size
    t = state.t
    K = min(sched.K(v), config.K_cap)
    params = DiophantineParams(sched.gamma_v(v), sched.tau, K, t)

    Wstar = truncate_modes(truncate_action(state.W, 1), min(K, state.W.K))
    # frequency correction from the mean action gradient at xi_star
    shift = mean_part(Wstar).gradient(state.xi_star)[0] / t
    omega_next = state.omega + shift
    psi = solve_psi(tilde_part(Wstar), t * state.omega, params)
    transform = NearIdentity(psi, config.contraction_tol)

    transforms = state.transforms + [transform]
    conj = ConjugatedMap(mapping, transforms)
    r_next = sched.r(v + 1)
    K_next = min(sched.K(v + 1), config.K_cap)
    W_next, info = _extract(conj, omega_next, state.xi_star, t, K_next, r_next, config)
    E_next, defect = _norms(W_next, t, r_next)

    shift_size = float(np.max(np.abs(shift)))
    state.trace[v]["step"] = {
        "K": K,
        "gamma_v": params.gamma,
        "omega_shift": shift_size,
        "shift_within_2E": bool(shift_size <= 2 * state.E),
        "psi_modes": int(psi.modes.shape[0]),
        "psi_norms": psi_norm_report(psi, tilde_part(Wstar), params, sched.sigma(v)) if not psi.is_zero else None,
    }
    state.trace.append({"v": v + 1, "E": E_next, "torus_defect": defect,
                        "consistency": info["consistency"], "omega": omega_next.tolist()})
    if E_next > state.E:
        raise ScheduleBlowup(v + 1, state.E, E_next)
    return KamState(v + 1, state.xi_star, t, omega_next, W_next, E_next, sched, transforms, state.trace)


def _default_omega(mapping, xi_star):
    if isinstance(mapping, GFMap):
        return mapping.t_omega_ref / mapping.t
    raise ParamError("omega0 is required for maps not in generating form")


def run_kam(mapping, xi_star, omega0=None, config: KamConfig | None = None) -> ConjugacyResult:
    """Iterate :func:`kam_step` until ``E_v < target`` or ``v = v_max``.

    Failures inside the loop (non-admissible frequency, divergent
    contractions, growing perturbation) end the run with a non-converged
    verdict instead of raising.
    """
    config = config or KamConfig()
    start = time.perf_counter()
    xi_star = np.atleast_1d(np.asarray(xi_star, dtype=float))
    n = xi_star.size
    t = float(mapping.t)
    omega0 = _default_omega(mapping, xi_star) if omega0 is None else np.atleast_1d(np.asarray(omega0, dtype=float))
    sched = init_schedule(config, n)

    W0, info = _extract(mapping, omega0, xi_star, t, min(sched.K(0), config.K_cap), sched.r(0), config)
    E0, defect0 = _norms(W0, t, sched.r(0))
    sched.E.append(E0)
    head = {"v": 0, "E": E0, "torus_defect": defect0, "consistency": info["consistency"],
            "omega": omega0.tolist()}
    state = KamState(0, xi_star, t, omega0.copy(), W0, E0, sched, trace=[head])
    verdict, converged = "max_iterations", False

    while True:
        v = state.v
        if state.E < config.target:
            verdict, converged = "converged", True
            break
        if v >= config.v_max:
            break
        K = min(sched.K(v), config.K_cap)
        check = check_diophantine(t * state.omega, DiophantineParams(sched.gamma_v(v), sched.tau, K, t), K)
        if not check.passed:
            verdict = f"not_admissible at v={v}: k={list(check.worst_k)} margin={check.margin:.3e}"
            break
        if v == 3 and sched.c4 is None:
            sched.fix_c4()
        sched.etas.append(sched.eta(v))
        try:
            state = kam_step(state, mapping, config)
        except ScheduleBlowup as exc:
            verdict = f"blowup: {exc}"
            break
        except (SmallDivisorViolation, NonConvergence) as exc:
            verdict = f"{type(exc).__name__}: {exc}"
            break
        sched.E.append(state.E)

    # final mean correction (below the target once converged)
    Wstar = truncate_action(state.W, 1)
    omega = state.omega + mean_part(Wstar).gradient(xi_star)[0] / t
    trace = state.trace
    for rec in trace:
        rec["F"] = sched.F(rec["v"], rec["E"])
    return ConjugacyResult(
        xi_star=xi_star, t=t, omega=omega, omega0=omega0, converged=converged, verdict=verdict,
        iterations=state.v, trace=trace, schedule=sched.to_dict(state.v), config=config.to_dict(),
        transforms=state.transforms, mapping=mapping, runtime=time.perf_counter() - start,
    )


def torus_embedding(result: ConjugacyResult, N: int = 128, K: int | None = None):
    """Band-limited fit of ``theta -> Phi(xi_star, theta)`` as a :class:`~kamtori.verify.TorusEmbedding`."""
    from .verify import TorusEmbedding
    return TorusEmbedding.from_function(result.embed, result.n, result.t_omega, N=N, K=K,
                                        tag={"xi": result.xi_star.tolist(), "t": result.t})
