"""Nearly integrable Hamiltonians ``H(p, q) = h0(p) + eps * h1(p, q)``.

Both parts are built from coefficient lists so that every model carries exact
gradients and Hessians.  The integrable part is a polynomial in the action; the
perturbation is a trigonometric sum whose coefficients may be monomials in the
action.  The perturbation strength ``eps`` is deliberately not stored here: it is
an experiment parameter supplied by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "PolyTerm",
    "TrigTerm",
    "HamiltonianModel",
    "frequency",
    "eval_perturbation",
    "builtin_models",
    "get_model",
    "model_from_config",
]


@dataclass(frozen=True)
class PolyTerm:
    """``coeff * prod(xi_j ** powers_j)``."""

    coeff: float
    powers: tuple[int, ...]


@dataclass(frozen=True)
class TrigTerm:
    """``coeff * prod(p_j ** powers_j) * cos(<k, q>)`` (or ``sin``)."""

    coeff: float
    k: tuple[int, ...]
    kind: str = "cos"
    powers: tuple[int, ...] | None = None


def _monomial(x, powers):
    # x has shape (..., n); returns value, gradient (..., n), hessian (..., n, n)
    powers = np.asarray(powers, dtype=int)
    n = powers.size
    val = np.ones(x.shape[:-1])
    for j in range(n):
        if powers[j]:
            val = val * x[..., j] ** powers[j]
    grad = np.zeros(x.shape)
    hess = np.zeros(x.shape + (n,))
    for j in range(n):
        if powers[j] == 0:
            continue
        pj = powers.copy()
        pj[j] -= 1
        gj = powers[j] * _monomial_value(x, pj)
        grad[..., j] = gj
        for i in range(n):
            if pj[i] == 0:
                continue
            pij = pj.copy()
            pij[i] -= 1
            hess[..., j, i] = powers[j] * pj[i] * _monomial_value(x, pij)
    return val, grad, hess


def _monomial_value(x, powers):
    val = np.ones(x.shape[:-1])
    for j, a in enumerate(powers):
        if a:
            val = val * x[..., j] ** a
    return val


@dataclass(frozen=True)
class HamiltonianModel:
    """A nearly integrable Hamiltonian on ``V x T^n``.

    Parameters
    ----------
    name : str
        Catalog name.
    n : int
        Number of degrees of freedom.
    h0_terms : tuple of PolyTerm
        Integrable part as a polynomial in the action.
    h1_terms : tuple of TrigTerm
        Perturbation as a trigonometric sum in the angles.
    action_domain : ndarray, shape (n, 2)
        Box ``V`` of admissible actions, one ``[low, high]`` row per coordinate.
    r, s : float
        Analyticity widths in action and angle.
    """

    name: str
    n: int
    h0_terms: tuple[PolyTerm, ...]
    h1_terms: tuple[TrigTerm, ...]
    action_domain: np.ndarray
    r: float = 0.5
    s: float = 1.0
    description: str = ""
    M1: float = field(init=False)

    def __post_init__(self):
        dom = np.asarray(self.action_domain, dtype=float).reshape(self.n, 2)
        dom.setflags(write=False)
        object.__setattr__(self, "action_domain", dom)
        for term in self.h0_terms:
            if len(term.powers) != self.n:
                raise ValueError(f"h0 term {term} does not match n={self.n}")
        for term in self.h1_terms:
            if len(term.k) != self.n:
                raise ValueError(f"h1 term {term} does not match n={self.n}")
            if term.kind not in ("cos", "sin"):
                raise ValueError(f"unknown trig kind {term.kind!r}")
        object.__setattr__(self, "M1", self._sup_bound())

    def _sup_bound(self) -> float:
        bound = 0.0
        amax = np.abs(self.action_domain).max(axis=1)
        for term in self.h1_terms:
            pw = term.powers or (0,) * self.n
            bound += abs(term.coeff) * float(np.prod(amax ** np.asarray(pw)))
        return bound

    # integrable part
    def h0(self, xi):
        xi = np.asarray(xi, dtype=float)
        return sum(t.coeff * _monomial_value(xi, t.powers) for t in self.h0_terms) + 0.0 * xi[..., 0]

    def h0_grad(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape)
        for t in self.h0_terms:
            out += t.coeff * _monomial(xi, t.powers)[1]
        return out

    def h0_hess(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape + (self.n,))
        for t in self.h0_terms:
            out += t.coeff * _monomial(xi, t.powers)[2]
        return out

    # perturbation
    def _trig_parts(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        shape = np.broadcast_shapes(p.shape, q.shape)
        p = np.broadcast_to(p, shape)
        q = np.broadcast_to(q, shape)
        for term in self.h1_terms:
            k = np.asarray(term.k, dtype=float)
            phase = q @ k
            if term.kind == "cos":
                f, df, ddf = np.cos(phase), -np.sin(phase), -np.cos(phase)
            else:
                f, df, ddf = np.sin(phase), np.cos(phase), -np.sin(phase)
            pw = term.powers or (0,) * self.n
            m, mg, mh = _monomial(p, pw)
            yield term.coeff, k, f, df, ddf, m, mg, mh

    def h1(self, p, q):
        return sum(c * m * f for c, k, f, df, ddf, m, mg, mh in self._trig_parts(p, q))

    def h1_grads(self, p, q):
        """Return ``(dh1/dp, dh1/dq)``, each of shape ``(..., n)``."""
        shape = np.broadcast_shapes(np.shape(p), np.shape(q))
        gp = np.zeros(shape)
        gq = np.zeros(shape)
        for c, k, f, df, ddf, m, mg, mh in self._trig_parts(p, q):
            gp += c * mg * f[..., None]
            gq += c * (m * df)[..., None] * k
        return gp, gq

    def h1_hessians(self, p, q):
        """Return ``(d2/dp2, d2/dp dq, d2/dq2)``; the middle block is indexed ``[..., i_p, j_q]``."""
        shape = np.broadcast_shapes(np.shape(p), np.shape(q))
        n = self.n
        hpp = np.zeros(shape + (n,))
        hpq = np.zeros(shape + (n,))
        hqq = np.zeros(shape + (n,))
        for c, k, f, df, ddf, m, mg, mh in self._trig_parts(p, q):
            hpp += c * mh * f[..., None, None]
            hpq += c * mg[..., :, None] * (df[..., None, None] * k[None, :])
            hqq += c * (m * ddf)[..., None, None] * np.outer(k, k)
        return hpp, hpq, hqq

    def hamiltonian(self, p, q, eps):
        return self.h0(p) + eps * self.h1(p, q)

    def vector_field(self, p, q, eps):
        """Hamilton's equations: ``(dp/dt, dq/dt) = (-dH/dq, dH/dp)``."""
        gp, gq = self.h1_grads(p, q)
        return -eps * gq, self.h0_grad(p) + eps * gp

    def contains(self, xi, atol: float = 0.0) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        lo = self.action_domain[:, 0] - atol
        hi = self.action_domain[:, 1] + atol
        return np.all((xi >= lo) & (xi <= hi), axis=-1)

    def check_domain(self, xi):
        if not np.all(self.contains(xi)):
            raise DomainError(f"action {np.asarray(xi).tolist()} outside V={self.action_domain.tolist()} of {self.name}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "h0": [{"coeff": t.coeff, "powers": list(t.powers)} for t in self.h0_terms],
            "h1": [
                {"coeff": t.coeff, "k": list(t.k), "kind": t.kind,
                 "powers": list(t.powers) if t.powers else [0] * self.n}
                for t in self.h1_terms
            ],
            "action_domain": self.action_domain.tolist(),
            "r": self.r,
            "s": self.s,
            "M1": self.M1,
        }


def frequency(model: HamiltonianModel, xi) -> np.ndarray:
    """Frequency map ``omega(xi) = grad h0(xi)``; raises DomainError outside ``V``."""
    xi = np.asarray(xi, dtype=float)
    model.check_domain(xi)
    return model.h0_grad(xi)


def eval_perturbation(model: HamiltonianModel, p, q):
    """Value and gradients of the perturbation, ``(h1, dh1/dp, dh1/dq)``."""
    p = np.asarray(p, dtype=float)
    model.check_domain(p)
    gp, gq = model.h1_grads(p, q)
    return model.h1(p, q), gp, gq


def _twist_terms(n):
    return tuple(PolyTerm(0.5, tuple(2 if i == j else 0 for i in range(n))) for j in range(n))


def _make_catalog() -> dict[str, HamiltonianModel]:
    models = [
        HamiltonianModel(
            "twist1", 1, _twist_terms(1), (TrigTerm(1.0, (1,)),), [[0.1, 0.9]],
            description="rotator xi^2/2 with cos q",
        ),
        HamiltonianModel(
            "twist1_two_harmonics", 1, _twist_terms(1),
            (TrigTerm(1.0, (1,)), TrigTerm(0.5, (2,))), [[0.1, 0.9]],
            description="rotator with cos q + 0.5 cos 2q",
        ),
        HamiltonianModel(
            "twist1_asym", 1, _twist_terms(1),
            (TrigTerm(1.0, (1,)), TrigTerm(0.5, (2,), "sin")), [[0.1, 0.9]],
            description="rotator with cos q + 0.5 sin 2q (no reversing symmetry)",
        ),
        HamiltonianModel(
            "twist2", 2, _twist_terms(2),
            (TrigTerm(1.0, (1, 0)), TrigTerm(1.0, (1, 1))), [[0.1, 0.9], [0.1, 0.9]],
            description="isotropic twist |xi|^2/2 with cos q1 + cos(q1+q2)",
        ),
        HamiltonianModel(
            "ruessmann2", 2, (PolyTerm(0.5, (2, 0)), PolyTerm(0.5, (1, 2))),
            (TrigTerm(1.0, (1, 0)), TrigTerm(1.0, (0, 1))), [[0.1, 0.9], [0.1, 0.9]],
            description="xi1^2/2 + xi1 xi2^2/2: Hessian singular on xi1 = xi2^2",
        ),
        HamiltonianModel(
            "quartic1", 1, (PolyTerm(0.25, (4,)),), (TrigTerm(1.0, (1,)),), [[0.5, 1.0]],
            description="xi^4/4 with cos q",
        ),
    ]
    catalog = {m.name: m for m in models}
    catalog["rotator"] = catalog["twist1"]
    return catalog


_CATALOG = _make_catalog()


def builtin_models() -> dict[str, HamiltonianModel]:
    return dict(_CATALOG)


def get_model(name: str) -> HamiltonianModel:
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(_CATALOG)}") from None


def model_from_config(spec) -> HamiltonianModel:
    """Build a model from a catalog name or a coefficient-list mapping.

    A mapping has keys ``n``, ``h0`` (list of ``{coeff, powers}``), ``h1`` (list
    of ``{coeff, k, kind, powers}``) and ``action_domain``; ``name`` may also
    refer to a catalog entry whose fields are then overridden.
    """
    if isinstance(spec, str):
        return get_model(spec)
    spec = dict(spec)
    base = _CATALOG.get(spec.get("name", ""))
    if base is not None and not ({"h0", "h1", "n"} & spec.keys()):
        if "action_domain" in spec:
            return HamiltonianModel(base.name, base.n, base.h0_terms, base.h1_terms,
                                    spec["action_domain"], spec.get("r", base.r),
                                    spec.get("s", base.s), base.description)
        return base
    n = int(spec["n"])
    h0 = tuple(PolyTerm(float(t["coeff"]), tuple(int(a) for a in t["powers"])) for t in spec["h0"])
    h1 = tuple(
        TrigTerm(float(t["coeff"]), tuple(int(a) for a in t["k"]), t.get("kind", "cos"),
                 tuple(int(a) for a in t["powers"]) if t.get("powers") else None)
        for t in spec.get("h1", [])
    )
    return HamiltonianModel(spec.get("name", "custom"), n, h0, h1, spec["action_domain"],
                            float(spec.get("r", 0.5)), float(spec.get("s", 1.0)))


def sample_points(model: HamiltonianModel, count: int, rng: np.random.Generator,
                  shrink: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random ``(p, q)`` pairs with ``p`` inside a shrunken copy of ``V``."""
    lo = model.action_domain[:, 0] + shrink
    hi = model.action_domain[:, 1] - shrink
    p = lo + (hi - lo) * rng.random((count, model.n))
    q = 2 * np.pi * rng.random((count, model.n))
    return p, q


def as_points(x: Sequence[float] | np.ndarray, n: int) -> np.ndarray:
    """Coerce a point or batch of points to shape ``(N, n)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr.reshape(-1, n) if arr.size != n else arr.reshape(1, n)
    return arr
