"""Reaction-diffusion-ODE systems: nonlinearities, Jacobians, constant equilibria.

A system couples ``n`` ODEs with one diffusing component::

    u_t = f(u, v)
    v_t = Laplacian(v) + g(u, v)      (homogeneous Neumann boundary)

All callbacks are vectorized over trailing axes.  With ``u`` of shape
``(n, *S)`` and ``v`` of shape ``S``:

=========  ============
callback   result shape
=========  ============
f          ``(n, *S)``
g          ``S``
jac_fu     ``(n, n, *S)``
jac_fv     ``(n, *S)``
jac_gu     ``(n, *S)``
jac_gv     ``S``
=========  ============

so that a single point is ``u.shape == (n,)`` and ``v`` a scalar, and a grid
field is ``u.shape == (n, M)``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, SingularityError

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-12
NEWTON_MAXITER = 50
DEDUP_RADIUS = 1e-8
BIFURCATION_TOL = 1e-8


@dataclass(frozen=True)
class SystemModel:
    name: str
    n: int
    f: Callable
    g: Callable
    jac_fu: Callable
    jac_fv: Callable
    jac_gu: Callable
    jac_gv: Callable
    # per-component (lo, hi) for u_1..u_n, v; used for smoothness checks only
    box: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if not self.box:
            object.__setattr__(self, "box", ((-2.0, 2.0),) * (self.n + 1))
        if len(self.box) != self.n + 1:
            raise ValueError("box needs one (lo, hi) pair per component (n + 1)")

    def jacobian(self, u, v):
        """Full (n+1)x(n+1) Jacobian of (f, g) at a single point."""
        u = np.asarray(u, dtype=float)
        J = np.empty((self.n + 1, self.n + 1))
        J[: self.n, : self.n] = self.jac_fu(u, v)
        J[: self.n, self.n] = self.jac_fv(u, v)
        J[self.n, : self.n] = self.jac_gu(u, v)
        J[self.n, self.n] = self.jac_gv(u, v)
        return J


@dataclass(frozen=True)
class Equilibrium:
    u_bar: np.ndarray
    v_bar: float
    residual: float

    def as_vector(self):
        return np.append(self.u_bar, self.v_bar)


@dataclass(frozen=True)
class EquilibriumMatrices:
    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    d0: float

    def __post_init__(self):
        for name in ("A0", "B0", "C0"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if not np.isfinite(self.d0):
            raise ValueError("d0 is not finite")

    @property
    def block(self):
        n = self.A0.shape[0]
        out = np.empty((n + 1, n + 1))
        out[:n, :n] = self.A0
        out[:n, n] = self.B0
        out[n, :n] = self.C0
        out[n, n] = self.d0
        return out


def eval_rhs(model: SystemModel, u, v):
    """Return ``(f(u, v), g(u, v))``; raise DomainError on non-finite output."""
    u = np.asarray(u, dtype=float)
    fu = np.asarray(model.f(u, v), dtype=float)
    gv = np.asarray(model.g(u, v), dtype=float)
    if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(gv))):
        raise DomainError(
            f"{model.name}: non-finite reaction term at u={u!r}, v={v!r}", point=(u, v)
        )
    return fu, gv


def _fd_jacobian(model, u, v, h):
    n = model.n
    z = np.append(np.asarray(u, dtype=float), float(v))
    J = np.empty((n + 1, n + 1))
    for j in range(n + 1):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        fp, gp = eval_rhs(model, zp[:n], zp[n])
        fm, gm = eval_rhs(model, zm[:n], zm[n])
        J[:n, j] = (fp - fm) / (2 * h)
        J[n, j] = (gp - gm) / (2 * h)
    return J


def jacobian_check(model: SystemModel, u, v, h: float = 1e-6) -> float:
    """Largest discrepancy between supplied Jacobians and central differences.

    Entries are compared relative to ``max(1, |J_fd|)`` so that vanishing
    derivatives do not blow up the ratio.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    J = model.jacobian(u, v)
    J_fd = _fd_jacobian(model, u, v, h)
    return float(np.max(np.abs(J - J_fd) / np.maximum(1.0, np.abs(J_fd))))


def _newton_point(model, z0, tol, maxiter):
    n = model.n
    z = np.array(z0, dtype=float)
    for it in range(maxiter + 1):
        f, g = eval_rhs(model, z[:n], z[n])
        F = np.append(f, g)
        res = float(np.max(np.abs(F)))
        if res <= tol:
            return z, res, it
        if it == maxiter:
            break
        try:
            dz = np.linalg.solve(model.jacobian(z[:n], z[n]), -F)
        except np.linalg.LinAlgError:
            return None, res, it
        z = z + dz
        if not np.all(np.isfinite(z)):
            return None, np.inf, it
    return None, res, maxiter


def find_equilibria(
    model: SystemModel,
    guesses: Sequence,
    tol: float = EQUILIBRIUM_TOL,
    maxiter: int = NEWTON_MAXITER,
    radius: float = DEDUP_RADIUS,
) -> List[Equilibrium]:
    """Newton on (f, g) from each guess ``(u, v)``; converged points are de-duplicated."""
    if len(guesses) == 0:
        raise ValueError("at least one guess is required")
    found: List[Equilibrium] = []
    failures = []
    for u0, v0 in guesses:
        z0 = np.append(np.atleast_1d(np.asarray(u0, dtype=float)), float(v0))
        if z0.size != model.n + 1:
            raise ValueError(f"guess has {z0.size - 1} ODE components, model has {model.n}")
        try:
            z, res, it = _newton_point(model, z0, tol, maxiter)
        except DomainError as exc:
            failures.append((z0, str(exc)))
            continue
        if z is None:
            failures.append((z0, f"no convergence (residual {res:.3e} after {it} iterations)"))
            continue
        if any(np.max(np.abs(e.as_vector() - z)) < radius for e in found):
            continue
        found.append(Equilibrium(u_bar=z[: model.n].copy(), v_bar=float(z[model.n]), residual=res))
    if not found:
        for z0, why in failures:
            log.warning("%s: guess %s failed: %s", model.name, z0, why)
    return found


def equilibrium_matrices(
    model: SystemModel, eq: Equilibrium, tol: float = EQUILIBRIUM_TOL
) -> EquilibriumMatrices:
    if eq.residual > tol:
        raise ValueError(f"equilibrium residual {eq.residual:.3e} exceeds tolerance {tol:.1e}")
    u, v = eq.u_bar, eq.v_bar
    return EquilibriumMatrices(
        A0=np.atleast_2d(np.asarray(model.jac_fu(u, v), dtype=float)),
        B0=np.atleast_1d(np.asarray(model.jac_fv(u, v), dtype=float)),
        C0=np.atleast_1d(np.asarray(model.jac_gu(u, v), dtype=float)),
        d0=float(model.jac_gv(u, v)),
    )


def _check_nonsingular(A, what="A0"):
    det = np.linalg.det(A)
    if det == 0.0 or np.linalg.cond(A) > 1e14:
        raise SingularityError(f"{what} is singular (det = {det:.3e})")
    return det


def det_identity(m: EquilibriumMatrices):
    """Schur complement ``d0 - C0 A0^-1 B0`` and ``det(block) / det(A0)``.

    Returns ``(lhs, rhs, abs_diff)``.
    """
    det_A = _check_nonsingular(m.A0)
    lhs = float(m.d0 - m.C0 @ np.linalg.solve(m.A0, m.B0))
    rhs = float(np.linalg.det(m.block) / det_A)
    return lhs, rhs, abs(lhs - rhs)


def bifurcation_condition(
    m: EquilibriumMatrices, laplacian_eigs: Sequence[float], tol: float = BIFURCATION_TOL
) -> Optional[int]:
    """Smallest ``k > 0`` with ``|d0 - C0 A0^-1 B0 - mu_k| < tol``, else None."""
    lhs, _, _ = det_identity(m)
    for k, mu in enumerate(laplacian_eigs):
        if k == 0:
            continue
        if abs(lhs - mu) < tol:
            return k
    return None


# --------------------------------------------------------------------------
# registry

def _const(value, shape):
    return np.full(shape, float(value))


def linear_model(a: float, b: float, c: float, d: float) -> SystemModel:
    """f = a u + b v, g = c u + d v with a single ODE component."""

    def f(u, v):
        return a * u + b * np.asarray(v)

    def g(u, v):
        return c * u[0] + d * np.asarray(v)

    return SystemModel(
        name=f"linear({a:g},{b:g},{c:g},{d:g})",
        n=1,
        f=f,
        g=g,
        jac_fu=lambda u, v: _const(a, (1, 1) + np.shape(v)),
        jac_fv=lambda u, v: _const(b, (1,) + np.shape(v)),
        jac_gu=lambda u, v: _const(c, (1,) + np.shape(v)),
        jac_gv=lambda u, v: _const(d, np.shape(v)),
    )


def sqcoupled_model() -> SystemModel:
    """f = v^2 - u, g = u - v; equilibria (0, 0) and (1, 1)."""
    return SystemModel(
        name="sqcoupled",
        n=1,
        f=lambda u, v: np.asarray(v) ** 2 - u,
        g=lambda u, v: u[0] - v,
        jac_fu=lambda u, v: _const(-1.0, (1, 1) + np.shape(v)),
        jac_fv=lambda u, v: (2.0 * np.asarray(v, dtype=float))[None, ...],
        jac_gu=lambda u, v: _const(1.0, (1,) + np.shape(v)),
        jac_gv=lambda u, v: _const(-1.0, np.shape(v)),
    )


def frozen_model(mu1: float = 1.0, stable: bool = True) -> SystemModel:
    """u_t = 0 coupled to v_t = Lap v + c u + s v.

    The stable variant uses ``c = mu1 + 1, s = -1``; the unstable one
    ``c = mu1 - 1, s = +1``.  Both have ``u = v = Phi_1`` as a stationary
    solution when ``mu1`` is the first nonzero Neumann eigenvalue.
    """
    c, s = (mu1 + 1.0, -1.0) if stable else (mu1 - 1.0, 1.0)
    tag = "frozen-stable" if stable else "frozen-unstable"
    return SystemModel(
        name=f"{tag}({mu1:g})",
        n=1,
        f=lambda u, v: np.zeros_like(np.asarray(u, dtype=float)),
        g=lambda u, v: c * u[0] + s * v,
        jac_fu=lambda u, v: _const(0.0, (1, 1) + np.shape(v)),
        jac_fv=lambda u, v: _const(0.0, (1,) + np.shape(v)),
        jac_gu=lambda u, v: _const(c, (1,) + np.shape(v)),
        jac_gv=lambda u, v: _const(s, np.shape(v)),
    )


def autocatalytic_model() -> SystemModel:
    """f = u - u^3 - v, g = u - v; f_u = 1 > 0 at the equilibrium (0, 0)."""
    return SystemModel(
        name="autocatalytic",
        n=1,
        f=lambda u, v: u - u**3 - np.asarray(v),
        g=lambda u, v: u[0] - v,
        jac_fu=lambda u, v: (1.0 - 3.0 * u**2)[None, ...],
        jac_fv=lambda u, v: _const(-1.0, (1,) + np.shape(v)),
        jac_gu=lambda u, v: _const(1.0, (1,) + np.shape(v)),
        jac_gv=lambda u, v: _const(-1.0, np.shape(v)),
    )


_REGISTRY: Dict[str, Callable[..., SystemModel]] = {
    "linear": linear_model,
    "sqcoupled": sqcoupled_model,
    "frozen-stable": lambda mu1=1.0: frozen_model(mu1, stable=True),
    "frozen-unstable": lambda mu1=1.0: frozen_model(mu1, stable=False),
    "autocatalytic": autocatalytic_model,
}

_SPEC_RE = re.compile(r"^\s*([A-Za-z][\w\-]*)\s*(?:\(([^()]*)\))?\s*$")


def register_model(name: str, factory: Callable[..., SystemModel]) -> None:
    """Make ``factory`` reachable through :func:`get_model` as ``name(p1, p2, ...)``."""
    if not _SPEC_RE.match(name) or "(" in name:
        raise ValueError(f"invalid model name {name!r}")
    _REGISTRY[name] = factory


def registered_models() -> List[str]:
    return sorted(_REGISTRY)


def parse_model_spec(spec: str) -> Tuple[str, Tuple[float, ...]]:
    m = _SPEC_RE.match(spec)
    if m is None:
        raise ValueError(f"malformed model spec {spec!r}")
    name, args = m.group(1), m.group(2)
    params: Tuple[float, ...] = ()
    if args is not None and args.strip():
        try:
            params = tuple(float(a) for a in args.split(","))
        except ValueError:
            raise ValueError(f"malformed parameters in model spec {spec!r}") from None
    return name, params


def get_model(spec: str) -> SystemModel:
    """Build a registered model from a string such as ``"linear(-1,1,2,-1)"``."""
    name, params = parse_model_spec(spec)
    if name not in _REGISTRY:
        raise ValueError(f"unknown model {name!r}; known: {', '.join(registered_models())}")
    try:
        return _REGISTRY[name](*params)
    except TypeError as exc:
        raise ValueError(f"wrong parameters for model {name!r}: {exc}") from None


def perturbed_model(model: SystemModel, d: float, v_bar: float) -> SystemModel:
    """The system whose stationary problem is ``d Lap V + (1-d)(V - v_bar) + g = 0``.

    Dividing by ``d`` gives a reaction-diffusion-ODE system with unit
    diffusion and ``g_d = (g + (1-d)(v - v_bar)) / d``; continuation points
    at ``d != 1`` are stationary solutions of this system.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    if d == 1.0:
        return model
    s = 1.0 - d

    def g(u, v):
        return (model.g(u, v) + s * (np.asarray(v) - v_bar)) / d

    return SystemModel(
        name=f"{model.name}[d={d!r},vbar={v_bar!r}]",
        n=model.n,
        f=model.f,
        g=g,
        jac_fu=model.jac_fu,
        jac_fv=model.jac_fv,
        jac_gu=lambda u, v: np.asarray(model.jac_gu(u, v)) / d,
        jac_gv=lambda u, v: (np.asarray(model.jac_gv(u, v)) + s) / d,
        box=model.box,
    )
