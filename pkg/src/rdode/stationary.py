"""Regular stationary solutions.

A regular stationary solution has ``U(x) = k(V(x))`` where ``k`` solves
``f(k(v), v) = 0``, and ``V`` solves the scalar Neumann problem
``Lap V + h(V) = 0`` with ``h(v) = g(k(v), v)``.  Non-constant solutions
near an equilibrium are found by continuation in the auxiliary parameter
``d`` of::

    d Lap V + (1 - d)(V - v_bar) + h(V) = 0

which branches off the constant solution ``V = v_bar`` where the linearized
problem loses invertibility in the Neumann mode ``Phi_k``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BranchNotFoundError,
    BranchSolveError,
    ConvergenceError,
    DegenerateBranchError,
    DegenerateBranchWarning,
    DomainError,
    SingularityError,
)
from .grid import Grid, NeumannLaplacian, laplacian_eigenpairs, neumann_laplacian
from .model import Equilibrium, EquilibriumMatrices, SystemModel, eval_rhs, perturbed_model

log = logging.getLogger(__name__)

BRANCH_TOL = 1e-12
ELLIPTIC_TOL = 1e-10
STATIONARY_TOL = 1e-8
CONSTANT_AMPLITUDE = 1e-6
DET_TOL = 1e-10
MAXITER = 50


@dataclass(frozen=True)
class StationaryState:
    U: np.ndarray  # (n, M)
    V: np.ndarray  # (M,)
    residual_f: float
    residual_pde: float
    provenance: str
    model_name: str = ""
    d_ell: float = 1.0
    v_bar: Optional[float] = None
    tol: float = STATIONARY_TOL

    @property
    def converged(self) -> bool:
        return self.residual_f <= self.tol and self.residual_pde <= self.tol

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def M(self) -> int:
        return self.V.shape[0]

    def amplitude(self, grid: Grid) -> float:
        """Largest sup-norm distance of any component from its own mean."""
        comps = np.vstack([self.U, self.V[None, :]])
        means = grid.mean(comps)
        return float(np.max(np.abs(comps - means[:, None])))


@dataclass(frozen=True)
class BranchPoint:
    d_ell: float
    state: StationaryState
    amplitude: float
    model: SystemModel = field(repr=False, compare=False)
    method: str = "natural"


# --------------------------------------------------------------------------
# u = k(v)

def _branch_newton(model, V, U0, tol=BRANCH_TOL, maxiter=MAXITER):
    """Batched Newton for f(U[:, i], V[i]) = 0 in U at every node.

    Returns ``(U, det_fu)``; raises BranchSolveError naming the first
    non-converged node.
    """
    V = np.asarray(V, dtype=float)
    U = np.array(np.broadcast_to(U0, (model.n,) + V.shape), dtype=float)
    n = model.n
    for it in range(maxiter + 1):
        F, _ = eval_rhs(model, U, V)
        res = np.max(np.abs(F), axis=0) if F.ndim > 1 else np.max(np.abs(F))
        J = np.moveaxis(np.asarray(model.jac_fu(U, V), dtype=float).reshape((n, n) + V.shape), (0, 1), (-2, -1))
        det = np.linalg.det(J)
        if np.all(res <= tol):
            return U, det
        if it == maxiter:
            break
        bad = np.abs(det) <= DET_TOL * np.maximum(1.0, np.abs(J).max(axis=(-2, -1)) ** n)
        if np.any(bad & (res > tol)):
            node = int(np.flatnonzero(np.atleast_1d(bad & (res > tol)))[0])
            raise DegenerateBranchError(
                f"{model.name}: f_u singular at node {node} while solving f(u, v) = 0",
                iterate=U, residual=float(np.max(res)), iterations=it, node=node,
            )
        rhs = np.moveaxis(-F, 0, -1)[..., None]
        dU = np.linalg.solve(J, rhs)[..., 0]
        U = U + np.moveaxis(dU, -1, 0)
        if not np.all(np.isfinite(U)):
            break
    res = np.atleast_1d(res)
    node = int(np.argmax(res))
    raise BranchSolveError(
        f"{model.name}: f(u, v) = 0 not solved in u (residual {res[node]:.3e} at node {node})",
        iterate=U, residual=float(res[node]), iterations=it, node=node,
    )


def solve_branch_k(model: SystemModel, v: float, guess, tol: float = BRANCH_TOL) -> np.ndarray:
    """Solve ``f(u, v) = 0`` for ``u`` at fixed scalar ``v`` by Newton."""
    u0 = np.atleast_1d(np.asarray(guess, dtype=float))
    U, det = _branch_newton(model, np.float64(v), u0, tol=tol)
    if abs(det) <= DET_TOL:
        warnings.warn(
            f"{model.name}: f_u is singular at the branch point v={v!r}; k(v) is not unique",
            DegenerateBranchWarning, stacklevel=2,
        )
    return U


def _h_and_slope(model, U, V):
    """h = g(U, V) and h' = -g_u f_u^-1 f_v + g_v, vectorized over nodes."""
    n = model.n
    V = np.asarray(V, dtype=float)
    _, h = eval_rhs(model, U, V)
    A = np.moveaxis(np.asarray(model.jac_fu(U, V), dtype=float).reshape((n, n) + V.shape), (0, 1), (-2, -1))
    B = np.moveaxis(np.asarray(model.jac_fv(U, V), dtype=float).reshape((n,) + V.shape), 0, -1)
    C = np.moveaxis(np.asarray(model.jac_gu(U, V), dtype=float).reshape((n,) + V.shape), 0, -1)
    d = np.asarray(model.jac_gv(U, V), dtype=float)
    try:
        kprime = -np.linalg.solve(A, B[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise SingularityError(f"{model.name}: f_u is singular, h'(v) undefined") from None
    return h, np.sum(C * kprime, axis=-1) + d


def reduced_h(model: SystemModel, v: float, guess) -> float:
    u = solve_branch_k(model, v, guess)
    _, g = eval_rhs(model, u, v)
    return float(g)


def reduced_h_prime(model: SystemModel, v: float, guess) -> float:
    u = solve_branch_k(model, v, guess)
    _, hp = _h_and_slope(model, u, np.float64(v))
    return float(hp)


# --------------------------------------------------------------------------
# reduced elliptic problem

def _elliptic_residual(model, lap, d, v_bar, V, U):
    h, hp = _h_and_slope(model, U, V)
    F = d * lap.apply(V) + (1.0 - d) * (V - v_bar) + h
    return F, hp


def _spsolve(A, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A.tocsc(), b)
        except (spla.MatrixRankWarning, RuntimeError):
            return None
    if not np.all(np.isfinite(x)):
        return None
    return x


def _newton_elliptic(model, lap, d, v_bar, V0, U0, tol=ELLIPTIC_TOL, maxiter=MAXITER):
    V = np.array(V0, dtype=float)
    U = _branch_newton(model, V, U0)[0]
    M = V.size
    for it in range(maxiter + 1):
        F, hp = _elliptic_residual(model, lap, d, v_bar, V, U)
        res = float(np.max(np.abs(F)))
        if res <= tol:
            return V, U, res
        if it == maxiter or not np.isfinite(res):
            break
        J = d * lap.matrix + sp.diags((1.0 - d) + hp, 0, shape=(M, M))
        dV = _spsolve(J, -F)
        if dV is None:
            raise ConvergenceError(
                f"singular Jacobian at Newton iterate {it} (d={d!r})", iterate=V, residual=res, iterations=it
            )
        V = V + dV
        U = _branch_newton(model, V, U)[0]
    raise ConvergenceError(
        f"reduced elliptic Newton did not converge (d={d!r}, residual {res:.3e})",
        iterate=V, residual=res, iterations=it,
    )


def solve_reduced_elliptic(
    model: SystemModel,
    grid: Grid,
    lap: NeumannLaplacian,
    d: float,
    v_bar: float,
    v_init,
    u_guess=None,
    tol: float = ELLIPTIC_TOL,
) -> np.ndarray:
    """Newton solve of ``d Lap V + (1 - d)(V - v_bar) + h(V) = 0``.

    ``u_guess`` seeds the per-node branch solve for ``k(V)``; a single
    ``n``-vector or an ``(n, M)`` array.  At ``d = 1`` this is the reduced
    problem ``Lap V + h(V) = 0``.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    v_init = np.asarray(v_init, dtype=float)
    if v_init.shape != (grid.M,) or not np.all(np.isfinite(v_init)):
        raise ValueError("v_init must be a finite vector with one value per node")
    if u_guess is None:
        u_guess = np.zeros((model.n, 1))
    u_guess = np.asarray(u_guess, dtype=float)
    if u_guess.ndim == 1:
        u_guess = u_guess[:, None]
    V, _, _ = _newton_elliptic(model, lap, d, v_bar, v_init, u_guess, tol=tol)
    return V


def critical_d(h_slope: float, mu_k: float) -> float:
    """``d`` at which ``(1 - d) + h'(v_bar) = d mu_k``."""
    return (1.0 + h_slope) / (1.0 + mu_k)


# --------------------------------------------------------------------------
# assembly

def assemble_stationary(
    model: SystemModel,
    grid: Grid,
    V,
    U=None,
    lap: Optional[NeumannLaplacian] = None,
    provenance: Optional[str] = None,
    d_ell: float = 1.0,
    v_bar: Optional[float] = None,
    u_guess=None,
    tol: float = STATIONARY_TOL,
) -> StationaryState:
    """Build ``U = k(V)`` node by node and record both residuals.

    When ``f_u`` is singular, ``k`` is not defined and ``U`` must be
    supplied; a supplied ``U`` is used as is and tagged ``user-supplied``.
    """
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.M,):
        raise ValueError(f"V must have {grid.M} entries")
    lap = lap or neumann_laplacian(grid)
    if U is None:
        guess = np.zeros((model.n, 1)) if u_guess is None else np.asarray(u_guess, dtype=float)
        if guess.ndim == 1:
            guess = guess[:, None]
        U, det = _branch_newton(model, V, guess)
        bad = np.flatnonzero(np.abs(det) <= DET_TOL)
        if bad.size:
            raise DegenerateBranchError(
                f"{model.name}: f_u is singular at node {bad[0]}; k(V) is undefined, supply U explicitly",
                iterate=U, node=int(bad[0]),
            )
        if provenance is None:
            provenance = "constant" if np.ptp(V) == 0 else "user-supplied"
    else:
        U = np.array(U, dtype=float).reshape(model.n, grid.M)
        A = np.asarray(model.jac_fu(U, V), dtype=float).reshape(model.n, model.n, grid.M)
        if np.any(np.abs(np.linalg.det(np.moveaxis(A, (0, 1), (-2, -1)))) <= DET_TOL):
            warnings.warn(
                f"{model.name}: f_u singular along the supplied state (degenerate branch)",
                DegenerateBranchWarning, stacklevel=2,
            )
        provenance = provenance or "user-supplied"
    F, G = eval_rhs(model, U, V)
    res_f = float(np.max(np.abs(F)))
    res_pde = float(np.max(np.abs(lap.apply(V) + G)))
    return StationaryState(
        U=U, V=V, residual_f=res_f, residual_pde=res_pde, provenance=provenance,
        model_name=model.name, d_ell=d_ell, v_bar=v_bar, tol=tol,
    )


def constant_state(model: SystemModel, grid: Grid, eq: Equilibrium) -> StationaryState:
    V = np.full(grid.M, eq.v_bar)
    U = np.repeat(np.asarray(eq.u_bar, dtype=float)[:, None], grid.M, axis=1)
    return assemble_stationary(model, grid, V, U=U, provenance="constant", v_bar=eq.v_bar)


def linear_explicit_state(
    model: SystemModel, m: EquilibriumMatrices, grid: Grid, k: int, amplitude: float = 1.0
) -> StationaryState:
    """``(U, V) = (-A0^-1 B0 Phi_k, Phi_k)`` with ``Phi_k = amplitude * cos(k pi x / L)``.

    Exact for linear systems whose Schur complement equals ``mu_k``.
    """
    V = amplitude * np.cos(k * np.pi * grid.nodes / grid.L)
    coef = -np.linalg.solve(m.A0, m.B0)
    U = coef[:, None] * V[None, :]
    return assemble_stationary(model, grid, V, U=U, provenance="linear-explicit")


# --------------------------------------------------------------------------
# continuation

class _Tracker:
    """Solution curve of F(V, d) = 0 in (V, d) with natural and arclength steps."""

    def __init__(self, model, grid, lap, v_bar, tol):
        self.model, self.grid, self.lap = model, grid, lap
        self.v_bar, self.tol = v_bar, tol

    def norm(self, dV, dd):
        return float(np.sqrt(self.grid.norm(dV) ** 2 + dd**2))

    def natural(self, d, V0, U0):
        return _newton_elliptic(self.model, self.lap, d, self.v_bar, V0, U0, tol=self.tol)

    def arclength(self, V_pred, d_pred, U0, tau_V, tau_d, maxiter=MAXITER):
        """Corrector on ``F = 0`` with ``<tau, x - x_pred> = 0``."""
        lap, M, c = self.lap, self.grid.M, self.grid.weights
        V, d = np.array(V_pred, dtype=float), float(d_pred)
        U = _branch_newton(self.model, V, U0)[0]
        row = sp.csr_matrix((c * tau_V)[None, :])
        for it in range(maxiter + 1):
            if d <= 0:
                break
            F, hp = _elliptic_residual(self.model, lap, d, self.v_bar, V, U)
            N = self.grid.inner(tau_V, V - V_pred) + tau_d * (d - d_pred)
            res = float(np.max(np.abs(F)))
            if res <= self.tol and abs(N) <= 1e-12:
                return V, d, U, res
            if it == maxiter or not np.isfinite(res):
                break
            JV = d * lap.matrix + sp.diags((1.0 - d) + hp, 0, shape=(M, M))
            Fd = lap.apply(V) - (V - self.v_bar)
            J = sp.bmat([[JV, sp.csr_matrix(Fd[:, None])], [row, sp.csr_matrix([[tau_d]])]])
            step = _spsolve(J, -np.append(F, N))
            if step is None:
                break
            V = V + step[:M]
            d = d + step[M]
            U = _branch_newton(self.model, V, U)[0]
        raise ConvergenceError("pseudo-arclength corrector failed", iterate=V)


def _constant_branch_history(h_slope, mus, ds):
    return [
        {"d": float(d), "eigenvalues": [float(-d * mu + (1.0 - d) + h_slope) for mu in mus]}
        for d in ds
    ]


def continue_branch(
    model: SystemModel,
    grid: Grid,
    lap: NeumannLaplacian,
    eq: Equilibrium,
    k: int,
    d_range: Tuple[float, float],
    steps: int,
    eps: float = 1e-2,
    tol: float = ELLIPTIC_TOL,
    max_backoff: int = 8,
) -> List[BranchPoint]:
    """Trace non-constant solutions bifurcating from ``v_bar`` in mode ``k``.

    The first point comes from a pseudo-arclength corrector seeded with
    ``v_bar + eps * Phi_k`` at the critical ``d`` (``eps`` halves on
    failure); this lands on the bifurcating branch whichever side of the
    critical value it lies.  From there the branch is followed on a uniform
    grid of ``steps`` values of ``d`` towards the end of ``d_range`` on that
    side.  When Newton at fixed ``d`` fails or falls back onto the constant
    solution, pseudo-arclength steps take over until the target ``d`` is
    passed.  Points with amplitude below 1e-6 are discarded.
    """
    lo, hi = (float(x) for x in d_range)
    if not lo < hi:
        raise ValueError(f"empty d_range {d_range!r}")
    if steps < 1:
        raise ValueError("steps must be positive")
    if k < 1:
        raise ValueError("mode index k must be positive")
    pairs = laplacian_eigenpairs(lap, k + 2)
    phi, mu = pairs[k].phi_k, pairs[k].mu_k
    v_bar = eq.v_bar
    u_bar = np.asarray(eq.u_bar, dtype=float)
    _, hp = _h_and_slope(model, u_bar, np.float64(v_bar))
    h_slope = float(hp)
    d_c = critical_d(h_slope, mu)
    if not lo < d_c < hi:
        raise ValueError(f"d_range {d_range!r} does not straddle the critical value d = {d_c:.8g}")

    tracker = _Tracker(model, grid, lap, v_bar, tol)
    V_bar = np.full(grid.M, v_bar)
    U_bar = np.repeat(u_bar[:, None], grid.M, axis=1)

    def amplitude(V):
        return float(np.max(np.abs(V - v_bar)))

    def make_point(V, d, U, method):
        pm = perturbed_model(model, d, v_bar)
        state = assemble_stationary(
            pm, grid, V, U=U, lap=lap, provenance="continuation", d_ell=d, v_bar=v_bar
        )
        return BranchPoint(d_ell=float(d), state=state, amplitude=amplitude(V), model=pm, method=method)

    points: List[BranchPoint] = []
    for sign in (1.0, -1.0):
        # branch switch off the constant solution along the critical mode
        first = None
        e = eps
        for _ in range(max_backoff):
            try:
                V1, d1, U1, _ = tracker.arclength(V_bar + sign * e * phi, d_c, U_bar, sign * phi, 0.0)
            except (ConvergenceError, DomainError):
                e *= 0.5
                continue
            if amplitude(V1) >= CONSTANT_AMPLITUDE and lo <= d1 <= hi:
                first = (V1, d1, U1)
                break
            e *= 0.5
        if first is None:
            continue
        V1, d1, U1 = first
        seg = [make_point(V1, d1, U1, "branch-switch")]
        prev = (V_bar, d_c)
        cur = (V1, d1, U1)
        ds = tracker.norm(V1 - V_bar, d1 - d_c)

        side = np.sign(d1 - d_c) if abs(d1 - d_c) > 1e-12 else 0.0
        end = lo if side < 0 else hi
        targets = d1 + (end - d1) * np.arange(1, steps + 1) / steps if side != 0 else [None] * steps
        for target in targets:
            V, d, U = cur
            if target is not None:
                try:
                    Vn, Un, _ = tracker.natural(target, V, U)
                    if amplitude(Vn) >= CONSTANT_AMPLITUDE:
                        prev, cur = (V, d), (Vn, target, Un)
                        seg.append(make_point(Vn, target, Un, "natural"))
                        continue
                except (ConvergenceError, DomainError):
                    pass
            # natural step stalled: pseudo-arclength until the target is passed
            reached = False
            for _ in range(steps):
                V, d, U = cur
                dV, dd = V - prev[0], d - prev[1]
                nrm = tracker.norm(dV, dd)
                tau_V, tau_d = dV / nrm, dd / nrm
                try:
                    Va, da, Ua, _ = tracker.arclength(V + ds * tau_V, d + ds * tau_d, U, tau_V, tau_d)
                except (ConvergenceError, DomainError):
                    ds *= 0.5
                    if ds < 1e-8:
                        break
                    continue
                if amplitude(Va) < CONSTANT_AMPLITUDE or not lo <= da <= hi:
                    break
                prev, cur = (V, d), (Va, da, Ua)
                seg.append(make_point(Va, da, Ua, "arclength"))
                ds = min(2.0 * ds, 0.1)
                if target is not None and (da - target) * np.sign(target - d1) >= 0:
                    reached = True
                    break
            if not reached:
                break
            # land exactly on the target from the arclength point just past it
            V, d, U = cur
            try:
                Vn, Un, _ = tracker.natural(target, V, U)
            except (ConvergenceError, DomainError):
                continue
            if amplitude(Vn) >= CONSTANT_AMPLITUDE:
                # keep prev behind the target so the secant still points forward
                cur = (Vn, target, Un)
                seg.append(make_point(Vn, target, Un, "natural"))
        seg.sort(key=lambda p: (abs(p.d_ell - d_c), p.amplitude))
        points.extend(seg)
        if points:
            break

    if not points:
        ds_hist = np.linspace(lo, hi, 2 * steps + 1)
        mus = [p.mu_k for p in pairs]
        raise BranchNotFoundError(
            f"no non-constant solution found for d in [{lo}, {hi}] (critical d = {d_c:.8g})",
            eigenvalue_history=_constant_branch_history(h_slope, mus, ds_hist),
        )
    return points


def select_branch_point(points: List[BranchPoint], target_amplitude: float) -> BranchPoint:
    return min(points, key=lambda p: abs(p.amplitude - target_amplitude))
