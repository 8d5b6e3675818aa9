"""Time integration and perturbation experiments.

Diffusion is advanced with the trapezoidal rule (Crank-Nicolson) and the
reactions with Heun's explicit trapezoid, as a predictor-corrector pair::

    (I - dt/2 Lap) v* = (I + dt/2 Lap) v + dt g(u, v)
    u* = u + dt f(u, v)
    (I - dt/2 Lap) v' = (I + dt/2 Lap) v + dt/2 (g(u, v) + g(u*, v*))
    u' = u + dt/2 (f(u, v) + f(u*, v*))

The ODE components see no spatial coupling.  Because the trapezoidal
weights annihilate ``Lap``, the weighted mean of ``v`` changes only through
the reaction term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BlowUpError, FitError, SingularityError
from .grid import EigenPair, Grid, NeumannLaplacian
from .model import SystemModel, eval_rhs
from .spectral import dominant_mode, linearize
from .stationary import StationaryState

log = logging.getLogger(__name__)

BLOWUP_CAP = 1e6
FIT_BAND = (1e-8, 1e-2)
MIN_FIT_SAMPLES = 10
DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class SimState:
    U: np.ndarray  # (n, M)
    V: np.ndarray  # (M,)
    t: float = 0.0

    def stacked(self) -> np.ndarray:
        return np.vstack([self.U, self.V[None, :]])


@dataclass
class SimulationTrace:
    times: List[float]
    deviation_norms: List[float]
    component_norms: List[List[float]] = field(default_factory=list)
    fitted_rate: Optional[float] = None
    fit_window: Optional[Tuple[float, float]] = None
    mass_balance: float = 0.0
    final_state: Optional[SimState] = field(default=None, repr=False)
    stopped_early: bool = False

    def __post_init__(self):
        if len(self.times) != len(self.deviation_norms):
            raise ValueError("times and deviation_norms differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.asarray(self.deviation_norms) < 0):
            raise ValueError("deviation norms must be non-negative")

    @property
    def max_deviation(self) -> float:
        return float(max(self.deviation_norms))


class IMEXStepper:
    """Holds the factorized ``I - dt/2 Lap`` for repeated steps at a fixed ``dt``."""

    def __init__(self, model: SystemModel, lap: NeumannLaplacian, dt: float, cap: float = BLOWUP_CAP):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        self.model, self.lap, self.dt, self.cap = model, lap, float(dt), cap
        M = lap.grid.M
        eye = sp.identity(M, format="csc")
        half = 0.5 * self.dt * lap.matrix.tocsc()
        self.explicit = (eye + half).tocsr()
        try:
            self._lu = spla.splu((eye - half).tocsc())
        except RuntimeError as exc:
            raise SingularityError(f"implicit diffusion matrix is singular: {exc}") from exc

    def _guard(self, U, V, t):
        big = max(np.max(np.abs(U)), np.max(np.abs(V)))
        if not np.isfinite(big) or big > self.cap:
            raise BlowUpError(f"state sup-norm {big:.3e} exceeds {self.cap:g} at t={t:.6g}", t=t)

    def step(self, s: SimState) -> SimState:
        dt = self.dt
        f0, g0 = eval_rhs(self.model, s.U, s.V)
        base = self.explicit @ s.V
        V1 = self._lu.solve(base + dt * g0)
        U1 = s.U + dt * f0
        f1, g1 = eval_rhs(self.model, U1, V1)
        V2 = self._lu.solve(base + 0.5 * dt * (g0 + g1))
        U2 = s.U + 0.5 * dt * (f0 + f1)
        t = s.t + dt
        self._guard(U2, V2, t)
        return SimState(U2, V2, t)


def step(model: SystemModel, grid: Grid, lap: NeumannLaplacian, s: SimState, dt: float) -> SimState:
    """One IMEX step.  Refactorizes every call; use :class:`IMEXStepper` in loops."""
    if s.V.shape != (grid.M,):
        raise ValueError("state does not match the grid")
    return IMEXStepper(model, lap, dt).step(s)


def _deviation(s: SimState, ref: np.ndarray):
    diff = np.abs(s.stacked() - ref)
    comps = diff.max(axis=1)
    return float(comps.max()), comps


def simulate(
    model: SystemModel,
    grid: Grid,
    lap: NeumannLaplacian,
    init: SimState,
    T: float,
    dt: float = DEFAULT_DT,
    ref: Optional[StationaryState] = None,
    record_every: int = 10,
    stop_above: Optional[float] = None,
) -> SimulationTrace:
    """Integrate to time ``T`` recording the sup-norm distance to ``ref``.

    With ``stop_above`` set, integration ends at the first recorded step
    whose deviation exceeds it.  ``mass_balance`` is the largest per-step
    mismatch between ``d/dt int v`` and ``int g`` (first order in ``dt``).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not T > 0 or dt > T:
        raise ValueError(f"need T > 0 and dt <= T, got T={T!r}, dt={dt!r}")
    stepper = IMEXStepper(model, lap, dt)
    ref_arr = init.stacked() if ref is None else np.vstack([ref.U, ref.V[None, :]])
    nsteps = int(math.ceil(T / dt - 1e-9))
    s = init
    dev, comps = _deviation(s, ref_arr)
    times, devs, cnorms = [s.t], [dev], [comps.tolist()]
    w = grid.weights
    mass_err = 0.0
    stopped = False
    for i in range(1, nsteps + 1):
        mass_before = w @ s.V
        g_before = w @ np.asarray(model.g(s.U, s.V))
        s = stepper.step(s)
        mass_err = max(mass_err, abs((w @ s.V - mass_before) / dt - g_before))
        if i % record_every == 0 or i == nsteps:
            dev, comps = _deviation(s, ref_arr)
            times.append(s.t)
            devs.append(dev)
            cnorms.append(comps.tolist())
            if stop_above is not None and dev > stop_above:
                stopped = True
                break
    return SimulationTrace(
        times=times, deviation_norms=devs, component_norms=cnorms,
        mass_balance=float(mass_err), final_state=s, stopped_early=stopped,
    )


@dataclass(frozen=True)
class NoiseSpec:
    seed: int = 0
    components: str = "all"  # "all" or "v"


def perturb(
    state: StationaryState,
    mode: Union[EigenPair, np.ndarray, NoiseSpec],
    eps: float,
    include_u: bool = False,
) -> SimState:
    """Initial state near ``state``.

    ``mode`` may be an :class:`EigenPair` (added to ``V``, and to each row of
    ``U`` when ``include_u``), a full ``(n + 1, M)`` direction, or a
    :class:`NoiseSpec` for seeded uniform noise in ``[-eps, eps]``.
    Directions are scaled to unit sup-norm first, so the initial deviation
    is exactly ``eps``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    n, M = state.U.shape
    if isinstance(mode, NoiseSpec):
        rng = np.random.default_rng(mode.seed)
        if mode.components == "v":
            direction = np.zeros((n + 1, M))
            direction[-1] = rng.uniform(-1.0, 1.0, M)
        elif mode.components == "all":
            direction = rng.uniform(-1.0, 1.0, (n + 1, M))
        else:
            raise ValueError(f"unknown noise components {mode.components!r}")
        return SimState(state.U + eps * direction[:n], state.V + eps * direction[n], 0.0)
    if isinstance(mode, EigenPair):
        phi = np.asarray(mode.phi_k, dtype=float)
        direction = np.zeros((n + 1, M))
        direction[-1] = phi
        if include_u:
            direction[:n] = phi
    else:
        direction = np.asarray(mode, dtype=float).reshape(n + 1, M)
    scale = np.max(np.abs(direction))
    if scale == 0:
        raise ValueError("perturbation direction is zero")
    direction = direction / scale
    return SimState(state.U + eps * direction[:n], state.V + eps * direction[n], 0.0)


def growth_rate(
    trace: SimulationTrace,
    band: Tuple[float, float] = FIT_BAND,
    min_samples: int = MIN_FIT_SAMPLES,
) -> float:
    """Least-squares slope of ``log(deviation)`` over the longest in-band run of samples."""
    t = np.asarray(trace.times, dtype=float)
    y = np.asarray(trace.deviation_norms, dtype=float)
    inside = (y >= band[0]) & (y <= band[1])
    best, start = (0, 0), None
    for i, ok in enumerate(np.append(inside, False)):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    lo, hi = best
    if hi - lo < min_samples:
        raise FitError(f"only {hi - lo} samples in the band [{band[0]:g}, {band[1]:g}]; need {min_samples}")
    slope, _ = np.polyfit(t[lo:hi], np.log(y[lo:hi]), 1)
    trace.fitted_rate = float(slope)
    trace.fit_window = (float(t[lo]), float(t[hi - 1]))
    return float(slope)


@dataclass
class EscapeRun:
    eps: float
    escaped: bool
    t_escape: Optional[float]
    max_deviation: float
    trace: SimulationTrace = field(repr=False)


@dataclass
class EscapeReport:
    passed: bool
    delta: float
    T: float
    dt: float
    mode_eigenvalue: Optional[complex]
    runs: List[EscapeRun]
    resolution: int

    @property
    def witness(self) -> str:
        status = "escape" if self.passed else "no escape"
        return f"{status} at resolution M={self.resolution} by time T={self.T:g}"

    def to_dict(self) -> dict:
        lam = self.mode_eigenvalue
        return {
            "result": "PASS" if self.passed else "FAIL",
            "witness": self.witness,
            "delta": self.delta,
            "T": self.T,
            "dt": self.dt,
            "mode_eigenvalue": None if lam is None else [lam.real, lam.imag],
            "runs": [
                {
                    "eps": r.eps,
                    "escaped": r.escaped,
                    "t_escape": r.t_escape,
                    "max_deviation": r.max_deviation,
                    "fitted_rate": r.trace.fitted_rate,
                }
                for r in self.runs
            ],
        }


def lyapunov_escape_test(
    model: SystemModel,
    grid: Grid,
    lap: NeumannLaplacian,
    state: StationaryState,
    eps_list: Sequence[float],
    delta: float,
    T: float,
    dt: float = DEFAULT_DT,
    mode=None,
    record_every: int = 10,
) -> EscapeReport:
    """Check whether perturbations of size ``eps`` reach distance ``delta`` before ``T``.

    PASS means every ``eps`` escaped.  This is a statement about the grid
    with ``grid.M`` nodes on ``[0, T]`` only.
    """
    if not 0 < delta <= BLOWUP_CAP:
        raise ValueError(f"delta must lie in (0, {BLOWUP_CAP:g}], got {delta!r}")
    if not eps_list:
        raise ValueError("eps_list is empty")
    lam = None
    if mode is None:
        lam, mode = dominant_mode(linearize(model, grid, state), lap)
    runs = []
    for eps in eps_list:
        init = perturb(state, mode, eps)
        trace = simulate(model, grid, lap, init, T, dt, ref=state, record_every=record_every, stop_above=delta)
        escaped = trace.stopped_early
        try:
            growth_rate(trace)
        except FitError:
            pass
        runs.append(EscapeRun(
            eps=float(eps), escaped=escaped,
            t_escape=trace.times[-1] if escaped else None,
            max_deviation=trace.max_deviation, trace=trace,
        ))
        log.info("eps=%g escaped=%s max deviation %.3e", eps, escaped, trace.max_deviation)
    return EscapeReport(
        passed=all(r.escaped for r in runs), delta=float(delta), T=float(T), dt=float(dt),
        mode_eigenvalue=lam, runs=runs, resolution=grid.M,
    )


class RemainderFit(NamedTuple):
    C_fit: float
    eta_fit: float


def remainder_growth_check(
    model: SystemModel,
    grid: Grid,
    state: StationaryState,
    amplitudes: Sequence[float],
    seed: int = 0,
    roundoff: float = 1e-13,
) -> RemainderFit:
    """Fit ``|N(w)| ~ C |w|^(1 + eta)`` for ``N(w) = F(s + w) - F(s) - DF(s) w``.

    The diffusion term is linear and cancels, so only the reactions enter.
    A remainder at roundoff level for every amplitude (a linear model)
    returns ``C = 0, eta = inf``.
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.ndim != 1 or amps.size < 5:
        raise ValueError("need at least 5 amplitudes")
    if np.any(amps <= 0) or np.any(amps > 0.1):
        raise ValueError("amplitudes must lie in (0, 0.1]")
    n, M = state.U.shape
    rng = np.random.default_rng(seed)
    direction = rng.uniform(-1.0, 1.0, (n + 1, M))
    direction /= np.max(np.abs(direction))
    U, V = state.U, state.V
    F0, G0 = eval_rhs(model, U, V)
    fu = np.asarray(model.jac_fu(U, V), dtype=float).reshape(n, n, M)
    fv = np.asarray(model.jac_fv(U, V), dtype=float).reshape(n, M)
    gu = np.asarray(model.jac_gu(U, V), dtype=float).reshape(n, M)
    gv = np.asarray(model.jac_gv(U, V), dtype=float).reshape(M)
    norms = []
    for a in amps:
        wu, wv = a * direction[:n], a * direction[n]
        F1, G1 = eval_rhs(model, U + wu, V + wv)
        NF = F1 - F0 - (np.einsum("ijm,jm->im", fu, wu) + fv * wv)
        NG = G1 - G0 - (np.sum(gu * wu, axis=0) + gv * wv)
        norms.append(max(np.max(np.abs(NF)), np.max(np.abs(NG))))
    norms = np.asarray(norms)
    scale = max(1.0, float(np.max(np.abs(np.vstack([F0, G0[None, :]])))))
    if np.all(norms <= roundoff * scale):
        return RemainderFit(0.0, math.inf)
    keep = norms > roundoff * scale
    if keep.sum() < 2:
        raise FitError("remainder is at roundoff level for all but one amplitude")
    slope, icept = np.polyfit(np.log(amps[keep]), np.log(norms[keep]), 1)
    return RemainderFit(float(math.exp(icept)), float(slope - 1.0))
