"""Spectrum of the linearization at a stationary state.

The linearized operator acts on ``(phi, psi)`` as::

    L (phi, psi) = (A phi + B psi,  Lap psi + C phi + d psi)

with ``A = f_u, B = f_v, C = g_u, d = g_v`` sampled along the state.  Its
spectrum splits into the pointwise spectra of ``A(x)`` (the essential part)
and isolated eigenvalues.  For real ``lambda`` off the essential part,
eliminating ``phi`` leaves the self-adjoint scalar family::

    G(lambda) psi = Lap psi + p(x, lambda) psi,
    p(x, lambda) = -C (A - lambda)^-1 B + d

and ``lambda`` is an eigenvalue of ``L`` exactly when it is an eigenvalue of
``G(lambda)``.  ``eta0(lambda)``, the top eigenvalue of ``G(lambda)``, is
continuous and bounded on ``[0, inf)`` when ``A`` has no eigenvalues there,
so ``eta0(0) > 0`` forces a positive fixed point ``eta0(lam) = lam``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .errors import CapacityError, FixedPointRangeError, NearEssentialSpectrumError
from .grid import Grid, NeumannLaplacian, gradient, neumann_laplacian
from .model import SystemModel
from .stationary import StationaryState

EXCLUSION_RADIUS = 1e-6
FIXED_POINT_TOL = 1e-10
DENSE_CAP = 4000
DET_ZERO = 1e-10
CONSTANT_AMPLITUDE = 1e-6


class Verdict(str, enum.Enum):
    # positive real part in the spectrum of f_u along the state
    UNSTABLE_AUTOCATALYSIS = "unstable-autocatalysis"
    # positive fixed point of the Rayleigh family eta0
    UNSTABLE_FIXED_POINT = "unstable-fixed-point"
    DEGENERATE_DET_ZERO = "degenerate-det-zero"
    NO_CERTIFICATE = "no-certificate"


@dataclass(frozen=True)
class LinearizationField:
    A: np.ndarray  # (M, n, n)
    B: np.ndarray  # (M, n)
    C: np.ndarray  # (M, n)
    d: np.ndarray  # (M,)
    grid: Grid
    source_state: Optional[StationaryState] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        M = self.grid.M
        if not (self.A.shape[0] == self.B.shape[0] == self.C.shape[0] == self.d.shape[0] == M):
            raise ValueError("linearization samples must match the grid node count")

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    @property
    def M(self) -> int:
        return self.grid.M


@dataclass
class SpectrumReport:
    essential_samples: np.ndarray
    s_ess: float
    point_eigs: np.ndarray
    s_point: float
    spectral_bound: float
    lambda_bar: Optional[float]
    verdict: Verdict
    min_abs_det: float
    amplitude: float
    eta0_at_zero: Optional[float] = None
    method: str = "dense"

    def to_dict(self, max_eigs: int = 50) -> dict:
        eigs = sorted(self.point_eigs, key=lambda z: -z.real)[:max_eigs]
        ess = np.unique(np.round(self.essential_samples, 12))
        return {
            "verdict": self.verdict.value,
            "spectral_bound": float(self.spectral_bound),
            "s_ess": float(self.s_ess),
            "s_point": float(self.s_point),
            "lambda_bar": None if self.lambda_bar is None else float(self.lambda_bar),
            "eta0_at_zero": None if self.eta0_at_zero is None else float(self.eta0_at_zero),
            "min_abs_det_fu": float(self.min_abs_det),
            "state_amplitude": float(self.amplitude),
            "point_eigenvalues": [[float(z.real), float(z.imag)] for z in eigs],
            "essential_range_real": [float(ess.real.min()), float(ess.real.max())],
            "point_method": self.method,
        }


def linearize(model: SystemModel, grid: Grid, state: StationaryState) -> LinearizationField:
    n, M = model.n, grid.M
    U, V = state.U, state.V
    A = np.moveaxis(np.asarray(model.jac_fu(U, V), dtype=float).reshape(n, n, M), -1, 0)
    B = np.moveaxis(np.asarray(model.jac_fv(U, V), dtype=float).reshape(n, M), -1, 0)
    C = np.moveaxis(np.asarray(model.jac_gu(U, V), dtype=float).reshape(n, M), -1, 0)
    d = np.asarray(model.jac_gv(U, V), dtype=float).reshape(M)
    return LinearizationField(A=A.copy(), B=B.copy(), C=C.copy(), d=d.copy(), grid=grid, source_state=state)


def essential_spectrum(field: LinearizationField) -> Tuple[np.ndarray, float]:
    """Eigenvalues of ``A(x_i)`` at every node and their largest real part."""
    samples = np.linalg.eigvals(field.A).ravel()
    return samples, float(np.max(samples.real))


def _check_admissible(samples, lam, radius):
    dist = np.min(np.abs(samples - lam))
    if dist <= radius:
        raise NearEssentialSpectrumError(
            f"lambda={lam!r} lies within {radius:g} of the sampled spectrum of A(x) (distance {dist:.3e})"
        )


def reduced_potential(field: LinearizationField, lam, radius: float = EXCLUSION_RADIUS) -> np.ndarray:
    """``p(x, lam) = -C (A - lam I)^-1 B + d`` at every node."""
    samples, _ = essential_spectrum(field)
    _check_admissible(samples, lam, radius)
    n = field.n
    shifted = field.A - lam * np.eye(n)
    y = np.linalg.solve(shifted, field.B[..., None].astype(shifted.dtype))[..., 0]
    p = -np.sum(field.C * y, axis=-1) + field.d
    if np.isrealobj(lam) or np.imag(lam) == 0:
        return np.real(p)
    return p


def _sym_tridiagonal(lap: NeumannLaplacian, p):
    return lap.diagonal + p, lap.sym_offdiagonal


def eta0(field: LinearizationField, lap: NeumannLaplacian, lam: float, radius: float = EXCLUSION_RADIUS) -> float:
    """Largest eigenvalue of ``Lap + diag(p(., lam))`` (self-adjoint in the trapezoidal product)."""
    p = reduced_potential(field, float(lam), radius)
    diag, off = _sym_tridiagonal(lap, p)
    M = diag.size
    w = sla.eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(M - 1, M - 1))
    return float(w[0])


def reduced_operator_eigenvalues(field: LinearizationField, lap: NeumannLaplacian, lam) -> np.ndarray:
    """All eigenvalues of ``G(lam)``; complex ``lam`` gives a complex-symmetric problem."""
    p = reduced_potential(field, lam)
    diag, off = _sym_tridiagonal(lap, p)
    if np.isrealobj(p):
        return sla.eigh_tridiagonal(diag, off, eigvals_only=True)
    mat = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    return np.linalg.eigvals(mat)


def rayleigh_quotient(field: LinearizationField, lap: NeumannLaplacian, lam: float, psi) -> float:
    grid = field.grid
    psi = np.asarray(psi, dtype=float)
    Gpsi = lap.apply(psi) + reduced_potential(field, lam) * psi
    return float(grid.inner(Gpsi, psi) / grid.inner(psi, psi))


def derivative_witness(field: LinearizationField, lap: NeumannLaplacian, V) -> float:
    """Rayleigh quotient of ``G(0)`` at the discrete derivative of ``V``."""
    psi = gradient(field.grid, V)
    if field.grid.norm(psi) == 0:
        raise ValueError("V is constant; its derivative is not a trial function")
    return rayleigh_quotient(field, lap, 0.0, psi / field.grid.norm(psi))


def _lowest_admissible(samples, radius):
    """0 if admissible, otherwise the smallest positive real clear of the samples."""
    lam = 0.0
    for _ in range(64):
        if np.min(np.abs(samples - lam)) > radius:
            return lam
        lam = max(2.0 * lam, 2.0 * radius)
    raise NearEssentialSpectrumError("no admissible lambda near 0")


def default_lambda_max(field, lap, lam_lo=0.0, points: int = 32, radius: float = EXCLUSION_RADIUS) -> float:
    """``2 * sup eta0`` over a coarse log-spaced lambda grid, plus 1."""
    samples, _ = essential_spectrum(field)
    grid_l = lam_lo + np.concatenate([[0.0], np.geomspace(1e-3, 1e3, points - 1)])
    vals = []
    for lam in grid_l:
        if np.min(np.abs(samples - lam)) > radius:
            vals.append(eta0(field, lap, lam, radius))
    return 2.0 * max(max(vals), 0.0) + 1.0


def find_fixed_point(
    field: LinearizationField,
    lap: NeumannLaplacian,
    lam_max: Optional[float] = None,
    tol: float = FIXED_POINT_TOL,
    radius: float = EXCLUSION_RADIUS,
    scan_points: int = 64,
) -> Optional[float]:
    """Largest ``lam > 0`` with ``eta0(lam) = lam``, or None when ``eta0(0) <= 0``.

    ``phi(lam) = eta0(lam) - lam`` is scanned on a uniform grid over
    ``[lam_lo, lam_max]``; the last sign change is refined by bisection
    until ``|phi| < tol``.  Scan points that fall inside the exclusion
    radius are skipped.
    """
    samples, _ = essential_spectrum(field)
    lam_lo = _lowest_admissible(samples, radius)
    phi_lo = eta0(field, lap, lam_lo, radius) - lam_lo
    if phi_lo <= 0:
        return None
    if lam_max is None:
        lam_max = default_lambda_max(field, lap, lam_lo, radius=radius)
    if lam_max <= lam_lo:
        raise ValueError("lam_max must exceed the lower end of the search interval")
    phi_hi = eta0(field, lap, lam_max, radius) - lam_max
    if phi_hi >= 0:
        sup = max(eta0(field, lap, l, radius) for l in np.linspace(lam_lo, lam_max, 16))
        raise FixedPointRangeError(
            f"eta0({lam_max:g}) >= {lam_max:g}; lam_max must exceed sup eta0 (measured {sup:.6g})",
            sup_eta0=sup,
        )

    lams = np.linspace(lam_lo, lam_max, scan_points)
    phis = np.full(lams.size, np.nan)
    phis[0], phis[-1] = phi_lo, phi_hi
    for i in range(1, lams.size - 1):
        if np.min(np.abs(samples - lams[i])) > radius:
            phis[i] = eta0(field, lap, lams[i], radius) - lams[i]
    ok = np.flatnonzero(~np.isnan(phis))
    pos = [i for i in ok if phis[i] > 0]
    i_lo = pos[-1]
    i_hi = next(i for i in ok if i > i_lo)
    a, b = lams[i_lo], lams[i_hi]
    for _ in range(200):
        mid = 0.5 * (a + b)
        val = eta0(field, lap, mid, radius) - mid
        if abs(val) < tol or b - a < 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            return float(mid)
        if val > 0:
            a = mid
        else:
            b = mid
    return float(0.5 * (a + b))


def block_operator(field: LinearizationField, lap: NeumannLaplacian) -> np.ndarray:
    """Dense matrix of the discrete linearization, unknowns ordered (u_1, ..., u_n, v)."""
    n, M = field.n, field.M
    size = M * (n + 1)
    L = np.zeros((size, size))
    idx = np.arange(M)
    for i in range(n):
        for j in range(n):
            L[i * M + idx, j * M + idx] = field.A[:, i, j]
        L[i * M + idx, n * M + idx] = field.B[:, i]
        L[n * M + idx, i * M + idx] = field.C[:, i]
    L[n * M:, n * M:] = lap.dense() + np.diag(field.d)
    return L


def full_spectrum_discrete(
    field: LinearizationField, lap: NeumannLaplacian, cap: int = DENSE_CAP, vectors: bool = False
):
    size = field.M * (field.n + 1)
    if size > cap:
        raise CapacityError(f"dense eigensolve of size {size} exceeds the cap {cap}")
    L = block_operator(field, lap)
    if vectors:
        return sla.eig(L, overwrite_a=True, check_finite=False)
    return sla.eigvals(L, overwrite_a=True, check_finite=False)


def dominant_mode(field: LinearizationField, lap: NeumannLaplacian, cap: int = DENSE_CAP):
    """Eigenvalue of largest real part and its eigenvector as an ``(n + 1, M)`` array.

    The vector is real (real part of the complex eigenvector, rotated so the
    largest entry is real) and scaled to unit sup-norm.
    """
    w, vr = full_spectrum_discrete(field, lap, cap=cap, vectors=True)
    i = int(np.argmax(w.real))
    vec = vr[:, i]
    vec = vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
    vec = vec.real
    vec /= np.max(np.abs(vec))
    return complex(w[i]), vec.reshape(field.n + 1, field.M)


def reduced_root_near(field: LinearizationField, lap: NeumannLaplacian, lam0, maxiter: int = 50, tol: float = 1e-13):
    """Root of ``nu(lam) - lam`` near ``lam0``, ``nu`` the eigenvalue of ``G(lam)`` closest to ``lam``.

    Secant iteration; works for complex ``lam0``.  Returns the root.
    """
    complex_mode = abs(np.imag(lam0)) > 1e-12 * max(1.0, abs(lam0))
    cast = complex if complex_mode else float
    lam0 = cast(lam0 if complex_mode else np.real(lam0))

    def phi(lam):
        ev = reduced_operator_eigenvalues(field, lap, lam)
        return ev[np.argmin(np.abs(ev - lam))] - lam

    x0 = lam0
    x1 = lam0 + cast(1e-7 * max(1.0, abs(lam0)))
    f0, f1 = phi(x0), phi(x1)
    for _ in range(maxiter):
        if abs(f1) < tol:
            return x1
        if f1 == f0:
            break
        x0, x1 = x1, x1 - f1 * (x1 - x0) / (f1 - f0)
        f0, f1 = f1, phi(x1)
    return x1


def _point_eigs_from_dense(eigs, samples, radius):
    dist = np.min(np.abs(eigs[:, None] - samples[None, :]), axis=1)
    return eigs[dist > radius]


def classify(
    model: SystemModel,
    grid: Grid,
    state: StationaryState,
    lap: Optional[NeumannLaplacian] = None,
    lam_max: Optional[float] = None,
    cap: int = DENSE_CAP,
    radius: float = EXCLUSION_RADIUS,
) -> SpectrumReport:
    """Spectral bound and instability certificate for a stationary state."""
    lap = lap or neumann_laplacian(grid)
    field = linearize(model, grid, state)
    samples, s_ess = essential_spectrum(field)
    min_det = float(np.min(np.abs(np.linalg.det(field.A))))
    amp = state.amplitude(grid)

    lam_bar = None
    eta_zero = None
    if s_ess <= 0:
        try:
            lam_lo = _lowest_admissible(samples, radius)
            eta_zero = eta0(field, lap, lam_lo, radius)
            lam_bar = find_fixed_point(field, lap, lam_max=lam_max, radius=radius)
        except NearEssentialSpectrumError:
            lam_bar = None

    size = field.M * (field.n + 1)
    if size <= cap:
        eigs = full_spectrum_discrete(field, lap, cap=cap)
        point = _point_eigs_from_dense(eigs, samples, radius)
        method = "dense"
    else:
        point = np.array([lam_bar], dtype=complex) if lam_bar is not None else np.array([], dtype=complex)
        method = "reduced"
    s_point = float(np.max(point.real)) if point.size else -np.inf
    bound = max(s_ess, s_point)

    if s_ess > 0:
        verdict = Verdict.UNSTABLE_AUTOCATALYSIS
    elif min_det > DET_ZERO and amp > CONSTANT_AMPLITUDE and lam_bar is not None and lam_bar > 0:
        verdict = Verdict.UNSTABLE_FIXED_POINT
    elif min_det <= DET_ZERO:
        verdict = Verdict.DEGENERATE_DET_ZERO
    else:
        verdict = Verdict.NO_CERTIFICATE
    return SpectrumReport(
        essential_samples=samples,
        s_ess=s_ess,
        point_eigs=point,
        s_point=s_point,
        spectral_bound=float(bound),
        lambda_bar=lam_bar,
        verdict=verdict,
        min_abs_det=min_det,
        amplitude=amp,
        eta0_at_zero=eta_zero,
        method=method,
    )
