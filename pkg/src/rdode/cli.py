"""Command-line driver: equilibria -> branch -> spectrum -> simulate -> verify.

Every command reads one JSON experiment file (``--config``) and writes
its outputs under the output directory, chosen by ``--out``, then the
``RDODE_OUT`` environment variable, then the config's ``output_dir``.

Exit codes: 0 success, 1 bad config or missing file, 2 no equilibria,
3 no branch, 4 simulation failure or rate mismatch.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import io
from .errors import (
    BlowUpError,
    BranchNotFoundError,
    BranchSolveError,
    ConvergenceError,
    RDODEError,
    SingularityError,
)
from .grid import Grid, analytic_eigenvalues, discrete_eigenvalues, neumann_laplacian
from .model import (
    BIFURCATION_TOL,
    Equilibrium,
    SystemModel,
    bifurcation_condition,
    det_identity,
    equilibrium_matrices,
    find_equilibria,
    get_model,
)
from .spectral import classify
from .simulate import lyapunov_escape_test, remainder_growth_check
from .stationary import (
    assemble_stationary,
    continue_branch,
    critical_d,
    select_branch_point,
)

log = logging.getLogger("rdode")

EXIT_OK, EXIT_CONFIG, EXIT_NO_EQUILIBRIA, EXIT_NO_BRANCH, EXIT_SIMULATION = 0, 1, 2, 3, 4
OUT_ENV = "RDODE_OUT"
RATE_RTOL = 0.05
STABLE_BOUND_TOL = 1e-6
MU_COUNT = 20


class ConfigError(ValueError):
    pass


class StageFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class GridConfig:
    L: float = math.pi
    M: int = 401


@dataclass
class ContinuationConfig:
    k: Optional[int] = None
    d_range: Tuple[float, float] = (0.9, 1.1)
    steps: int = 10
    eps: float = 1e-2
    target_amplitude: float = 0.15


@dataclass
class StateConfig:
    source: str = "branch"  # "branch" or "explicit"
    k: int = 1
    amplitude: float = 1.0
    u_coeffs: Optional[List[float]] = None


@dataclass
class SpectralConfig:
    lambda_max: Optional[float] = None
    exclusion_radius: float = 1e-6
    dense_cap: int = 4000


@dataclass
class SimulationConfig:
    T: float = 40.0
    dt: float = 1e-3
    eps_list: List[float] = field(default_factory=lambda: [1e-3, 1e-4])
    delta: float = 0.05
    record_every: int = 10
    remainder_amplitudes: List[float] = field(default_factory=lambda: [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])


@dataclass
class ExperimentConfig:
    model: str
    grid: GridConfig = field(default_factory=GridConfig)
    equilibria: Optional[List] = None  # list of [u_list, v] guesses
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    state: StateConfig = field(default_factory=StateConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    output_dir: str = "rdode_out"
    seed: int = 0

    _sections = {
        "grid": GridConfig,
        "continuation": ContinuationConfig,
        "state": StateConfig,
        "spectral": SpectralConfig,
        "simulation": SimulationConfig,
    }

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        if not isinstance(raw, dict) or not raw:
            raise ConfigError("config must be a non-empty JSON object")
        if "model" not in raw:
            raise ConfigError("config needs a 'model' entry")
        known = {"model", "equilibria", "output_dir", "seed", *cls._sections}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: raw[k] for k in ("model", "equilibria", "output_dir", "seed") if k in raw}
        for name, typ in cls._sections.items():
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            try:
                kwargs[name] = typ(**sec)
            except TypeError as exc:
                raise ConfigError(f"section {name!r}: {exc}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if not isinstance(self.model, str):
            raise ConfigError("'model' must be a string")
        try:
            get_model(self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        g, c, s, sp, sim = self.grid, self.continuation, self.state, self.spectral, self.simulation
        checks = [
            (g.L > 0, "grid.L must be positive"),
            (int(g.M) == g.M and g.M >= 3, "grid.M must be an integer >= 3"),
            (len(c.d_range) == 2 and c.d_range[0] < c.d_range[1], "continuation.d_range must be increasing"),
            (c.steps >= 1, "continuation.steps must be positive"),
            (c.eps > 0, "continuation.eps must be positive"),
            (c.k is None or c.k >= 1, "continuation.k must be >= 1"),
            (s.source in ("branch", "explicit"), "state.source must be 'branch' or 'explicit'"),
            (sp.exclusion_radius > 0, "spectral.exclusion_radius must be positive"),
            (sp.lambda_max is None or sp.lambda_max > 0, "spectral.lambda_max must be positive"),
            (sim.T > 0 and 0 < sim.dt <= sim.T, "simulation needs T > 0 and 0 < dt <= T"),
            (len(sim.eps_list) > 0 and all(e > 0 for e in sim.eps_list), "simulation.eps_list must hold positive values"),
            (sim.delta > 0, "simulation.delta must be positive"),
            (sim.record_every >= 1, "simulation.record_every must be positive"),
            (isinstance(self.seed, int), "seed must be an integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["continuation"]["d_range"] = list(self.continuation.d_range)
        return d

    @property
    def hash(self) -> str:
        return io.config_hash(self.to_dict())


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw)


# --------------------------------------------------------------------------
# pipeline pieces shared by the commands

def _grid(cfg: ExperimentConfig) -> Grid:
    return Grid(float(cfg.grid.L), int(cfg.grid.M))


def _default_guesses(model: SystemModel, per_axis: int = 5):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in model.box]
    return [(list(p[:-1]), p[-1]) for p in itertools.product(*axes)]


def _equilibria(cfg: ExperimentConfig, model: SystemModel) -> List[Equilibrium]:
    guesses = cfg.equilibria if cfg.equilibria else _default_guesses(model)
    return find_equilibria(model, guesses)


def _equilibrium_rows(cfg, model, eqs):
    """Per-equilibrium summary; bifurcation indices match the continuum ``(k pi / L)^2``."""
    mus = analytic_eigenvalues(cfg.grid.L, MU_COUNT)
    grid = _grid(cfg)
    mus_h = discrete_eigenvalues(grid, MU_COUNT)
    rows = []
    for eq in eqs:
        m = equilibrium_matrices(model, eq)
        row = {
            "u_bar": eq.u_bar.tolist(),
            "v_bar": eq.v_bar,
            "residual": eq.residual,
            "A0": m.A0.tolist(),
            "B0": m.B0.tolist(),
            "C0": m.C0.tolist(),
            "d0": m.d0,
        }
        try:
            lhs, rhs, diff = det_identity(m)
        except SingularityError as exc:
            row.update(det_identity=None, bifurcation_index=None, note=str(exc))
            rows.append(row)
            continue
        k = bifurcation_condition(m, mus, BIFURCATION_TOL)
        row.update(
            det_identity={"schur": lhs, "det_ratio": rhs, "abs_diff": diff},
            bifurcation_index=k,
            critical_d_discrete=None if k is None else critical_d(lhs, mus_h[k]),
        )
        rows.append(row)
    return rows


def _branch(cfg, model, out: Path, write: bool):
    grid = _grid(cfg)
    lap = neumann_laplacian(grid)
    eqs = _equilibria(cfg, model)
    if not eqs:
        raise StageFailure(EXIT_NO_EQUILIBRIA, f"{model.name}: no equilibria found")
    rows = _equilibrium_rows(cfg, model, eqs)
    cands = [(eq, r) for eq, r in zip(eqs, rows) if r.get("bifurcation_index")]
    if cfg.continuation.k is not None:
        cands = [(eq, r) for eq, r in cands if r["bifurcation_index"] == cfg.continuation.k]
    if not cands:
        raise StageFailure(EXIT_NO_BRANCH, f"{model.name}: no equilibrium satisfies the bifurcation condition")
    eq, row = cands[0]
    k = row["bifurcation_index"]
    c = cfg.continuation
    try:
        points = continue_branch(model, grid, lap, eq, k, tuple(c.d_range), c.steps, eps=c.eps)
    except (BranchNotFoundError, ValueError, ConvergenceError) as exc:
        raise StageFailure(EXIT_NO_BRANCH, f"{model.name}: {exc}") from exc
    chosen = select_branch_point(points, c.target_amplitude)
    if write:
        h = cfg.hash
        files = []
        for i, p in enumerate(points):
            fname = f"states/branch_{i:03d}.csv"
            io.write_state(out / fname, p.state, grid, cfg.model, h)
            files.append(fname)
        io.write_table(
            out / "branch.csv",
            {
                "index": np.arange(len(points)),
                "d_ell": [p.d_ell for p in points],
                "amplitude": [p.amplitude for p in points],
                "residual_f": [p.state.residual_f for p in points],
                "residual_pde": [p.state.residual_pde for p in points],
            },
            {"kind": "branch", "model": cfg.model, "k": k, "v_bar": repr(eq.v_bar), **io.metadata(h)},
        )
        io.write_state(out / "state.csv", chosen.state, grid, cfg.model, h)
    return chosen, grid, lap


def _explicit_state(cfg, model):
    grid = _grid(cfg)
    s = cfg.state
    V = s.amplitude * np.cos(s.k * np.pi * grid.nodes / grid.L)
    coeffs = s.u_coeffs if s.u_coeffs is not None else [1.0] * model.n
    if len(coeffs) != model.n:
        raise ConfigError(f"state.u_coeffs needs {model.n} entries")
    U = np.asarray(coeffs, dtype=float)[:, None] * V[None, :]
    state = assemble_stationary(model, grid, V, U=U, provenance="explicit")
    return state, grid


def _resolve_state(cfg, out: Path, state_file: Optional[str], write: bool):
    """The state to analyse: from ``--state``, or built from the config."""
    if state_file is not None:
        if not Path(state_file).is_file():
            raise StageFailure(EXIT_CONFIG, f"state file {state_file} not found")
        try:
            state, grid, model, _ = io.read_state(state_file)
        except (ValueError, KeyError) as exc:
            raise StageFailure(EXIT_CONFIG, f"cannot parse state file {state_file}: {exc}") from None
        return state, grid, model
    model = get_model(cfg.model)
    if cfg.state.source == "explicit":
        state, grid = _explicit_state(cfg, model)
        if write:
            io.write_state(out / "state.csv", state, grid, cfg.model, cfg.hash)
        return state, grid, model
    chosen, grid, _ = _branch(cfg, model, out, write)
    return chosen.state, grid, chosen.model


def _spectrum(cfg, state, grid, model):
    sp = cfg.spectral
    return classify(model, grid, state, lam_max=sp.lambda_max, cap=sp.dense_cap, radius=sp.exclusion_radius)


def _simulate(cfg, state, grid, model, out: Path, write: bool):
    sim = cfg.simulation
    lap = neumann_laplacian(grid)
    try:
        rep = lyapunov_escape_test(
            model, grid, lap, state, sim.eps_list, sim.delta, sim.T, dt=sim.dt, record_every=sim.record_every,
        )
    except (BlowUpError, SingularityError) as exc:
        raise StageFailure(EXIT_SIMULATION, f"simulation failed: {exc}") from exc
    except ValueError as exc:
        raise StageFailure(EXIT_CONFIG, str(exc)) from exc
    try:
        rem = remainder_growth_check(model, grid, state, sim.remainder_amplitudes, seed=cfg.seed)
        remainder = {"C_fit": rem.C_fit, "eta_fit": rem.eta_fit}
    except (ValueError, RDODEError) as exc:
        remainder = {"error": str(exc)}
    # the largest perturbation has the cleanest exponential phase
    lead = max(rep.runs, key=lambda r: r.eps)
    payload = {"escape_test": rep.to_dict(), "remainder": remainder, "rate": lead.trace.fitted_rate}
    if write:
        for i, run in enumerate(rep.runs):
            io.write_trace(out / f"trace_{i:02d}.csv", run.trace, cfg.hash, {"eps": repr(run.eps)})
        io.write_json(out / "simulate.json", payload, cfg.hash)
    return rep, payload


# --------------------------------------------------------------------------
# commands

def cmd_equilibria(cfg: ExperimentConfig, out: Path) -> int:
    model = get_model(cfg.model)
    eqs = _equilibria(cfg, model)
    rows = _equilibrium_rows(cfg, model, eqs)
    io.write_json(out / "equilibria.json", {"model": cfg.model, "equilibria": rows}, cfg.hash)
    for r in rows:
        print(f"u={r['u_bar']} v={r['v_bar']:.12g} bifurcation index={r.get('bifurcation_index')}")
    if not eqs:
        log.error("%s: no equilibria found", cfg.model)
        return EXIT_NO_EQUILIBRIA
    return EXIT_OK


def cmd_branch(cfg: ExperimentConfig, out: Path) -> int:
    chosen, _, _ = _branch(cfg, get_model(cfg.model), out, write=True)
    print(f"selected d={chosen.d_ell:.10g} amplitude={chosen.amplitude:.6g} -> {out / 'state.csv'}")
    return EXIT_OK


def cmd_spectrum(cfg: ExperimentConfig, out: Path, state_file: Optional[str] = None) -> int:
    state, grid, model = _resolve_state(cfg, out, state_file, write=state_file is None)
    report = _spectrum(cfg, state, grid, model)
    io.write_json(out / "spectrum.json", report.to_dict(), cfg.hash)
    print(f"verdict={report.verdict.value} spectral_bound={report.spectral_bound:.10g} lambda_bar={report.lambda_bar}")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path, state_file: Optional[str] = None) -> int:
    state, grid, model = _resolve_state(cfg, out, state_file, write=state_file is None)
    rep, payload = _simulate(cfg, state, grid, model, out, write=True)
    print(f"{rep.witness}; rate={payload['rate']}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path, state_file: Optional[str] = None) -> int:
    state, grid, model = _resolve_state(cfg, out, state_file, write=True)
    report = _spectrum(cfg, state, grid, model)
    io.write_json(out / "spectrum.json", report.to_dict(), cfg.hash)
    rep, sim = _simulate(cfg, state, grid, model, out, write=True)
    bound, rate = report.spectral_bound, sim["rate"]
    if bound > STABLE_BOUND_TOL:
        rel = None if rate is None else abs(rate - bound) / bound
        ok = rep.passed and rel is not None and rel <= RATE_RTOL
        outcome = "unstable-confirmed" if ok else "mismatch"
    else:
        rel = None
        ok = not rep.passed
        outcome = "expected-stable" if ok else "mismatch"
    summary = {
        "model": cfg.model,
        "verdict": report.verdict.value,
        "spectral_bound": bound,
        "lambda_bar": report.lambda_bar,
        "escape_test": "PASS" if rep.passed else "FAIL",
        "witness": rep.witness,
        "rate": rate,
        "rate_relative_error": rel,
        "outcome": outcome,
    }
    io.write_json(out / "verify.json", summary, cfg.hash)
    print(json.dumps(io._jsonable(summary), sort_keys=True))
    return EXIT_OK if ok else EXIT_SIMULATION


COMMANDS = {
    "equilibria": cmd_equilibria,
    "branch": cmd_branch,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdode", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment file")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name in ("spectrum", "simulate", "verify"):
            p.add_argument("--state", help="stationary-state CSV written by 'branch'")
    return parser


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or cfg.output_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = _output_dir(args, cfg)
        cmd = COMMANDS[args.command]
        if args.command in ("spectrum", "simulate", "verify"):
            return cmd(cfg, out, args.state)
        return cmd(cfg, out)
    except ConfigError as exc:
        print(f"rdode: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"rdode: {exc}", file=sys.stderr)
        return exc.code
    except (BlowUpError, BranchSolveError) as exc:
        print(f"rdode: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
