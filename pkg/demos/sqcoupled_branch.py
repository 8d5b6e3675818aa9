"""Nonlinear pipeline for f = v^2 - u, g = u - v.

Starting from the equilibrium (1, 1), where the reduced slope h'(1)
equals the first Neumann eigenvalue, the script follows the branch of
non-constant stationary states that bifurcates as the diffusion
parameter d drops below 1.  It then certifies instability of one branch
point and watches small perturbations leave a fixed neighbourhood.
"""
import numpy as np

from rdode.grid import make_grid, neumann_laplacian
from rdode.model import find_equilibria, sqcoupled_model
from rdode.simulate import lyapunov_escape_test
from rdode.spectral import classify, derivative_witness, linearize
from rdode.stationary import continue_branch, reduced_h_prime, select_branch_point


def main():
    grid = make_grid()
    lap = neumann_laplacian(grid)
    model = sqcoupled_model()
    eqs = find_equilibria(model, [([0.9], 0.9), ([0.1], 0.1)])
    for eq in eqs:
        print(f"equilibrium u={eq.u_bar[0]:+.3f} v={eq.v_bar:+.3f}")
    eq = max(eqs, key=lambda e: e.v_bar)
    print(f"h'(v_bar) = {reduced_h_prime(model, eq.v_bar, eq.u_bar):.12f}")

    points = continue_branch(model, grid, lap, eq, k=1, d_range=(0.95, 1.05), steps=10)
    print("\n   d          amplitude   amplitude^2/(1-d)")
    for p in points:
        print(f"   {p.d_ell:.6f}   {p.amplitude:.5f}     {p.amplitude**2 / (1 - p.d_ell):.3f}")

    p = select_branch_point(points, 0.15)
    rep = classify(p.model, grid, p.state, lap)
    field = linearize(p.model, grid, p.state)
    print(f"\nselected d={p.d_ell:.6f}: verdict {rep.verdict.value}, lambda_bar={rep.lambda_bar:.6f}")
    print(f"Rayleigh quotient at V_x: {derivative_witness(field, lap, p.state.V):.2e}")

    esc = lyapunov_escape_test(p.model, grid, lap, p.state, [1e-3, 1e-4], delta=0.05, T=40.0)
    rates = [r.trace.fitted_rate for r in esc.runs]
    print(f"{esc.witness}; fitted rates {np.round(rates, 4)}")


if __name__ == "__main__":
    main()
