"""Linear system with an explicit cosine stationary state.

f = -u + v, g = 2u - v.  The pair (cos x, cos x) solves the stationary
problem on (0, pi) up to the O(h^2) error of the discrete Laplacian, yet
the constant mode grows at rate sqrt(2) - 1.  The script checks that the
spectral computation and a direct simulation agree.
"""
import numpy as np

from rdode.grid import make_grid, neumann_laplacian
from rdode.model import equilibrium_matrices, find_equilibria, get_model
from rdode.simulate import lyapunov_escape_test
from rdode.spectral import classify
from rdode.stationary import linear_explicit_state


def main():
    grid = make_grid(M=401)
    lap = neumann_laplacian(grid)
    model = get_model("linear(-1,1,2,-1)")
    (eq,) = find_equilibria(model, [([0.0], 0.0)])
    state = linear_explicit_state(model, equilibrium_matrices(model, eq), grid, k=1)
    print(f"residuals: f {state.residual_f:.1e}, pde {state.residual_pde:.2e}")

    report = classify(model, grid, state, lap)
    print(f"verdict         {report.verdict.value}")
    print(f"spectral bound  {report.spectral_bound:.10f}   (sqrt(2)-1 = {np.sqrt(2) - 1:.10f})")
    print(f"fixed point     {report.lambda_bar:.10f}")

    esc = lyapunov_escape_test(model, grid, lap, state, [1e-3, 1e-4, 1e-5], delta=0.05, T=40.0)
    for run in esc.runs:
        print(f"eps={run.eps:.0e}  escaped at t={run.t_escape:.2f}  fitted rate {run.trace.fitted_rate:.5f}")
    print(esc.witness)


if __name__ == "__main__":
    main()
