"""Two systems with u_t = 0 that share the stationary state u = v = cos x.

With f identically zero, f_u vanishes and k(v) is undefined, so neither
instability certificate applies.  The spectrum is still computable: it is
{0} together with the eigenvalues of the scalar v-equation.  One variant
is spectrally stable (bound 0, perturbations stay of size eps), the other
has bound 1 and perturbations grow like e^t.
"""
import warnings

import numpy as np

from rdode.errors import DegenerateBranchWarning
from rdode.grid import make_grid, neumann_laplacian
from rdode.model import frozen_model
from rdode.simulate import lyapunov_escape_test
from rdode.spectral import classify
from rdode.stationary import assemble_stationary


def main():
    grid = make_grid()
    lap = neumann_laplacian(grid)
    V = np.cos(grid.nodes)
    for stable in (True, False):
        model = frozen_model(1.0, stable=stable)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateBranchWarning)
            state = assemble_stationary(model, grid, V, U=V[None, :])
        rep = classify(model, grid, state, lap)
        esc = lyapunov_escape_test(model, grid, lap, state, [1e-3, 1e-4], delta=0.05, T=40.0)
        print(f"{model.name}: verdict {rep.verdict.value}, spectral bound {rep.spectral_bound:.6f}")
        for run in esc.runs:
            print(f"   eps={run.eps:.0e}  max deviation {run.max_deviation:.3e}  rate {run.trace.fitted_rate:+.4f}")
        print(f"   {esc.witness}")


if __name__ == "__main__":
    main()
