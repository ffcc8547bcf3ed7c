"""Independent reference solutions used by several test modules."""
import numpy as np
from scipy.optimize import minimize


def subproblem_instance(rng, box_upper=10.0):
    """Random PSD model (sometimes singular), center in the box and radius."""
    rank = rng.integers(1, 4)
    A = rng.standard_normal((3, rank))
    H = A @ A.T
    if rng.random() < 0.5:
        H += rng.uniform(0, 1) * np.eye(3)
    g = rng.standard_normal(3) * rng.choice([0.1, 1.0, 10.0])
    c = rng.uniform(0, box_upper, 3)
    # pin some coordinates onto a bound
    pin = rng.random(3)
    c[pin < 0.2] = 0.0
    c[pin > 0.85] = box_upper
    delta = rng.choice([0.1, 0.5, 2.0, 8.0])
    return H, g, c, delta


def grid_oracle(H, g, lo, hi, n=101):
    """Minimum of ``g.d + d.H.d/2`` over a tensor grid of the box, then a bounded polish."""
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    x, y, z = axes[0][:, None, None], axes[1][None, :, None], axes[2][None, None, :]
    vals = (g[0] * x + g[1] * y + g[2] * z
            + 0.5 * (H[0, 0] * x * x + H[1, 1] * y * y + H[2, 2] * z * z)
            + H[0, 1] * x * y + H[0, 2] * x * z + H[1, 2] * y * z)
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    d_grid = np.array([axes[i][idx[i]] for i in range(3)])
    m_grid = float(vals[idx])
    res = minimize(lambda d: g @ d + 0.5 * d @ H @ d, d_grid, jac=lambda d: g + H @ d,
                   method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options=dict(ftol=1e-16, gtol=1e-13, maxiter=2000))
    return min(m_grid, float(res.fun)), m_grid
