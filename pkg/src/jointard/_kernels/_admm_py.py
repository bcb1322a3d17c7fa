"""Pure NumPy ADMM kernel for the doubly l1-penalized weighted least squares.

Solves::

    min_theta  sum_i (y_i - x_i theta)^2 / lam_i
               + 2 sum_j w_j |theta_j| + 2 sum_i v_i |y_i - x_i theta|

with the splitting z = theta (weight copy) and e = y - X theta (residual
copy). Both l1 terms and the quadratic data term then live in separable
proximal steps, and the theta-step is a fixed (I + X^T X) solve whose
Cholesky factor is computed once by the caller.
"""

import numpy as np
from scipy.linalg import solve_triangular


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def admm_double_l1(X, y, inv_lam, w, v, rho, chol, z, e, u, nu,
                   max_iter, tol_primal, tol_dual):
    """Run ADMM from the given (z, e, u, nu) state.

    ``chol`` is the lower Cholesky factor of ``I + X^T X``. Duals are in
    scaled form. Returns ``(theta, z, e, u, nu, iterations, r_norm, s_norm,
    converged)``.
    """
    n, d = X.shape
    z = np.array(z, dtype=float)
    e = np.array(e, dtype=float)
    u = np.array(u, dtype=float)
    nu = np.array(nu, dtype=float)
    tw = 2.0 * w / rho
    tv = 2.0 * v
    denom = 2.0 * inv_lam + rho
    sqrt_p = np.sqrt(n + d)
    sqrt_d = np.sqrt(d)
    y_norm = np.linalg.norm(y)
    theta = z.copy()
    r_norm = s_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs = (z - u) + X.T @ (y - e - nu)
        t = solve_triangular(chol, rhs, lower=True, check_finite=False)
        theta = solve_triangular(chol, t, lower=True, trans="T", check_finite=False)
        xt = X @ theta
        z_old = z
        e_old = e
        z = _soft(theta + u, tw)
        e = _soft(rho * (y - xt - nu), tv) / denom
        rz = theta - z
        re = xt + e - y
        u = u + rz
        nu = nu + re
        r_norm = np.sqrt(rz @ rz + re @ re)
        s_norm = rho * np.linalg.norm(-(z - z_old) + X.T @ (e - e_old))
        eps_pri = tol_primal * (sqrt_p + max(np.sqrt(theta @ theta + xt @ xt),
                                             np.sqrt(z @ z + e @ e), y_norm))
        eps_dual = tol_dual * (sqrt_d + rho * np.linalg.norm(u + X.T @ nu))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break
    return theta, z, e, u, nu, it, float(r_norm), float(s_norm), converged
