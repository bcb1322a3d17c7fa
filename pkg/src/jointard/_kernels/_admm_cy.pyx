# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ADMM kernel; same contract as ``_admm_py.admm_double_l1``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from scipy.linalg.cython_blas cimport dgemv, dtrsv

cnp.import_array()


cdef inline double _soft(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


cdef inline double _dot(const double[::1] a, const double[::1] b, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(m):
        s += a[k] * b[k]
    return s


def admm_double_l1(X, y, inv_lam, w, v, double rho, chol, z, e, u, nu,
                   int max_iter, double tol_primal, double tol_dual):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] il = np.ascontiguousarray(inv_lam, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[:, ::1] L = np.ascontiguousarray(chol, dtype=np.float64)
    cdef int n = Xv.shape[0]
    cdef int d = Xv.shape[1]

    zo = np.array(z, dtype=np.float64)
    eo = np.array(e, dtype=np.float64)
    uo = np.array(u, dtype=np.float64)
    nuo = np.array(nu, dtype=np.float64)
    thetao = zo.copy()
    cdef double[::1] zv = zo
    cdef double[::1] ev = eo
    cdef double[::1] uv = uo
    cdef double[::1] nuv = nuo
    cdef double[::1] th = thetao
    cdef double[::1] xt = np.empty(n)
    cdef double[::1] tmp_n = np.empty(n)
    cdef double[::1] tmp_d = np.empty(d)
    cdef double[::1] dz = np.empty(d)
    cdef double[::1] de = np.empty(n)

    cdef char trans_n = b'N'
    cdef char trans_t = b'T'
    cdef char upper = b'U'
    cdef char nonunit = b'N'
    cdef int inc = 1
    cdef double one = 1.0
    cdef double zero = 0.0
    # Row-major X is column-major X^T (d x n, lda=d); row-major lower L is
    # column-major upper U = L^T.
    cdef int ldx = d
    cdef int ldl = d

    cdef double sqrt_p = sqrt(<double>(n + d))
    cdef double sqrt_d = sqrt(<double>d)
    cdef double y_norm = sqrt(_dot(yv, yv, n))
    cdef double r_norm = np.inf
    cdef double s_norm = np.inf
    cdef double eps_pri, eps_dual, a, tz, te, nt, nxt, nz, ne, acc
    cdef bint converged = False
    cdef int it = 0
    cdef Py_ssize_t i, j

    with nogil:
        for it in range(1, max_iter + 1):
            # rhs = (z - u) + X^T (y - e - nu)
            for i in range(n):
                tmp_n[i] = yv[i] - ev[i] - nuv[i]
            for j in range(d):
                th[j] = zv[j] - uv[j]
            dgemv(&trans_n, &d, &n, &one, <double*>&Xv[0, 0], &ldx, &tmp_n[0], &inc,
                  &one, &th[0], &inc)
            # L L^T theta = rhs
            dtrsv(&upper, &trans_t, &nonunit, &d, <double*>&L[0, 0], &ldl, &th[0], &inc)
            dtrsv(&upper, &trans_n, &nonunit, &d, <double*>&L[0, 0], &ldl, &th[0], &inc)
            dgemv(&trans_t, &d, &n, &one, <double*>&Xv[0, 0], &ldx, &th[0], &inc,
                  &zero, &xt[0], &inc)

            tz = 0.0
            nt = 0.0
            nz = 0.0
            for j in range(d):
                a = _soft(th[j] + uv[j], 2.0 * wv[j] / rho)
                dz[j] = -(a - zv[j])
                zv[j] = a
                uv[j] += th[j] - a
                tz += (th[j] - a) * (th[j] - a)
                nt += th[j] * th[j]
                nz += a * a
            te = 0.0
            nxt = 0.0
            ne = 0.0
            for i in range(n):
                a = _soft(rho * (yv[i] - xt[i] - nuv[i]), 2.0 * vv[i]) / (2.0 * il[i] + rho)
                de[i] = a - ev[i]
                ev[i] = a
                acc = xt[i] + a - yv[i]
                nuv[i] += acc
                te += acc * acc
                nxt += xt[i] * xt[i]
                ne += a * a
            r_norm = sqrt(tz + te)
            # dual residual rho * (-(dz) + X^T de); dz already holds -(z - z_old)
            dgemv(&trans_n, &d, &n, &one, <double*>&Xv[0, 0], &ldx, &de[0], &inc,
                  &one, &dz[0], &inc)
            s_norm = rho * sqrt(_dot(dz, dz, d))
            for j in range(d):
                tmp_d[j] = uv[j]
            dgemv(&trans_n, &d, &n, &one, <double*>&Xv[0, 0], &ldx, &nuv[0], &inc,
                  &one, &tmp_d[0], &inc)
            eps_pri = sqrt(nt + nxt)
            if sqrt(nz + ne) > eps_pri:
                eps_pri = sqrt(nz + ne)
            if y_norm > eps_pri:
                eps_pri = y_norm
            eps_pri = tol_primal * (sqrt_p + eps_pri)
            eps_dual = tol_dual * (sqrt_d + rho * sqrt(_dot(tmp_d, tmp_d, d)))
            if r_norm <= eps_pri and s_norm <= eps_dual:
                converged = True
                break

    return thetao, zo, eo, uo, nuo, it, float(r_norm), float(s_norm), bool(converged)
