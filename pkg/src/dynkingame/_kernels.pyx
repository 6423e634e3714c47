# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-node kernels.  Same contracts as ``_fallback``; loops run
without the GIL over a half-open state range so callers can split work."""

from libc.math cimport fabs


cdef inline double _driver_rest(double z, double a_z, double kappa, double jump, double src) nogil:
    return a_z * z + kappa * fabs(z) + jump + src


def lattice_step(const double[::1] Y,
                 const long[:, :, ::1] idx,
                 const double[:, :, ::1] prob,
                 const double[:, :, ::1] w,
                 const double[:, :, ::1] jw,
                 const long[::1] jmark,
                 double dt,
                 const double[::1] rate,
                 double a_z, double kappa,
                 const double[::1] gnu,
                 const double[:, ::1] src,
                 bint implicit, double tol, int maxit,
                 double[:, ::1] yhat,
                 double[:, ::1] Z,
                 double[:, :, ::1] K,
                 long i0, long i1):
    """Unconstrained one-step values.  Returns -1, or the flat node index
    (a * M + i) whose implicit fixed point failed to converge."""
    cdef Py_ssize_t A = idx.shape[0], M = idx.shape[1], B = idx.shape[2]
    cdef Py_ssize_t J = gnu.shape[0]
    cdef Py_ssize_t a, i, b, j, it
    cdef double yref, d, E, z, jump, rest, y, ynew, r, scale
    cdef long bad = -1
    with nogil:
        for a in range(A):
            r = rate[a]
            for i in range(i0, i1):
                yref = Y[i]
                E = 0.0
                z = 0.0
                for j in range(J):
                    K[a, i, j] = 0.0
                for b in range(B):
                    d = Y[idx[a, i, b]] - yref
                    E += prob[a, i, b] * d
                    z += prob[a, i, b] * w[a, i, b] * d
                    if jmark[b] >= 0:
                        K[a, i, jmark[b]] += jw[a, i, b] * d
                z = z / dt
                jump = 0.0
                for j in range(J):
                    K[a, i, j] -= E
                    jump += gnu[j] * K[a, i, j]
                E = yref + E
                Z[a, i] = z
                rest = _driver_rest(z, a_z, kappa, jump, src[a, i])
                if not implicit:
                    yhat[a, i] = E + dt * (-r * E + rest)
                    continue
                y = E
                for it in range(maxit):
                    ynew = E + dt * (-r * y + rest)
                    scale = fabs(ynew)
                    if scale < 1.0:
                        scale = 1.0
                    if fabs(ynew - y) <= tol * scale:
                        y = ynew
                        break
                    y = ynew
                else:
                    if bad < 0:
                        bad = a * M + i
                yhat[a, i] = y
    return bad


def pde_step(const double[::1] u,
             const long[:, :, ::1] idx,
             const double[:, :, ::1] jw,
             const double[:, ::1] sigma,
             const double[:, ::1] b_eff,
             const double[::1] nu,
             double dx,
             const double[::1] rate,
             double a_z, double kappa,
             const double[::1] gnu,
             const double[:, ::1] src,
             double[:, ::1] gen,
             double[:, ::1] zrow,
             double[:, :, ::1] Bops,
             double[:, ::1] G,
             long i0, long i1):
    """Generator (A+K)u, sigma*u_x, B u per mark and G = (A+K)u + f."""
    cdef Py_ssize_t A = idx.shape[0], M = idx.shape[1]
    cdef Py_ssize_t J = nu.shape[0]
    cdef Py_ssize_t a, i, j, lo
    cdef double um, up, ui, d2, fwd, bwd, be, s, lk, z, jump, bj, r
    with nogil:
        for a in range(A):
            r = rate[a]
            for i in range(i0, i1):
                ui = u[i]
                um = u[i - 1] if i > 0 else ui
                up = u[i + 1] if i < M - 1 else ui
                d2 = (up - 2.0 * ui + um) / (dx * dx)
                fwd = (up - ui) / dx
                bwd = (ui - um) / dx
                be = b_eff[a, i]
                s = sigma[a, i]
                lk = 0.5 * s * s * d2
                if be > 0:
                    lk += be * fwd
                else:
                    lk += be * bwd
                jump = 0.0
                for j in range(J):
                    bj = jw[a, i, 3 + 2 * j] * (u[idx[a, i, 3 + 2 * j]] - ui) \
                        + jw[a, i, 4 + 2 * j] * (u[idx[a, i, 4 + 2 * j]] - ui)
                    Bops[a, i, j] = bj
                    lk += nu[j] * bj
                    jump += gnu[j] * bj
                z = s * (up - um) / (2.0 * dx)
                gen[a, i] = lk
                zrow[a, i] = z
                G[a, i] = lk + (-r * ui + _driver_rest(z, a_z, kappa, jump, src[a, i]))
    return 0
