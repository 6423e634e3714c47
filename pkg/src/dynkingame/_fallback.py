"""Pure numpy versions of the compiled kernels (same signatures)."""
import numpy as np


def lattice_step(Y, idx, prob, w, jw, jmark, dt, rate, a_z, kappa, gnu, src,
                 implicit, tol, maxit, yhat, Z, K, i0, i1):
    sl = slice(i0, i1)
    Y = np.asarray(Y)
    yref = Y[sl]
    d = Y[idx[:, sl, :]] - yref[None, :, None]
    pd = prob[:, sl, :] * d
    E = pd.sum(axis=-1)
    z = (pd * w[:, sl, :]).sum(axis=-1) / dt
    J = gnu.shape[0]
    Kloc = np.zeros(E.shape + (J,))
    jd = jw[:, sl, :] * d
    for b in np.nonzero(jmark >= 0)[0]:
        Kloc[..., jmark[b]] += jd[..., b]
    Kloc -= E[..., None]
    jump = Kloc @ gnu if J else 0.0
    E = yref[None, :] + E
    rest = a_z * z + kappa * np.abs(z) + jump + src[:, sl]
    r = np.asarray(rate)[:, None]
    Z[:, sl] = z
    K[:, sl, :] = Kloc
    if not implicit:
        yhat[:, sl] = E + dt * (-r * E + rest)
        return -1
    y = E.copy()
    done = np.zeros(E.shape, dtype=bool)
    for _ in range(maxit):
        ynew = E + dt * (-r * y + rest)
        conv = np.abs(ynew - y) <= tol * np.maximum(1.0, np.abs(ynew))
        y = np.where(done, y, ynew)
        done |= conv
        if done.all():
            break
    yhat[:, sl] = y
    if not done.all():
        a, i = np.argwhere(~done)[0]
        return int(a * idx.shape[1] + i + i0)
    return -1


def pde_step(u, idx, jw, sigma, b_eff, nu, dx, rate, a_z, kappa, gnu, src,
             gen, zrow, Bops, G, i0, i1):
    u = np.asarray(u)
    M = u.shape[0]
    sl = slice(i0, i1)
    ii = np.arange(i0, i1)
    ui = u[sl]
    um = u[np.maximum(ii - 1, 0)]
    up = u[np.minimum(ii + 1, M - 1)]
    d2 = (up - 2.0 * ui + um) / (dx * dx)
    fwd = (up - ui) / dx
    bwd = (ui - um) / dx
    be = b_eff[:, sl]
    s = sigma[:, sl]
    lk = 0.5 * s * s * d2 + np.where(be > 0, be * fwd, be * bwd)
    jump = np.zeros(lk.shape)
    for j in range(nu.shape[0]):
        lo, hi = 3 + 2 * j, 4 + 2 * j
        bj = jw[:, sl, lo] * (u[idx[:, sl, lo]] - ui) + jw[:, sl, hi] * (u[idx[:, sl, hi]] - ui)
        Bops[:, sl, j] = bj
        lk = lk + nu[j] * bj
        jump = jump + gnu[j] * bj
    z = s * (up - um) / (2.0 * dx)
    gen[:, sl] = lk
    zrow[:, sl] = z
    r = np.asarray(rate)[:, None]
    G[:, sl] = lk + (-r * ui + a_z * z + kappa * np.abs(z) + jump + src[:, sl])
    return 0
