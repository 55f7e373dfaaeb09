"""Per-cell numeric kernels, each with an @njit path and a numpy path.

The public functions at the bottom dispatch on :func:`anisoflow._accel.use_numba`.
The ``*_numpy`` variants are kept importable so tests and the benchmark can
compare both paths directly.
"""

from functools import lru_cache

import numpy as np

from ._accel import njit, use_numba
from .grid import gauss_rule, shape_values_and_gradients


@lru_cache(maxsize=None)
def reference_operators(dim):
    """Integrals of basis-gradient products on the unit reference cell.

    Returns ``(M, f)``: ``M[k, l, a, b] = sum_q w_q dN_a/dx_k dN_b/dx_l`` with
    shape (d, d, 2^d, 2^d), and ``f[a, i] = int dN_a/dx_i`` with shape (2^d, d).
    """
    rule = gauss_rule(dim)
    nn = 2**dim
    M = np.zeros((dim, dim, nn, nn))
    f = np.zeros((nn, dim))
    for pt, w in zip(rule.points, rule.weights):
        _, g = shape_values_and_gradients(pt, 1.0)
        M += w * np.einsum("ak,bl->klab", g, g)
        f += w * g
    M.setflags(write=False)
    f.setflags(write=False)
    return M, f


# -- element matrices ---------------------------------------------------------


def element_values_numpy(Km, lam, Kf, mu, h):
    N, d, _ = Km.shape
    M, fref = reference_operators(d)
    nn = 2**d
    S = mu * h ** (d - 2) * np.einsum("ckl,klab->cab", Km, M)
    E = np.einsum("cab,ij->caibj", S, np.eye(d)).reshape(N, nn * d, nn * d)
    f = h ** (d - 1) * fref.ravel()
    E += (lam / h**d)[:, None, None] * np.outer(f, f)[None]
    fr = np.einsum("ab,cij->caibj", np.eye(nn), Kf).reshape(N, nn * d, nn * d)
    E += (h**d / nn) * fr
    return 0.5 * (E + E.transpose(0, 2, 1))


@njit(cache=True)
def _element_values_nb(Km, lam, Kf, M, f, mu, h):
    N, d, _ = Km.shape
    nn = M.shape[2]
    ne = nn * d
    out = np.zeros((N, ne, ne))
    sv = mu * h ** (d - 2)
    sd = 1.0 / h**d
    sf = h**d / nn
    for c in range(N):
        for a in range(nn):
            for b in range(nn):
                s = 0.0
                for k in range(d):
                    for l in range(d):
                        s += Km[c, k, l] * M[k, l, a, b]
                s *= sv
                for i in range(d):
                    out[c, a * d + i, b * d + i] += s
        for r in range(ne):
            fr = f[r] * lam[c] * sd
            for t in range(ne):
                out[c, r, t] += fr * f[t]
        for a in range(nn):
            for i in range(d):
                for j in range(d):
                    out[c, a * d + i, a * d + j] += sf * Kf[c, i, j]
        # mirror so the result is symmetric bit for bit
        for r in range(ne):
            for t in range(r + 1, ne):
                out[c, t, r] = out[c, r, t]
    return out


def element_values_numba(Km, lam, Kf, mu, h):
    d = Km.shape[1]
    M, fref = reference_operators(d)
    f = h ** (d - 1) * fref.ravel()
    return _element_values_nb(
        np.ascontiguousarray(Km, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(Kf, dtype=np.float64),
        np.ascontiguousarray(M),
        f,
        float(mu),
        float(h),
    )


# -- adjoint contraction --------------------------------------------------------


def material_sensitivity_numpy(cell_dofs, w, v, mu, h):
    """Per-cell derivatives of ``w^T K v`` with respect to Km, lam and Kf."""
    N, ne = cell_dofs.shape
    d = _dim_from_ne(ne)
    nn = 2**d
    M, fref = reference_operators(d)
    We = w[cell_dofs].reshape(N, nn, d)
    Ve = v[cell_dofs].reshape(N, nn, d)
    P = np.einsum("cai,cbi->cab", We, Ve)
    A = mu * h ** (d - 2) * np.einsum("klab,cab->ckl", M, P)
    f = h ** (d - 1) * fref.ravel()
    beta = (We.reshape(N, ne) @ f) * (Ve.reshape(N, ne) @ f) / h**d
    F = (h**d / nn) * np.einsum("cak,cal->ckl", We, Ve)
    return A, beta, F


def _dim_from_ne(ne):
    for d in (2, 3):
        if ne == d * 2**d:
            return d
    raise ValueError(f"element size {ne} matches no dimension")


@njit(cache=True)
def _material_sensitivity_nb(cell_dofs, w, v, M, f, mu, h, d):
    N, ne = cell_dofs.shape
    nn = ne // d
    A = np.zeros((N, d, d))
    beta = np.zeros(N)
    F = np.zeros((N, d, d))
    sv = mu * h ** (d - 2)
    sf = h**d / nn
    We = np.empty((nn, d))
    Ve = np.empty((nn, d))
    P = np.empty((nn, nn))
    for c in range(N):
        fw = 0.0
        fv = 0.0
        for a in range(nn):
            for i in range(d):
                dof = cell_dofs[c, a * d + i]
                We[a, i] = w[dof]
                Ve[a, i] = v[dof]
                fw += f[a * d + i] * w[dof]
                fv += f[a * d + i] * v[dof]
        beta[c] = fw * fv / h**d
        for a in range(nn):
            for b in range(nn):
                s = 0.0
                for i in range(d):
                    s += We[a, i] * Ve[b, i]
                P[a, b] = s
        for k in range(d):
            for l in range(d):
                s = 0.0
                for a in range(nn):
                    for b in range(nn):
                        s += M[k, l, a, b] * P[a, b]
                A[c, k, l] = sv * s
                t = 0.0
                for a in range(nn):
                    t += We[a, k] * Ve[a, l]
                F[c, k, l] = sf * t
    return A, beta, F


def material_sensitivity_numba(cell_dofs, w, v, mu, h):
    d = _dim_from_ne(cell_dofs.shape[1])
    M, fref = reference_operators(d)
    f = h ** (d - 1) * fref.ravel()
    return _material_sensitivity_nb(
        np.ascontiguousarray(cell_dofs, dtype=np.int64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(M),
        f,
        float(mu),
        float(h),
        d,
    )


# -- neighborhood statistics ------------------------------------------------------
#
# Cell fields are passed as (nx, ny, nz) arrays; 2D grids use nz = 1 so the
# 3x3x3 box degenerates to 3x3.


def _as3(a):
    return a if a.ndim == 3 else a[..., None]


def neighborhood_extrema_numpy(field):
    from scipy.ndimage import maximum_filter, minimum_filter

    f = np.asarray(field, dtype=float)
    size = 3
    # 'nearest' replicates border cells, which equals clipping the box for max/min
    return maximum_filter(f, size=size, mode="nearest"), minimum_filter(f, size=size, mode="nearest")


@njit(cache=True)
def _neighborhood_extrema_nb(f):
    nx, ny, nz = f.shape
    hi = np.empty_like(f)
    lo = np.empty_like(f)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                mx = -np.inf
                mn = np.inf
                for ii in range(max(i - 1, 0), min(i + 2, nx)):
                    for jj in range(max(j - 1, 0), min(j + 2, ny)):
                        for kk in range(max(k - 1, 0), min(k + 2, nz)):
                            x = f[ii, jj, kk]
                            if x > mx:
                                mx = x
                            if x < mn:
                                mn = x
                hi[i, j, k] = mx
                lo[i, j, k] = mn
    return hi, lo


def neighborhood_extrema_numba(field):
    f = np.asarray(field, dtype=np.float64)
    hi, lo = _neighborhood_extrema_nb(np.ascontiguousarray(_as3(f)))
    return hi.reshape(f.shape), lo.reshape(f.shape)


def neighbor_direction_numpy(normals, member):
    """Sign-aligned, normalized mean normal over each member cell's 3^d box.

    ``normals`` has shape grid_shape + (d,), ``member`` grid_shape (bool). Only
    member cells (including the center) contribute; rows for non-members and
    for vanishing sums are zero.
    """
    n3 = normals if normals.ndim == 4 else normals[:, :, None, :]
    m3 = _as3(member)
    nx, ny, nz, d = n3.shape
    pad_n = np.pad(n3, ((1, 1), (1, 1), (1, 1), (0, 0)))
    pad_m = np.pad(m3, 1)
    acc = np.zeros_like(n3)
    for di in range(3):
        for dj in range(3):
            for dk in range(3):
                if nz == 1 and dk != 1:
                    continue
                nb = pad_n[di : di + nx, dj : dj + ny, dk : dk + nz]
                mb = pad_m[di : di + nx, dj : dj + ny, dk : dk + nz]
                dot = np.sum(nb * n3, axis=-1)
                sgn = np.where(dot < 0, -1.0, 1.0) * mb
                acc += sgn[..., None] * nb
    norm = np.linalg.norm(acc, axis=-1)
    ok = m3 & (norm > 1e-12)
    out = np.where(ok[..., None], acc / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    return out.reshape(normals.shape)


@njit(cache=True)
def _neighbor_direction_nb(n3, m3):
    nx, ny, nz, d = n3.shape
    out = np.zeros_like(n3)
    acc = np.zeros(d)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not m3[i, j, k]:
                    continue
                acc[:] = 0.0
                for ii in range(max(i - 1, 0), min(i + 2, nx)):
                    for jj in range(max(j - 1, 0), min(j + 2, ny)):
                        for kk in range(max(k - 1, 0), min(k + 2, nz)):
                            if not m3[ii, jj, kk]:
                                continue
                            dot = 0.0
                            for t in range(d):
                                dot += n3[ii, jj, kk, t] * n3[i, j, k, t]
                            sg = -1.0 if dot < 0 else 1.0
                            for t in range(d):
                                acc[t] += sg * n3[ii, jj, kk, t]
                nrm = 0.0
                for t in range(d):
                    nrm += acc[t] * acc[t]
                nrm = np.sqrt(nrm)
                if nrm > 1e-12:
                    for t in range(d):
                        out[i, j, k, t] = acc[t] / nrm
    return out


def neighbor_direction_numba(normals, member):
    n3 = normals if normals.ndim == 4 else normals[:, :, None, :]
    m3 = _as3(np.asarray(member, dtype=np.bool_))
    out = _neighbor_direction_nb(np.ascontiguousarray(n3, dtype=np.float64), np.ascontiguousarray(m3))
    return out.reshape(normals.shape)


# -- dispatch ------------------------------------------------------------------------


def element_values(Km, lam, Kf, mu, h):
    if use_numba():
        return element_values_numba(Km, lam, Kf, mu, h)
    return element_values_numpy(Km, lam, Kf, mu, h)


def material_sensitivity(cell_dofs, w, v, mu, h):
    if use_numba():
        return material_sensitivity_numba(cell_dofs, w, v, mu, h)
    return material_sensitivity_numpy(cell_dofs, w, v, mu, h)


def neighborhood_extrema(field):
    if use_numba():
        return neighborhood_extrema_numba(field)
    return neighborhood_extrema_numpy(field)


def neighbor_direction(normals, member):
    if use_numba():
        return neighbor_direction_numba(normals, member)
    return neighbor_direction_numpy(normals, member)
