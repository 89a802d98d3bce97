"""Pure numpy implementations of the hot kernels.

These mirror the compiled versions in ``_ckernels.pyx`` one for one and are
used whenever the extension is not built (or ``WIDTHFORGE_PURE=1``).
"""
import numpy as np

_JACOBI_TOL = 1e-15
_JACOBI_SWEEPS = 60


def singular_values(mats):
    """Singular values of a stack of square matrices, sorted descending.

    One-sided Jacobi: columns are orthogonalised pairwise by plane rotations,
    after which the column norms are the singular values. Vectorised over the
    stack, so every matrix runs the same number of sweeps.
    """
    a = np.array(mats, dtype=float, copy=True)
    if a.ndim == 2:
        a = a[None]
    m, rows, n = a.shape
    for _ in range(_JACOBI_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = a[:, :, p]
                aq = a[:, :, q]
                alpha = np.einsum("ij,ij->i", ap, ap)
                beta = np.einsum("ij,ij->i", aq, aq)
                gamma = np.einsum("ij,ij->i", ap, aq)
                scale = np.sqrt(alpha * beta)
                active = np.abs(gamma) > _JACOBI_TOL * np.where(scale > 0, scale, 1.0)
                active &= scale > 0
                if not active.any():
                    continue
                rel = np.zeros(m)
                rel[active] = np.abs(gamma[active]) / scale[active]
                off = max(off, float(rel.max()))
                g = np.where(active, gamma, 1.0)
                zeta = np.where(active, (beta - alpha) / (2.0 * g), 0.0)
                t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(zeta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c[:, None] * ap - s[:, None] * aq
                new_q = s[:, None] * ap + c[:, None] * aq
                a[:, :, p] = new_p
                a[:, :, q] = new_q
        if off < _JACOBI_TOL:
            break
    sv = np.sqrt(np.einsum("mij,mij->mj", a, a))
    return -np.sort(-sv, axis=1)


def locate_simplices(points, inv, origin, tol):
    """Index of the first simplex containing each point, and its barycentrics.

    ``inv[t]`` maps ``x - origin[t]`` to the last d barycentric coordinates of
    simplex t. Points outside every simplex get index -1.
    """
    points = np.asarray(points, dtype=float)
    npts, d = points.shape
    ntri = inv.shape[0]
    idx = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, d + 1))
    if ntri == 0 or npts == 0:
        return idx, bary
    chunk = max(1, 2_000_000 // max(ntri * d, 1))
    for start in range(0, npts, chunk):
        p = points[start:start + chunk]
        rel = p[:, None, :] - origin[None, :, :]
        lam = np.einsum("tij,ptj->pti", inv, rel)
        lam0 = 1.0 - lam.sum(axis=2)
        inside = (lam0 >= -tol) & np.all(lam >= -tol, axis=2)
        hit = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        rows = np.nonzero(hit)[0]
        idx[start + rows] = first[rows]
        bary[start + rows, 0] = lam0[rows, first[rows]]
        bary[start + rows, 1:] = lam[rows, first[rows]]
    return idx, bary


def clip_halfplanes(coef, box):
    """Intersect a square with many sets of half-planes ``a + b u + c v >= 0``.

    ``coef`` has shape (T, m, 3). Returns polygon vertices (T, m + 4, 2) and a
    vertex count per set; empty intersections have count 0.
    """
    coef = np.asarray(coef, dtype=float)
    ntri, m, _ = coef.shape
    maxv = m + 4
    out = np.zeros((ntri, maxv, 2))
    counts = np.zeros(ntri, dtype=np.int64)
    square = [(-box, -box), (box, -box), (box, box), (-box, box)]
    for t in range(ntri):
        poly = square
        for h in range(m):
            a, b, c = coef[t, h]
            if not poly:
                break
            nxt = []
            npoly = len(poly)
            for i in range(npoly):
                u1, v1 = poly[i]
                u2, v2 = poly[(i + 1) % npoly]
                f1 = a + b * u1 + c * v1
                f2 = a + b * u2 + c * v2
                if f1 >= 0.0:
                    nxt.append((u1, v1))
                if (f1 >= 0.0) != (f2 >= 0.0):
                    r = f1 / (f1 - f2)
                    nxt.append((u1 + r * (u2 - u1), v1 + r * (v2 - v1)))
            poly = nxt
        if len(poly) >= 3:
            k = min(len(poly), maxv)
            out[t, :k] = poly[:k]
            counts[t] = k
    return out, counts
