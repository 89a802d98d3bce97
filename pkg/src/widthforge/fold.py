"""Serpentine folding of a long box into a fatter one.

The longest axis of X is laid out as a tube of thickness ``s * a`` that runs
back and forth in a 2-plane of Y, with mitered 90 degree turns. Every other
axis of X is scaled by the same factor ``s`` into a remaining axis of Y. The
result is piecewise linear on triangles (times boxes), with exact Jacobians
and an exact inverse on its image.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .bounds import DomainError
from .maps import Box, EvaluableMap


class EmbeddingInfeasibleError(DomainError):
    """No folding of X fits inside Y."""


class BudgetExceededError(RuntimeError):
    def __init__(self, measured: float, budget: float):
        super().__init__(f"measured bilipschitz constant {measured:.4g} exceeds budget {budget:.4g}")
        self.measured = measured
        self.budget = budget


PITCH = 2.0  # row pitch in tube thicknesses


@dataclass(frozen=True)
class _Layout:
    s: float
    rows: int
    t_axis: int
    u_axis: int
    alpha: int  # Y axis along which rows are stacked
    beta: int  # Y axis along which rows run
    others: tuple  # (x_axis, y_axis) pairs scaled by s


def _rows_scale(L, a, Ya, Yb, m, pf):
    """Largest s for which an m-row serpentine of X-length L, thickness a fits."""
    if m == 1:
        return min(Yb / L, Ya / a)
    ups = [Ya / (a * (1 + (m - 1) * pf))]
    denom = L + a * (m - (m - 1) * (pf - 1))
    if denom <= 0:
        return 0.0
    ups.append(m * Yb / denom)
    s = min(ups)
    w = s * a
    if Yb - w <= w:  # rows too short for two turns
        return 0.0
    # the last row must keep at least one thickness of length
    used = (m - 1) * (Yb - w) + (m - 1) * (pf - 1) * w
    r = s * L - used
    if r < w - 1e-12:
        return 0.0
    return s


def _layout_scale(L, a, Ya, Yb, m, pf, s_cap):
    s = min(_rows_scale(L, a, Ya, Yb, m, pf), s_cap)
    if s <= 0 or m == 1:
        return max(s, 0.0)
    w = s * a
    if Yb - w <= w or _last_row(L, a, Yb, m, pf, s) < w - 1e-12:
        return 0.0
    return s


def _best_layout(X: Box, Y: Box, pf: float, max_rows: int = 100_000):
    xs, ys = X.sides, Y.sides
    k = X.n
    best = None
    for t_axis, u_axis in itertools.permutations(range(k), 2):
        for alpha, beta in itertools.permutations(range(k), 2):
            rest_x = sorted((i for i in range(k) if i not in (t_axis, u_axis)), key=lambda i: xs[i])
            rest_y = sorted((j for j in range(k) if j not in (alpha, beta)), key=lambda j: ys[j])
            s_cap = min([ys[j] / xs[i] for i, j in zip(rest_x, rest_y)] + [1.0])
            L, a = xs[t_axis], xs[u_axis]
            Ya, Yb = ys[alpha], ys[beta]
            for m in range(1, max_rows + 1):
                if m > 1 and Ya / (a * (1 + (m - 1) * pf)) <= (best[0] if best else 0.0):
                    break
                s = _layout_scale(L, a, Ya, Yb, m, pf, s_cap)
                if s <= 0:
                    continue
                aligned = t_axis == beta and u_axis == alpha
                if best is None or s > best[0] * (1 + 1e-12) or (
                    s >= best[0] * (1 - 1e-12)
                    and (m < best[1].rows or (m == best[1].rows and aligned and not best[2]))
                ):
                    best = (s, _Layout(s, m, t_axis, u_axis, alpha, beta, tuple(zip(rest_x, rest_y))), aligned)
    return None if best is None else best[1]


def _last_row(L, a, Yb, m, pf, s):
    w = s * a
    return s * L - (m - 1) * (Yb - w) - (m - 1) * (pf - 1) * w


def _polyline(layout: _Layout, X: Box, Y: Box, pf: float):
    s, m = layout.s, layout.rows
    L = X.sides[layout.t_axis]
    a = X.sides[layout.u_axis]
    Ya, Yb = Y.sides[layout.alpha], Y.sides[layout.beta]
    w = s * a
    p = pf * w
    if m == 1:
        return np.array([[w / 2, 0.0], [w / 2, s * L]]), w
    pts = [(w / 2, 0.0)]
    for i in range(m - 1):
        end = Yb - w / 2 if i % 2 == 0 else w / 2
        pts.append((w / 2 + i * p, end))
        pts.append((w / 2 + (i + 1) * p, end))
    r = _last_row(L, a, Yb, m, pf, s)
    d = r + w / 2
    start = pts[-1]
    sign = 1.0 if (m - 1) % 2 == 0 else -1.0
    pts.append((start[0], start[1] + sign * d))
    return np.array(pts), w


def _offsets(P, w):
    d = np.diff(P, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    nrm = np.stack([-d[:, 1], d[:, 0]], axis=1)
    miters = np.empty_like(P)
    miters[0] = nrm[0]
    miters[-1] = nrm[-1]
    for i in range(1, len(P) - 1):
        n0, n1 = nrm[i - 1], nrm[i]
        miters[i] = (n0 + n1) / (1.0 + n0 @ n1)
    return P + 0.5 * w * miters, P - 0.5 * w * miters


def _tri_affine(D, I):
    """Affine maps sending domain triangles D (T,3,2) onto image triangles I."""
    Ed = np.stack([D[:, 1] - D[:, 0], D[:, 2] - D[:, 0]], axis=2)
    Ei = np.stack([I[:, 1] - I[:, 0], I[:, 2] - I[:, 0]], axis=2)
    A = Ei @ np.linalg.inv(Ed)
    b = I[:, 0] - np.einsum("tij,tj->ti", A, D[:, 0])
    return A, b


class FoldEmbedding:
    """Piecewise-linear embedding X -> Y produced by :func:`fold_embed`."""

    def __init__(self, X: Box, Y: Box, layout: _Layout, pf: float = PITCH):
        self.X, self.Y, self.layout, self.pitch = X, Y, layout, pf
        self.k = X.n
        self.s = layout.s
        P, w = _polyline(layout, X, Y, pf)
        self.centerline = P
        self.thickness = w
        left, right = _offsets(P, w)
        a = X.sides[layout.u_axis]
        L = X.sides[layout.t_axis]
        caps = np.minimum(
            np.linalg.norm(np.diff(left, axis=0), axis=1),
            np.linalg.norm(np.diff(right, axis=0), axis=1),
        )
        T = np.concatenate([[0.0], np.cumsum(caps / self.s)])
        T *= L / T[-1]
        self.t_breaks = T
        dom, img = [], []
        for i in range(len(P) - 1):
            d00, d10 = (T[i], 0.0), (T[i + 1], 0.0)
            d11, d01 = (T[i + 1], a), (T[i], a)
            i00, i10, i11, i01 = right[i], right[i + 1], left[i + 1], left[i]
            opts = [
                ([d00, d10, d11], [d00, d11, d01], [i00, i10, i11], [i00, i11, i01]),
                ([d00, d10, d01], [d10, d11, d01], [i00, i10, i01], [i10, i11, i01]),
            ]
            best = None
            for da, db, ia, ib in opts:
                A, _ = _tri_affine(np.array([da, db]), np.array([ia, ib]))
                sv = np.linalg.svd(A, compute_uv=False)
                ratio = sv[:, 0].max() / sv[:, 1].min()
                if best is None or ratio < best[0] - 1e-12:
                    best = (ratio, da, db, ia, ib)
            dom += [best[1], best[2]]
            img += [best[3], best[4]]
        self.dom_tris = np.array(dom)
        self.img_tris = np.array(img)
        # orientation: the full Jacobian determinant must be positive
        self.flip_u = False
        A, _ = _tri_affine(self.dom_tris, self.img_tris)
        if self._full_det_sign(np.linalg.det(A[0])) < 0:
            self.flip_u = True
        self.A, self.b = _tri_affine(self.dom_tris, self.img_tris)
        self.Ainv = np.linalg.inv(self.A)
        # barycentric locator for the image triangles
        e1 = self.img_tris[:, 1] - self.img_tris[:, 0]
        e2 = self.img_tris[:, 2] - self.img_tris[:, 0]
        self._loc_inv = np.linalg.inv(np.stack([e1, e2], axis=2))
        self._loc_org = self.img_tris[:, 0].copy()
        self._boundary()
        sv = np.linalg.svd(self.A, compute_uv=False)
        smax = max(sv[:, 0].max(), self.s)
        smin = min(sv[:, 1].min(), self.s)
        self.bilipschitz = float(smax / smin) if layout.rows > 1 else 1.0
        self.sigma_range = (float(smin), float(smax))
        self.min_det = float(np.abs(np.linalg.det(self.A)).min()) * self.s ** (self.k - 2)

    # ---- coordinates

    def _full_det_sign(self, det2):
        lay = self.layout
        src = [lay.t_axis, lay.u_axis] + [i for i, _ in lay.others]
        dst = [lay.alpha, lay.beta] + [j for _, j in lay.others]
        M = np.zeros((self.k, self.k))
        for i, j in zip(src, dst):
            M[j, i] = 1.0
        return np.sign(det2) * np.sign(np.linalg.det(M))

    def _to_tu(self, X):
        lay = self.layout
        t = X[:, lay.t_axis] - self.X.lo[lay.t_axis]
        u = X[:, lay.u_axis] - self.X.lo[lay.u_axis]
        if self.flip_u:
            u = self.X.sides[lay.u_axis] - u
        return np.stack([t, u], axis=1)

    def _from_tu(self, TU):
        lay = self.layout
        t = TU[:, 0] + self.X.lo[lay.t_axis]
        u = TU[:, 1]
        if self.flip_u:
            u = self.X.sides[lay.u_axis] - u
        return t, u + self.X.lo[lay.u_axis]

    def _dom_tri(self, TU):
        seg = np.clip(np.searchsorted(self.t_breaks, TU[:, 0], side="right") - 1, 0, len(self.t_breaks) - 2)
        c0 = 2 * seg
        D = self.dom_tris[c0]
        e1 = D[:, 1] - D[:, 0]
        e2 = D[:, 2] - D[:, 0]
        M = np.stack([e1, e2], axis=2)
        lam = np.linalg.solve(M, (TU - D[:, 0])[:, :, None])[:, :, 0]
        inside = (lam >= -1e-12).all(axis=1) & (lam.sum(axis=1) <= 1 + 1e-12)
        return np.where(inside, c0, c0 + 1)

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lay = self.layout
        TU = self._to_tu(X)
        tri = self._dom_tri(TU)
        ab = np.einsum("nij,nj->ni", self.A[tri], TU) + self.b[tri]
        Y = np.empty_like(X)
        Y[:, lay.alpha] = ab[:, 0] + self.Y.lo[lay.alpha]
        Y[:, lay.beta] = ab[:, 1] + self.Y.lo[lay.beta]
        for i, j in lay.others:
            Y[:, j] = self.Y.lo[j] + self.s * (X[:, i] - self.X.lo[i])
        return Y, tri

    def forward_jacobian(self, tri):
        lay = self.layout
        N = tri.shape[0]
        J = np.zeros((N, self.k, self.k))
        A = self.A[tri]
        su = -1.0 if self.flip_u else 1.0
        J[:, lay.alpha, lay.t_axis] = A[:, 0, 0]
        J[:, lay.alpha, lay.u_axis] = A[:, 0, 1] * su
        J[:, lay.beta, lay.t_axis] = A[:, 1, 0]
        J[:, lay.beta, lay.u_axis] = A[:, 1, 1] * su
        for i, j in lay.others:
            J[:, j, i] = self.s
        return J

    def _ab(self, Y):
        lay = self.layout
        return np.stack([Y[:, lay.alpha] - self.Y.lo[lay.alpha], Y[:, lay.beta] - self.Y.lo[lay.beta]], axis=1)

    def _others_box(self):
        lay = self.layout
        lo = {j: self.Y.lo[j] for _, j in lay.others}
        hi = {j: self.Y.lo[j] + self.s * self.X.sides[i] for i, j in lay.others}
        return lo, hi

    def locate(self, Y, tol=1e-10):
        """Image triangle index of each point's fold-plane part (-1 if outside A)."""
        idx, _ = kernels.locate_simplices(self._ab(np.atleast_2d(Y)), self._loc_inv, self._loc_org, tol)
        return idx

    def in_image(self, Y, tol=1e-10):
        Y = np.atleast_2d(Y)
        ok = self.locate(Y, tol) >= 0
        lo, hi = self._others_box()
        for j in lo:
            ok &= (Y[:, j] >= lo[j] - tol) & (Y[:, j] <= hi[j] + tol)
        return ok

    def _nearest_tri(self, AB):
        rel = AB[:, None, :] - self._loc_org[None]
        lam = np.einsum("tij,ntj->nti", self._loc_inv, rel)
        lam0 = 1.0 - lam.sum(axis=2)
        worst = np.minimum(lam0, lam.min(axis=2))
        return np.argmax(worst, axis=1)

    def inverse(self, Y):
        """I^{-1} on the image (points slightly outside use the nearest triangle)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lay = self.layout
        AB = self._ab(Y)
        tri, _ = kernels.locate_simplices(AB, self._loc_inv, self._loc_org, 1e-10)
        miss = tri < 0
        if miss.any():
            tri[miss] = self._nearest_tri(AB[miss])
        TU = np.einsum("nij,nj->ni", self.Ainv[tri], AB - self.b[tri])
        X = np.empty_like(Y)
        X[:, lay.t_axis], X[:, lay.u_axis] = self._from_tu(TU)
        for i, j in lay.others:
            X[:, i] = self.X.lo[i] + (Y[:, j] - self.Y.lo[j]) / self.s
        return X, tri

    def inverse_jacobian(self, tri):
        return np.linalg.inv(self.forward_jacobian(tri))

    # ---- boundary of the image and nearest-point projection

    def _boundary(self):
        verts, inv = np.unique(np.round(self.img_tris.reshape(-1, 2), 12), axis=0, return_inverse=True)
        tv = inv.reshape(-1, 3)
        edges = {}
        for t in tv:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        bnd = sorted(e for e, c in edges.items() if c == 1)
        self.vertices = verts
        self.boundary_edges = np.array(bnd, dtype=np.int64)

    def project_plane(self, AB):
        """Nearest point of the fold-plane image polygon, its derivative and a feature id."""
        N = AB.shape[0]
        out = AB.copy()
        D = np.broadcast_to(np.eye(2), (N, 2, 2)).copy()
        feat = np.full(N, -1, dtype=np.int64)
        tri, _ = kernels.locate_simplices(AB, self._loc_inv, self._loc_org, 0.0)
        outside = np.nonzero(tri < 0)[0]
        feat[tri >= 0] = tri[tri >= 0]
        if outside.size == 0:
            return out, D, feat
        P0 = self.vertices[self.boundary_edges[:, 0]]
        P1 = self.vertices[self.boundary_edges[:, 1]]
        E = P1 - P0
        EE = np.einsum("ij,ij->i", E, E)
        nE = len(E)
        for start in range(0, outside.size, 4096):
            rows = outside[start:start + 4096]
            Q = AB[rows]
            tau = np.einsum("nej,ej->ne", Q[:, None, :] - P0[None], E) / EE[None]
            tc = np.clip(tau, 0.0, 1.0)
            C = P0[None] + tc[:, :, None] * E[None]
            d2 = ((C - Q[:, None, :]) ** 2).sum(axis=2)
            e = np.argmin(d2, axis=1)
            r = np.arange(rows.size)
            out[rows] = C[r, e]
            tt = tau[r, e]
            interior = (tt > 0.0) & (tt < 1.0)
            u = E[e] / np.sqrt(EE[e])[:, None]
            Dr = np.where(interior[:, None, None], u[:, :, None] * u[:, None, :], 0.0)
            D[rows] = Dr
            vid = np.where(tt <= 0.0, self.boundary_edges[e, 0], self.boundary_edges[e, 1])
            feat[rows] = np.where(interior, self.dom_tris.shape[0] + e, self.dom_tris.shape[0] + nE + vid)
        return out, D, feat

    def project(self, Y):
        """Nearest point of the image A, with its Jacobian and feature ids."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lay = self.layout
        N = Y.shape[0]
        AB = self._ab(Y)
        P, D, feat = self.project_plane(AB)
        out = Y.copy()
        out[:, lay.alpha] = P[:, 0] + self.Y.lo[lay.alpha]
        out[:, lay.beta] = P[:, 1] + self.Y.lo[lay.beta]
        J = np.zeros((N, self.k, self.k))
        J[:, lay.alpha, lay.alpha] = D[:, 0, 0]
        J[:, lay.alpha, lay.beta] = D[:, 0, 1]
        J[:, lay.beta, lay.alpha] = D[:, 1, 0]
        J[:, lay.beta, lay.beta] = D[:, 1, 1]
        lo, hi = self._others_box()
        ids = [feat]
        for j in lo:
            out[:, j] = np.clip(Y[:, j], lo[j], hi[j])
            inside = (Y[:, j] > lo[j]) & (Y[:, j] < hi[j])
            J[:, j, j] = inside
            ids.append(np.where(Y[:, j] <= lo[j], 0, np.where(Y[:, j] >= hi[j], 2, 1)))
        return out, J, np.stack(ids, axis=1)

    # ---- as evaluable maps

    def as_map(self) -> EvaluableMap:
        def func(X):
            return self.forward(X)[0]

        def jac(X):
            return self.forward_jacobian(self.forward(X)[1])

        def piece(X):
            return self._dom_tri(self._to_tu(X))

        return EvaluableMap(self.X, self.Y, func, jac, piece, "fold")

    def colipschitz(self, pairs: int = 200_000, seed: int = 0) -> float:
        """Sampled inf of |I(x)-I(x')| / |x-x'|, seeded with points on the image boundary."""
        rng = np.random.default_rng(seed)
        n_b = 1500
        P0 = self.vertices[self.boundary_edges[:, 0]]
        P1 = self.vertices[self.boundary_edges[:, 1]]
        e = rng.integers(0, len(P0), n_b)
        tt = rng.random((n_b, 1))
        AB = P0[e] + tt * (P1[e] - P0[e])
        Yb = np.tile(np.array(self.Y.lo), (n_b, 1))
        lay = self.layout
        Yb[:, lay.alpha] += AB[:, 0]
        Yb[:, lay.beta] += AB[:, 1]
        lo, hi = self._others_box()
        for j in lo:
            Yb[:, j] = lo[j] + rng.random(n_b) * (hi[j] - lo[j])
        Xb = self.inverse(Yb)[0]
        best = math.inf
        for start in range(0, n_b, 500):
            dx = np.linalg.norm(Xb[start:start + 500, None] - Xb[None], axis=2)
            dy = np.linalg.norm(Yb[start:start + 500, None] - Yb[None], axis=2)
            mask = dx > 1e-9 * self.X.min_side
            if mask.any():
                best = min(best, float((dy[mask] / dx[mask]).min()))
        Xa = self.X.from_unit(rng.random((pairs, self.k)))
        Xc = self.X.from_unit(rng.random((pairs, self.k)))
        dx = np.linalg.norm(Xa - Xc, axis=1)
        dy = np.linalg.norm(self.forward(Xa)[0] - self.forward(Xc)[0], axis=1)
        mask = dx > 0
        return min(best, float((dy[mask] / dx[mask]).min()))

    def summary(self) -> dict:
        lay = self.layout
        return {
            "scale": self.s,
            "rows": lay.rows,
            "thickness": self.thickness,
            "triangles": int(self.dom_tris.shape[0]),
            "bilipschitz": self.bilipschitz,
            "fold_axes": {"x_long": lay.t_axis, "x_thin": lay.u_axis, "y_stack": lay.alpha, "y_run": lay.beta},
        }


def fold_embed(X, Y, budget: float = 20.0, pitch: float = PITCH) -> FoldEmbedding:
    """Fold box X into box Y with a serpentine tube at the largest feasible uniform scale.

    Raises :class:`EmbeddingInfeasibleError` when no layout fits and
    :class:`BudgetExceededError` when the distortion exceeds ``budget``.
    """
    X, Y = Box.of(X), Box.of(Y)
    if X.n != Y.n:
        raise DomainError("fold_embed needs boxes of equal dimension")
    if X.n < 2:
        raise DomainError("fold_embed needs at least two axes")
    layout = _best_layout(X, Y, pitch)
    if layout is None or layout.s <= 1e-12:
        raise EmbeddingInfeasibleError(f"cannot fold {X.sides.tolist()} into {Y.sides.tolist()}")
    try:
        emb = FoldEmbedding(X, Y, layout, pitch)
    except np.linalg.LinAlgError as exc:
        raise EmbeddingInfeasibleError(f"degenerate fold of {X.sides.tolist()} into {Y.sides.tolist()}") from exc
    if not np.isfinite(emb.bilipschitz) or emb.min_det <= 0:
        raise EmbeddingInfeasibleError(f"degenerate fold of {X.sides.tolist()} into {Y.sides.tolist()}")
    if emb.bilipschitz > budget:
        raise BudgetExceededError(emb.bilipschitz, budget)
    return emb
