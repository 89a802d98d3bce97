"""Lattice-skeleton tiling, the good/bad triangulation, the bending map Psi,
bent fibers and certified width reports on voxel data.

S is the k-skeleton of the unit lattice shifted by ``translate``; T is the dual
(n-k-1)-skeleton (shifted by a further 1/2). Every tile K(A, B) is an isometric
copy of one canonical tile, so the triangulation is computed once in canonical
coordinates

    y_1..y_k      along A, in [0, 1]
    y_k+1..y_n-1  along B, in [-1/2, 1/2]
    y_n           from A (y_n = 0) towards B (y_n = 1/2)

and placed by a signed axis permutation M: world = base + M y.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bounds import DomainError, Rectangle, UnsupportedSizeError, subset_width_bound
from .maps import Box, EvaluableMap, sobol_points
from .voxel import VoxelGrid

EPSILON = 0.02
VAL_A = (0.0, 1.0, 0.5)  # a-face coordinate codes: 0, 1, full
VAL_B = (-0.5, 0.5, 0.0)  # b-face coordinate codes: -1/2, 1/2, full


class ConstructionError(AssertionError):
    """Inconsistent vertex images on a shared face."""


class TranslateSearchError(RuntimeError):
    def __init__(self, best: float, bound: float, trials: int):
        super().__init__(
            f"no translate with skeleton mass <= {bound:.4g} in {trials} trials "
            f"(best {best:.4g}); increase trials"
        )
        self.best, self.bound, self.trials = best, bound, trials


# ------------------------------------------------------------------ canonical tile


def _subfaces(code):
    out = []
    for i, c in enumerate(code):
        if c == 2:
            for v in (0, 1):
                out.append(code[:i] + (v,) + code[i + 1:])
    return out


def _dim(code) -> int:
    return sum(1 for c in code if c == 2)


def _face_dim(face) -> int:
    kind, a, b = face
    if kind == "A":
        return _dim(a)
    if kind == "B":
        return _dim(b)
    if kind == "C":
        return _dim(a) + _dim(b)
    return _dim(a) + _dim(b) + 1


def _facets(face):
    kind, a, b = face
    if kind == "A":
        return [("A", x, ()) for x in _subfaces(a)]
    if kind == "B":
        return [("B", (), x) for x in _subfaces(b)]
    if kind == "C":
        return [("C", x, b) for x in _subfaces(a)] + [("C", a, x) for x in _subfaces(b)]
    out = [(kind, x, b) for x in _subfaces(a)] + [(kind, a, x) for x in _subfaces(b)]
    out.append(("C", a, b))
    if kind == "L" and _dim(b) == 0:
        out.append(("A", a, ()))
    if kind == "U" and _dim(a) == 0:
        out.append(("B", (), b))
    return out


def _flags(face):
    """All maximal chains of faces ending at ``face`` (vertex first)."""
    if _face_dim(face) == 0:
        return [[face]]
    return [chain + [face] for f in _facets(face) for chain in _flags(f)]


class TileShape:
    """Barycentric triangulation of the canonical K_G and K_B with Psi's vertex images."""

    def __init__(self, n: int, k: int, eps: float):
        self.n, self.k, self.eps = n, k, float(eps)
        self.t = 1.0 - 2.0 * eps
        full = ((2,) * k, (2,) * (n - k - 1))
        flags = [(c, True) for c in _flags(("L",) + full)] + [(c, False) for c in _flags(("U",) + full)]
        S = len(flags)
        V = np.empty((S, n + 1, n))
        W = np.empty((S, n + 1, n))
        in_a = np.empty((S, n + 1), dtype=bool)
        for s, (chain, _) in enumerate(flags):
            for i, face in enumerate(chain):
                V[s, i] = self.centroid(face)
                W[s, i], in_a[s, i] = self.image(face)
        self.flags = [c for c, _ in flags]
        self.vertices = V
        self.images = W
        self.good = np.array([g for _, g in flags])
        self.image_in_s = in_a.all(axis=1)
        self.origin = V[:, 0].copy()
        E = np.transpose(V[:, 1:] - V[:, :1], (0, 2, 1))
        self.Einv = np.linalg.inv(E)
        self.D = np.transpose(W[:, 1:] - W[:, :1], (0, 2, 1)) @ self.Einv
        self.detD = np.linalg.det(self.D)
        self.volumes = np.abs(np.linalg.det(E)) / math.factorial(n)
        self.center = np.concatenate([np.full(k, 0.5), np.zeros(n - k - 1), [0.25]])
        self.radius = float(np.linalg.norm(V - self.center, axis=2).max())
        self.lo = np.concatenate([np.zeros(k), np.full(n - k - 1, -0.5), [0.0]])
        self.hi = np.concatenate([np.ones(k), np.full(n - k - 1, 0.5), [0.5]])

    def ca(self, a):
        return np.concatenate([[VAL_A[c] for c in a], np.zeros(self.n - self.k)])

    def cb(self, b):
        return np.concatenate([np.full(self.k, 0.5), [VAL_B[c] for c in b], [0.5]])

    def centroid(self, face):
        """Vertex centroid of a face of K_G or K_B."""
        kind, a, b = face
        if kind == "A":
            return self.ca(a)
        if kind == "B":
            return self.cb(b)
        cut = (1 - self.t) * self.ca(a) + self.t * self.cb(b)
        if kind == "C":
            return cut
        if kind == "L":
            w = 2 ** _dim(b)
            return (self.ca(a) + w * cut) / (1 + w)
        w = 2 ** _dim(a)
        return (self.cb(b) + w * cut) / (1 + w)

    def image(self, face):
        kind, a, b = face
        if kind == "B":
            return self.cb(b), False
        return self.ca(a), True

    def contains(self, Y, tol: float = 1e-12) -> np.ndarray:
        k, n = self.k, self.n
        yn = Y[:, n - 1]
        ok = (yn >= -tol) & (yn <= 0.5 + tol)
        if n - k - 1:
            ok &= np.all(np.abs(Y[:, k:n - 1]) <= yn[:, None] + tol, axis=1)
        ok &= np.all(np.abs(0.5 - Y[:, :k]) <= (0.5 - yn)[:, None] + tol, axis=1)
        return ok

    def psi(self, s, Y):
        return self.images[s, 0] + np.einsum("...ij,...j->...i", self.D[s], Y - self.origin[s])

    @property
    def volume(self) -> float:
        return float(self.volumes.sum())

    def displacement(self) -> float:
        return float(np.linalg.norm(self.images - self.vertices, axis=2).max())

    def bad_distance_to_dual(self) -> float:
        """Max distance from a bad-simplex vertex to the tile's dual face B."""
        k, n = self.k, self.n
        Vb = self.vertices[~self.good].reshape(-1, n)
        d2 = ((Vb[:, :k] - 0.5) ** 2).sum(axis=1) + (Vb[:, n - 1] - 0.5) ** 2
        if n - k - 1:
            d2 += (np.maximum(np.abs(Vb[:, k:n - 1]) - 0.5, 0) ** 2).sum(axis=1)
        return float(np.sqrt(d2).max())

    def max_diameter(self) -> float:
        V = self.vertices
        return float(np.linalg.norm(V[:, :, None, :] - V[:, None, :, :], axis=3).max())

    def distance(self, Y, iters: int = 300) -> np.ndarray:
        """Euclidean distance from canonical points to the tile (Dykstra projection)."""
        n, k = self.n, self.k
        e = np.eye(n)
        rows = [(-e[n - 1], 0.0), (e[n - 1], 0.5)]
        for i in range(k, n - 1):
            rows += [(e[i] - e[n - 1], 0.0), (-e[i] - e[n - 1], 0.0)]
        for j in range(k):
            rows += [(-e[j] + e[n - 1], 0.0), (e[j] + e[n - 1], 1.0)]
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = Y.copy()
        incr = np.zeros((len(rows),) + X.shape)
        for _ in range(iters):
            for h, (a, b) in enumerate(rows):
                Z = X + incr[h]
                step = np.maximum(Z @ a - b, 0)[:, None] * a / (a @ a)
                incr[h] = step
                X = Z - step
        return np.linalg.norm(X - Y, axis=1)


# ------------------------------------------------------------------ lattice helpers


def _orientations(n: int, k: int):
    out = []
    for J in itertools.combinations(range(n), k):
        I = [i for i in range(n) if i not in J]
        for m in I:
            mids = [i for i in I if i != m]
            for sg in (1.0, -1.0):
                M = np.zeros((n, n))
                for c, j in enumerate(J):
                    M[j, c] = 1.0
                for c, i in enumerate(mids):
                    M[i, k + c] = 1.0
                M[m, n - 1] = sg
                out.append(M)
    return np.array(out)


def _frac_dist(X, shift):
    r = X - shift
    return np.abs(r - np.rint(r))


def distance_to_skeleton(X, translate, k: int) -> np.ndarray:
    """Distance to the k-skeleton of Z^n + translate."""
    d = np.sort(_frac_dist(np.atleast_2d(X), translate), axis=1)
    return np.sqrt((d[:, : d.shape[1] - k] ** 2).sum(axis=1))


def distance_to_dual(X, translate, k: int) -> np.ndarray:
    """Distance to the dual (n-k-1)-skeleton T."""
    d = np.sort(_frac_dist(np.atleast_2d(X), np.asarray(translate) + 0.5), axis=1)
    return np.sqrt((d[:, : k + 1] ** 2).sum(axis=1))


def _skeleton_face_key(Wc, translate, J):
    """Integer key of the k-face of S (spanned by axes J) holding the image points Wc."""
    t = np.asarray(translate)
    c = Wc.mean(axis=0)
    fixed = [i for i in range(Wc.shape[1]) if i not in J]
    key = [int(np.rint(c[i] - t[i])) for i in fixed]
    key += [int(np.floor(c[j] - t[j] + 1e-9)) for j in J]
    return (tuple(J),) + tuple(key)


# ------------------------------------------------------------------ complex


@dataclass
class SkeletonComplex:
    n: int
    k: int
    epsilon: float
    translate: np.ndarray
    region: Box
    shape: TileShape
    Ms: np.ndarray
    base: np.ndarray
    otype: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n_tiles(self) -> int:
        return int(self.base.shape[0])

    @property
    def simplices_per_tile(self) -> int:
        return int(self.shape.vertices.shape[0])

    @property
    def n_simplices(self) -> int:
        return self.n_tiles * self.simplices_per_tile

    def tile_centers(self, tiles=None):
        tiles = slice(None) if tiles is None else tiles
        return self.base[tiles] + self.Ms[self.otype[tiles]] @ self.shape.center

    def world_simplices(self, tiles=None):
        """World vertices, vertex images, good flags, image-in-S flags and tile ids."""
        tiles = np.arange(self.n_tiles) if tiles is None else np.asarray(tiles)
        M = self.Ms[self.otype[tiles]]
        b = self.base[tiles, None, None, :]
        V = b + np.einsum("tij,svj->tsvi", M, self.shape.vertices)
        W = b + np.einsum("tij,svj->tsvi", M, self.shape.images)
        T, S = tiles.size, self.simplices_per_tile
        return (
            V.reshape(T * S, self.n + 1, self.n),
            W.reshape(T * S, self.n + 1, self.n),
            np.tile(self.shape.good, T),
            np.tile(self.shape.image_in_s, T),
            np.repeat(tiles, S),
        )

    # ---- locating points

    def locate(self, X, tol: float = 1e-10):
        """Canonical coordinates, orientation, base and simplex index of each point."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = self.translate
        N = X.shape[0]
        found = np.zeros(N, dtype=bool)
        Y = np.zeros_like(X)
        ot = np.full(N, -1, dtype=np.int64)
        base = np.zeros_like(X)
        rounded = np.rint(X - t) + t
        floored = np.floor(X - t) + t
        for o, M in enumerate(self.Ms):
            J = M[:, : self.k].any(axis=1)
            p = np.where(J, floored, rounded)
            y = (X - p) @ M
            hit = ~found & self.shape.contains(y, tol)
            Y[hit], ot[hit], base[hit] = y[hit], o, p[hit]
            found |= hit
        if not found.all():
            raise DomainError("points not covered by any tile")
        simp, _ = kernels.locate_simplices(Y, self.shape.Einv, self.shape.origin, 1e-9)
        if np.any(simp < 0):
            raise ConstructionError("point inside a tile but outside all of its simplices")
        return Y, ot, base, simp

    def psi(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y, ot, base, simp = self.locate(X)
        Z = self.shape.psi(simp, Y)
        return base + np.einsum("tij,tj->ti", self.Ms[ot], Z)

    def psi_jacobian(self, X):
        _, ot, _, simp = self.locate(np.atleast_2d(X))
        M = self.Ms[ot]
        return M @ self.shape.D[simp] @ np.transpose(M, (0, 2, 1))

    def _tiles_containing(self, y, tol):
        """All (orientation, base, canonical point) whose closed tile contains y."""
        t = self.translate
        shifts = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.n)))
        bases = np.floor(y - t) + t + shifts
        out = []
        for o, M in enumerate(self.Ms):
            Y = (y - bases) @ M
            for j in np.nonzero(self.shape.contains(Y, tol))[0]:
                out.append((o, bases[j], Y[j]))
        return out

    def preimages(self, y, tol: float = 1e-9):
        """Exact preimages of y with local degree signs; sign 0 marks a non-generic probe.

        Psi maps every tile into itself, so only tiles containing y can hold preimages.
        """
        y = np.asarray(y, dtype=float)
        sh = self.shape
        nondeg = np.nonzero(np.abs(sh.detD) > 1e-12)[0]
        Winv = np.linalg.inv(np.transpose(sh.images[nondeg, 1:] - sh.images[nondeg, :1], (0, 2, 1)))
        pts, signs = [], []
        generic = True
        for o, b, Y in self._tiles_containing(y, 1e-9):
            lam = np.einsum("sij,sj->si", Winv, Y - sh.images[nondeg, 0])
            allb = np.column_stack([1 - lam.sum(axis=1), lam])
            hit = np.all(allb >= -tol, axis=1)
            if np.any(hit & np.any(np.abs(allb) <= tol, axis=1)):
                generic = False
            for i in np.nonzero(hit)[0]:
                s = nondeg[i]
                xc = sh.vertices[s, 0] + (sh.vertices[s, 1:] - sh.vertices[s, 0]).T @ lam[i]
                pts.append(b + self.Ms[o] @ xc)
                signs.append(float(np.sign(sh.detD[s])))
        keep = []
        for i, p in enumerate(pts):
            if all(np.linalg.norm(p - pts[j]) > 1e-9 for j in keep):
                keep.append(i)
        P = np.array([pts[i] for i in keep]).reshape(-1, self.n)
        sg = np.array([signs[i] for i in keep])
        if not generic or P.shape[0] == 0:
            sg = np.append(sg, 0.0)
        return P, sg

    def as_map(self) -> EvaluableMap:
        def piece(X):
            _, ot, base, simp = self.locate(X)
            return np.column_stack([ot, simp, np.rint(base * 1e6)]).astype(np.int64)

        return EvaluableMap(self.region, self.region, self.psi, self.psi_jacobian, piece,
                            "psi", preimages=self.preimages)

    # ---- structural checks

    def _vertex_groups(self, V):
        key = np.rint(V.reshape(-1, self.n) * 1e7).astype(np.int64)
        _, inv = np.unique(key, axis=0, return_inverse=True)
        return inv.ravel()

    def check_consistency(self, tiles=None, tol: float = 1e-9) -> float:
        """Max spread of images given to one world vertex; raises on disagreement."""
        V, W, _, _, _ = self.world_simplices(tiles)
        inv = self._vertex_groups(V)
        Q = W.reshape(-1, self.n)
        lo = np.full((inv.max() + 1, self.n), np.inf)
        hi = np.full((inv.max() + 1, self.n), -np.inf)
        np.minimum.at(lo, inv, Q)
        np.maximum.at(hi, inv, Q)
        spread = (hi - lo).max(axis=1)
        worst = float(spread.max())
        if worst > tol:
            g = int(np.argmax(spread))
            idx = np.nonzero(inv == g)[0]
            s = idx[0] // (self.n + 1)
            face = self.shape.flags[s % self.simplices_per_tile][idx[0] % (self.n + 1)]
            raise ConstructionError(
                f"vertex {V.reshape(-1, self.n)[idx[0]].round(6).tolist()} (face {face}) "
                f"has images {np.unique(Q[idx].round(6), axis=0).tolist()}"
            )
        return worst

    def continuity_check(self, samples: int = 10_000, seed: int = 0, tiles=None) -> dict:
        """Evaluate both neighbours' linear maps at random points of shared facets."""
        rng = np.random.default_rng(seed)
        V, W, _, _, _ = self.world_simplices(tiles)
        N, n1, n = V.shape
        vid = self._vertex_groups(V).reshape(N, n1)
        keys, owner = [], []
        for drop in range(n1):
            keys.append(np.sort(np.delete(vid, drop, axis=1), axis=1))
            owner.append(np.column_stack([np.arange(N), np.full(N, drop)]))
        K = np.vstack(keys)
        O = np.vstack(owner)
        _, inv, counts = np.unique(K, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        shared = np.nonzero(counts[inv] == 2)[0]
        if shared.size == 0:
            return {"samples": 0, "shared_facets": 0, "max_discrepancy": 0.0}
        pairs = shared[np.argsort(inv[shared], kind="stable")].reshape(-1, 2)
        pick = pairs[rng.integers(0, pairs.shape[0], samples)]
        sa, da, sb = O[pick[:, 0], 0], O[pick[:, 0], 1], O[pick[:, 1], 0]
        w = rng.dirichlet(np.ones(n1 - 1), samples)
        keep = np.array([[i for i in range(n1) if i != d] for d in range(n1)])
        facet = np.take_along_axis(V[sa], keep[da][:, :, None], axis=1)
        P = np.einsum("sv,svi->si", w, facet)
        diff = np.abs(_eval_simplex(V[sa], W[sa], P) - _eval_simplex(V[sb], W[sb], P)).max()
        return {"samples": int(samples), "shared_facets": int(pairs.shape[0]),
                "max_discrepancy": float(diff)}

    def tiling_check(self, samples: int = 100_000, seed: int = 0) -> dict:
        """Fraction of random region points in exactly one open tile, and tile volume per cell."""
        rng = np.random.default_rng(seed)
        X = self.region.from_unit(rng.random((samples, self.n)))
        t = self.translate
        shifts = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.n)))
        count = np.zeros(samples, dtype=np.int64)
        c = np.floor(X - t) + t
        for sh in shifts:
            for M in self.Ms:
                count += self.shape.contains((X - (c + sh)) @ M, -1e-12)
        return {
            "samples": samples,
            "exactly_one": float(np.mean(count == 1)),
            "tile_volume_per_cell": float(len(self.Ms) * self.shape.volume),
        }

    def tiles_meeting_ball(self, center, radius: float = 1.0) -> np.ndarray:
        c = np.asarray(center, dtype=float)
        cen = self.tile_centers()
        cand = np.nonzero(np.linalg.norm(cen - c, axis=1) <= radius + self.shape.radius)[0]
        Y = np.einsum("tji,tj->ti", self.Ms[self.otype[cand]], c - self.base[cand])
        return cand[self.shape.distance(Y) <= radius + 1e-9]

    def simplices_meeting_ball(self, center, radius: float = 1.0) -> int:
        """Simplices of the tiles that meet the ball; fixed by the tiling, not by epsilon."""
        return int(self.tiles_meeting_ball(center, radius).size * self.simplices_per_tile)

    def good_image_distance(self, tiles=None) -> float:
        """Max distance to S of the vertex images of good simplices."""
        _, W, good, _, _ = self.world_simplices(tiles)
        return float(distance_to_skeleton(W[good].reshape(-1, self.n), self.translate, self.k).max())

    def bad_vertex_distance(self, tiles=None) -> float:
        """Max distance to T of the vertices of bad simplices."""
        V, _, good, _, _ = self.world_simplices(tiles)
        return float(distance_to_dual(V[~good].reshape(-1, self.n), self.translate, self.k).max())

    def summary(self) -> dict:
        sh = self.shape
        return {
            "n": self.n,
            "k": self.k,
            "epsilon": self.epsilon,
            "translate": [float(v) for v in self.translate],
            "region": self.region.to_json(),
            "tiles": self.n_tiles,
            "simplices_per_tile": self.simplices_per_tile,
            "good_per_tile": int(sh.good.sum()),
            "bad_per_tile": int((~sh.good).sum()),
            "displacement": sh.displacement(),
            "max_simplex_diameter": sh.max_diameter(),
            "bad_distance_to_dual": sh.bad_distance_to_dual(),
        }


def _eval_simplex(V, W, P):
    E = np.transpose(V[:, 1:] - V[:, :1], (0, 2, 1))
    lam = np.linalg.solve(E, (P - V[:, 0])[:, :, None])[:, :, 0]
    Wd = np.transpose(W[:, 1:] - W[:, :1], (0, 2, 1))
    return W[:, 0] + np.einsum("sij,sj->si", Wd, lam)


def _as_box(region) -> Box:
    if isinstance(region, Box):
        return region
    arr = np.asarray(region, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 2:
        return Box(arr[0], arr[1])
    return Box.of(arr)


def build_psi(n: int, k: int, epsilon: float = EPSILON, region=None, translate=None) -> SkeletonComplex:
    """Tiles K(A, B) meeting ``region``, each split at y_n = 1/2 - epsilon and triangulated."""
    if n not in (2, 3, 4):
        raise UnsupportedSizeError(f"skeleton complexes support n in 2..4, got {n}")
    if not (1 <= k <= n - 1):
        raise DomainError(f"k must be in 1..{n - 1}")
    if not (0 < epsilon <= 0.1):
        raise DomainError("epsilon must lie in (0, 0.1]")
    region = _as_box([3.0] * n if region is None else region)
    if region.n != n:
        raise DomainError("region dimension does not match n")
    if not np.all(np.isfinite(region.sides)):
        raise DomainError("region must be finite")
    t = np.zeros(n) if translate is None else np.asarray(translate, dtype=float) % 1.0
    shape = TileShape(n, k, epsilon)
    Ms = _orientations(n, k)
    rlo, rhi = np.array(region.lo), np.array(region.hi)
    lo = np.floor(rlo - t) - 1
    hi = np.ceil(rhi - t) + 1
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1) + t
    corners = np.array(list(itertools.product(*zip(shape.lo, shape.hi))))
    bases, types = [], []
    for o, M in enumerate(Ms):
        wc = corners @ M.T
        ok = np.all((pts + wc.max(axis=0) > rlo + 1e-12) & (pts + wc.min(axis=0) < rhi - 1e-12), axis=1)
        bases.append(pts[ok])
        types.append(np.full(int(ok.sum()), o, dtype=np.int64))
    return SkeletonComplex(n, k, float(epsilon), t, region, shape, Ms, np.vstack(bases), np.concatenate(types))


# ------------------------------------------------------------------ fibers


@dataclass
class FiberFrame:
    V: np.ndarray  # (n, k) orthonormal fiber directions
    P: np.ndarray  # (n, n-k) orthonormal projection plane
    resampled: int = 0

    def to_json(self) -> dict:
        return {"V": self.V.tolist(), "P": self.P.tolist(), "resampled": self.resampled}


def _frame_is_generic(P, n, k, tol=1e-6) -> bool:
    d = n - k - 1
    if d == 0:
        return True
    normals = []
    for axes in itertools.combinations(range(n), d):
        u, s, _ = np.linalg.svd(P.T[:, list(axes)])
        if s.min() < tol:
            return False
        normals.append(u[:, -1])
    return all(1 - abs(float(a @ b)) >= tol for a, b in itertools.combinations(normals, 2))


def generic_frame(n: int, k: int, seed: int = 0) -> FiberFrame:
    """Uniformly random orthonormal (V, P), redrawn until P is in general position to T."""
    rng = np.random.default_rng(seed)
    for tries in range(100):
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        q = q * np.sign(np.diag(r))
        P, V = q[:, : n - k], q[:, n - k:]
        if _frame_is_generic(P, n, k):
            return FiberFrame(V, P, tries)
    raise RuntimeError("could not draw a generic frame")


@dataclass
class FiberReport:
    offset: list
    measure: float
    image_mass: float
    out_of_s_mass: float
    skeleton_mass: float
    bad_simplices: int
    multiplicity: int
    f_integral: float | None = None
    jitters: int = 0
    pieces: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


class ClipDegeneracy(RuntimeError):
    pass


def _fiber_pieces(sk: SkeletonComplex, frame: FiberFrame, q0, half: float):
    """Clip Q = q0 + V u (|u|_inf <= half) against every nearby simplex.

    Returns (tile, simplex, u-vertices) per nonempty piece: an interval (2, 1)
    for k = 1, a convex polygon (m, 2) for k = 2.
    """
    n, k = sk.n, sk.k
    sh = sk.shape
    rel = sk.tile_centers() - q0
    near = np.linalg.norm(rel @ frame.P, axis=1) <= sh.radius + 1e-9
    near &= np.all(np.abs(rel @ frame.V) <= half + sh.radius, axis=1)
    tiles = np.nonzero(near)[0]
    if tiles.size == 0:
        return []
    M = sk.Ms[sk.otype[tiles]]
    y0 = np.einsum("tji,tj->ti", M, q0 - sk.base[tiles])
    Vy = np.einsum("tji,jk->tik", M, frame.V)
    S = sk.simplices_per_tile
    c = np.einsum("sij,tsj->tsi", sh.Einv, y0[:, None, :] - sh.origin[None])
    L = np.einsum("sij,tjk->tsik", sh.Einv, Vy)
    c = np.concatenate([1 - c.sum(axis=2, keepdims=True), c], axis=2)
    L = np.concatenate([-L.sum(axis=2, keepdims=True), L], axis=2)
    if np.any((np.linalg.norm(L, axis=3) < 1e-10) & (np.abs(c) < 1e-10)):
        raise ClipDegeneracy("fiber lies in a simplex face")
    T = tiles.size
    c = c.reshape(T * S, n + 1)
    L = L.reshape(T * S, n + 1, k)
    out = []
    if k == 1:
        b = L[:, :, 0]
        pos, neg = b > 1e-14, b < -1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            r = -c / b
        lo = np.maximum(-half, np.where(pos, r, -np.inf).max(axis=1))
        hi = np.minimum(half, np.where(neg, r, np.inf).min(axis=1))
        blocked = np.any(~pos & ~neg & (c < 0), axis=1)
        for idx in np.nonzero((hi - lo > 1e-12) & ~blocked)[0]:
            out.append((int(tiles[idx // S]), int(idx % S), np.array([[lo[idx]], [hi[idx]]])))
        return out
    if k == 2:
        poly, counts = kernels.clip_halfplanes(np.concatenate([c[:, :, None], L], axis=2), half)
        live = np.nonzero(counts >= 3)[0]
        P, cnt = poly[live], counts[live]
        i = np.arange(P.shape[1])
        nxt = np.where(i[None] + 1 < cnt[:, None], i[None] + 1, 0)
        Pn = np.take_along_axis(P, nxt[:, :, None], axis=1)
        cross = np.where(i[None] < cnt[:, None], P[:, :, 0] * Pn[:, :, 1] - P[:, :, 1] * Pn[:, :, 0], 0.0)
        area = 0.5 * np.abs(cross.sum(axis=1))
        for j in np.nonzero(area > 1e-14)[0]:
            idx = live[j]
            out.append((int(tiles[idx // S]), int(idx % S), P[j, : cnt[j]]))
        return out
    raise UnsupportedSizeError("exact clipping supports k <= 2")


def _shoelace(U) -> float:
    x, y = U[:, 0], U[:, 1]
    return 0.5 * abs(float(x[:-1] @ y[1:] - y[:-1] @ x[1:] + x[-1] * y[0] - y[-1] * x[0]))


@functools.lru_cache(maxsize=None)
def _subtri_weights(m: int) -> np.ndarray:
    """Barycentric weights of the centroids of the m^2 congruent sub-triangles."""
    w = []
    for i in range(m):
        for j in range(m - i):
            w.append(((i + 1 / 3) / m, (j + 1 / 3) / m))
            if i + j < m - 1:
                w.append(((i + 2 / 3) / m, (j + 2 / 3) / m))
    w = np.array(w)
    return np.column_stack([1 - w.sum(axis=1), w])


def _tri_points(tri, m):
    return _subtri_weights(m) @ tri


def _fiber_origin(sk, frame, off):
    center = (np.array(sk.region.lo) + np.array(sk.region.hi)) / 2
    return off + frame.V @ (frame.V.T @ (center - off))


def bend_fiber(sk: SkeletonComplex, frame: FiberFrame, fiber_offset, f: VoxelGrid | None = None,
               window: float | None = None, samples_per_face: int = 6, seed: int = 0,
               mc_samples: int = 20_000) -> FiberReport:
    """Bend the k-plane through ``fiber_offset`` perpendicular to P by Psi and measure Psi(Q)."""
    n, k = sk.n, sk.k
    off = np.asarray(fiber_offset, dtype=float)
    half = float(np.linalg.norm(sk.region.sides)) / 2 + 2.0 if window is None else float(window)
    rng = np.random.default_rng(seed)
    jitters = 0
    while True:
        q0 = _fiber_origin(sk, frame, off)
        if k >= 3:
            return _bend_mc(sk, frame, q0, off, half, f, mc_samples, seed)
        try:
            pieces = _fiber_pieces(sk, frame, q0, half)
            break
        except ClipDegeneracy:
            jitters += 1
            if jitters > 20:
                raise
            off = off + frame.P @ (rng.standard_normal(n - k) * 1e-7)
    sh = sk.shape
    fint = 0.0 if f is not None else None
    h = min(f.spacing) if f is not None else 0.1
    if not pieces:
        return FiberReport([float(v) for v in off], 0.0, 0.0, 0.0, 0.0, 0, 0, fint, jitters, 0)
    tiles = np.array([p[0] for p in pieces])
    simps = np.array([p[1] for p in pieces])
    meas = np.array([float(U[1, 0] - U[0, 0]) if k == 1 else _shoelace(U) for _, _, U in pieces])
    # k-Jacobian of Psi restricted to Q, per (orientation, simplex)
    Vy_o = np.einsum("oji,jk->oik", sk.Ms, frame.V)
    G = np.einsum("sij,ojk->osik", sh.D, Vy_o)
    gram = np.einsum("osik,osil->oskl", G, G)
    jac_table = np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))
    ot = sk.otype[tiles]
    jac = jac_table[ot, simps]
    mass = meas * jac
    in_s = sh.image_in_s[simps]
    faces = {}
    for i in np.nonzero((mass > 0) & ((f is not None) | (sh.good[simps] & (jac > 1e-12))))[0]:
        tile, s, U = pieces[i]
        M = sk.Ms[ot[i]]
        base = sk.base[tile]
        y0 = M.T @ (q0 - base)
        if f is not None:
            fint += _piece_f_integral(sk, tile, s, y0, Vy_o[ot[i]], U, jac[i], f, h)
        if sh.good[s] and jac[i] > 1e-12:
            Wc = base + sh.psi(s, y0 + U @ Vy_o[ot[i]].T) @ M.T
            J = tuple(int(j) for j in np.nonzero(M[:, :k].any(axis=1))[0])
            faces.setdefault(_skeleton_face_key(Wc, sk.translate, J), []).append(Wc)
    mult = _multiplicity(faces, sk.translate, k, samples_per_face)
    return FiberReport([float(v) for v in off], float(meas.sum()), float(mass.sum()), float(mass[~in_s].sum()),
                       float(mass[in_s].sum()), int((~sh.good[simps]).sum()), mult, fint, jitters, len(pieces))


def _piece_f_integral(sk, tile, s, y0, Vy, U, jac, f, h):
    sh = sk.shape
    M = sk.Ms[sk.otype[tile]]
    base = sk.base[tile]

    def image(Upts):
        return base + sh.psi(s, y0 + Upts @ Vy.T) @ M.T

    if sk.k == 1:
        a, b = float(U[0, 0]), float(U[1, 0])
        m = int(np.clip(math.ceil((b - a) * jac / h), 1, 64))
        u = a + (np.arange(m) + 0.5) * (b - a) / m
        return float(f.sample(image(u[:, None])).sum() * (b - a) / m * jac)
    total = 0.0
    for i in range(1, len(U) - 1):
        tri = np.array([U[0], U[i], U[i + 1]])
        area = _shoelace(tri)
        diam = max(np.linalg.norm(tri[a] - tri[b]) for a in range(3) for b in range(a))
        m = int(np.clip(math.ceil(diam * jac / h), 1, 12))
        total += float(f.sample(image(_tri_points(tri, m))).sum()) * area / (m * m) * jac
    return total


def _multiplicity(faces, translate, k, m) -> int:
    """Max over sample points of S of the number of good-piece images containing it."""
    best = 0
    t = np.asarray(translate)
    grid = (np.arange(m) + 0.5) / m
    for key, polys in faces.items():
        J = list(key[0])
        origin = t[J] + np.array(key[len(key) - k:], dtype=float)
        if k == 1:
            pts = origin[0] + grid
            cnt = np.zeros(m, dtype=int)
            for W in polys:
                lo, hi = np.sort(W[:, J[0]])
                cnt += (pts >= lo - 1e-12) & (pts <= hi + 1e-12)
        else:
            gx, gy = np.meshgrid(grid, grid, indexing="ij")
            pts = origin + np.column_stack([gx.ravel(), gy.ravel()])
            cnt = np.zeros(pts.shape[0], dtype=int)
            for W in polys:
                cnt += _in_convex(W[:, J], pts)
        best = max(best, int(cnt.max()))
    return best


def _in_convex(V, pts, tol=1e-12):
    """Points inside the convex polygon with vertices V (degenerate polygons hold none)."""
    c = V.mean(axis=0)
    V = V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))]
    if _shoelace(V) < 1e-12:
        return np.zeros(pts.shape[0], dtype=bool)
    ok = np.ones(pts.shape[0], dtype=bool)
    for i in range(V.shape[0]):
        a, b = V[i], V[(i + 1) % V.shape[0]]
        ok &= (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0]) >= -tol
    return ok


def _bend_mc(sk, frame, q0, off, half, f, samples, seed):
    """Monte Carlo fiber measurement for k >= 3 (no multiplicity profile)."""
    k = sk.k
    rng = np.random.default_rng(seed)
    U = (rng.random((samples, k)) * 2 - 1) * half
    X = q0 + U @ frame.V.T
    X = X[sk.region.contains(X)]
    w = (2 * half) ** k / samples
    Y, ot, base, simp = sk.locate(X)
    M = sk.Ms[ot]
    G = sk.shape.D[simp] @ np.einsum("tji,jk->tik", M, frame.V)
    jac = np.sqrt(np.clip(np.linalg.det(np.transpose(G, (0, 2, 1)) @ G), 0, None))
    in_s = sk.shape.image_in_s[simp]
    badk = {(tuple(np.rint(b * 1e6).astype(int)), int(o), int(s))
            for b, o, s in zip(base, ot, simp) if not sk.shape.good[s]}
    fint = None
    if f is not None:
        Z = base + np.einsum("tij,tj->ti", M, sk.shape.psi(simp, Y))
        fint = float((f.sample(Z) * jac).sum() * w)
    return FiberReport([float(v) for v in off], float(X.shape[0] * w), float(jac.sum() * w),
                       float(jac[~in_s].sum() * w), float(jac[in_s].sum() * w), len(badk), -1, fint, 0, 0)


# ------------------------------------------------------------------ certificates


def skeleton_mass(U: VoxelGrid, translate, k: int) -> float:
    """k-volume of U on the k-skeleton of Z^n + translate (voxel slices at grid resolution)."""
    n = U.n
    t = np.asarray(translate, dtype=float)
    org, sp = np.array(U.origin), np.array(U.spacing)
    total = 0.0
    for J in itertools.combinations(range(n), k):
        sel = U.values
        for i in range(n):
            if i in J:
                continue
            vals = np.arange(math.ceil(org[i] - t[i]), math.floor(org[i] + sp[i] * U.shape[i] - t[i]) + 1) + t[i]
            ii = np.floor((vals - org[i]) / sp[i]).astype(int)
            sel = np.take(sel, ii[(ii >= 0) & (ii < U.shape[i])], axis=i)
        total += float(sel.sum()) * float(np.prod(sp[list(J)]))
    return total


@dataclass
class TranslateReport:
    translate: list
    skeleton_mass: float
    scale: float
    trials: int
    mean_mass: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def choose_translate(U: VoxelGrid, k: int, trials: int = 64, seed: int = 0,
                     normalize: bool = True) -> TranslateReport:
    """Best of ``trials`` quasi-random translates for the k-volume of U on the skeleton."""
    if not (1 <= k <= U.n - 1):
        raise DomainError(f"k must be in 1..{U.n - 1}")
    G, scale = U.normalized() if normalize else (U, 1.0)
    xs = sobol_points(U.n, trials, seed)
    masses = np.array([skeleton_mass(G, x, k) for x in xs])
    i = int(np.argmin(masses))
    bound = 1.05 * math.comb(U.n, k) * G.mass
    if masses[i] > bound:
        raise TranslateSearchError(float(masses[i]), bound, trials)
    return TranslateReport([float(v) for v in xs[i]], float(masses[i]), float(scale), trials, float(masses.mean()))


@dataclass
class WidthReport:
    n: int
    k: int
    epsilon: float
    scale: float
    translate: dict
    W_cert: float
    W_original: float
    fibers: int
    worst_offset: list
    max_out_of_s: float
    max_multiplicity: int
    max_bad: int
    jitters: int
    complex: dict
    frame: dict
    caveat: str = ("the sup over a finite grid of fiber offsets stands in for the sup over the family; "
                   "the value is an upper-bound witness, not the true width")

    def to_json(self) -> dict:
        return dict(self.__dict__)


def fiber_offsets(sk: SkeletonComplex, frame: FiberFrame, fibers: int | None = None,
                  pitch: float = 0.1) -> np.ndarray:
    """A regular grid of offsets covering the projection of the region onto P.

    ``fibers`` fixes the grid size; otherwise the grid has the given pitch.
    """
    corners = np.array(list(itertools.product(*zip(sk.region.lo, sk.region.hi))))
    proj = corners @ frame.P
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    d = frame.P.shape[1]
    if fibers is None:
        axes = [np.arange(a + pitch / 2, b, pitch) for a, b in zip(lo, hi)]
    else:
        per = max(1, int(math.ceil(fibers ** (1.0 / d) - 1e-9)))
        axes = [np.linspace(a, b, per + 2)[1:-1] for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return grid @ frame.P.T


def critical_offsets(sk: SkeletonComplex, frame: FiberFrame, box) -> np.ndarray:
    """Offsets of the fibers through the vertices of T inside ``box`` (P one-dimensional).

    These fibers cross the bad simplices most deeply; a regular grid steps over
    the thin bands around them.
    """
    if frame.P.shape[1] != 1:
        return np.zeros((0, sk.n))
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    c = sk.translate + 0.5
    axes = [np.arange(math.ceil(a - ci), math.floor(b - ci) + 1) + ci for a, b, ci in zip(lo, hi, c)]
    if any(ax.size == 0 for ax in axes):
        return np.zeros((0, sk.n))
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sk.n)
    s = np.unique(np.round(pts @ frame.P[:, 0], 12)) + 1e-7
    return s[:, None] * frame.P[:, 0]


def certify_function_width(f: VoxelGrid, k: int, fibers: int | None = None, epsilon: float = EPSILON,
                           seed: int = 0, trials: int = 64, translate=None,
                           normalize: bool = True, pad: float = 1.5) -> WidthReport:
    """Max over a grid of fibers of the f-integral over Psi(Q), in the mass-1 normalization."""
    n = f.n
    if n not in (2, 3):
        raise UnsupportedSizeError("certified widths are computed for n in {2, 3}")
    if not (1 <= k <= n - 1):
        raise DomainError(f"k must be in 1..{n - 1}")
    G, scale = f.normalized() if normalize else (f, 1.0)
    if translate is None:
        tr = choose_translate(G, k, trials, seed, normalize=False)
        tr.scale = float(scale)
    else:
        tr = TranslateReport([float(v) for v in translate], skeleton_mass(G, translate, k),
                             float(scale), 0, float("nan"))
    lo, hi = G.support_box()
    sk = build_psi(n, k, epsilon, Box(lo - pad, hi + pad), tr.translate)
    frame = generic_frame(n, k, seed)
    best = None
    jitters = 0
    mo = mb = mm = 0
    offsets = np.vstack([fiber_offsets(sk, frame, fibers), critical_offsets(sk, frame, (lo, hi))])
    for off in offsets:
        rep = bend_fiber(sk, frame, off, G, seed=seed)
        jitters += rep.jitters
        mo, mb, mm = max(mo, rep.out_of_s_mass), max(mb, rep.bad_simplices), max(mm, rep.multiplicity)
        if best is None or rep.f_integral > best.f_integral:
            best = rep
    W = float(best.f_integral)
    return WidthReport(n, k, float(epsilon), float(scale), tr.to_json(), W, W * scale ** k, int(offsets.shape[0]),
                       best.offset, float(mo), int(mm), int(mb), jitters, sk.summary(), frame.to_json())


def certify_width_volume(U: VoxelGrid, k: int, fibers: int | None = None, epsilon: float = EPSILON,
                         seed: int = 0, trials: int = 64) -> WidthReport:
    """Certified k-width of a voxelized set."""
    return certify_function_width(U, k, fibers, epsilon, seed, trials)


@dataclass
class ProductWidthReport:
    k: int
    l: int
    R: list
    W_marginal: float
    W_cert: float
    bound_monomial: float
    ratio: float
    inner: dict | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def slab_density(U: VoxelGrid, l: int, R) -> VoxelGrid:
    """f(y) = vol(U meet the slab over y) / (R_1...R_l), on the last n - l axes."""
    Rl = float(np.prod(np.asarray(R, dtype=float)[:l]))
    vals = U.values.sum(axis=tuple(range(l))) * float(np.prod(U.spacing[:l])) / Rl
    if vals.max() > 1 + 1e-9:
        raise DomainError("U does not fit in R: slab density exceeds 1")
    return VoxelGrid(np.clip(vals, 0, 1), U.spacing[l:], U.origin[l:])


def product_fiber_width(U: VoxelGrid, k: int, l: int, R=None, fibers: int | None = None,
                        epsilon: float = EPSILON, seed: int = 0) -> ProductWidthReport:
    """k-width of U inside R from (k-l)-cycles of the slab density, times [0, R_1] x ... x [0, R_l]."""
    n = U.n
    if not (1 <= k <= n - 1):
        raise DomainError(f"k must be in 1..{n - 1}")
    if not (0 <= l <= k):
        raise DomainError(f"l must be in 0..{k}")
    lo, hi = U.support_box()
    dims = hi - lo if R is None else np.asarray(R, dtype=float)
    if len(dims) != n:
        raise DomainError("R must have one side per axis")
    Rl = float(np.prod(dims[:l]))
    inner_js = None
    if l == 0:
        inner = certify_width_volume(U, k, fibers, epsilon, seed)
        W, inner_js = inner.W_original, inner.to_json()
    else:
        f = slab_density(U, l, dims)
        if k == l:
            W = float(f.values.max())
        else:
            inner = certify_function_width(f, k - l, fibers, epsilon, seed)
            W, inner_js = inner.W_original, inner.to_json()
    cert = Rl * W
    mono = dict(subset_width_bound(Rectangle(sorted(dims)), k, U.mass).monomials)[l]
    return ProductWidthReport(k, l, [float(v) for v in dims], float(W), float(cert), float(mono),
                              float(cert / mono), inner_js)


# ------------------------------------------------------------------ figure


def svg_figure(sk: SkeletonComplex, frame: FiberFrame, offset, size: int = 480) -> str:
    """n = 2: the skeleton (thin grey) and one bent fiber (thick red)."""
    if sk.n != 2:
        raise UnsupportedSizeError("SVG output is for n = 2")
    lo, hi = np.array(sk.region.lo), np.array(sk.region.hi)
    sc = size / float((hi - lo).max())

    def seg(a, b, style):
        x1, y1 = (a[0] - lo[0]) * sc, (hi[1] - a[1]) * sc
        x2, y2 = (b[0] - lo[0]) * sc, (hi[1] - b[1]) * sc
        return f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" {style}/>'

    lines = []
    t = sk.translate
    for ax in range(2):
        o = 1 - ax
        for v in np.arange(math.ceil(lo[o] - t[o]), math.floor(hi[o] - t[o]) + 1) + t[o]:
            a, b = np.empty(2), np.empty(2)
            a[ax], b[ax], a[o], b[o] = lo[ax], hi[ax], v, v
            lines.append(seg(a, b, 'stroke="#888" stroke-width="1"'))
    q0 = _fiber_origin(sk, frame, np.asarray(offset, dtype=float))
    half = float(np.linalg.norm(sk.region.sides)) / 2 + 2.0
    for tile, s, U in sorted(_fiber_pieces(sk, frame, q0, half), key=lambda p: p[2][0, 0]):
        M = sk.Ms[sk.otype[tile]]
        y0 = M.T @ (q0 - sk.base[tile])
        W = sk.base[tile] + sk.shape.psi(s, y0 + U @ (M.T @ frame.V).T) @ M.T
        lines.append(seg(W[0], W[1], 'stroke="#c00" stroke-width="3"'))
    body = "\n".join(lines)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n{body}\n</svg>\n')
