"""Piecewise-smooth maps between boxes and sampled k-dilation certificates.

Maps are vectorised: ``m(X)`` takes an (N, n) array of points, ``m.jacobian(X)``
returns (N, n, n) and ``m.pieces(X)`` returns integer piece ids of shape
(N, c). Two points with equal piece rows lie in the same smoothness cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import kernels
from .bounds import DomainError, Rectangle


class CreaseError(ValueError):
    """The difference stencil around a point straddles a crease."""


class GeometryError(RuntimeError):
    """Piece ids and evaluation disagree on too many samples."""


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __init__(self, lo, hi):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if len(lo) != len(hi) or any(b < a for a, b in zip(lo, hi)):
            raise DomainError(f"bad box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def of(cls, R) -> "Box":
        if isinstance(R, Box):
            return R
        if not isinstance(R, Rectangle):
            R = Rectangle(R)
        return cls([0.0] * R.n, R.dims)

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    @property
    def min_side(self) -> float:
        return float(self.sides.min())

    def inflate(self, factor: float) -> "Box":
        lo, hi = np.array(self.lo), np.array(self.hi)
        pad = (factor - 1.0) / 2.0 * (hi - lo) + 1e-12
        return Box(lo - pad, hi + pad)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= c for a, c in zip(self.lo, other.lo)) and all(
            b >= d for b, d in zip(self.hi, other.hi)
        )

    def contains(self, X, tol: float = 1e-12) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= np.array(self.lo) - tol) & (X <= np.array(self.hi) + tol), axis=1)

    def clamp(self, X) -> np.ndarray:
        return np.clip(X, self.lo, self.hi)

    def from_unit(self, U) -> np.ndarray:
        return np.array(self.lo) + U * self.sides

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


def _as_points(X, n):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != n:
        raise DomainError(f"expected points of dimension {n}, got {X.shape[1]}")
    return X, single


class EvaluableMap:
    """A piecewise-smooth map on a box.

    ``func`` maps (N, n) -> (N, n). ``jac`` (optional) returns exact Jacobians;
    without it, central finite differences are used. ``piece`` returns integer
    piece ids (N,) or (N, c).
    """

    def __init__(self, domain, codomain_hint, func, jac=None, piece=None, name="map",
                 preimages=None, fd_step=None):
        self.domain = Box.of(domain)
        self.codomain_hint = Box.of(codomain_hint)
        self._func = func
        self._jac = jac
        self._piece = piece
        self.name = name
        self._preimages = preimages
        self.fd_step = fd_step if fd_step is not None else 1e-5 * self.domain.min_side

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def jacobian_mode(self) -> str:
        return "exact_piecewise_linear" if self._jac is not None else "finite_difference"

    @property
    def has_preimages(self) -> bool:
        return self._preimages is not None

    def __call__(self, X):
        X, single = _as_points(X, self.n)
        Y = self._func(X)
        return Y[0] if single else Y

    def jacobian(self, X):
        X, single = _as_points(X, self.n)
        J = self._jac(X) if self._jac is not None else self.fd_jacobian(X, self.fd_step)
        return J[0] if single else J

    def fd_jacobian(self, X, h):
        X = np.atleast_2d(X)
        N, n = X.shape
        J = np.empty((N, n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            J[:, :, i] = (self._func(X + e) - self._func(X - e)) / (2.0 * h)
        return J

    def pieces(self, X):
        X, single = _as_points(X, self.n)
        if self._piece is None:
            P = np.zeros((X.shape[0], 1), dtype=np.int64)
        else:
            P = np.asarray(self._piece(X), dtype=np.int64)
            if P.ndim == 1:
                P = P[:, None]
        return P[0] if single else P

    def preimages(self, y):
        if self._preimages is None:
            raise NotImplementedError(f"{self.name} has no exact preimage enumeration")
        return self._preimages(np.asarray(y, dtype=float))


# ---------------------------------------------------------------- linear maps


def affine_map(domain, A, b=None, codomain_hint=None, name="affine"):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    domain = Box.of(domain)
    if codomain_hint is None:
        corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(domain.lo, domain.hi)])).reshape(n, -1).T
        img = corners @ A.T + b
        codomain_hint = Box(img.min(axis=0), img.max(axis=0))

    def func(X):
        return X @ A.T + b

    def jac(X):
        return np.broadcast_to(A, (X.shape[0], n, n)).copy()

    def pre(y):
        if abs(np.linalg.det(A)) < 1e-300:
            return np.zeros((0, n)), np.zeros(0)
        x = np.linalg.solve(A, y - b)
        if not domain.contains(x[None], 1e-12)[0]:
            return np.zeros((0, n)), np.zeros(0)
        return x[None], np.array([np.sign(np.linalg.det(A))])

    return EvaluableMap(domain, codomain_hint, func, jac, None, name, preimages=pre)


def identity_map(R) -> EvaluableMap:
    box = Box.of(R)
    return affine_map(box, np.eye(box.n), codomain_hint=box, name="identity")


def diagonal_map(R, factors) -> EvaluableMap:
    return affine_map(Box.of(R), np.diag(np.asarray(factors, dtype=float)), name="diagonal")


def scale_map(R, t: float) -> EvaluableMap:
    box = Box.of(R)
    return affine_map(box, t * np.eye(box.n), name=f"scale({t:g})")


def linear_between(R, S, perm=None) -> EvaluableMap:
    """Axis-respecting linear map [0,R_i] -> [0,S_perm(i)] by pure scalings."""
    R = R if isinstance(R, Rectangle) else Rectangle(R)
    S = S if isinstance(S, Rectangle) else Rectangle(S)
    if R.n != S.n:
        raise DomainError(f"dimension mismatch: {R.n} vs {S.n}")
    perm = list(range(R.n)) if perm is None else [int(p) for p in perm]
    if sorted(perm) != list(range(R.n)):
        raise DomainError(f"not an axis bijection: {perm}")
    A = np.zeros((R.n, R.n))
    for i, p in enumerate(perm):
        A[p, i] = S.dims[p] / R.dims[i]
    return affine_map(Box.of(R), A, codomain_hint=Box.of(S), name="linear")


# ---------------------------------------------------------------- composition


def compose(outer: EvaluableMap, inner: EvaluableMap, slack: float = 1.01) -> EvaluableMap:
    """``outer o inner`` with chain-rule Jacobians and stacked piece ids."""
    if inner.n != outer.n:
        raise DomainError("dimension mismatch in compose")
    if not outer.domain.inflate(slack).contains_box(inner.codomain_hint):
        raise DomainError(
            f"cannot compose: {inner.name} lands in {inner.codomain_hint.to_json()}, "
            f"outside {outer.name} domain {outer.domain.to_json()}"
        )
    exact = inner.jacobian_mode == outer.jacobian_mode == "exact_piecewise_linear"

    def func(X):
        return outer(inner(X))

    def jac(X):
        Y = inner(X)
        return np.einsum("nij,njk->nik", outer.jacobian(Y), inner.jacobian(X))

    def piece(X):
        return np.hstack([inner.pieces(X), outer.pieces(inner(X))])

    return EvaluableMap(
        inner.domain, outer.codomain_hint, func, jac if exact else None, piece,
        f"{outer.name}∘{inner.name}",
    )


def compose_all(maps) -> EvaluableMap:
    """Compose a list of maps applied left to right (first map acts first)."""
    maps = list(maps)
    out = maps[0]
    for m in maps[1:]:
        out = compose(m, out)
    return out


# ---------------------------------------------------------------- dilation


def topk(J, k: int) -> np.ndarray:
    return kernels.topk_product(J, k)


def exterior_power_violations(sv, k: int, rtol: float = 1e-9) -> int:
    """Count rows where prod(top k+i) > prod(top k)^((k+i)/k) beyond rtol."""
    n = sv.shape[1]
    if k < 1 or k >= n:
        return 0
    logs = np.log(np.maximum(sv, 1e-300))
    cum = np.cumsum(logs, axis=1)
    base = cum[:, k - 1]
    bad = np.zeros(sv.shape[0], dtype=bool)
    for j in range(k + 1, n + 1):
        lhs = cum[:, j - 1]
        rhs = base * j / k
        live = np.all(sv[:, :j] > 1e-150, axis=1)
        bad |= live & (lhs > rhs + math.log1p(rtol))
    return int(bad.sum())


def _stencil_ok(m: EvaluableMap, X, h: float) -> np.ndarray:
    P0 = m.pieces(X)
    ok = np.ones(X.shape[0], dtype=bool)
    n = m.n
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        for sgn in (1.0, -1.0):
            Xs = m.domain.clamp(X + sgn * e)
            ok &= np.all(m.pieces(Xs) == P0, axis=1)
    return ok


def _stencil_h(m: EvaluableMap) -> float:
    if m.jacobian_mode == "exact_piecewise_linear":
        return 1e-9 * m.domain.min_side
    return m.fd_step


def _jacobians_checked(m: EvaluableMap, X):
    """Jacobians plus a mask of samples whose stencil stays in one piece."""
    h = _stencil_h(m)
    ok = _stencil_ok(m, X, h)
    if m.jacobian_mode == "exact_piecewise_linear":
        return m.jacobian(X), ok
    J1 = m.fd_jacobian(X, h)
    J2 = m.fd_jacobian(X, h / 2)
    scale = np.maximum(np.abs(J1).max(axis=(1, 2)), 1e-12)
    ok &= np.abs(J1 - J2).max(axis=(1, 2)) <= 1e-3 * scale
    return J2, ok


def k_dilation_at(m: EvaluableMap, x, k: int) -> float:
    x = np.asarray(x, dtype=float)
    if not (1 <= k <= m.n):
        raise DomainError(f"k must be in 1..{m.n}")
    J, ok = _jacobians_checked(m, x[None])
    if not ok[0]:
        raise CreaseError(f"point {x.tolist()} lies on a crease of {m.name}")
    return float(topk(J, k)[0])


@dataclass
class DilationCertificate:
    k: int
    sup_estimate: float
    sample_count: int
    rejected_samples: int
    quantiles: list
    max_location: list
    near_crease_count: int = 0
    exterior_power_violations: int = 0
    jacobian_mode: str = "exact_piecewise_linear"
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "sup_estimate": float(self.sup_estimate),
            "sample_count": int(self.sample_count),
            "rejected_samples": int(self.rejected_samples),
            "quantiles": [[float(q), float(v)] for q, v in self.quantiles],
            "max_location": [float(v) for v in self.max_location],
            "near_crease_count": int(self.near_crease_count),
            "exterior_power_violations": int(self.exterior_power_violations),
            "jacobian_mode": self.jacobian_mode,
        }


def sobol_points(n: int, count: int, seed: int) -> np.ndarray:
    """First ``count`` points of a scrambled Sobol sequence in [0,1)^n."""
    if count <= 0:
        return np.zeros((0, n))
    m = max(0, math.ceil(math.log2(count)))
    return qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:count]


def _bisect_boundary(m: EvaluableMap, A, B, iters=40):
    pa = m.pieces(A)
    for _ in range(iters):
        C = 0.5 * (A + B)
        same = np.all(m.pieces(C) == pa, axis=1)
        A = np.where(same[:, None], C, A)
        B = np.where(same[:, None], B, C)
    return 0.5 * (A + B)


def crease_samples(m: EvaluableMap, count: int, seed: int, radius_frac: float = 0.05):
    """Points within ``radius_frac * min_side`` of a piece boundary."""
    rng = np.random.default_rng(seed)
    dom = m.domain
    rad = radius_frac * dom.min_side
    found = []
    total = 0
    for attempt in range(6):
        need = count - total
        if need <= 0:
            break
        batch = max(64, 4 * need)
        A = dom.from_unit(sobol_points(m.n, batch, seed + 7919 * (attempt + 1)))
        far = dom.from_unit(rng.random((batch, m.n)))
        local = A + rng.normal(size=A.shape) * 0.1 * dom.sides
        B = np.where((np.arange(batch) % 2 == 0)[:, None], far, dom.clamp(local))
        diff = ~np.all(m.pieces(A) == m.pieces(B), axis=1)
        if not diff.any():
            continue
        C = _bisect_boundary(m, A[diff], B[diff])
        v = rng.normal(size=C.shape)
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
        C = dom.clamp(C + v * rad * rng.random((C.shape[0], 1)))
        C = C[:need]
        found.append(C)
        total += C.shape[0]
    if not found:
        return np.zeros((0, m.n))
    return np.vstack(found)[:count]


def sample_points(m: EvaluableMap, samples: int, seed: int, crease_fraction: float = 0.15):
    n_crease = int(math.ceil(crease_fraction * samples)) if samples >= 10 else 0
    C = crease_samples(m, n_crease, seed) if n_crease else np.zeros((0, m.n))
    base = m.domain.from_unit(sobol_points(m.n, samples - C.shape[0], seed))
    return np.vstack([base, C]), C.shape[0]


def certify_k_dilation(m: EvaluableMap, k: int, samples: int = 4096, seed: int = 0,
                       crease_fraction: float = 0.15, extra_points=None) -> DilationCertificate:
    """Sampled estimate of sup over the domain of the top-k singular value product."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    if not (1 <= k <= m.n):
        raise DomainError(f"k must be in 1..{m.n}")
    X, n_crease = sample_points(m, samples, seed, crease_fraction)
    if extra_points is not None:
        X = np.vstack([X, np.atleast_2d(extra_points)])
    J, ok = _jacobians_checked(m, X)
    rejected = int((~ok).sum())
    if rejected > 0.5 * X.shape[0]:
        raise GeometryError(f"{rejected} of {X.shape[0]} samples rejected for {m.name}")
    sv = kernels.singular_values(J[ok])
    vals = np.prod(sv[:, :k], axis=1)
    i = int(np.argmax(vals))
    qs = [0.5, 0.9, 0.99]
    return DilationCertificate(
        k=k,
        sup_estimate=float(vals[i]),
        sample_count=int(ok.sum()),
        rejected_samples=rejected,
        quantiles=[(q, float(np.quantile(vals, q))) for q in qs],
        max_location=X[ok][i].tolist(),
        near_crease_count=n_crease,
        exterior_power_violations=exterior_power_violations(sv, k),
        jacobian_mode=m.jacobian_mode,
    )


def lipschitz_estimate(m: EvaluableMap, samples: int = 2048, seed: int = 0) -> float:
    """Sampled sup of the operator norm of the Jacobian."""
    return certify_k_dilation(m, 1, samples, seed).sup_estimate
