"""Degree-1 snake maps R -> S with small k-dilation.

Write x = (x', x'') with x' the first n-k coordinates. The map is the
composite of four stages:

1. ``(x', x'') -> (H(I^-1 x'') x', x'')``: collapse x' to 0 away from the tube A,
   where I folds the tripled box 3S'' into R'' and H is a PL bump on 3S''.
2. ``(x', x'') -> (x', p(x''))``: p is the nearest-point retraction of R'' onto A.
3. ``(x', x'') -> (x', I^-1 x'')``.
4. nearest-point projection of S' x 3S'' onto S.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import DomainError, Rectangle
from .fold import BudgetExceededError, FoldEmbedding, fold_embed
from .maps import Box, EvaluableMap, compose, diagonal_map

HYP_RTOL = 1e-9
DEFAULT_EMBED_BUDGET = 20.0


class PreconditionError(DomainError):
    """A hypothesis of the construction fails; the message names it."""


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def check_snake_hypotheses(R: Rectangle, S: Rectangle, k: int) -> None:
    n = R.n
    if S.n != n:
        raise PreconditionError(f"dimension mismatch: {n} vs {S.n}")
    if n < 3 or not (2 <= k <= n - 1):
        raise PreconditionError(f"snake maps need n >= 3 and 2 <= k <= n-1, got n={n}, k={k}")
    for i in range(n - k):
        r, s = R.dims[i], S.dims[i]
        if abs(r - s) > HYP_RTOL * max(r, s):
            raise PreconditionError(f"R{i + 1} = {_fmt(r)} != S{i + 1} = {_fmt(s)}")
    pr = ps = 1.0
    names_r, names_s = [], []
    for b in range(1, k + 1):
        j = n - k + b - 1
        pr *= R.dims[j]
        ps *= S.dims[j]
        names_r.append(f"R{j + 1}")
        names_s.append(f"S{j + 1}")
        if pr < ps * (1 - HYP_RTOL):
            raise PreconditionError(
                f"{'·'.join(names_r)} = {_fmt(pr)} < {'·'.join(names_s)} = {_fmt(ps)}"
            )


class Bump:
    """H on the box prod [-S_j, 2 S_j]: min over axes of trapezoids with ramps of width S_j."""

    def __init__(self, sides):
        self.S = np.asarray(sides, dtype=float)

    @property
    def box(self) -> Box:
        return Box(-self.S, 2 * self.S)

    @property
    def lipschitz(self) -> float:
        return float((1.0 / self.S).max())

    def evaluate(self, Y):
        lo = (Y + self.S) / self.S
        hi = (2 * self.S - Y) / self.S
        h = np.clip(np.minimum(lo, hi), 0.0, 1.0)
        j = np.argmin(h, axis=1)
        r = np.arange(Y.shape[0])
        val = h[r, j]
        grad = np.zeros_like(Y)
        ramp = (val > 0.0) & (val < 1.0)
        sgn = np.where(lo[r, j] <= hi[r, j], 1.0, -1.0)
        grad[r, j] = np.where(ramp, sgn / self.S[j], 0.0)
        state = np.where(val <= 0.0, 0, np.where(val >= 1.0, 2, 1))
        piece = np.where(state == 1, 3 + 2 * j + (sgn < 0), state)
        return val, grad, piece


@dataclass
class SnakeMapSpec:
    R: Rectangle
    S: Rectangle
    k: int
    split: int
    embedding: FoldEmbedding | None
    bump: Bump | None
    degenerate: bool = False
    predicted_interior: float = 1.0
    info: dict = field(default_factory=dict)

    @property
    def R1(self):
        return self.R.dims[: self.split]

    @property
    def R2(self):
        return self.R.dims[self.split:]

    @property
    def S2(self):
        return self.S.dims[self.split:]

    def phi1_lipschitz_bound(self) -> float:
        """1 + |x'|_max Lip(H) Lip(I^-1) with the 1% slack on Lip(H)."""
        if self.degenerate:
            return 1.0
        xmax = math.sqrt(sum(r * r for r in self.R1))
        lip_inv = 1.0 / self.embedding.sigma_range[0]
        return 1.0 + xmax * 1.01 * self.bump.lipschitz * lip_inv

    def to_json(self) -> dict:
        out = {
            "R": list(self.R.dims),
            "S": list(self.S.dims),
            "k": self.k,
            "degenerate": self.degenerate,
            "predicted_interior_dilation": self.predicted_interior,
        }
        if self.embedding is not None:
            out["embedding"] = self.embedding.summary()
            out["bump_lipschitz"] = self.bump.lipschitz
        return out


def interior_dilation(emb: FoldEmbedding, split: int, k: int) -> float:
    """Top-k singular value product of diag(1,...,1, DI^-1) over all tube cells."""
    tri = np.arange(emb.dom_tris.shape[0])
    sv = np.linalg.svd(emb.inverse_jacobian(tri), compute_uv=False)
    full = np.hstack([np.ones((sv.shape[0], split)), sv])
    full = -np.sort(-full, axis=1)
    return float(np.prod(full[:, :k], axis=1).max())


def snake_spec(R, S, k: int, embed_budget: float = DEFAULT_EMBED_BUDGET) -> SnakeMapSpec:
    R = R if isinstance(R, Rectangle) else Rectangle(R)
    S = S if isinstance(S, Rectangle) else Rectangle(S)
    check_snake_hypotheses(R, S, k)
    n = R.n
    split = n - k
    if all(r >= s * (1 - HYP_RTOL) for r, s in zip(R.dims, S.dims)):
        return SnakeMapSpec(R, S, k, split, None, None, degenerate=True, predicted_interior=1.0)
    S2 = np.array(S.dims[split:])
    bump = Bump(S2)
    emb = fold_embed(bump.box, Box.of(R.dims[split:]), budget=embed_budget)
    pred = interior_dilation(emb, split, k)
    return SnakeMapSpec(R, S, k, split, emb, bump, predicted_interior=pred)


class SnakeMap(EvaluableMap):
    def __init__(self, spec: SnakeMapSpec, stages, composite: EvaluableMap):
        super().__init__(
            composite.domain, composite.codomain_hint, composite._func, composite._jac,
            composite._piece, "snake",
        )
        self.spec = spec
        self.stages = stages


def _stages(spec: SnakeMapSpec):
    emb, bump, c = spec.embedding, spec.bump, spec.split
    R, S = spec.R, spec.S
    n = R.n
    k = spec.k
    boxR = Box.of(R)

    def hbar(X2):
        inside = emb.in_image(X2)
        val = np.zeros(X2.shape[0])
        grad = np.zeros_like(X2)
        tri = np.full(X2.shape[0], -1, dtype=np.int64)
        hp = np.zeros(X2.shape[0], dtype=np.int64)
        if inside.any():
            Z, t = emb.inverse(X2[inside])
            v, g, p = bump.evaluate(Z)
            Jinv = emb.inverse_jacobian(t)
            val[inside] = v
            grad[inside] = np.einsum("nji,nj->ni", Jinv, g)
            tri[inside] = t
            hp[inside] = p
        return val, grad, tri, hp

    def f1(X):
        v, _, _, _ = hbar(X[:, c:])
        Y = X.copy()
        Y[:, :c] *= v[:, None]
        return Y

    def j1(X):
        v, g, _, _ = hbar(X[:, c:])
        J = np.broadcast_to(np.eye(n), (X.shape[0], n, n)).copy()
        J[:, :c, :c] *= v[:, None, None]
        J[:, :c, c:] = X[:, :c, None] * g[:, None, :]
        return J

    def p1(X):
        _, _, t, hp = hbar(X[:, c:])
        return np.stack([t, hp], axis=1)

    phi1 = EvaluableMap(boxR, boxR, f1, j1, p1, "phi1")

    def f2(X):
        Y = X.copy()
        Y[:, c:] = emb.project(X[:, c:])[0]
        return Y

    def j2(X):
        J = np.broadcast_to(np.eye(n), (X.shape[0], n, n)).copy()
        J[:, c:, c:] = emb.project(X[:, c:])[1]
        return J

    def p2(X):
        return emb.project(X[:, c:])[2]

    phi2 = EvaluableMap(boxR, boxR, f2, j2, p2, "phi2")

    box3 = Box(list(np.zeros(c)) + list(bump.box.lo), list(R.dims[:c]) + list(bump.box.hi))

    def f3(X):
        Y = X.copy()
        Y[:, c:] = emb.inverse(X[:, c:])[0]
        return Y

    def j3(X):
        J = np.broadcast_to(np.eye(n), (X.shape[0], n, n)).copy()
        J[:, c:, c:] = emb.inverse_jacobian(emb.inverse(X[:, c:])[1])
        return J

    def p3(X):
        return emb.inverse(X[:, c:])[1]

    phi3 = EvaluableMap(boxR, box3, f3, j3, p3, "phi3")

    boxS = Box.of(S)
    lo, hi = np.array(boxS.lo), np.array(boxS.hi)

    def f4(X):
        return np.clip(X, lo, hi)

    def j4(X):
        inside = (X > lo) & (X < hi)
        return inside[:, :, None] * np.eye(n)[None]

    def p4(X):
        return np.where(X <= lo, 0, np.where(X >= hi, 2, 1))

    phi4 = EvaluableMap(box3, boxS, f4, j4, p4, "phi4")
    return [phi1, phi2, phi3, phi4]


def build_snake(R, S, k: int, embed_budget: float = DEFAULT_EMBED_BUDGET,
                dilation_budget: float | None = None) -> SnakeMap:
    """Construct the snake map; raises PreconditionError when a hypothesis fails.

    With ``dilation_budget`` set, a construction whose predicted interior
    k-dilation exceeds it raises :class:`BudgetExceededError`.
    """
    spec = snake_spec(R, S, k, embed_budget)
    if spec.degenerate:
        factors = [s / r for r, s in zip(spec.R.dims, spec.S.dims)]
        m = diagonal_map(spec.R, factors)
        m.codomain_hint = Box.of(spec.S)
        return SnakeMap(spec, [m], m)
    if dilation_budget is not None and spec.predicted_interior > dilation_budget:
        raise BudgetExceededError(spec.predicted_interior, dilation_budget)
    stages = _stages(spec)
    comp = stages[0]
    for st in stages[1:]:
        comp = compose(st, comp)
    return SnakeMap(spec, stages, comp)


@dataclass
class ZeroSetReport:
    samples: int
    image_violations: int
    identity_violations: int
    boundary_violations: int
    witness: list | None = None

    @property
    def passed(self) -> bool:
        return self.image_violations == self.identity_violations == self.boundary_violations == 0

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "image_violations": self.image_violations,
            "identity_violations": self.identity_violations,
            "boundary_violations": self.boundary_violations,
            "passed": self.passed,
            "witness": self.witness,
        }


class StructuralError(RuntimeError):
    pass


def _boundary_distance(emb: FoldEmbedding, Y):
    lay = emb.layout
    AB = emb._ab(Y)
    P0 = emb.vertices[emb.boundary_edges[:, 0]]
    P1 = emb.vertices[emb.boundary_edges[:, 1]]
    E = P1 - P0
    EE = np.einsum("ij,ij->i", E, E)
    tau = np.clip(np.einsum("nej,ej->ne", AB[:, None, :] - P0[None], E) / EE[None], 0, 1)
    C = P0[None] + tau[:, :, None] * E[None]
    d = np.sqrt(((C - AB[:, None, :]) ** 2).sum(axis=2)).min(axis=1)
    lo, hi = emb._others_box()
    for j in lo:
        d = np.minimum(d, np.minimum(np.abs(Y[:, j] - lo[j]), np.abs(Y[:, j] - hi[j])))
    _ = lay
    return d


def snake_zero_set_check(spec: SnakeMapSpec, samples: int = 100_000, seed: int = 0,
                         tol: float = 1e-9, raise_on_failure: bool = False) -> ZeroSetReport:
    """Check that stage 1 lands in Q = R' x A u {0} x R'' and that the retraction behaves."""
    if spec.degenerate:
        return ZeroSetReport(0, 0, 0, 0)
    rng = np.random.default_rng(seed)
    phi1 = _stages(spec)[0]
    emb, c = spec.embedding, spec.split
    X = Box.of(spec.R).from_unit(rng.random((samples, spec.R.n)))
    Y = phi1(X)
    inA = emb.in_image(Y[:, c:], tol)
    bad_img = ~inA & (np.abs(Y[:, :c]).max(axis=1) > tol)
    X2 = X[:, c:]
    P = emb.project(X2)[0]
    inside = emb.in_image(X2, 0.0)
    bad_id = inside & (np.abs(P - X2).max(axis=1) > tol)
    outside = ~emb.in_image(X2, tol)
    bnd = np.zeros(samples, dtype=bool)
    if outside.any():
        Po = P[outside]
        d = _boundary_distance(emb, Po)
        bnd[np.nonzero(outside)[0]] = (d > tol) | ~emb.in_image(Po, tol)
    witness = None
    for mask in (bad_img, bad_id, bnd):
        if mask.any():
            witness = X[np.argmax(mask)].tolist()
            break
    rep = ZeroSetReport(samples, int(bad_img.sum()), int(bad_id.sum()), int(bnd.sum()), witness)
    if raise_on_failure and not rep.passed:
        raise StructuralError(f"zero-set check failed at {witness}")
    return rep
