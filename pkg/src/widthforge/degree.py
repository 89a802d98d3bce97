"""Numerical degree of a map of pairs (R, dR) -> (S, dS).

For each generic probe point y inside the target, all preimages are found by
Newton iteration from the seeds whose images land closest to y; the signs of
the Jacobian determinants at the distinct roots are summed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maps import Box, EvaluableMap, sobol_points


@dataclass
class DegreeReport:
    probes: int
    degrees: list
    local_signs: list
    resampled: int
    expected: int = 1
    method: str = "newton"
    failures: list = field(default_factory=list)
    escalated: int = 0

    @property
    def passed(self) -> bool:
        return len(self.degrees) == self.probes and all(d == self.expected for d in self.degrees)

    def to_json(self) -> dict:
        hist = {}
        for d in self.degrees:
            hist[str(d)] = hist.get(str(d), 0) + 1
        return {
            "probes": self.probes,
            "degree_histogram": dict(sorted(hist.items())),
            "resampled": self.resampled,
            "escalated": self.escalated,
            "expected": self.expected,
            "method": self.method,
            "passed": self.passed,
            "failures": self.failures[:10],
        }


def _newton(m: EvaluableMap, X0, Y, iters: int, tol: float):
    X = X0.copy()
    n = m.n
    for _ in range(iters):
        r = m(X) - Y
        done = np.linalg.norm(r, axis=1) <= tol
        if done.all():
            break
        J = m.jacobian(X)
        step = np.zeros_like(X)
        live = ~done
        Jl = J[live]
        ok = np.abs(np.linalg.det(Jl)) > 1e-300
        sol = np.zeros((Jl.shape[0], n))
        if ok.any():
            sol[ok] = np.linalg.solve(Jl[ok], r[live][ok][:, :, None])[:, :, 0]
        if (~ok).any():
            sol[~ok] = np.einsum("nij,nj->ni", np.linalg.pinv(Jl[~ok]), r[live][~ok])
        step[live] = sol
        X = m.domain.clamp(X - step)
    r = m(X) - Y
    return X, np.linalg.norm(r, axis=1) <= tol


def _local_signs(m, roots, dedupe):
    if roots.shape[0] == 0:
        return [], True
    keep = []
    for i, x in enumerate(roots):
        if all(np.linalg.norm(x - roots[j]) > dedupe for j in keep):
            keep.append(i)
    R = roots[keep]
    det = np.linalg.det(m.jacobian(R))
    scale = np.abs(det).max()
    generic = bool(scale > 0 and np.all(np.abs(det) > 1e-9 * scale))
    return [int(v) for v in np.sign(det)], generic


def check_degree(m: EvaluableMap, probes: int = 50, seed: int = 0, target=None,
                 seed_points: int = 8192, neighbours: int = 24, iters: int = 50,
                 expected: int = 1, margin: float = 0.02) -> DegreeReport:
    """Sign-weighted preimage counts at ``probes`` interior points of ``target``."""
    target = m.codomain_hint if target is None else Box.of(target)
    inner = Box(
        np.array(target.lo) + margin * target.sides,
        np.array(target.hi) - margin * target.sides,
    )
    rng = np.random.default_rng(seed)
    tol = 1e-10 * float(target.sides.max())
    dedupe = 1e-6 * m.domain.min_side
    method = "exact" if m.has_preimages else "newton"
    if method == "newton":
        S = m.domain.from_unit(sobol_points(m.n, seed_points, seed))
        FS = m(S)
        dense = None

    def search(y, pool, images, nb):
        d = np.linalg.norm(images - y, axis=1)
        near = np.argpartition(d, min(nb, len(d) - 1))[:nb]
        roots, conv = _newton(m, pool[near], np.broadcast_to(y, (near.size, m.n)), iters, tol)
        return _local_signs(m, roots[conv], dedupe)

    degrees, signs, failures = [], [], []
    resampled = 0
    escalated = 0
    pending = inner.from_unit(sobol_points(m.n, probes, seed + 1))
    attempts = 0
    while pending.shape[0] and attempts < 20:
        attempts += 1
        redo = []
        for y in pending:
            if method == "exact":
                _, sg = m.preimages(y)
                loc = [int(v) for v in sg]
                generic = bool(np.all(sg != 0))
            else:
                loc, generic = search(y, S, FS, neighbours)
                if generic and sum(loc) != expected:
                    # most likely a missed root; retry with a denser seed pool
                    escalated += 1
                    if dense is None:
                        Sd = m.domain.from_unit(sobol_points(m.n, 8 * seed_points, seed + 2))
                        dense = (np.vstack([S, Sd]), np.vstack([FS, m(Sd)]))
                    loc, generic = search(y, dense[0], dense[1], 8 * neighbours)
            if not generic:
                redo.append(y)
                continue
            degrees.append(int(sum(loc)))
            signs.append(loc)
            if sum(loc) != expected:
                failures.append({"probe": [float(v) for v in y], "signs": loc})
        resampled += len(redo)
        pending = inner.from_unit(rng.random((len(redo), m.n))) if redo else np.zeros((0, m.n))
    return DegreeReport(probes, degrees, signs, resampled, expected, method, failures, escalated)
