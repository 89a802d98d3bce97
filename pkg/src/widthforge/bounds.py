"""Closed-form width, packing-width and dilation bounds for rectangles.

All quantities are sharp monomials in the side lengths. Statements that only
hold up to an unknown dimensional constant are flagged with
``constant_status = "up_to_c_of_n"``; no numeric value is ever invented for
those constants.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

EXACT = "exact"
UP_TO_CONSTANT = "up_to_c_of_n"
TIE_RTOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


class UnsupportedSizeError(DomainError):
    """Raised when an exhaustive search would exceed its budget."""


@dataclass(frozen=True)
class Rectangle:
    """An n-dimensional box ``[0, d1] x ... x [0, dn]`` with sides sorted ascending.

    ``order`` records where each sorted side came from in the input, so
    ``dims[i] == raw[order[i]]``.
    """

    dims: tuple
    order: tuple = field(default=(), compare=False)

    def __init__(self, dims):
        raw = [float(d) for d in dims]
        if len(raw) < 1:
            raise DomainError("a rectangle needs at least one side")
        for d in raw:
            if not (math.isfinite(d) and d > 0):
                raise DomainError(f"side lengths must be positive and finite, got {d!r}")
        order = tuple(int(i) for i in np.argsort(raw, kind="stable"))
        object.__setattr__(self, "dims", tuple(raw[i] for i in order))
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def volume(self) -> float:
        return math.prod(self.dims)

    def array(self) -> np.ndarray:
        return np.array(self.dims)

    def scaled(self, t: float) -> "Rectangle":
        return Rectangle([t * d for d in self.dims])

    def to_json(self) -> dict:
        return {"dims": list(self.dims)}

    @classmethod
    def from_json(cls, data) -> "Rectangle":
        if not isinstance(data, dict) or "dims" not in data:
            raise DomainError('rectangle JSON must be an object with a "dims" list')
        return cls(data["dims"])

    def __repr__(self) -> str:
        return "Rectangle(" + ", ".join(f"{d:g}" for d in self.dims) + ")"


@dataclass
class BoundReport:
    kind: str
    value: float
    argmax_or_argmin_l: int | None
    monomials: list
    constant_status: str
    quotients: list | None = None
    perm: list | None = None

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "value": self.value,
            "argmax_or_argmin_l": self.argmax_or_argmin_l,
            "monomials": [[int(l), float(v)] for l, v in self.monomials],
            "constant_status": self.constant_status,
            "quotients": None if self.quotients is None else [float(q) for q in self.quotients],
        }
        if self.perm is not None:
            out["perm"] = [int(p) for p in self.perm]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "BoundReport":
        return cls(
            kind=data["kind"],
            value=float(data["value"]),
            argmax_or_argmin_l=data["argmax_or_argmin_l"],
            monomials=[(int(l), float(v)) for l, v in data["monomials"]],
            constant_status=data["constant_status"],
            quotients=data.get("quotients"),
            perm=data.get("perm"),
        )


class WidthBounds(NamedTuple):
    lower_monomial: float
    upper: float
    lower_status: str = UP_TO_CONSTANT
    upper_status: str = EXACT


def _logprod(xs) -> float:
    return float(sum(math.log(x) for x in xs))


def _pick(monomials, largest: bool):
    """Extremal monomial; ties (to 1e-12 relative) go to the smallest l."""
    values = [v for _, v in monomials]
    target = max(values) if largest else min(values)
    for l, v in monomials:
        if abs(v - target) <= TIE_RTOL * abs(target):
            return l, v
    raise AssertionError("unreachable")


def _check_k(n: int, k: int) -> None:
    if not (1 <= k <= n):
        raise DomainError(f"k must satisfy 1 <= k <= n={n}, got k={k}")


def _check_pair(R: Rectangle, S: Rectangle) -> None:
    if R.n != S.n:
        raise DomainError(f"dimension mismatch: R has n={R.n}, S has n={S.n}")


def quotients(R: Rectangle, S: Rectangle) -> list:
    _check_pair(R, S)
    return [s / r for r, s in zip(R.dims, S.dims)]


def width_bounds(R: Rectangle, k: int) -> WidthBounds:
    """k-width of a rectangle lies between c(n) R1...Rk and R1...Rk."""
    _check_k(R.n, k)
    w = math.exp(_logprod(R.dims[:k]))
    return WidthBounds(w, w)


def width_report(R: Rectangle, k: int) -> BoundReport:
    w = width_bounds(R, k).upper
    return BoundReport("width", w, k, [(k, w)], UP_TO_CONSTANT)


def _lk_monomial(head, tail, k: int, l: int, n: int, extra_log: float = 0.0) -> float:
    """``prod(head[:l]) * (prod(tail[l:]) * e^extra)^((k-l)/(n-l))``; the l = k term drops the tail."""
    if l == k:
        return math.exp(_logprod(head[:l]))
    e = (k - l) / (n - l)
    return math.exp(_logprod(head[:l]) + e * (_logprod(tail[l:]) + extra_log))


def subset_width_bound(R: Rectangle, k: int, V: float) -> BoundReport:
    """Width bound for an open U inside R of volume V: min over l of
    ``(R1...Rl)^((n-k)/(n-l)) V^((k-l)/(n-l))``."""
    n = R.n
    _check_k(n, k)
    if not (V > 0 and math.isfinite(V)):
        raise DomainError(f"volume must be positive, got {V!r}")
    logV = math.log(V)
    monomials = []
    for l in range(k + 1):
        if l == k:
            val = math.exp(_logprod(R.dims[:k]))
        else:
            val = math.exp((n - k) / (n - l) * _logprod(R.dims[:l]) + (k - l) / (n - l) * logV)
        monomials.append((l, val))
    l_star, value = _pick(monomials, largest=False)
    return BoundReport("subset_width", value, l_star, monomials, UP_TO_CONSTANT)


def packing_width(R: Rectangle, k: int, N: int) -> BoundReport:
    """Packing width of N disjoint subsets: min over l of
    ``R1...Rl (R_{l+1}...Rn)^((k-l)/(n-l)) N^(-(k-l)/(n-l))``."""
    n = R.n
    _check_k(n, k)
    if int(N) != N or N < 1:
        raise DomainError(f"N must be a positive integer, got {N!r}")
    logN = math.log(N)
    monomials = [(l, _lk_monomial(R.dims, R.dims, k, l, n, -logN)) for l in range(k + 1)]
    l_star, value = _pick(monomials, largest=False)
    return BoundReport("packing_width", value, l_star, monomials, UP_TO_CONSTANT)


def dilation_lower_bound(R: Rectangle, S: Rectangle, k: int) -> BoundReport:
    """Lower bound on the k-dilation of degree-1 maps R -> S: max over l of
    ``Q1...Ql (Q_{l+1}...Qn)^((k-l)/(n-l))``."""
    _check_pair(R, S)
    n = R.n
    _check_k(n, k)
    Q = quotients(R, S)
    monomials = [(l, _lk_monomial(Q, Q, k, l, n)) for l in range(k + 1)]
    l_star, value = _pick(monomials, largest=True)
    return BoundReport("dilation_lower", value, l_star, monomials, UP_TO_CONSTANT, quotients=Q)


def thm2_monomials(Q) -> list:
    """The n monomials whose maximum governs the optimal (n-1)-dilation.

    Entries l = 1..n-1 are ``Q1...Ql (Q_{l+1}...Qn)^((n-l-1)/(n-l))``; the
    final entry, indexed n, is ``Q2...Qn``.
    """
    n = len(Q)
    out = []
    for l in range(1, n):
        e = (n - l - 1) / (n - l)
        out.append((l, math.exp(_logprod(Q[:l]) + e * _logprod(Q[l:]))))
    out.append((n, math.exp(_logprod(Q[1:]))))
    return out


def thm2_lower_bound(R: Rectangle, S: Rectangle) -> BoundReport:
    _check_pair(R, S)
    if R.n < 2:
        raise DomainError("the (n-1)-dilation estimate needs n >= 2")
    Q = quotients(R, S)
    monomials = thm2_monomials(Q)
    l_star, value = _pick(monomials, largest=True)
    return BoundReport("thm2_lower", value, l_star, monomials, UP_TO_CONSTANT, quotients=Q)


LIN_MAX_N = 10
_PERM_CHUNK = 50_000


def lin_dilation(R: Rectangle, S: Rectangle, k: int) -> BoundReport:
    """Smallest k-dilation of a linear diffeomorphism R -> S.

    Such a map sends faces to faces, so it is an axis bijection composed with
    a diagonal scaling; exhaustive search over bijections is exact. For a
    fixed bijection the k-dilation is the product of its k largest factors.
    """
    _check_pair(R, S)
    n = R.n
    _check_k(n, k)
    if n > LIN_MAX_N:
        raise UnsupportedSizeError(f"exhaustive permutation search supports n <= {LIN_MAX_N}, got {n}")
    r = np.array(R.dims)
    s = np.array(S.dims)
    best = math.inf
    best_perm = None
    perms = itertools.permutations(range(n))
    while True:
        chunk = list(itertools.islice(perms, _PERM_CHUNK))
        if not chunk:
            break
        P = np.array(chunk)
        logf = np.log(s[P]) - np.log(r)[None, :]
        top = -np.sort(-logf, axis=1)[:, :k].sum(axis=1)
        i = int(np.argmin(top))
        if top[i] < best - 1e-15:
            best = float(top[i])
            best_perm = chunk[i]
    value = math.exp(best)
    return BoundReport(
        "lin_dilation", value, None, [], EXACT, quotients=quotients(R, S), perm=list(best_perm)
    )
