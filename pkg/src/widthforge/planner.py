"""Plans of linear, snake and scaling steps realizing near-optimal (n-1)-dilation.

A plan for (R, S) first targets the rescaled rectangle tS whose lower bound
is 1, then scales by 1/t. Every intermediate rectangle is kept sorted and
every linear step in a plan is (n-1)-contracting, so the total bound is the
snake budget times the lower bound.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import DomainError, Rectangle, UnsupportedSizeError, thm2_lower_bound
from .fold import BudgetExceededError, EmbeddingInfeasibleError
from .maps import EvaluableMap, compose_all, linear_between, scale_map
from .snake import PreconditionError, build_snake, snake_spec

SNAKE_BUDGET = 40.0
REL = 1e-9
TIE = 1e-12


class PlanConsistencyError(AssertionError):
    """A condition the construction guarantees was found violated (a bug trap)."""


class PartialRealizationError(RuntimeError):
    pass


def _prod(xs) -> float:
    return math.exp(sum(math.log(x) for x in xs)) if len(xs) else 1.0


def _ge(a: float, b: float, rel: float = REL) -> bool:
    return a >= b * (1 - rel)


def _k_dilation(factors, k) -> float:
    f = sorted(factors, reverse=True)
    return _prod(f[:k])


def _subproducts_min(factors, k) -> float:
    return _prod(sorted(factors)[:k])


@dataclass
class LinearStep:
    src: Rectangle
    dst: Rectangle
    label: str = "(n-1)-contracting"
    perm: list | None = None
    kind: str = "linear"

    @property
    def factors(self):
        perm = self.perm or list(range(self.src.n))
        return [self.dst.dims[p] / r for r, p in zip(self.src.dims, perm)]

    @property
    def dilation(self) -> float:
        return _k_dilation(self.factors, self.src.n - 1)

    def to_json(self) -> dict:
        return {
            "kind": "linear",
            "in": list(self.src.dims),
            "out": list(self.dst.dims),
            "perm": self.perm or list(range(self.src.n)),
            "dilation": self.dilation,
            "label": self.label,
        }


@dataclass
class SnakeStep:
    src: Rectangle
    dst: Rectangle
    k: int
    budget: float = SNAKE_BUDGET
    evaluable: bool = True
    predicted: float | None = None
    certificate: float | None = None
    kind: str = "snake"

    @property
    def dilation(self) -> float:
        return self.budget

    def to_json(self) -> dict:
        out = {
            "kind": "snake",
            "in": list(self.src.dims),
            "out": list(self.dst.dims),
            "k": self.k,
            "budget": self.budget,
            "evaluable": self.evaluable,
            "predicted": self.predicted,
        }
        if self.certificate is not None:
            out["certificate"] = self.certificate
        return out


@dataclass
class ScaleStep:
    src: Rectangle
    factor: float
    kind: str = "scale"

    @property
    def dst(self) -> Rectangle:
        return self.src.scaled(self.factor)

    @property
    def dilation(self) -> float:
        return self.factor ** (self.src.n - 1)

    def to_json(self) -> dict:
        return {
            "kind": "scale",
            "in": list(self.src.dims),
            "out": list(self.dst.dims),
            "factor": self.factor,
            "dilation": self.dilation,
        }


@dataclass
class MapPlan:
    R: Rectangle
    S: Rectangle
    steps: list
    lower_bound: float = 1.0
    normalization: float = 1.0
    chains: list = field(default_factory=list)
    conditions: list = field(default_factory=list)

    @property
    def total_bound(self) -> float:
        return _prod([max(st.dilation, 1e-300) for st in self.steps]) if self.steps else 1.0

    @property
    def evaluable(self) -> bool:
        return all(getattr(st, "evaluable", True) for st in self.steps)

    @property
    def snake_steps(self) -> list:
        return [st for st in self.steps if st.kind == "snake"]

    def to_json(self) -> dict:
        return {
            "R": list(self.R.dims),
            "S": list(self.S.dims),
            "steps": [st.to_json() for st in self.steps],
            "total_bound": self.total_bound,
            "evaluable": self.evaluable,
            "lower_bound": self.lower_bound,
            "normalization": self.normalization,
            "chains": self.chains,
            "conditions": self.conditions,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MapPlan":
        try:
            steps = []
            for st in data["steps"]:
                kind = st["kind"]
                if kind == "linear":
                    steps.append(LinearStep(Rectangle(st["in"]), Rectangle(st["out"]),
                                            st.get("label", "(n-1)-contracting"), st.get("perm")))
                elif kind == "snake":
                    steps.append(SnakeStep(Rectangle(st["in"]), Rectangle(st["out"]), int(st["k"]),
                                           float(st["budget"]), bool(st.get("evaluable", True)),
                                           st.get("predicted"), st.get("certificate")))
                elif kind == "scale":
                    steps.append(ScaleStep(Rectangle(st["in"]), float(st["factor"])))
                else:
                    raise DomainError(f"unknown step kind {kind!r}")
            R = Rectangle(data["R"]) if "R" in data else steps[0].src
            S = Rectangle(data["S"]) if "S" in data else steps[-1].dst
        except (KeyError, TypeError, IndexError) as exc:
            raise DomainError(f"malformed plan JSON: {exc}") from exc
        return cls(R, S, steps, data.get("lower_bound", 1.0), data.get("normalization", 1.0),
                   data.get("chains", []), data.get("conditions", []))


# ------------------------------------------------------------------ conditions


def _mono(X, lo: int, l: int, n: int) -> float:
    """X_lo...X_l (X_{l+1}...X_n)^((n-l-1)/(n-l)), 1-based inclusive indices."""
    head = X[lo - 1:l]
    tail = X[l:n]
    e = (n - l - 1) / (n - l)
    return math.exp(sum(math.log(x) for x in head) + e * sum(math.log(x) for x in tail))


def star_conditions(R: Rectangle, S: Rectangle) -> list:
    n = R.n
    out = []
    for l in range(1, n):
        a, b = _mono(R.dims, 1, l, n), _mono(S.dims, 1, l, n)
        out.append({"name": f"*1 l={l}", "lhs": a, "rhs": b, "ok": _ge(a, b)})
    a, b = _prod(R.dims[1:]), _prod(S.dims[1:])
    out.append({"name": "*2", "lhs": a, "rhs": b, "ok": _ge(a, b)})
    return out


def c_conditions(R: Rectangle, S: Rectangle, p: int) -> list:
    n = R.n
    r, s = R.dims, S.dims
    out = [{"name": "1", "lhs": r[0], "rhs": s[0], "ok": abs(r[0] - s[0]) <= REL * max(r[0], s[0])}]
    for a in range(2, p + 1):
        x, y = _prod(r[1:a]), _prod(s[1:a])
        out.append({"name": f"2 a={a}", "lhs": x, "rhs": y, "ok": _ge(x, y)})
    for l in range(max(p, 1), n):
        x, y = _mono(r, 2, l, n), _mono(s, 2, l, n)
        out.append({"name": f"3 l={l}", "lhs": x, "rhs": y, "ok": _ge(x, y)})
    x, y = _prod(r[1:]), _prod(s[1:])
    out.append({"name": "4", "lhs": x, "rhs": y, "ok": _ge(x, y)})
    return out


def _dump(level, R, S, conds):
    return {"level": level, "R": list(R.dims), "S": list(S.dims), "conditions": conds}


def _require(conds, what, R, S):
    bad = [c for c in conds if not c["ok"]]
    if bad:
        raise PlanConsistencyError(
            f"{what} fails for R={list(R.dims)}, S={list(S.dims)}: "
            + "; ".join(f"{c['name']}: {c['lhs']:.12g} < {c['rhs']:.12g}" for c in bad)
        )


# ------------------------------------------------------------------ builders


class _Ctx:
    def __init__(self, budget, probe):
        self.budget = budget
        self.probe = probe
        self.chains = []
        self.conditions = []

    def snake(self, R, S):
        k = R.n - 1
        step = SnakeStep(R, S, k, self.budget)
        if self.probe:
            try:
                spec = snake_spec(R, S, k)
                step.predicted = spec.predicted_interior
                step.evaluable = spec.predicted_interior <= self.budget
            except (EmbeddingInfeasibleError, BudgetExceededError):
                step.evaluable = False
            except PreconditionError as exc:
                raise PlanConsistencyError(f"snake hypotheses fail inside a plan: {exc}") from exc
        return step


def _check_sorted(*rects):
    for T in rects:
        d = T.dims
        if any(d[i] > d[i + 1] * (1 + REL) for i in range(len(d) - 1)):
            raise PlanConsistencyError(f"unsorted intermediate rectangle {list(d)}")


def _contract(src, dst):
    return LinearStep(src, dst, "(n-1)-contracting")


def _expanding_record(src, dst, stop):
    f = [b / a for a, b in zip(src.dims, dst.dims)]
    return {"in": list(src.dims), "out": list(dst.dims), "factors": f,
            "min_subproduct": _subproducts_min(f, src.n - 1), "stop": stop}


def _chain_plan(R: Rectangle, S: Rectangle, p: int, ctx: _Ctx) -> list:
    n = R.n
    conds = c_conditions(R, S, p)
    ctx.conditions.append(_dump(f"C({p})", R, S, conds))
    _require(conds, f"C({p})", R, S)
    r, s = R.dims, S.dims
    b = None
    for bb in range(2, n + 1):
        if _prod(r[1:bb]) < _prod(s[1:bb]) * (1 - TIE):
            b = bb
            break
    if b is None:
        return [ctx.snake(R, S)]
    if not (p < b <= n - 2):
        raise PlanConsistencyError(f"violating index b={b} outside ({p}, {n - 2}] for R={list(r)}, S={list(s)}")
    if b == 2:
        f = (s[1] / r[1]) ** (1.0 / (n - 3))
        T = Rectangle([s[0], r[1]] + [x * f for x in s[2:]])
        _check_sorted(T)
        return _chain_plan(R, T, 2, ctx) + [_contract(T, S)]
    # b > 2: expanding chain on S, recorded; its inverse is emitted as contracting steps
    cur = list(s)
    target = _prod(r[1:b])
    stages = []
    d = 1
    while True:
        D = list(range(b - d, b))  # 0-based indices of the decreasing block
        v = cur[b - 1]
        mu_a = (target / _prod([cur[i] for i in range(1, b)])) ** (1.0 / d)
        below = b - d - 1  # axis just below the block
        mu_b = cur[below] / v
        nxt = list(cur)
        if mu_a >= mu_b or below < 1:
            if below < 1 and mu_a < mu_b:
                raise PlanConsistencyError("expanding chain reached axis 1 without meeting its target")
            mu, stop = mu_a, "target"
        else:
            mu, stop = mu_b, "merge"
        nu = mu ** (-d / (n - b - 1))
        for i in D:
            nxt[i] = cur[i] * mu
        for i in range(b, n):
            nxt[i] = cur[i] * nu
        if stop == "merge":
            for i in D:
                nxt[i] = cur[below]
        src, dst = Rectangle(cur), Rectangle(nxt)
        _check_sorted(dst)
        stages.append((src, dst))
        ctx.chains.append(_expanding_record(src, dst, stop) | {"lemma_b": b})
        cur = nxt
        if stop == "target":
            break
        d += 1
    T = Rectangle(cur)
    for l in range(b, n):
        x, y = _mono(T.dims, 2, l, n), _mono(s, 2, l, n)
        if abs(x - y) > 1e-9 * y:
            raise PlanConsistencyError(f"chain broke the l={l} invariant: {x} vs {y}")
    back = [_contract(dst, src) for src, dst in reversed(stages)]
    return _chain_plan(R, T, b, ctx) + back


def _plan_n3(R, S, ctx) -> list:
    r, s = R.dims, S.dims
    if r[0] < s[0] * (1 - TIE):
        T = Rectangle([s[0], r[1] * r[0] / s[0], r[2] * r[0] / s[0]])
        _check_sorted(T)
        return [_contract(R, T), ctx.snake(T, S)]
    if r[1] < s[1] * (1 - TIE):
        T = Rectangle([r[0] * r[1] / s[1], s[1], r[2] * r[1] / s[1]])
        _check_sorted(T)
        return [_contract(R, T), _contract(T, S)]
    steps = []
    if r[0] > s[0] * (1 + TIE):
        T = Rectangle([s[0], r[1], r[2]])
        steps.append(_contract(R, T))
        R = T
    conds = c_conditions(R, S, 2)
    ctx.conditions.append(_dump("C(2)", R, S, conds))
    _require(conds, "C(2)", R, S)
    return steps + [ctx.snake(R, S)]


def _plan_general(R, S, ctx) -> list:
    n = R.n
    r, s = R.dims, S.dims
    if abs(r[0] - s[0]) <= TIE * max(r[0], s[0]):
        T = Rectangle([r[0]] + list(s[1:]))
        return _chain_plan(R, T, 1, ctx) + ([] if T.dims == S.dims else [_contract(T, S)])
    if r[0] < s[0]:
        f = (s[0] / r[0]) ** (1.0 / (n - 2))
        T = Rectangle([r[0]] + [x * f for x in s[1:]])
        _check_sorted(T)
        return _chain_plan(R, T, 1, ctx) + [_contract(T, S)]
    # R1 > S1: expanding chain decreasing S_j, j = 2, 3, ...
    cur = list(s)
    stages = []
    R1 = r[0]
    cube = False
    for j in range(1, n):
        v = cur[0]
        nu_stop = R1 / v
        nu_merge = (cur[j] / v) ** (1.0 / (n - 1))
        if nu_stop <= nu_merge:
            nu, stop = nu_stop, "target"
        else:
            nu, stop = nu_merge, "merge"
        mu = nu ** (-(n - 2))
        nxt = [x * nu for x in cur]
        nxt[j] = cur[j] * mu
        if stop == "merge":
            for i in range(j + 1):
                nxt[i] = v * nu
        else:
            nxt[0] = R1
            for i in range(1, j):
                nxt[i] = R1
        src, dst = Rectangle(cur), Rectangle(nxt)
        _check_sorted(dst)
        stages.append((src, dst))
        ctx.chains.append(_expanding_record(src, dst, stop) | {"outer_j": j + 1})
        cur = nxt
        if stop == "target":
            break
    else:
        cube = True
    T = Rectangle(cur)
    back = [_contract(dst, src) for src, dst in reversed(stages)]
    if cube:
        if T.dims[0] > R1 * (1 + REL):
            raise PlanConsistencyError("cube endpoint is larger than R1")
        return [LinearStep(R, T, "(n-1)-contracting")] + back
    conds = star_conditions(R, T)
    ctx.conditions.append(_dump("(*) after chain", R, T, conds))
    _require(conds, "(*) after chain", R, T)
    return _chain_plan(R, Rectangle([R1] + list(T.dims[1:])), 1, ctx) + back


def lemma41_plan(R, S, snake_budget: float = SNAKE_BUDGET, probe_evaluable: bool = True) -> MapPlan:
    R = R if isinstance(R, Rectangle) else Rectangle(R)
    S = S if isinstance(S, Rectangle) else Rectangle(S)
    if R.n != S.n:
        raise DomainError("dimension mismatch")
    if abs(R.dims[0] - S.dims[0]) > TIE * max(R.dims[0], S.dims[0]):
        raise PreconditionError(f"R1 = {R.dims[0]:.6g} != S1 = {S.dims[0]:.6g}")
    conds = c_conditions(R, S, 1)
    if not all(c["ok"] for c in conds):
        bad = [c["name"] for c in conds if not c["ok"]]
        raise PreconditionError(f"C(1) fails: {', '.join(bad)}")
    ctx = _Ctx(snake_budget, probe_evaluable)
    steps = _chain_plan(R, S, 1, ctx)
    return MapPlan(R, S, steps, thm2_lower_bound(R, S).value, 1.0, ctx.chains, ctx.conditions)


def plan_map(R, S, snake_budget: float = SNAKE_BUDGET, probe_evaluable: bool = True) -> MapPlan:
    """Plan a degree-1 map R -> S with (n-1)-dilation at most budget x lower bound."""
    R = R if isinstance(R, Rectangle) else Rectangle(R)
    S = S if isinstance(S, Rectangle) else Rectangle(S)
    if R.n != S.n:
        raise DomainError("dimension mismatch")
    n = R.n
    if n < 3:
        raise UnsupportedSizeError(f"plans need n >= 3, got n={n}")
    L = thm2_lower_bound(R, S).value
    t = L ** (-1.0 / (n - 1))
    tS = S.scaled(t)
    if abs(thm2_lower_bound(R, tS).value - 1.0) > 1e-9:
        raise PlanConsistencyError("normalization did not bring the lower bound to 1")
    ctx = _Ctx(snake_budget, probe_evaluable)
    conds = star_conditions(R, tS)
    ctx.conditions.append(_dump("(*)", R, tS, conds))
    _require(conds, "(*)", R, tS)
    if all(abs(a - b) <= REL * b for a, b in zip(R.dims, tS.dims)):
        steps = [LinearStep(R, tS, "(n-1)-contracting")]
    elif n == 3:
        steps = _plan_n3(R, tS, ctx)
    else:
        steps = _plan_general(R, tS, ctx)
    if abs(t - 1.0) > 1e-12:
        steps.append(ScaleStep(tS, 1.0 / t))
    return MapPlan(R, S, steps, L, t, ctx.chains, ctx.conditions)


# ------------------------------------------------------------------ validation


def validate_plan(plan: MapPlan) -> list:
    """Problems found in a plan (empty list when it is valid)."""
    problems = []
    n = plan.R.n
    prev = plan.R
    for i, st in enumerate(plan.steps):
        src, dst = st.src, st.dst
        if any(abs(a - b) > REL * max(a, b) for a, b in zip(prev.dims, src.dims)):
            problems.append(f"step {i} input {list(src.dims)} does not chain from {list(prev.dims)}")
        for T in (src, dst):
            d = T.dims
            if any(d[j] > d[j + 1] * (1 + REL) for j in range(n - 1)):
                problems.append(f"step {i} has unsorted dims")
        if st.kind == "linear" and "contracting" in st.label and st.dilation > 1 + 1e-12:
            problems.append(f"step {i} labelled contracting has dilation {st.dilation}")
        prev = dst
    if any(abs(a - b) > REL * max(a, b) for a, b in zip(prev.dims, plan.S.dims)):
        problems.append(f"plan ends at {list(prev.dims)}, not {list(plan.S.dims)}")
    for ch in plan.chains:
        if ch["min_subproduct"] < 1 - 1e-12:
            problems.append(f"expanding stage with (n-1)-subproduct {ch['min_subproduct']}")
    for dump in plan.conditions:
        for c in dump["conditions"]:
            if not c["ok"]:
                problems.append(f"condition {dump['level']} {c['name']} fails")
    tb = _prod([st.dilation for st in plan.steps]) if plan.steps else 1.0
    if abs(tb - plan.total_bound) > 1e-12 * tb:
        problems.append("total bound is not the product of step dilations")
    return problems


# ------------------------------------------------------------------ realization


def step_map(st) -> EvaluableMap:
    if st.kind == "linear":
        return linear_between(st.src, st.dst, st.perm)
    if st.kind == "scale":
        return scale_map(st.src, st.factor)
    return build_snake(st.src, st.dst, st.k)


def realize_plan(plan: MapPlan) -> EvaluableMap:
    symbolic = [i for i, st in enumerate(plan.steps) if not getattr(st, "evaluable", True)]
    if symbolic:
        raise PartialRealizationError(f"plan has non-evaluable snake steps at positions {symbolic}")
    maps = [step_map(st) for st in plan.steps]
    m = compose_all(maps)
    m.name = "plan"
    return m
