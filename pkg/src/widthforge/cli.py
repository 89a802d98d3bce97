"""widthforge command line.

Exit status: 0 on success, 2 when an input or precondition is rejected, 3 when
a computed certificate fails its verification.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

EXIT_OK, EXIT_PRECONDITION, EXIT_VERIFY = 0, 2, 3
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


class VerificationFailure(Exception):
    def __init__(self, msg: str, results: dict):
        super().__init__(msg)
        self.results = results


@dataclass
class RunConfig:
    command: str
    inputs: list
    k: int | None = None
    seed: int = 0
    samples: int = 4096
    probes: int = 50
    fibers: int | None = None
    directions: int = 200
    epsilon: float | None = None
    snake_budget: float | None = None
    verify: bool = False
    out: str | None = None
    svg: str | None = None
    profile: str | None = None
    timing: bool = False


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _rect(path: str):
    from .bounds import DomainError, Rectangle
    from .report import parse_json

    data = parse_json(_read(path), path)
    if isinstance(data, list):
        data = {"dims": data}
    try:
        return Rectangle.from_json(data)
    except DomainError as exc:
        raise DomainError(f"{path}: {exc}") from None


def _need_k(cfg: RunConfig) -> int:
    from .bounds import DomainError

    if cfg.k is None:
        raise DomainError(f"{cfg.command} needs --k")
    return cfg.k


def cmd_bounds(cfg: RunConfig) -> dict:
    from .bounds import dilation_lower_bound, lin_dilation, quotients, thm2_lower_bound, width_report

    R, S = _rect(cfg.inputs[0]), _rect(cfg.inputs[1])
    k = _need_k(cfg)
    out = {
        "R": list(R.dims),
        "S": list(S.dims),
        "quotients": quotients(R, S),
        "width_R": width_report(R, k),
        "width_S": width_report(S, k),
        "dilation_lower": dilation_lower_bound(R, S, k),
        "lin_dilation": lin_dilation(R, S, k),
    }
    if R.n >= 2:
        out["thm2_lower"] = thm2_lower_bound(R, S)
    return out


def cmd_plan(cfg: RunConfig) -> dict:
    from .planner import SNAKE_BUDGET, plan_map, validate_plan

    R, S = _rect(cfg.inputs[0]), _rect(cfg.inputs[1])
    plan = plan_map(R, S, cfg.snake_budget or SNAKE_BUDGET)
    problems = validate_plan(plan)
    res = {"plan": plan, "problems": problems}
    if problems:
        raise VerificationFailure("plan validation failed: " + "; ".join(problems), res)
    return res


def _load_plan(path: str):
    from .planner import MapPlan
    from .report import BUNDLE_FORMAT, parse_json

    data = parse_json(_read(path), path)
    if isinstance(data, dict) and data.get("format") == BUNDLE_FORMAT:
        data = data.get("results", {}).get("plan", data)
    return MapPlan.from_json(data)


def cmd_realize(cfg: RunConfig) -> dict:
    from .degree import check_degree
    from .maps import certify_k_dilation
    from .planner import realize_plan, validate_plan

    plan = _load_plan(cfg.inputs[0])
    m = realize_plan(plan)
    res = {"plan": plan, "problems": validate_plan(plan)}
    if not cfg.verify:
        return res
    k = plan.R.n - 1
    cert = certify_k_dilation(m, k, cfg.samples, cfg.seed)
    deg = check_degree(m, cfg.probes, cfg.seed)
    limit = 1.1 * plan.total_bound
    res.update(certificate=cert, degree=deg, limit=limit)
    if res["problems"] or cert.sup_estimate > limit or not deg.passed:
        raise VerificationFailure(
            f"certificate {cert.sup_estimate:.6g} vs limit {limit:.6g}, degree passed={deg.passed}", res)
    return res


def cmd_snake(cfg: RunConfig) -> dict:
    from .degree import check_degree
    from .maps import certify_k_dilation
    from .planner import SNAKE_BUDGET
    from .snake import build_snake

    R, S = _rect(cfg.inputs[0]), _rect(cfg.inputs[1])
    k = _need_k(cfg)
    budget = cfg.snake_budget or SNAKE_BUDGET
    m = build_snake(R, S, k)
    cert = certify_k_dilation(m, k, cfg.samples, cfg.seed)
    deg = check_degree(m, cfg.probes, cfg.seed)
    res = {"spec": m.spec, "certificate": cert, "degree": deg, "budget": budget}
    if cert.sup_estimate > budget or not deg.passed:
        raise VerificationFailure(
            f"certificate {cert.sup_estimate:.6g} vs budget {budget:.6g}, degree passed={deg.passed}", res)
    return res


def cmd_skeleton(cfg: RunConfig) -> dict:
    from .maps import Box
    from .skeleton import EPSILON, build_psi, certify_width_volume, generic_frame, svg_figure
    from .voxel import VoxelGrid

    U = VoxelGrid.load(cfg.inputs[0])
    k = _need_k(cfg)
    eps = cfg.epsilon if cfg.epsilon is not None else EPSILON
    rep = certify_width_volume(U, k, cfg.fibers, eps, cfg.seed)
    if cfg.svg:
        G, _ = U.normalized()
        lo, hi = G.support_box()
        sk = build_psi(U.n, k, eps, Box(lo - 1.5, hi + 1.5), rep.translate["translate"])
        with open(cfg.svg, "w", encoding="utf-8") as fh:
            fh.write(svg_figure(sk, generic_frame(U.n, k, cfg.seed), rep.worst_offset))
    return {"width": rep}


def cmd_falconer(cfg: RunConfig) -> dict:
    from .falconer import SQRT10, find_direction, slice_certificate
    from .voxel import VoxelGrid

    U = VoxelGrid.load(cfg.inputs[0])
    found = find_direction(U, cfg.directions, cfg.seed)
    cert = slice_certificate(U, found.theta)
    cert.average_energy = found.average_energy
    cert.directions = found.directions
    if cfg.profile:
        with open(cfg.profile, "w", encoding="utf-8") as fh:
            fh.write(cert.profile_csv())
    res = {"direction": cert}
    if cert.sup_slice > SQRT10 or cert.sup_slice > 1.02 * cert.fourier_bound:
        raise VerificationFailure(
            f"sup_slice {cert.sup_slice:.6g} vs sqrt(10) and Fourier bound {cert.fourier_bound:.6g}", res)
    return res


COMMANDS = {
    "bounds": (cmd_bounds, 2),
    "plan": (cmd_plan, 2),
    "realize": (cmd_realize, 1),
    "snake": (cmd_snake, 2),
    "skeleton": (cmd_skeleton, 1),
    "falconer": (cmd_falconer, 1),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="widthforge", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("inputs", nargs="+", help="rectangle JSON, plan JSON or WVG1 grid, by command")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--probes", type=int, default=50)
    p.add_argument("--fibers", type=int)
    p.add_argument("--directions", type=int, default=200)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--snake-budget", type=float, dest="snake_budget")
    p.add_argument("--verify", action="store_true")
    p.add_argument("--out")
    p.add_argument("--svg")
    p.add_argument("--profile", help="falconer: write the slice profile as CSV")
    p.add_argument("--timing", action="store_true", help="add wall-clock seconds to the bundle")
    return p


def _limit_threads():
    n = os.environ.get("WIDTHFORGE_THREADS")
    if n:
        for var in THREAD_VARS:
            os.environ[var] = str(max(1, int(n)))


def run(cfg: RunConfig) -> tuple:
    """(exit status, bundle text); writes the bundle to cfg.out when given."""
    from .bounds import DomainError
    from .report import report_bundle

    func, nin = COMMANDS[cfg.command]
    config = {k: v for k, v in asdict(cfg).items() if k not in ("out", "svg", "profile", "timing")}
    t0 = time.perf_counter()
    status, results = EXIT_OK, {}
    try:
        if len(cfg.inputs) != nin:
            raise DomainError(f"{cfg.command} takes {nin} input file(s), got {len(cfg.inputs)}")
        results = func(cfg)
    except VerificationFailure as exc:
        status, results = EXIT_VERIFY, dict(exc.results, error=str(exc))
    except (DomainError, OSError, ValueError) as exc:
        status, results = EXIT_PRECONDITION, {"error": f"{type(exc).__name__}: {exc}"}
    except AssertionError as exc:
        status, results = EXIT_VERIFY, {"error": f"{type(exc).__name__}: {exc}"}
    timing = {"seconds": round(time.perf_counter() - t0, 3)} if cfg.timing else None
    text = report_bundle(dict(results, status=status), config, timing)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return status, text


def main(argv=None) -> int:
    _limit_threads()
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    status, text = run(cfg)
    if not cfg.out:
        sys.stdout.write(text)
    if status != EXIT_OK:
        err = json.loads(text)["results"].get("error", "")
        sys.stderr.write(f"widthforge {cfg.command}: exit {status}: {err}\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
