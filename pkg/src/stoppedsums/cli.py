"""Command-line front end.

Each subcommand runs one workflow from a JSON config and writes CSV/JSON
artifacts into the output directory. Exit codes: 0 when every requested
verdict and certificate passes, 2 for a violated precondition, 3 for a
failed verdict, 4 when a quantity leaves the floating point range.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ._numerics import write_csv_rows
from .config import ExperimentConfig, load_config, parse_config
from .constructions import (
    GrowthReport,
    build_g_finite_moment,
    build_h_moments_ext,
    build_h_convex_inverse,
    build_h_weighted,
    find_x0_semi_moment,
    flatten_to_sublinear,
    verify_growth_bound,
)
from .distributions import counting_from_dict, discretize, distribution_from_dict
from .errors import NumericRangeError, PreconditionError
from .functions import parse_function
from .limits import (
    GridSpec,
    RatioCurve,
    check_G_o_F,
    check_tail_ratio_lower,
    proposition_hypotheses_check,
    ratio_curve,
)
from .tilting import DominationCurve, IdentityReport, check_cnu_domination, tilt_identity_check, tilt_pair

EXIT_OK, EXIT_PRECONDITION, EXIT_VERDICT, EXIT_RANGE = 0, 2, 3, 4

log = logging.getLogger("stoppedsums")


def _log10(v: float) -> float:
    return math.log10(v) if v > 0 else -math.inf


def emit_plotdata(obj, path: str | Path) -> int:
    """Write a CSV for plotting with log10 companion columns; returns the row count.

    An empty curve produces a header-only file and a warning.
    """
    path = Path(path)
    if isinstance(obj, IdentityReport):
        obj.write_csv(path)
        return 0 if obj.mixture_points is None else int(obj.mixture_points[0].size)
    if isinstance(obj, RatioCurve):
        header = "x,ratio,running_inf,predicted,log10_x,log10_ratio"
        rows = [(x, r, m, obj.predicted, _log10(x), _log10(r)) for x, r, m in zip(obj.x, obj.ratio, obj.running_inf)]
    elif isinstance(obj, DominationCurve):
        header = "x,ratio,log10_x,log10_ratio"
        rows = [(x, r, _log10(x), _log10(r)) for x, r in zip(obj.x, obj.ratio)]
    elif isinstance(obj, GrowthReport):
        header = "n,ratio,log_ratio,log_expectation"
        rows = [(int(n), math.exp(lr), lr, le) for n, lr, le in zip(obj.n, obj.log_ratios, obj.log_expectations)]
    else:
        raise PreconditionError(f"no plot data layout for {type(obj).__name__}")
    write_csv_rows(path, header, rows)
    if not rows:
        log.warning("%s: empty curve, wrote header only", path.name)
    return len(rows)


def _write_json(path: Path, data: dict[str, Any]) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o).__name__}")


class _Run:
    """Artifacts and verdicts collected while a workflow runs."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.F = distribution_from_dict(cfg.distribution)
        self.tau = counting_from_dict(cfg.tau)
        self.verdicts: dict[str, bool] = {}
        self.summary: dict[str, Any] = {}

    def need_grid(self) -> GridSpec:
        if self.cfg.grid is None:
            raise PreconditionError("this workflow needs a grid section")
        return GridSpec(**self.cfg.grid.model_dump())

    def need_c(self) -> float:
        if self.cfg.c is None:
            raise PreconditionError("this workflow needs c")
        return self.cfg.c

    def domination_grid(self, hi: float) -> np.ndarray:
        if self.cfg.domination_grid is not None:
            return np.asarray(self.cfg.domination_grid, dtype=float)
        c = self.need_c()
        return np.geomspace(max(c, 1.0), max(hi, 10.0 * max(c, 1.0)), 200)


def _ratio(run: _Run) -> None:
    spec = run.need_grid()
    curve = ratio_curve(run.F, run.tau, spec)
    emit_plotdata(curve, run.out / "ratio.csv")
    run.summary["ratio"] = curve.to_dict()
    run.verdicts["ratio_above_union_floor"] = curve.above_floor
    if run.cfg.c is not None:
        _domination(run, spec)


def _domination(run: _Run, spec: GridSpec) -> None:
    c = run.need_c()
    factor = run.cfg.tolerances.trend_factor
    if run.F.is_heavy_tailed:
        dom = check_G_o_F(run.F, run.tau, c, run.domination_grid(spec.cutoff), factor)
        key = "tail_domination"
    else:
        lat = discretize(run.F, spec.step, spec.cutoff, spec.allow_heavy_truncation)
        pair = tilt_pair(run.F, run.tau, lat)
        g_mean = pair.G.mean()
        if not c > g_mean:
            raise PreconditionError(
                f"the tilted domination condition asks for some c > E of the tilted law; "
                f"got c={c} <= {g_mean:.6g}")
        dom = check_cnu_domination(pair.nu, c, pair.G, run.domination_grid(lat.end), factor)
        key = "tilted_tail_domination"
    emit_plotdata(dom, run.out / "domination.csv")
    run.summary[key] = dom.to_dict()
    run.verdicts[key] = dom.verdict.positive


def _tilt(run: _Run) -> None:
    spec = run.need_grid()
    lat = discretize(run.F, spec.step, spec.cutoff, spec.allow_heavy_truncation)
    pair = tilt_pair(run.F, run.tau, lat)
    gamma = run.cfg.tilt.gamma if run.cfg.tilt.gamma is not None else pair.gamma_hat_used
    rep = tilt_identity_check(lat, run.tau, gamma, run.cfg.tilt.n_max, run.cfg.tolerances.identity)
    emit_plotdata(rep, run.out / "identity.csv")
    run.summary["tilt_pair"] = pair.to_dict()
    run.summary["identity"] = rep.to_dict()
    run.verdicts["tilt_identity"] = rep.passed
    if run.cfg.c is not None:
        _domination(run, spec)


def _fn(spec, name: str):
    if spec is None:
        raise PreconditionError(f"the builder needs the function {name}")
    return parse_function(spec)


def _construct(run: _Run) -> None:
    cc = run.cfg.construct_section
    if cc is None:
        raise PreconditionError("the construct workflow needs a construct section")
    tol = run.cfg.tolerances.residual
    F, n = run.F, cc.n_stages
    if cc.builder == "moments_ext":
        fn, cert = build_h_moments_ext(F, _fn(cc.f, "f"), _fn(cc.g, "g"), n, tol)
    elif cc.builder == "weighted":
        fn, cert = build_h_weighted(F, _fn(cc.f1, "f1"), _fn(cc.f2, "f2"), _fn(cc.g, "g"), n, tol)
    elif cc.builder == "g_finite_moment":
        fn, cert = build_g_finite_moment(F, max(n, 1), tol=tol)
    elif cc.builder == "flatten":
        fn, cert = flatten_to_sublinear(_fn(cc.f, "f"), F, max(n, 1), tol)
    else:
        fn, cert = build_h_convex_inverse(F, run.tau, run.need_c(), n, tol)
    _write_json(run.out / "function.json", fn.to_dict())
    _write_json(run.out / "certificate.json", cert.to_dict())
    run.summary["construction"] = {"builder": cc.builder, "passed": cert.passed,
                                   "max_residual": cert.max_residual, "flags": cert.invariant_flags,
                                   "notes": cert.notes}
    run.verdicts["certificate"] = cert.passed


def _verify(run: _Run) -> None:
    vc = run.cfg.verify
    if vc is None:
        raise PreconditionError("the verify workflow needs a verify section")
    F = run.F
    if vc.check == "growth_bound":
        rep = verify_growth_bound(F, _fn(vc.h, "h"), run.need_c(), vc.N, vc.step, vc.cutoff, vc.strict)
        emit_plotdata(rep, run.out / "growth.csv")
        run.summary["growth_bound"] = rep.to_dict()
        run.verdicts["growth_bounded"] = rep.bounded
    elif vc.check == "semi_moment":
        c = run.need_c()
        cutoff = vc.cutoff if vc.cutoff is not None else 1e3
        eta = discretize(F, vc.step, cutoff, allow_heavy_truncation=True).shifted(-round(c / vc.step) * vc.step)
        rep = find_x0_semi_moment(eta, _fn(vc.h, "h"), strict=vc.strict)
        run.summary["semi_moment"] = rep.to_dict()
        run.verdicts["x0_found"] = rep.found
    elif vc.check == "hypotheses":
        rep = proposition_hypotheses_check(F, run.tau, _fn(vc.r, "r"), run.need_c(), step=vc.step,
                                           cutoff=vc.cutoff)
        run.summary["hypotheses"] = rep.to_dict()
        run.verdicts["hypotheses_applicable"] = rep.status == "applicable"
    else:
        spec = run.need_grid()
        x = np.geomspace(max(spec.step, max(vc.y_values) + spec.step), spec.cutoff, 200)
        rep = check_tail_ratio_lower(F, vc.y_values, x, run.cfg.tolerances.residual)
        run.summary["tail_ratio"] = rep.to_dict()
        run.verdicts["tail_ratio_lower"] = rep.passed


WORKFLOWS: dict[str, Callable[[_Run], None]] = {
    "ratio": _ratio, "tilt": _tilt, "construct": _construct, "verify": _verify,
}


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> int:
    """Run the configured workflow; returns the exit code."""
    out_dir = Path(out if out is not None else cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        r = _Run(cfg, out_dir)
        if cfg.workflow == "all":
            steps = ["ratio"]
            if not r.F.is_heavy_tailed:
                steps.append("tilt")
            steps += [w for w, sec in (("construct", cfg.construct_section), ("verify", cfg.verify)) if sec is not None]
        else:
            steps = [cfg.workflow]
        for step in steps:
            WORKFLOWS[step](r)
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericRangeError as exc:
        print(f"numeric range exceeded: {exc}", file=sys.stderr)
        return EXIT_RANGE
    r.summary["verdicts"] = r.verdicts
    _write_json(out_dir / "summary.json", r.summary)
    for name, ok in r.verdicts.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(r.verdicts.values()) else EXIT_VERDICT


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stoppedsums", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("ratio", "tilt", "construct", "verify", "all"):
        s = sub.add_parser(name, help=f"run the {name} workflow")
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--tol", type=float, help="residual tolerance (overrides the config)")
        s.add_argument("--stages", type=int, help="construction stages (overrides the config)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        raw = load_config(args.config, workflow=args.command).model_dump(by_alias=True)
        if args.tol is not None:
            raw["tolerances"]["residual"] = args.tol
        if args.stages is not None:
            if raw["construct"] is None:
                raise PreconditionError("--stages needs a construct section in the config")
            raw["construct"]["n_stages"] = args.stages
        cfg = parse_config(raw)
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return run(cfg, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
