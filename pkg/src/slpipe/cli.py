"""Command-line front end.

Every command writes its artifacts into ``<out>/<hash>/`` where ``hash`` is
derived from the command, its options and the bytes of every input file, so
identical invocations reuse the same directory and produce identical files.

Exit codes: 0 success, 1 usage or schema error, 2 infeasible, 3 budget.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import random
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import collective_sim, fixtures, miqp, optimizer, pipeline_sim, plotting
from .errors import (
    BudgetExceededError,
    InfeasibleError,
    InfeasibleMemoryError,
    SchemaError,
    SlpipeError,
)
from .perf_model import PartitionPlan
from .profiles import dumps, load_inputs, merge_layers, model_to_doc, parse_model

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3
CRITERION_NAMES = {"compute": "compute_time", "param": "param_size", "act": "act_size"}
DEFAULT_WEIGHTS = "1:0,1:2^16,1:2^19,1:2^22"

log = logging.getLogger("slpipe")


class UsageError(SlpipeError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    model: Path | None = None
    catalog: Path | None = None
    workload: Path | None = None
    weights: list = field(default_factory=list)
    threshold: float = 0.8
    merge_to: int | None = None
    criterion: str = "compute_time"
    out: Path = Path("runs")
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def digest(self) -> str:
        h = hashlib.sha256()
        opts = {
            "command": self.command, "weights": self.weights, "threshold": self.threshold,
            "merge_to": self.merge_to, "criterion": self.criterion, "seed": self.seed,
            "extra": {k: v for k, v in self.extra.items() if k != "plan"},
        }
        h.update(json.dumps(opts, sort_keys=True).encode())
        for p in (self.model, self.catalog, self.workload, self.extra.get("plan")):
            h.update(b"\0")
            if p is not None:
                h.update(Path(p).read_bytes())
        return h.hexdigest()[:16]

    def run_dir(self) -> Path:
        d = self.out / f"{self.command}-{self.digest()}"
        d.mkdir(parents=True, exist_ok=True)
        return d


# -- argument parsing ---------------------------------------------------------------

def parse_number(text: str) -> float:
    text = text.strip()
    m = re.fullmatch(r"([0-9.eE+-]+)\s*(?:\^|\*\*)\s*([0-9.eE+-]+)", text)
    try:
        if m:
            return float(m.group(1)) ** float(m.group(2))
        return float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def parse_weights(text: str) -> list[tuple[float, float]]:
    pairs = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"weight pair must look like a1:a2, got {item!r}")
        pairs.append((parse_number(parts[0]), parse_number(parts[1])))
    for a1, a2 in pairs:
        try:
            optimizer.Objective(a1, a2)
        except ValueError as exc:
            raise UsageError(f"bad weight pair {a1}:{a2}: {exc}") from None
    return pairs


def _add_inputs(p, required=True):
    p.add_argument("--model", type=Path, required=required, help="layer profile JSON")
    p.add_argument("--catalog", type=Path, required=required, help="resource catalog JSON")
    p.add_argument("--workload", type=Path, required=required, help="workload JSON")
    p.add_argument("--merge-to", type=int, default=None, metavar="N",
                   help="merge layers down to N before solving")
    p.add_argument("--criterion", choices=sorted(CRITERION_NAMES), default="compute",
                   help="balancing criterion for --merge-to")


def build_parser() -> argparse.ArgumentParser:
    # --out/--seed/-v are accepted before or after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS,
                        help="root directory for runs (default: runs)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    ap = _Parser(prog="slpipe", parents=[common],
                 description="Partition and resource co-optimizer for pipelined serverless training.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _sub = sub.add_parser

    def add_sub(name, **kw):
        return _sub(name, parents=[common], **kw)

    sub.add_parser = add_sub

    p = sub.add_parser("optimize", help="solve one weighted objective exactly")
    _add_inputs(p)
    p.add_argument("--weights", default="1:0", help="a1:a2 (cost weight : time weight)")

    p = sub.add_parser("pareto", help="sweep weight pairs and recommend a plan")
    _add_inputs(p)
    p.add_argument("--weights", default=DEFAULT_WEIGHTS, help="a1:a2[,a1:a2...]")
    p.add_argument("--threshold", type=float, default=0.8,
                   help="minimum speedup-per-cost ratio for a faster plan")

    p = sub.add_parser("simulate", help="simulate a plan and compare with the model")
    _add_inputs(p, required=False)
    p.add_argument("--plan", type=Path, help="plan JSON (as written by optimize)")
    p.add_argument("--battery", type=int, default=0, metavar="N",
                   help="instead of --plan, compare N random instances")

    p = sub.add_parser("collective", help="simulate storage-based scatter-reduce")
    p.add_argument("--n", type=int, required=True, help="number of workers")
    p.add_argument("--size", type=float, required=True, help="gradient size (MB)")
    p.add_argument("--bw", type=float, required=True, help="per-worker bandwidth (MB/s)")
    p.add_argument("--t-lat", type=float, default=0.0, help="per-request latency (s)")
    p.add_argument("--protocol", choices=list(collective_sim.PROTOCOLS) + ["both"],
                   default="both")
    p.add_argument("--verify", action="store_true",
                   help="reduce random vectors and compare with a direct average")

    p = sub.add_parser("emit-miqp", help="write the linearized program in LP format")
    _add_inputs(p)
    p.add_argument("--weights", default="1:0")
    p.add_argument("--pure-milp", action="store_true", help="linearize the cost product too")
    p.add_argument("--check-plan", action="store_true",
                   help="check the exact optimum against the emitted constraints")

    p = sub.add_parser("merge", help="merge contiguous layers")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--merge-to", type=int, required=True, metavar="N")
    p.add_argument("--criterion", choices=sorted(CRITERION_NAMES), default="compute")
    return ap


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(command=args.command, out=args.out, seed=args.seed)
    for name in ("model", "catalog", "workload"):
        val = getattr(args, name, None)
        if val is not None and not val.is_file():
            raise UsageError(f"--{name}: no such file: {val}")
        setattr(cfg, name, val)
    if getattr(args, "weights", None):
        cfg.weights = parse_weights(args.weights)
    if getattr(args, "threshold", None) is not None:
        if not (args.threshold > 0 and math.isfinite(args.threshold)):
            raise UsageError("--threshold must be positive")
        cfg.threshold = args.threshold
    cfg.merge_to = getattr(args, "merge_to", None)
    cfg.criterion = CRITERION_NAMES[getattr(args, "criterion", "compute")]
    return cfg


# -- helpers ----------------------------------------------------------------------------

def _load(cfg: RunConfig):
    for name in ("model", "catalog", "workload"):
        if getattr(cfg, name) is None:
            raise UsageError(f"--{name} is required")
    model, catalog, workload = load_inputs(cfg.model.read_text(), cfg.catalog.read_text(),
                                           cfg.workload.read_text())
    if cfg.merge_to is not None:
        model, _ = merge_layers(model, cfg.merge_to, cfg.criterion)
    return model, catalog, workload


def _write(path: Path, text: str):
    path.write_text(text)
    return path


def _one_weight(cfg):
    if len(cfg.weights) != 1:
        raise UsageError("this command takes exactly one weight pair")
    return optimizer.Objective(*cfg.weights[0])


def _plan_summary(plan, est, catalog) -> str:
    stages = ", ".join(f"L{lo + 1}-{hi + 1}@{int(catalog.mem[j])}MB"
                       for (lo, hi), j in zip(plan.partitions(), plan.stage_options()))
    return (f"stages: {stages}; dp={plan.dp_degree}; "
            f"t_iter={est.t_iter:.4f} s; c_iter={est.c_iter:.6g}")


# -- commands -------------------------------------------------------------------------------

def cmd_optimize(cfg: RunConfig, out=sys.stdout) -> int:
    model, catalog, workload = _load(cfg)
    objective = _one_weight(cfg)
    sol = optimizer.solve_exact(model, catalog, workload, objective,
                                optimizer.SearchOptions.from_env())
    run = cfg.run_dir()
    _write(run / "plan.json", dumps(sol.plan.to_doc(catalog)))
    est = dict(sol.estimate.to_doc(), objective=sol.objective_value,
               alpha_cost=objective.alpha_cost, alpha_time=objective.alpha_time)
    _write(run / "estimate.json", dumps(est))
    print(_plan_summary(sol.plan, sol.estimate, catalog), file=out)
    print(f"run directory: {run}", file=out)
    return EXIT_OK


PARETO_COLUMNS = ["weight_cost", "weight_time", "t_iter_s", "c_iter", "c_mem_mb", "d", "cuts",
                  "mem_choice", "recommended"]


def cmd_pareto(cfg: RunConfig, out=sys.stdout) -> int:
    model, catalog, workload = _load(cfg)
    front = optimizer.pareto_sweep(model, catalog, workload, cfg.weights,
                                   optimizer.SearchOptions.from_env())
    if not front.points:
        kinds = {type(exc) for _, exc in front.failures}
        if kinds and kinds <= {BudgetExceededError}:
            raise front.failures[0][1]
        raise InfeasibleError("no weight pair produced a feasible plan")
    rec = optimizer.recommend(front, cfg.threshold)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(PARETO_COLUMNS)
    for sol, w in front.points:
        e, p = sol.estimate, sol.plan
        wr.writerow([repr(w.alpha_cost), repr(w.alpha_time), repr(e.t_iter), repr(e.c_iter),
                     repr(e.c_mem), p.dp_degree, "".join(map(str, p.cuts)),
                     ",".join(map(str, p.mem_choice)), int(sol is rec)])
    run = cfg.run_dir()
    _write(run / "pareto.csv", buf.getvalue())
    _write(run / "recommended_plan.json", dumps(rec.plan.to_doc(catalog)))
    plotting.pareto_figure(front, rec, run / "pareto.png")
    for sol, w in front.points:
        mark = "*" if sol is rec else " "
        print(f"{mark} t_iter={sol.estimate.t_iter:10.4f} s  c_iter={sol.estimate.c_iter:14.6g}"
              f"  weights={w.alpha_cost:g}:{w.alpha_time:g}", file=out)
    for w, exc in front.failures:
        print(f"  weights={w.alpha_cost:g}:{w.alpha_time:g} failed: {exc}", file=out)
    print(f"recommended: {_plan_summary(rec.plan, rec.estimate, catalog)}", file=out)
    print(f"run directory: {run}", file=out)
    return EXIT_OK


def run_battery(n: int, seed: int):
    """Random instances and plans; returns (rows, max relative error)."""
    rng = random.Random(seed)
    rows = []
    while len(rows) < n:
        model, catalog, workload = fixtures.random_instance(rng)
        plan = fixtures.random_plan(rng, model, catalog, workload)
        try:
            cmp = pipeline_sim.compare_with_model(model, catalog, workload, plan)
        except InfeasibleMemoryError:
            continue
        rows.append((len(rows), model.L, plan.dp_degree, cmp["analytic_s"],
                     cmp["simulated_s"], cmp["relative_error"]))
    return rows, max((r[-1] for r in rows), default=0.0)


def cmd_simulate(cfg: RunConfig, out=sys.stdout) -> int:
    if cfg.extra.get("battery"):
        rows, worst = run_battery(cfg.extra["battery"], cfg.seed)
        run = cfg.run_dir()
        lines = ["instance,layers,dp_degree,analytic_s,simulated_s,relative_error"]
        lines += [",".join([str(a), str(b), str(c), repr(d), repr(e), repr(f)])
                  for a, b, c, d, e, f in rows]
        _write(run / "battery.csv", "\n".join(lines) + "\n")
        print(f"{len(rows)} random plans; max relative error {worst:.3e}", file=out)
        print(f"run directory: {run}", file=out)
        return EXIT_OK
    if cfg.extra.get("plan") is None:
        raise UsageError("simulate needs --plan or --battery N")
    model, catalog, workload = _load(cfg)
    try:
        plan = PartitionPlan.from_doc(json.loads(Path(cfg.extra["plan"]).read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError("plan", str(exc)) from None
    cmp = pipeline_sim.compare_with_model(model, catalog, workload, plan)
    run = cfg.run_dir()
    result = cmp["result"]
    _write(run / "gantt.csv", result.gantt_csv())
    report = {k: cmp[k] for k in ("simulated_s", "analytic_s", "relative_error")}
    _write(run / "comparison.json", dumps(report))
    plotting.gantt_figure(result, run / "gantt.png")
    print(f"simulated {cmp['simulated_s']:.6g} s, model {cmp['analytic_s']:.6g} s, "
          f"relative error {cmp['relative_error']:.3e}", file=out)
    print(f"run directory: {run}", file=out)
    return EXIT_OK


def cmd_collective(cfg: RunConfig, out=sys.stdout) -> int:
    x = cfg.extra
    n, size, bw, t_lat = x["n"], x["size"], x["bw"], x["t_lat"]
    if n < 2:
        raise UsageError(f"--n must be at least 2, got {n}")
    if not (size > 0 and bw > 0 and t_lat >= 0):
        raise UsageError("--size and --bw must be positive, --t-lat non-negative")
    three, piped = collective_sim.predicted_times(n, size, bw, t_lat)
    predicted = {collective_sim.THREE_PHASE: three, collective_sim.PIPELINED: piped}
    protocols = list(collective_sim.PROTOCOLS) if x["protocol"] == "both" else [x["protocol"]]

    values = None
    if x["verify"]:
        rng = np.random.default_rng(cfg.seed)
        length = max(4 * n, 64)
        values = [rng.standard_normal(length) for _ in range(n)]
    traces, doc = {}, {}
    run = cfg.run_dir()
    for proto in protocols:
        job = collective_sim.SyncJob(n, size, values)
        trace = collective_sim.run(proto, job, bw, t_lat)
        traces[proto] = trace
        doc[proto] = collective_sim.summary(trace, predicted[proto])
        _write(run / f"trace_{proto}.csv", trace.to_csv())
        print(f"{proto}: simulated {trace.finish_time:.6g} s, predicted {predicted[proto]:.6g} s",
              file=out)
        if values is not None:
            oracle = collective_sim.oracle_average(values)
            ok = all(np.array_equal(r, oracle) for r in trace.results)
            doc[proto]["reduce_verified"] = ok
            print(f"{proto}: reduce {'verified' if ok else 'MISMATCH'}", file=out)
            if not ok:
                raise SlpipeError(f"{proto} reduce result differs from the direct average")
    if len(protocols) == 2:
        red = 1.0 - piped / three
        doc["reduction"] = red
        print(f"{three:.6g} s vs {piped:.6g} s, {100 * red:.0f}% reduction", file=out)
    _write(run / "collective.json", collective_sim.summary_json(doc))
    plotting.collective_figure(traces, run / "collective.png")
    print(f"run directory: {run}", file=out)
    return EXIT_OK


def cmd_emit_miqp(cfg: RunConfig, out=sys.stdout) -> int:
    model, catalog, workload = _load(cfg)
    objective = _one_weight(cfg)
    pure = cfg.extra.get("pure_milp", False)
    mip = miqp.build_miqp(model, catalog, workload, objective, pure_milp=pure)
    run = cfg.run_dir()
    _write(run / "instance.lp", miqp.emit_lp(mip))
    _write(run / "instance.vars.json", miqp.sidecar_json(mip))
    c = mip.counts()
    print(f"{c['binary']} binary, {c['continuous']} continuous variables, "
          f"{c['constraints']} constraints", file=out)
    if cfg.extra.get("check_plan"):
        sol = optimizer.solve_exact(model, catalog, workload, objective,
                                    optimizer.SearchOptions.from_env())
        res = miqp.cross_check(model, catalog, workload, objective, sol.plan, mip=mip)
        if res["violations"] or res["relative_error"] > 1e-6:
            print(f"check failed: {len(res['violations'])} violations, "
                  f"objective error {res['relative_error']:.3e}", file=out)
            raise SlpipeError("exact optimum does not satisfy the emitted program")
        print(f"feasible, objective Δ ≤ 1e-6 (relative error {res['relative_error']:.1e})",
              file=out)
    print(f"run directory: {run}", file=out)
    return EXIT_OK


def cmd_merge(cfg: RunConfig, out=sys.stdout) -> int:
    text = cfg.model.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("model", f"invalid JSON: {exc}") from None
    model = parse_model(doc)
    try:
        merged, groups = merge_layers(model, cfg.merge_to, cfg.criterion)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run = cfg.run_dir()
    _write(run / "model.merged.json", dumps(model_to_doc(merged)))
    _write(run / "merge_map.json", dumps([[a, b] for a, b in groups]))
    print(f"{model.L} layers -> {merged.L}: "
          + " ".join(f"[{a}-{b}]" for a, b in groups), file=out)
    print(f"run directory: {run}", file=out)
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize, "pareto": cmd_pareto, "simulate": cmd_simulate,
    "collective": cmd_collective, "emit-miqp": cmd_emit_miqp, "merge": cmd_merge,
}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, BudgetExceededError):
        return EXIT_BUDGET
    if isinstance(exc, (InfeasibleError, InfeasibleMemoryError)):
        return EXIT_INFEASIBLE
    return EXIT_USAGE


def main(argv=None, out=sys.stdout, err=sys.stderr) -> int:
    try:
        args = build_parser().parse_args(argv)
        # filled here, not via set_defaults, which would leak into the shared
        # subcommand actions and overwrite values given before the subcommand
        for name, default in (("out", Path("runs")), ("seed", 0), ("verbose", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
    except UsageError as exc:
        print(json.dumps(exc.to_dict()), file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s", stream=err)
    try:
        cfg = config_from_args(args)
        if args.command == "simulate":
            cfg.extra = {"plan": str(args.plan) if args.plan else None,
                         "battery": args.battery}
        elif args.command == "collective":
            cfg.extra = {"n": args.n, "size": args.size, "bw": args.bw, "t_lat": args.t_lat,
                         "protocol": args.protocol, "verify": args.verify}
        elif args.command == "emit-miqp":
            cfg.extra = {"pure_milp": args.pure_milp, "check_plan": args.check_plan}
        return COMMANDS[args.command](cfg, out=out)
    except (SlpipeError, ValueError, OSError) as exc:
        doc = exc.to_dict() if isinstance(exc, SlpipeError) else \
            {"error": "usage", "message": str(exc)}
        print(json.dumps(doc, sort_keys=True), file=err)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
