"""Command-line interface.

Exit codes: 0 success, 2 specification infeasible, 3 parse or model error,
4 solver failure.  ``GTLSYNTH_JOBS`` sets the default ADMM parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .central import DEFAULT_DISCOUNT, SynthesisError, assemble, synthesize_central
from .fmdp import ModelError, simulate_batch
from .graph import GraphError
from .logic import GroundingError, ParseError, UnsupportedFormula, classify, ground, parse, to_automaton
from .logic.monitor import Evaluator, label_atom_fn, verdicts
from .modelio import check_policy_scope, load_model, load_policy, policy_to_dict, save_model, save_policy
from .product import ProductError, build_product, product_summary, satisfaction_probability

log = logging.getLogger("gtlsynth")

EXIT_OK, EXIT_INFEASIBLE, EXIT_MODEL, EXIT_SOLVER = 0, 2, 3, 4
JOBS_ENV = "GTLSYNTH_JOBS"


class DeviationError(ModelError):
    """Raised under ``--deviations strict`` when a run depends on a documented deviation."""


# --- helpers -----------------------------------------------------------------------

def _parse_lambda(text: str | None, agents) -> dict[int, float] | None:
    """``0.9`` applies to every spec agent; ``1=0.9,3=0.8`` sets agents individually."""
    if text is None:
        return None
    text = str(text)
    try:
        if "=" not in text:
            return {i: float(text) for i in agents}
        out = {}
        for part in text.split(","):
            k, v = part.split("=")
            out[int(k)] = float(v)
        return out
    except ValueError:
        raise ModelError(f"cannot read lambda specification {text!r}") from None


def _lambdas_for(model, text):
    lam = _parse_lambda(text, model.specs.keys())
    if lam is None:
        return None
    unknown = set(lam) - set(model.specs)
    if unknown:
        raise ModelError(f"lambda given for agents without a specification: {sorted(unknown)}")
    return lam


def _deviations(args) -> list[str]:
    out = []
    discount = getattr(args, "discount", None)
    if discount is not None and discount < 1.0:
        out.append(f"discounted occupancy (discount {discount})")
    if getattr(args, "method", None) == "admm":
        if args.variant == "symmetric":
            out.append("symmetric z-update averaging")
        out.append("pairwise marginal averaging before policy extraction")
    return out


def _enforce(args, deviations):
    if getattr(args, "deviations", "report") == "strict" and deviations:
        raise DeviationError("run relies on deviations: " + "; ".join(deviations))


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _report(args, **fields) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {"command": " ".join(filter(None, [args.command, getattr(args, "method", None) or getattr(args, "bench", None)]))}
    doc.update({"version": __version__, "config": config})
    doc.update(fields)
    return doc


# --- commands ----------------------------------------------------------------------

def cmd_gtl_check(args) -> int:
    f = parse(args.formula)
    out = {"formula": str(f)}
    model = load_model(args.model) if args.model else None
    if model is not None:
        nodes = [args.node] if args.node is not None else list(model.agents)
        out["fragments"] = {}
        for i in nodes:
            g = ground(f, model.graph, i)
            try:
                aut = to_automaton(g)
                out["fragments"][str(i)] = {"fragment": classify(g).value, "automaton_states": aut.n_states}
            except UnsupportedFormula as e:
                out["fragments"][str(i)] = {"fragment": "unsupported", "reason": str(e)}
    if args.trajectory:
        if model is None:
            raise ModelError("--trajectory needs --model")
        states = _read_trajectory(args.trajectory, model)
        ev = Evaluator(model.graph, label_atom_fn(states, model.agents, model.node_label), states.shape[0], states.shape[1])
        names = {1: "satisfied", 0: "violated", -1: "undetermined"}
        nodes = [args.node] if args.node is not None else list(model.agents)
        out["verdicts"] = {str(i): [names[int(c)] for c in verdicts(ev, f, i, args.time)] for i in nodes}
    print(json.dumps(out, indent=1))
    return EXIT_OK


def _read_trajectory(path, model) -> np.ndarray:
    """Trajectory files hold ``{"steps": [{"1": "h", ...}, ...]}`` or a list of such runs under ``runs``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ModelError(f"cannot read trajectory {path}: {e}") from None
    runs = doc["runs"] if "runs" in doc else [doc["steps"]]
    arr = []
    for steps in runs:
        rows = []
        for step in steps:
            try:
                rows.append([model.state_index(a, step[str(a)]) for a in model.agents])
            except (KeyError, ValueError):
                raise ModelError(f"trajectory step {step} does not name every agent's state") from None
        arr.append(rows)
    lengths = {len(r) for r in arr}
    if len(lengths) != 1 or 0 in lengths:
        raise ModelError("trajectory runs must be non-empty and of equal length")
    return np.array(arr, dtype=np.int64)


def cmd_product_dump(args) -> int:
    model = load_model(args.model)
    t0 = time.perf_counter()
    product = build_product(model, lambdas=_lambdas_for(model, args.__dict__.get("lam")), jobs=args.jobs)
    doc = {"agents": product_summary(product), "build_s": time.perf_counter() - t0}
    if args.dump_program:
        from .solver import dump_program

        asm = assemble(product, discount=args.discount)
        dump_program(asm.program, args.dump_program)
        doc["program"] = {"path": args.dump_program, "variables": asm.program.n}
    if args.out:
        _write_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=1))
    return EXIT_OK


def cmd_synth(args) -> int:
    deviations = _deviations(args)
    _enforce(args, deviations)
    model = load_model(args.model)
    lambdas = _lambdas_for(model, args.lam)
    timings = {}
    t0 = time.perf_counter()
    product = build_product(model, lambdas=lambdas, jobs=args.jobs)
    timings["product_s"] = time.perf_counter() - t0
    if args.dump_program:
        from .solver import dump_program

        lams = dict(lambdas or {})
        for i in product.spec_agents:
            lams.setdefault(i, product.agents[i].lam)
        dump_program(assemble(product, lams, args.discount).program, args.dump_program)
    t0 = time.perf_counter()
    extra = {}
    if args.method == "central":
        sol, policy, info = synthesize_central(model, lambdas, args.discount, product=product, backend=args.backend)
        solver = asdict(info)
    else:
        from . import admm

        res = admm.run(
            model, lambdas, beta=args.beta, iters=args.iters, gamma=args.gamma, discount=args.discount,
            variant=args.variant, jobs=args.jobs, product=product,
        )
        sol, policy = res.solution, res.policy
        hist = res.state.history
        solver = {
            "iterations": res.state.k,
            "converged": res.converged,
            "final_res_p": hist[-1][0],
            "final_res_d": hist[-1][1],
            "consistency_violation": res.consistency,
            "raw_objective": res.raw_objective,
        }
        if args.residuals_out:
            with open(args.residuals_out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "res_p", "res_d", "wall_ms"])
                for k, (rp, rd, ms) in enumerate(hist, start=1):
                    w.writerow([k, repr(rp), repr(rd), repr(ms)])
            extra["residuals"] = args.residuals_out
    timings["solve_s"] = time.perf_counter() - t0
    if args.policy_out:
        save_policy(policy, args.policy_out)
    report = _report(
        args,
        objective=sol.objective,
        satisfaction={str(i): v for i, v in sol.satisfaction.items()},
        margins={str(i): v for i, v in sol.margins.items()},
        timings=timings,
        solver=solver,
        deviations=deviations,
        **extra,
    )
    if args.out:
        doc = dict(report)
        doc["occupancy"] = {str(i): sol.pairs[i] for i in sol.pairs}
        doc["accepting_entry"] = {str(i): sol.entries[i] for i in sol.entries}
        doc["policy"] = policy_to_dict(policy)
        _write_json(args.out, doc)
    if args.report:
        _write_json(args.report, report)
    print(json.dumps({k: report[k] for k in ("command", "objective", "satisfaction", "timings", "deviations")}, indent=1, default=_json_default))
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    policy = load_policy(args.policy)
    check_policy_scope(model, policy)
    if args.horizon < 0 or args.samples < 1:
        raise ModelError("need horizon >= 0 and samples >= 1")
    rng = np.random.default_rng(args.seed)
    states = simulate_batch(model, policy, args.horizon, args.samples, rng)
    lengths = np.full(args.samples, args.horizon + 1)
    if args.kill_discount is not None:
        if not 0.0 < args.kill_discount <= 1.0:
            raise ModelError("kill discount must lie in (0, 1]")
        # stop each run before a transition with probability 1 - discount
        if args.kill_discount < 1.0:
            lengths = np.minimum(rng.geometric(1.0 - args.kill_discount, args.samples), args.horizon + 1)
    names = {1: "satisfied", 0: "violated", -1: "undetermined"}
    atom = label_atom_fn(states, model.agents, model.node_label)
    summary = {}
    for i, spec in model.specs.items():
        f = parse(spec.formula)
        codes = np.empty(args.samples, dtype=np.int8)
        for L in np.unique(lengths):
            sel = np.nonzero(lengths == L)[0]
            sub = states[sel, :L]
            ev = Evaluator(model.graph, label_atom_fn(sub, model.agents, model.node_label), len(sel), int(L))
            codes[sel] = verdicts(ev, f, i, 0)
        aut = to_automaton(ground(f, model.graph, i))
        # a run counts as satisfying unless refuted (safe) or unless witnessed (co-safe)
        if aut.polarity.name == "VIOLATION":
            ok = codes != 0
        else:
            ok = codes == 1
        freq = float(ok.mean())
        se = float(ok.std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else 0.0
        summary[str(i)] = {
            "formula": spec.formula,
            "counts": {names[c]: int(np.sum(codes == c)) for c in (1, 0, -1)},
            "frequency": freq,
            "stderr": se,
        }
    del atom
    if args.exact:
        product = build_product(model)
        for i in model.specs:
            prod = product.agents[i]
            table = policy.tables[i][prod.states[:, 1], prod.states[:, 0]]
            disc = args.kill_discount if args.kill_discount is not None else 1.0
            summary[str(i)]["exact_local"] = satisfaction_probability(prod, table, disc)
    if args.out:
        doc = {
            "agents": list(model.agents),
            "state_names": {str(a): list(model.local_states[a]) for a in model.agents},
            "seed": args.seed,
            "lengths": lengths.tolist(),
            "states": states.tolist(),
        }
        _write_json(args.out, doc)
    report = _report(args, verdicts=summary)
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import crop, metrics, urban

    if args.bench == "crop":
        cfg = crop.CropConfig(
            rows=args.rows, cols=args.cols, eps=args.eps, p=args.p, xi=args.xi, r=args.r,
            critical_fraction=args.critical_fraction, lam=args.lam, torus=args.torus,
            recovery=args.recovery, weighted_count=args.weighted_count, seed=args.seed,
        )
        save_model(crop.gen_crop(cfg), args.out)
        print(json.dumps({"model": args.out, "fields": args.rows * args.cols, "critical": crop.critical_fields(cfg)}))
    elif args.bench == "urban":
        counts = urban.ingest_crime_csv(args.crime_csv) if args.crime_csv else None
        if args.reduced:
            cfg = urban.urban_reduction(lam=args.lam, slip=args.slip, crime_counts=counts)
        else:
            cfg = urban.UrbanConfig(lam=args.lam, slip=args.slip, crime_counts=counts, neighbor_rule=args.neighbor_rule)
        model = urban.gen_urban(cfg)
        save_model(model, args.out)
        print(json.dumps({"model": args.out, "officers": len(model.agents), "specs": {str(i): s.formula for i, s in model.specs.items()}}))
    else:
        base = crop.CropConfig(rows=args.rows, cols=args.cols, eps=args.eps, recovery=args.recovery)
        rows = metrics.table1(base, horizon=args.horizon, samples=args.samples, seed=args.seed)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "xi", "lambda", "objective", "yield", "yield_stderr", "min_satisfaction", "wall_s"])
            for r in rows:
                w.writerow([r.p, r.xi, r.lam, repr(r.objective), repr(r.yield_mean), repr(r.yield_stderr),
                            repr(r.min_satisfaction), repr(r.wall_s)])
        print(json.dumps({"table": args.out, "rows": len(rows), "recovery": args.recovery}))
    return EXIT_OK


def cmd_scaling(args) -> int:
    from .bench import metrics

    sizes = [int(s) for s in str(args.sizes).split(",")]
    methods = [m for m in str(args.methods).split(",")]
    rows = metrics.scaling(sizes, args.reps, args.template, methods, args.iters, args.timeout)
    summary = metrics.summarize(rows)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "method", "reps", "per_iter_ms", "per_iter_ms_std", "total_ms", "total_ms_std"])
        for s in summary:
            w.writerow([s["M"], s["method"], s["reps"]] + [repr(s[k]) for k in ("per_iter_ms", "per_iter_ms_std", "total_ms", "total_ms_std")])
    failures = [asdict(r) for r in rows if r.status != "ok"]
    print(json.dumps({"summary": args.out, "rows": len(summary), "failures": failures}))
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtlsynth", description="Policy synthesis for factored MDPs with graph temporal logic specifications.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file supplying option values; command-line flags win")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    gtl = sub.add_parser("gtl", help="formula utilities").add_subparsers(dest="action", required=True)
    chk = gtl.add_parser("check", help="parse a formula, classify it and optionally monitor a trajectory")
    chk.add_argument("--formula", required=True)
    chk.add_argument("--model")
    chk.add_argument("--trajectory")
    chk.add_argument("--node", type=int)
    chk.add_argument("--time", type=int, default=0)
    chk.set_defaults(func=cmd_gtl_check)

    prod = sub.add_parser("product", help="product construction").add_subparsers(dest="action", required=True)
    dump = prod.add_parser("dump", help="summarise the per-agent products")
    dump.add_argument("--model", required=True)
    dump.add_argument("--out")
    dump.add_argument("--dump-program", help="also write the centralised LP as sparse triplets")
    dump.add_argument("--discount", type=float, default=DEFAULT_DISCOUNT)
    dump.add_argument("--jobs", type=int, default=_default_jobs())
    dump.set_defaults(func=cmd_product_dump, lam=None)

    syn = sub.add_parser("synth", help="policy synthesis").add_subparsers(dest="method", required=True)
    for name in ("central", "admm"):
        sp_ = syn.add_parser(name, help=f"{name} synthesis")
        sp_.add_argument("--model", required=True)
        sp_.add_argument("--lambda", dest="lam", help="threshold for every spec, or agent=value pairs")
        sp_.add_argument("--discount", type=float, default=DEFAULT_DISCOUNT)
        sp_.add_argument("--out", help="result document with occupancies and policies")
        sp_.add_argument("--policy-out", help="policy file for the simulate command")
        sp_.add_argument("--report", help="run report (JSON)")
        sp_.add_argument("--dump-program", help="write the centralised LP as sparse triplets")
        sp_.add_argument("--deviations", choices=("report", "strict"), default="report")
        sp_.add_argument("--jobs", type=int, default=_default_jobs())
        if name == "central":
            sp_.add_argument("--backend", choices=("ipm", "highs"), default="ipm")
        else:
            sp_.add_argument("--beta", type=float, default=1.0)
            sp_.add_argument("--iters", type=int, default=500)
            sp_.add_argument("--gamma", type=float, default=1e-3)
            sp_.add_argument("--variant", choices=("symmetric", "literal"), default="symmetric")
            sp_.add_argument("--residuals-out", help="CSV with iteration, res_p, res_d, wall_ms")
        sp_.set_defaults(func=cmd_synth)

    sim = sub.add_parser("simulate", help="seeded rollouts with monitored verdicts")
    sim.add_argument("--model", required=True)
    sim.add_argument("--policy", required=True)
    sim.add_argument("--horizon", type=int, default=50)
    sim.add_argument("--samples", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--kill-discount", type=float, help="stop every run before a step with probability 1-discount")
    sim.add_argument("--exact", action="store_true", help="also report each agent's exact local product-chain probability")
    sim.add_argument("--out", help="trajectory file")
    sim.add_argument("--report")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", help="benchmark generators").add_subparsers(dest="bench", required=True)
    bc = bench.add_parser("crop", help="write a crop model file")
    bu = bench.add_parser("urban", help="write an urban patrol model file")
    bt = bench.add_parser("table1", help="lambda sweep of the crop benchmark (CSV)")
    for b in (bc, bt):
        b.add_argument("--rows", type=int, default=3)
        b.add_argument("--cols", type=int, default=3)
        b.add_argument("--eps", type=float, default=0.1)
        b.add_argument("--recovery", choices=("gradual", "one-shot"), default="gradual")
        b.add_argument("--seed", type=int, default=0)
        b.add_argument("--out", required=True)
    bc.add_argument("--p", type=float, default=0.1)
    bc.add_argument("--xi", type=float, default=0.1)
    bc.add_argument("--r", type=float, default=10.0)
    bc.add_argument("--critical-fraction", type=float, default=0.5)
    bc.add_argument("--lambda", dest="lam", type=float, default=0.9)
    bc.add_argument("--torus", action="store_true")
    bc.add_argument("--weighted-count", action="store_true")
    bt.add_argument("--horizon", type=int, default=50)
    bt.add_argument("--samples", type=int, default=2000)
    bu.add_argument("--reduced", action="store_true", help="two officers and two critical intersections")
    bu.add_argument("--lambda", dest="lam", type=float, default=0.9)
    bu.add_argument("--slip", type=float, default=0.0)
    bu.add_argument("--crime-csv")
    bu.add_argument("--neighbor-rule", choices=("critical", "overlap"), default="critical")
    bu.add_argument("--out", required=True)
    for b in (bc, bu, bt):
        b.set_defaults(func=cmd_bench)

    sc = sub.add_parser("scaling", help="timing of both methods over model sizes (CSV)")
    sc.add_argument("--sizes", default="16,36,64")
    sc.add_argument("--reps", type=int, default=1)
    sc.add_argument("--template", choices=("ring", "lattice"), default="ring")
    sc.add_argument("--methods", default="admm,central")
    sc.add_argument("--iters", type=int, default=5)
    sc.add_argument("--timeout", type=float)
    sc.add_argument("--out", required=True)
    sc.set_defaults(func=cmd_scaling)
    return p


def _explicit_dests(parser: argparse.ArgumentParser, argv: list[str]) -> set[str]:
    """Destinations whose options appear literally on the command line."""
    given = set()
    stack = [parser]
    while stack:
        ps = stack.pop()
        for action in ps._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
                continue
            for opt in action.option_strings:
                if any(a == opt or a.startswith(opt + "=") for a in argv):
                    given.add(action.dest)
    return given


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ModelError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(cfg, dict):
            raise ModelError("config file must hold a JSON object")
        given = _explicit_dests(parser, argv)
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest == "lambda":
                dest = "lam"
            if not hasattr(args, dest):
                raise ModelError(f"config key {key!r} is not an option of this command")
            if dest not in given:
                setattr(args, dest, value)
    return args


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SynthesisError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.infeasible:
            if e.violated:
                print(f"agents with unsatisfiable specifications: {list(e.violated)}", file=sys.stderr)
            return EXIT_INFEASIBLE
        return EXIT_SOLVER
    except (ModelError, GraphError, ParseError, GroundingError, UnsupportedFormula, ProductError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except np.linalg.LinAlgError as e:
        print(f"error: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
