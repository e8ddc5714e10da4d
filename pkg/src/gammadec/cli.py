"""Command-line entry point.

Exit codes: 0 success, 2 check failed, 3 inconclusive, 4 preconditions
not met, 64 usage error, 65 invalid input data.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bandit_sim as bs
from . import dec_solver as ds
from . import example_env as ee
from . import io
from . import theorem_lab as tl
from .errors import CapacityError, ConfigurationError, InputError
from .model_core import Noise

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_PRECONDITIONS = 0, 2, 3, 4
EXIT_USAGE, EXIT_DATA = 64, 65

THEOREM_EXIT = {tl.PASS: EXIT_OK, tl.FAIL: EXIT_FAIL, tl.INCONCLUSIVE: EXIT_INCONCLUSIVE, tl.PRECONDITIONS: EXIT_PRECONDITIONS}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a positive integer or 'auto'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("expected a positive integer or 'auto'")
    return n


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=default, help="master seed (required by stochastic commands)")
    p.add_argument("--threads", type=_threads, default=argparse.SUPPRESS if suppress else 1, help="worker threads: N or auto")
    p.add_argument("--out", default=default, help="output path (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default=default, help="output format")
    return p


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="gammadec", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    leaf = [_global_flags(True)]
    cmds = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    dec = cmds.add_parser("dec", help="constrained gamma-DEC").add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("compute", "sup"):
        p = dec.add_parser(name, parents=leaf)
        p.add_argument("--class", dest="class_path", required=True)
        if name == "compute":
            p.add_argument("--reference", required=True, help="model id in the class or a model JSON file")
        else:
            p.add_argument("--family", default="constants:step=0.05,members", help="reference family")
        p.add_argument("--gamma", type=float, required=True)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--method", default="clause", choices=("brute", "clause", "clause_enum", "lagrangian"))
        p.add_argument("--grid", type=int, default=ds.DEFAULT_GRID)
        p.add_argument("--delta-strict", type=float, default=ds.DEFAULT_DELTA_STRICT)
        p.add_argument("--no-reference-in-max", action="store_true", help="restrict the adversary to the class itself")

    ex = cmds.add_parser("example", help="the hypercube-plus-arms example").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ex.add_parser("certify", parents=leaf)
    _example_flags(p)
    p.add_argument("--policy", default="uniform", help="exp3p, uniform, ucb1, etc:m or a JSON file with an arm occupancy")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--eps", type=float, default=None)
    p = ex.add_parser("build", parents=leaf)
    _example_flags(p)
    p.add_argument("--strategy", default="full", help="full or sampled:N")
    p.add_argument("--cap", type=int, default=ee.DEFAULT_MATERIALIZE_CAP)
    p.add_argument("--noise", default="gaussian", choices=[n.value for n in Noise])
    p.add_argument("--reference-out", default=None, help="also write the constant reference model here")

    sim = cmds.add_parser("sim", help="bandit simulation").add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("run", "stopped"):
        p = sim.add_parser(name, parents=leaf)
        p.add_argument("--class", dest="class_path", required=True)
        p.add_argument("--model", required=True, help="ground-truth model id")
        if name == "run":
            p.add_argument("--alg", required=True)
        else:
            p.add_argument("--base", required=True)
            p.add_argument("--reference", required=True)
            p.add_argument("--a", type=float, required=True)
        p.add_argument("--T", type=int, required=True)
        p.add_argument("--trials", type=int, required=True)
        p.add_argument("--gamma", type=float, default=1.0)
        p.add_argument("--optimum", type=float, default=None, help="override f* when the class is a slice of a larger model")

    th = cmds.add_parser("theorem", help="lower-bound pipeline").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = th.add_parser("check", parents=leaf)
    p.add_argument("--class", dest="class_path", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--alg", required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--verify-trials", type=int, default=None)
    p.add_argument("--dec-method", default="clause", choices=("brute", "clause", "clause_enum", "lagrangian"))
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--force", action="store_true", help="run even when preconditions fail (diagnostic only)")
    return root


def _example_flags(p):
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", "--K", dest="K", type=int, required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--T", type=int, required=True)


# ---------------------------------------------------------------------------
# commands


def _need_seed(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required for stochastic commands")
    return args.seed


def _format(args, default: str, allowed=("json", "csv")) -> str:
    fmt = args.format or default
    if fmt not in allowed:
        raise UsageError(f"--format {fmt} is not available for this command")
    return fmt


def _policy(text: str, T: int) -> bs.Policy:
    if text.startswith("etc:") and text.endswith("T/10"):
        return bs.EtcGreedy(T // 10)
    return bs.make_policy(text)


def cmd_dec(args):
    model_class = io.load_class(args.class_path)
    query = ds.DecQuery(args.gamma, args.eps, include_reference_in_max=not args.no_reference_in_max)
    _format(args, "json", ("json",))
    kw = {"grid": args.grid, "delta_strict": args.delta_strict}
    if args.action == "compute":
        ref = io.resolve_model(model_class, args.reference)
        res = ds.dec_constrained(model_class, ref, query, method=args.method, **kw)
        summary = f"dec = {res.value:.10g} ({res.bound_direction}, {res.method})"
        return res.to_dict(), None, summary, EXIT_OK, [args.class_path]
    fam = ds.ReferenceFamily.parse(args.family)
    res = ds.dec_sup_reference(model_class, query, fam, method=args.method, **kw)
    summary = f"sup dec = {res.value:.10g} at reference {res.reference.id}"
    return res.to_dict(), None, summary, EXIT_OK, [args.class_path]


CERT_COLUMNS = ["trial", "info_value", "regret_value", "info_ok", "regret_ok", "w_tilde_value", "k_tilde_occupancy"]


def cmd_example(args):
    spec = ee.ExampleSpec(args.d, args.K, args.gamma, args.T)
    if args.action == "build":
        _format(args, "json", ("json",))
        rng = np.random.default_rng(args.seed) if args.strategy.startswith("sampled") else None
        if rng is None and args.strategy != "full":
            raise InputError(f"unknown strategy {args.strategy!r}")
        if args.strategy.startswith("sampled"):
            _need_seed(args)
        cls = ee.materialize_class(spec, args.strategy, cap=args.cap, rng=rng, noise=Noise(args.noise))
        if args.reference_out:
            ref = ee.reference_for_class(cls, spec)
            io.atomic_write(args.reference_out, io.canonical_json({"id": ref.id, "mean": [float(x) for x in ref.mean], "noise": ref.noise.value}))
        return io.class_to_dict(cls), None, f"built {len(cls)} models over {cls.actions.n} actions", EXIT_OK, []

    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    inputs = []
    path = Path(args.policy)
    if args.policy.endswith(".json") or path.is_file():
        doc = io.parse_json(path.read_text(encoding="utf-8"))
        occ = np.asarray(doc["arm_occupancy"] if isinstance(doc, dict) else doc, dtype=float)
        if occ.shape != (spec.K,):
            raise InputError(f"arm occupancy must have {spec.K} entries")
        occs = np.tile(occ, (args.trials, 1))
        inputs.append(args.policy)
    else:
        seed = _need_seed(args)
        _, occs = ee.always_bot_occupancies(spec, _policy(args.policy, spec.T), args.trials, seed, threads=args.threads)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows = []
    for i, o in enumerate(occs):
        c = ee.certificate_check(ee.SparseDistribution.from_arm_occupancy(o / o.sum(), spec.d), spec, args.eps, rng=rng)
        rows.append(
            {
                "trial": i,
                "info_value": c.info_value,
                "regret_value": c.regret_value,
                "info_ok": bool(c.info_ok),
                "regret_ok": bool(c.regret_ok),
                "w_tilde_value": c.w_tilde_value,
                "k_tilde_occupancy": c.k_tilde_occupancy,
            }
        )
    passed = sum(r["info_ok"] and r["regret_ok"] for r in rows)
    code = EXIT_OK if passed == len(rows) else EXIT_FAIL
    doc = {"spec": {"d": spec.d, "K": spec.K, "gamma": spec.gamma, "T": spec.T}, "horizon_ok": spec.horizon_ok, "passed": passed, "trials": rows}
    return doc, (rows, CERT_COLUMNS), f"certificate passed in {passed}/{len(rows)} trials", code, inputs


SIM_COLUMNS = ["trial", "reg_gamma", "reg", "tau_a"]


def cmd_sim(args):
    seed = _need_seed(args)
    model_class = io.load_class(args.class_path)
    model = model_class.get(args.model)
    if args.action == "run":
        policy = _policy(args.alg, args.T)
    else:
        ref = io.resolve_model(model_class, args.reference)
        policy = bs.StoppedPolicy(_policy(args.base, args.T), ref, args.a)
    rep = bs.run_trials(model, policy, args.T, args.trials, args.gamma, seed, optimum=args.optimum, threads=args.threads)
    doc = {"model": model.id, "algorithm": policy.name, **rep.to_dict()}
    summary = f"{policy.name} on {model.id}: mean Reg_gamma = {rep.reg_gamma.mean():.6g} over {rep.n_trials} trials"
    return doc, (rep.csv_rows(), SIM_COLUMNS), summary, EXIT_OK, [args.class_path]


def cmd_theorem(args):
    seed = _need_seed(args)
    _format(args, "json", ("json",))
    model_class = io.load_class(args.class_path)
    ref = io.resolve_model(model_class, args.reference)
    cfg = tl.TheoremConfig(args.C, args.eps, args.T, args.gamma)
    policy = _policy(args.alg, args.T)
    out = tl.theorem_check(
        model_class, ref, policy, cfg, args.trials, seed,
        verify_trials=args.verify_trials, dec_method=args.dec_method, rho=args.rho, force=args.force, threads=args.threads,
    )
    summary = f"{out.status}: {policy.name}"
    if out.tail_prob is not None:
        summary += f", P(Reg_gamma/T >= {out.derived.threshold:.6g}) = {out.tail_prob:.4g} vs {out.derived.target_prob:.4g}"
    elif out.derived.violations:
        summary += f" ({len(out.derived.violations)} precondition violations)"
    return out.to_dict(), None, summary, THEOREM_EXIT[out.status], [args.class_path]


HANDLERS = {"dec": cmd_dec, "example": cmd_example, "sim": cmd_sim, "theorem": cmd_theorem}


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}


def dispatch(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        doc, table, summary, code, inputs = HANDLERS[args.command](args)
        fmt = args.format or ("csv" if table is not None and args.out and args.out.endswith(".csv") else "json")
        if fmt == "csv":
            if table is None:
                raise UsageError("this command has no CSV output")
            text = io.csv_text(*table)
        else:
            text = io.canonical_json(doc)
        if args.out:
            man = io.manifest(f"{args.command} {args.action}", io.to_jsonable(_params(args)), inputs, args.seed, [args.out])
            io.write_with_manifest(args.out, text, man)
            print(summary)
        else:
            sys.stdout.write(text)
            print(summary, file=sys.stderr)
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
