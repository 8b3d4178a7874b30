"""Command-line front end: ``eswitch <subcommand> ...``.

Exit status is 0 on success, 1 on bad input and 2 when a model violates an
internal invariant.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .bounds import BoundInapplicable, ReferenceSequence, best_reference, bound_switching_method, empirical_regret
from .core import EhmmSpec, EvidenceCollapse, SpecError, invest, run, validate_spec
from .descriptors import ModelDescriptor, theorem_bound
from .infer import marginals, viterbi
from .ingest import ingest, load_reference, matrix_table, reference_table, table
from .models import fixed_share_batch
from .scenario import ScenarioConfig, generate, load_config

SM_GRID = np.linspace(0.0, 1.0, 1001)


class UsageError(ValueError):
    """Bad arguments or model descriptors."""


def build_model(text: str, k: int) -> tuple[ModelDescriptor, EhmmSpec]:
    try:
        desc = ModelDescriptor.parse(text)
        return desc, desc.build(k)
    except (SpecError, ValueError) as exc:
        raise UsageError(f"model {text!r}: {exc}") from None


def split_models(text: str) -> list[str]:
    return [m.strip() for line in text.splitlines() for m in line.split(";") if m.strip()]


# -------------------------------------------------------------------- output


def emit(header, rows, args) -> None:
    """Write a CSV table, converting ``*_nats`` columns to bits on request."""
    rows = [list(r) for r in rows]
    if getattr(args, "bits", False):
        cols = [j for j, h in enumerate(header) if h.endswith("_nats")]
        header = [h[:-5] + "_bits" if h.endswith("_nats") else h for h in header]
        for r in rows:
            for j in cols:
                if isinstance(r[j], float):
                    r[j] = r[j] / math.log(2.0)
    write(table(header, rows), getattr(args, "out", None))


def write(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ----------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    k = ingest(args.data).shape[1] if args.data else args.k
    if k is None:
        raise UsageError("validate needs --k or --data")
    bad = 0
    for text in args.model:
        _, spec = build_model(text, k)
        problems = validate_spec(spec, args.horizon)
        if problems:
            bad += 1
            for p in problems:
                print(f"{text}: {p}")
        else:
            print(f"{text}: ok (k={k}, horizon={args.horizon})")
    return 2 if bad else 0


def cmd_predict(args) -> int:
    x = ingest(args.data)
    t, k = x.shape
    _, spec = build_model(args.model, k)
    res = run(spec, x)
    header = ["round", *(f"p{j}" for j in range(k)), "loss_nats"]
    emit(header, ([i + 1, *map(float, res.predictions[i]), float(res.losses[i])] for i in range(t)), args)
    return 0


def cmd_evaluate(args) -> int:
    x = ingest(args.data)
    t, k = x.shape

    def one(text):
        desc, spec = build_model(text, k)
        res = run(spec, x)
        return [desc.name, desc.param_text, t, k, res.log_evidence, int(res.edges.sum())]

    rows = _sweep(one, args.model, args.jobs)
    emit(["model", "params", "t", "k", "codelength_nats", "edges"], rows, args)
    return 0


def _reference(args, k: int) -> ReferenceSequence:
    if args.reference:
        experts = load_reference(args.reference)
    elif args.experts:
        experts = [int(v) for v in args.experts.replace(",", " ").split()]
    else:
        raise UsageError("bounds needs --reference or --experts")
    if not experts or max(experts) >= k:
        raise UsageError(f"reference must be nonempty with experts below k={k}")
    return ReferenceSequence.of(experts)


def cmd_bounds(args) -> int:
    ref = _reference(args, args.k)
    rows = []
    for text in args.model:
        desc, spec = build_model(text, args.k)
        try:
            bound, note = theorem_bound(desc, spec, ref)
        except BoundInapplicable as exc:
            bound, note = math.nan, str(exc)
        rows.append([desc.name, desc.param_text, ref.t, args.k, ref.m, ref.drift, bound, note])
    emit(["model", "params", "t", "k", "m", "d", "bound_nats", "note"], rows, args)
    return 0


@dataclass
class Manifest:
    input: str
    models: list[str]
    mode: str = "predict"
    reference: str = "best"
    blocks: int = 1
    output: str | None = None
    jobs: int = 1


def load_manifest(args) -> Manifest:
    cfg = load_config(args.config) if args.config else {}
    known = {"input", "models", "mode", "reference", "blocks", "output", "jobs"}
    extra = set(cfg) - known
    if extra:
        raise UsageError(f"unknown manifest keys: {', '.join(sorted(extra))}")
    models = list(args.model or []) or split_models(cfg.get("models", ""))
    data = args.data or cfg.get("input")
    if not data or not models:
        raise UsageError("report needs input data and at least one model")
    m = Manifest(
        input=data,
        models=models,
        mode=args.mode or cfg.get("mode", "predict"),
        reference=args.reference or cfg.get("reference", "best"),
        blocks=args.blocks if args.blocks is not None else int(cfg.get("blocks", 1)),
        output=args.out or cfg.get("output"),
        jobs=args.jobs if args.jobs is not None else int(cfg.get("jobs", 1)),
    )
    if m.mode not in ("predict", "invest"):
        raise UsageError("mode must be predict or invest")
    if m.blocks < 1 or m.jobs < 1:
        raise UsageError("blocks and jobs must be positive")
    return m


def report_rows(x: np.ndarray, models: list[str], mode: str, ref: ReferenceSequence | None, ref_label: str, jobs: int = 1):
    """One row per model against ``ref``; the Switching Method adds a row against the best grid rate."""
    t, k = x.shape

    def one(text):
        desc, spec = build_model(text, k)
        if mode == "predict":
            codelength = run(spec, x).log_evidence
        else:
            codelength = -invest(spec, x).log_wealth
        rows = []
        if ref is None:
            rows.append([desc.name, desc.param_text, "", t, k, "", "", math.nan, math.nan, math.nan, "no reference"])
        else:
            regret = empirical_regret(spec, x, ref, log_evidence=codelength)
            try:
                bound, note = theorem_bound(desc, spec, ref)
            except BoundInapplicable as exc:
                bound, note = math.nan, str(exc)
            slack = bound - regret
            rows.append([desc.name, desc.param_text, ref_label, t, k, ref.m, ref.drift, regret, bound, slack, note])
        if desc.name == "sm":
            best = float(np.min(fixed_share_batch(x, SM_GRID, desc.prior(k))))
            regret = codelength - best
            bound = bound_switching_method(t)
            rows.append(
                [desc.name, desc.param_text, "fs-grid(alphas=0:0.001:1)", t, k, "", "", regret, bound, bound - regret,
                 "against the best fixed share rate"]
            )
        return rows

    out = []
    for rows in _sweep(one, models, jobs):
        out.extend(rows)
    return out


REPORT_HEADER = [
    "model", "params", "reference", "t", "k", "m", "d",
    "empirical_regret_nats", "bound_nats", "slack_nats", "note",
]


def cmd_report(args) -> int:
    man = load_manifest(args)
    x = ingest(man.input, man.mode)
    t, k = x.shape
    if man.reference == "none":
        ref, label = None, ""
    elif man.reference == "best":
        ref, label = best_reference(x, man.blocks), f"best(m<={man.blocks})"
    else:
        experts = load_reference(man.reference)
        if len(experts) != t or (experts and max(experts) >= k):
            raise UsageError(f"reference must have {t} rounds with experts below {k}")
        ref, label = ReferenceSequence.of(experts), "file"
    args.out = man.output
    emit(REPORT_HEADER, report_rows(x, man.models, man.mode, ref, label, man.jobs), args)
    return 0


def cmd_marginals(args) -> int:
    x = ingest(args.data)
    t, k = x.shape
    _, spec = build_model(args.model, k)
    g = marginals(spec, x)
    header = ["round", *(f"p{j}" for j in range(k)), "log_cut_nats", "retained"]
    rows = ([i + 1, *map(float, g.probs[i]), float(g.log_cut[i]), float(g.retained[i])] for i in range(t))
    emit(header, rows, args)
    return 0


def cmd_viterbi(args) -> int:
    x = ingest(args.data)
    _, spec = build_model(args.model, x.shape[1])
    path = viterbi(spec, x)
    write(reference_table(path.experts), args.out)
    scale = math.log(2.0) if args.bits else 1.0
    unit = "bits" if args.bits else "nats"
    print(f"log_joint_{unit}={path.log_joint / scale:.9g}", file=sys.stderr)
    return 0


def cmd_invest(args) -> int:
    x = ingest(args.data, "invest")
    t, k = x.shape
    _, spec = build_model(args.model, k)
    res = invest(spec, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = np.einsum("ij,ij->i", res.portfolios, x)
        wealth = np.exp(np.cumsum(np.log(gains)))
    if res.ruined:
        wealth[res.ruin_round - 1 :] = 0.0
    rows = ([i + 1, *map(float, res.portfolios[i]), float(wealth[i])] for i in range(t))
    emit(["round", *(f"w{j}" for j in range(k)), "wealth"], rows, args)
    print(f"wealth={res.wealth:.9g}" + (f" ruined at round {res.ruin_round}" if res.ruined else ""), file=sys.stderr)
    return 0


def cmd_generate(args) -> int:
    cfg = ScenarioConfig.from_mapping(load_config(args.config))
    x, ref = generate(cfg)
    write(matrix_table(x, exact=True), args.out)
    if args.reference:
        write(reference_table(ref), args.reference)
    return 0


def _sweep(fn, items, jobs: int):
    """Map ``fn`` over ``items``, in input order, using up to ``jobs`` threads."""
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", "-o", help="output file (default: stdout)")
    common.add_argument("--bits", action="store_true", help="report codelengths in bits instead of nats")

    p = argparse.ArgumentParser(prog="eswitch", description="Expert switching models, regret bounds and inference.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check model invariants up to a horizon")
    s.add_argument("--model", "-m", action="append", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--data", help="take k from this likelihood file")
    s.add_argument("--horizon", type=int, default=50)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("predict", parents=[common], help="per-round predictive distributions")
    s.add_argument("data")
    s.add_argument("--model", "-m", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="total codelength of each model")
    s.add_argument("data")
    s.add_argument("--model", "-m", action="append", required=True)
    s.add_argument("--jobs", "-j", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bounds", parents=[common], help="regret bounds for a reference sequence")
    s.add_argument("--model", "-m", action="append", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--reference", help="round,expert CSV")
    s.add_argument("--experts", help="comma-separated expert sequence")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("report", parents=[common], help="empirical regret against bounds")
    s.add_argument("data", nargs="?")
    s.add_argument("--config", "-c", help="manifest file")
    s.add_argument("--model", "-m", action="append")
    s.add_argument("--mode", choices=["predict", "invest"])
    s.add_argument("--reference", help="'best', 'none' or a round,expert CSV")
    s.add_argument("--blocks", type=int, help="block budget for the best reference")
    s.add_argument("--jobs", "-j", type=int)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("marginals", parents=[common], help="smoothed expert posteriors")
    s.add_argument("data")
    s.add_argument("--model", "-m", required=True)
    s.set_defaults(func=cmd_marginals)

    s = sub.add_parser("viterbi", parents=[common], help="most likely expert sequence")
    s.add_argument("data")
    s.add_argument("--model", "-m", required=True)
    s.set_defaults(func=cmd_viterbi)

    s = sub.add_parser("invest", parents=[common], help="run a model as a portfolio on return data")
    s.add_argument("data")
    s.add_argument("--model", "-m", required=True)
    s.set_defaults(func=cmd_invest)

    s = sub.add_parser("generate", help="synthetic scenario from a config file")
    s.add_argument("config")
    s.add_argument("--out", "-o", help="likelihood CSV (default: stdout)")
    s.add_argument("--reference", help="write the planted reference here")
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpecError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, EvidenceCollapse) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
