"""Command-line front end for ingestion, training, evaluation, and
what-if inference.

Subcommands: ingest, gen-synth, fit, train, forecast, eval-grid, infer,
scenario. Every command is deterministic given its inputs and --seed and
writes only inside --out. Exit codes: 0 success, 2 usage, 3 data error,
4 numeric/configuration error.

Evidence grammar (repeatable ``--evidence`` flag)::

    province=ON            hard evidence on the discrete root
    refugee=N(15,2)        soft Gaussian finding on a continuous node
                           (sponsor, refugee, economic, total)
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from . import causal, metrics, report
from .causal import (
    CGNetwork,
    Evidence,
    HardProvince,
    SoftGaussian,
    decompose_total,
    fit_parameters,
    load_network,
    paper_snapshot_path,
    posterior_node,
    posterior_province,
    save_network,
)
from .data import (
    DEFAULT_MONTHS,
    DEFAULT_SEED,
    GeneratorConfig,
    Province,
    Stream,
    gen_synthetic,
    load_csv,
    write_csv,
)
from .errors import (
    ConfigError,
    DegenerateDenominatorError,
    FitError,
    FlowcastError,
    GapError,
    InconsistentEvidenceError,
    ModeError,
    ParseError,
    RangeError,
    ShapeError,
)
from .forecasters import BaseForecaster, make_forecaster

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 2, 3, 4

_DATA_ERRORS = (ParseError, GapError, RangeError, FitError, FileNotFoundError, ValueError)
_NUMERIC_ERRORS = (
    ConfigError,
    ShapeError,
    ModeError,
    DegenerateDenominatorError,
    InconsistentEvidenceError,
)

EVIDENCE_GRAMMAR = (
    "evidence grammar: 'province=CODE' (e.g. province=ON) or "
    "'node=N(mean,std)' with node in {sponsor, refugee, economic, total} "
    "(e.g. refugee=N(15,2))"
)

_SOFT_RE = re.compile(
    r"^N\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)$"
)


class UsageError(Exception):
    pass


def parse_evidence(flags: list[str]) -> Evidence:
    findings = []
    for text in flags:
        if "=" not in text:
            raise UsageError(f"bad evidence {text!r}; {EVIDENCE_GRAMMAR}")
        node, _, value = text.partition("=")
        node = node.strip().lower()
        value = value.strip()
        if node == "province":
            try:
                findings.append(HardProvince(Province.parse(value)))
            except ParseError:
                raise UsageError(
                    f"bad evidence {text!r}: unknown province {value!r}"
                ) from None
            continue
        try:
            stream = Stream.parse(node)
        except ParseError:
            raise UsageError(f"bad evidence {text!r}; {EVIDENCE_GRAMMAR}") from None
        m = _SOFT_RE.match(value)
        if not m:
            raise UsageError(f"bad evidence {text!r}; {EVIDENCE_GRAMMAR}")
        try:
            findings.append(SoftGaussian(stream, float(m.group(1)), float(m.group(2))))
        except ConfigError as exc:
            raise UsageError(f"bad evidence {text!r}: {exc}") from None
    try:
        return Evidence(*findings)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def evidence_strings(evidence: Evidence) -> list[str]:
    out = []
    if evidence.hard_province is not None:
        out.append(f"province={evidence.hard_province.province.value}")
    for f in evidence.soft:
        out.append(f"{f.node.value.lower()}=N({f.mean:g},{f.std:g})")
    return out


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _load_net(args) -> CGNetwork:
    path = args.network or paper_snapshot_path()
    return load_network(path)


def _summary(series) -> str:
    provinces = sorted({s.province.value for s in series})
    streams = sorted({s.stream.value for s in series})
    first = min(s.start for s in series)
    last = max(s.end for s in series)
    return (
        f"{len(series)} series | provinces: {', '.join(provinces)} | "
        f"streams: {', '.join(streams)} | months {first} .. {last + (-1)}"
    )


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    series = load_csv(args.csv)
    out = _outdir(args)
    write_csv(series, out / "dataset.csv")
    print(f"ingested {args.csv}")
    print(_summary(series))
    print(f"wrote {out / 'dataset.csv'}")
    return 0


def cmd_gen_synth(args) -> int:
    config = GeneratorConfig.from_file(args.config) if args.config else None
    series = gen_synthetic(seed=args.seed, months=args.months, config=config)
    out = _outdir(args)
    write_csv(series, out / "synthetic.csv")
    print(f"generated synthetic dataset (seed={args.seed}, months={args.months})")
    print(_summary(series))
    print(f"wrote {out / 'synthetic.csv'}")
    return 0


def cmd_fit(args) -> int:
    series = load_csv(args.data)
    net = fit_parameters(series, total_mode=args.total_mode)
    out = _outdir(args)
    save_network(net, out / "network.json")
    print(f"fitted network ({net.total_mode} mode) from {args.data}")
    print(f"wrote {out / 'network.json'}")
    return 0


def _train_model(args, totals) -> BaseForecaster:
    x, y = metrics.training_windows(
        totals,
        args.context_years,
        max_windows_per_series=args.max_windows,
        window_stride=args.stride,
    )
    model = make_forecaster(
        args.variant,
        seed=args.seed,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
    )
    model.fit(x, y)
    return model


def cmd_train(args) -> int:
    series = load_csv(args.data)
    totals = metrics.total_series(series)
    model = _train_model(args, totals)
    out = _outdir(args)
    stem = f"{args.variant}_c{args.context_years}"
    ckpt = out / f"{stem}.ckpt"
    model.save_checkpoint(ckpt)
    trace_lines = ["epoch,loss"] + [
        f"{i + 1},{v:.10e}" for i, v in enumerate(model.loss_trace_)
    ]
    _write(out / f"loss_{stem}.csv", "\n".join(trace_lines) + "\n")
    final = model.loss_trace_[-1] if len(model.loss_trace_) else float("nan")
    print(f"trained {args.variant} (context {args.context_years}y, seed {args.seed})")
    print(f"final epoch loss {final:.6f}")
    print(f"wrote {ckpt}")
    print(f"wrote {out / f'loss_{stem}.csv'}")
    return 0


def cmd_forecast(args) -> int:
    series = load_csv(args.data)
    totals = metrics.total_series(series)
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise ConfigError(
                f"checkpoint {args.checkpoint} not found; pass --train to fit "
                "a model instead"
            )
        model = BaseForecaster.load_checkpoint(args.checkpoint)
    elif args.train:
        model = _train_model(args, totals)
    else:
        raise ConfigError("need --checkpoint PATH or --train")

    x, ordered = metrics.latest_contexts(totals, args.context_years)
    preds = model.predict(x)
    out = _outdir(args)
    lines = ["province,month,forecast_hundreds"]
    for s, row in zip(ordered, preds):
        for i, v in enumerate(row):
            month = s.end + i
            lines.append(f"{s.province.value},{month},{max(float(v), 0.0):.4f}")
    _write(out / f"forecast_{args.variant}.csv", "\n".join(lines) + "\n")
    print(f"forecast written for {len(ordered)} provinces x {preds.shape[1]} months")
    print(f"wrote {out / f'forecast_{args.variant}.csv'}")

    if args.handoff:
        if args.handoff_province:
            province = Province.parse(args.handoff_province)
            values = preds[[s.province for s in ordered].index(province)]
        else:
            values = preds.ravel()
        m = float(np.mean(values))
        s_dev = max(float(np.std(values)), 1e-6)
        ev_string = f"total=N({m:.4f},{s_dev:.4f})"
        print(f"handoff evidence: {ev_string}")
        net = _load_net(args)
        evidence = parse_evidence([ev_string])
        text = _inference_report("handoff", net, evidence, ["total"], args.threshold, out)
        print(text, end="")
    return 0


def cmd_eval_grid(args) -> int:
    series = load_csv(args.data)
    years = _parse_years(args.years)
    train_params = dict(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
    )
    records = metrics.eval_grid(
        series,
        variants=tuple(args.variants.split(",")),
        years=years,
        seed=args.seed,
        mase_mode=args.mase_mode,
        max_windows_per_series=args.max_windows,
        window_stride=args.stride,
        train_params=train_params,
    )
    out = _outdir(args)
    _write(out / "grid.csv", metrics.grid_to_csv(records))
    table = metrics.grid_to_table(records)
    _write(out / "grid.txt", table)
    print(table, end="")
    print(f"wrote {out / 'grid.csv'} and {out / 'grid.txt'}")
    return 0


def _parse_years(text: str) -> tuple[int, ...]:
    text = text.strip()
    m = re.match(r"^(\d+)-(\d+)$", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo > hi:
            raise UsageError(f"bad years range {text!r}")
        return tuple(range(lo, hi + 1))
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"bad years {text!r}; use '1-9' or '1,2,3'") from None


def _reference_annotation(net: CGNetwork, evidence: Evidence) -> list[str]:
    refs = net.metadata.get("references") if net.metadata else None
    if not refs:
        return []
    wanted = set(evidence_strings(evidence))
    lines = []
    for case, entry in sorted(refs.items()):
        if not isinstance(entry, dict):
            continue
        ev = entry.get("evidence")
        if ev is None or set(ev.split()) != wanted and {ev} != wanted:
            continue
        lines.append(
            f"reference values recorded with this parameter set ({case}); "
            "for comparison only, not asserted:"
        )
        for key, value in sorted(entry.items()):
            if key == "evidence":
                continue
            lines.append(f"  {key}: {_fmt_ref(value)}")
    return lines


def _fmt_ref(value) -> str:
    if isinstance(value, dict):
        return ", ".join(f"{k}={_fmt_ref(v)}" for k, v in value.items())
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _inference_report(
    name: str,
    net: CGNetwork,
    evidence: Evidence,
    nodes: list[str],
    threshold: float,
    out: Path,
    extra_lines: list[str] | None = None,
) -> str:
    lines = [f"inference: {name}"]
    ev = evidence_strings(evidence)
    lines.append("evidence: " + (" ".join(ev) if ev else "(none)"))
    post = posterior_province(net, evidence)
    lines.append("province posterior:")
    lines.extend(report.province_table(post))

    prov_csv = ["province,probability"]
    for p, w in post.items():
        prov_csv.append(f"{p.value},{w:.10f}")
    _write(out / f"{name}_province.csv", "\n".join(prov_csv) + "\n")

    for node_name in nodes:
        stream = Stream.parse(node_name)
        mix = posterior_node(net, stream, evidence)
        lines.append(f"node {stream.value}:")
        lines.extend(report.mixture_table(mix, threshold=threshold))
        _write(out / f"{name}_density_{stream.value}.csv", report.density_csv(mix, stream.value))

    if extra_lines:
        lines.extend(extra_lines)
    lines.extend(_reference_annotation(net, evidence))
    text = "\n".join(lines) + "\n"
    _write(out / f"{name}_report.txt", text)
    return text


def cmd_infer(args) -> int:
    net = _load_net(args)
    evidence = parse_evidence(args.evidence or [])
    nodes = args.node or ["total"]
    out = _outdir(args)
    text = _inference_report("infer", net, evidence, nodes, args.threshold, out)
    print(text, end="")
    return 0


SCENARIOS = {
    "case1": (["province=ON"], ["total", "refugee"]),
    "case2": (["refugee=N(15,2)"], ["total"]),
    "case3": (["total=N(150,2)"], ["total"]),
}


def cmd_scenario(args) -> int:
    flags, nodes = SCENARIOS[args.case]
    net = _load_net(args)
    evidence = parse_evidence(flags)
    out = _outdir(args)
    extra = None
    if args.case == "case3":
        means = decompose_total(net, evidence)
        extra = ["stream decomposition of the Total evidence (posterior means):"]
        total = means[Stream.TOTAL]
        for st in (Stream.SPONSOR, Stream.REFUGEE, Stream.ECONOMIC):
            extra.append(f"  {st.value:<9} {means[st]:10.2f}")
        extra.append(f"  {'sum':<9} {sum(means[st] for st in list(Stream)[:3]):10.2f}")
        extra.append(f"  Total posterior mean {total:10.2f}")
    text = _inference_report(
        args.case, net, evidence, nodes, args.threshold, out, extra_lines=extra
    )
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, network=False):
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        if network:
            p.add_argument(
                "--network",
                default=None,
                help="network parameter JSON (default: packaged reference snapshot)",
            )
            p.add_argument(
                "--threshold",
                type=float,
                default=0.001,
                help="display threshold for mixture components (default 0.001)",
            )

    def training(p):
        p.add_argument("--epochs", type=int, default=25)
        p.add_argument("--lr", type=float, default=3e-3)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--max-windows", type=int, default=12,
                       help="training windows kept per series")
        p.add_argument("--stride", type=int, default=3,
                       help="months between consecutive training windows")

    p = sub.add_parser("ingest", help="validate a CSV and write the canonical dataset")
    p.add_argument("csv")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-synth", help="generate the synthetic dataset")
    p.add_argument("--months", type=int, default=DEFAULT_MONTHS)
    p.add_argument("--config", default=None, help="generator parameter INI")
    common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("fit", help="fit network parameters from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument(
        "--total-mode",
        choices=["auto", "structural", "fitted"],
        default="auto",
    )
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="train one forecaster and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True,
                   choices=["transformer", "informer", "autoformer"])
    p.add_argument("--context-years", type=int, required=True)
    training(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast 12 months per province")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True,
                   choices=["transformer", "informer", "autoformer", "naive"])
    p.add_argument("--context-years", type=int, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--train", action="store_true",
                   help="train in place instead of loading a checkpoint")
    p.add_argument("--handoff", action="store_true",
                   help="convert the forecast into Total evidence and infer")
    p.add_argument("--handoff-province", default=None,
                   help="hand off one province's forecast (default: pooled)")
    training(p)
    common(p, network=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval-grid", help="variant x context-length evaluation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--years", default="1-9", help="e.g. '1-6' or '1,3,5'")
    p.add_argument("--variants", default=",".join(metrics.DEFAULT_VARIANTS))
    p.add_argument("--mase-mode", choices=list(metrics.MASE_MODES), default="as-printed")
    training(p)
    common(p)
    p.set_defaults(func=cmd_eval_grid)

    p = sub.add_parser("infer", help="posterior queries under evidence")
    p.add_argument("--evidence", action="append", default=[],
                   help=EVIDENCE_GRAMMAR)
    p.add_argument("--node", action="append", default=[],
                   choices=["sponsor", "refugee", "economic", "total"],
                   help="continuous node(s) to report (default: total)")
    common(p, network=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("scenario", help="run a canned analysis case")
    p.add_argument("case", choices=sorted(SCENARIOS))
    common(p, network=True)
    p.set_defaults(func=cmd_scenario)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except _NUMERIC_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except _DATA_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_EXIT
    except FlowcastError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
