"""Command-line entry point: build a toy model and run the style experiments on it."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

from . import run_record, weights_file
from .config import EngineSettings
from .diagnostics import (
    attention_variance,
    export_attention_map,
    variance_summary,
    write_csv,
)
from .embedding import alpha_grid
from .experiments import (
    DEFAULT_KS,
    DEFAULT_SEGMENT,
    DEFAULT_STEPS,
    DEFAULT_T_STAR,
    DEFAULT_WINDOWS,
    interpolation_sweep,
    parse_window,
    run_toy_transition,
    window_k_grid,
    window_label,
)
from .toymodel import ToyConfig
from .transition import TransitionPlan

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_FAILED = 2


class Outputs:
    """Paths a command creates; removed again if the command fails."""

    def __init__(self) -> None:
        self._created: list[Path] = []

    def claim(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            self._created.append(path)
        return path

    def discard(self) -> None:
        for path in reversed(self._created):
            if path.is_file():
                path.unlink()
            elif path.is_dir() and not any(path.iterdir()):
                path.rmdir()


def _float_list(text: str) -> list[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _int_list(text: str) -> list[int]:
    try:
        values = [int(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _window_list(text: str) -> list[int | None]:
    try:
        values = [parse_window(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _window(text: str) -> int | None:
    try:
        return parse_window(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _emit(summary: dict[str, Any]) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_build_model(args: argparse.Namespace, outputs: Outputs, settings: EngineSettings) -> dict[str, Any]:
    data: dict[str, Any] = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("toy config must be a JSON object")
    config = ToyConfig.from_dict(data)
    model = weights_file.ModelFile.build(config)
    weights_file.save_file(outputs.claim(args.out), model)
    return {"command": "build-model", "out": str(args.out), "header": model.header()}


def cmd_interp_sweep(args: argparse.Namespace, outputs: Outputs, settings: EngineSettings) -> dict[str, Any]:
    model = weights_file.load_file(args.model)
    result = interpolation_sweep(
        model,
        args.alphas,
        a_src=args.a_src,
        a_tgt=args.a_tgt,
        steps=args.steps,
        segment=args.segment,
        betas=args.betas,
    )
    fieldnames = ["alpha", "attribute_mean", "sign_class"]
    if args.betas:
        fieldnames.insert(1, "beta")
    write_csv(outputs.claim(args.out), fieldnames, [row.as_dict() for row in result.rows])
    return {
        "command": "interp-sweep",
        "out": str(args.out),
        "rows": len(result.rows),
        "spearman": {"plain" if beta is None else str(beta): rho for beta, rho in result.spearman.items()},
    }


def _run_config(args: argparse.Namespace) -> run_record.RunConfig:
    plan = TransitionPlan(
        t_star=args.t_star,
        k=args.k,
        window=args.window,
        alpha=args.alpha,
        steps=args.steps,
        beta=args.beta,
        window_before_transition=not args.no_window_before,
        temperature=args.temperature,
        seed=args.seed,
    )
    return run_record.RunConfig(
        model=str(args.model),
        plan=plan,
        naive=args.naive,
        a_src=args.a_src,
        a_tgt=args.a_tgt,
        segment=args.segment,
    )


def execute_run(config: run_record.RunConfig, parallel: bool = False) -> run_record.RunRecord:
    """Run the configured transition on its model file and package the record."""
    model = weights_file.load_file(config.model)
    result = run_toy_transition(
        model,
        config.plan,
        a_src=config.a_src,
        a_tgt=config.a_tgt,
        naive=config.naive,
        segment=config.segment,
        parallel=parallel,
    )
    series = attention_variance(result.trace_a)
    return run_record.new_record(
        config=config,
        tokens=result.tokens,
        readings=result.metrics,
        swap={
            "n": result.swap_record.n,
            "t_star": result.swap_record.t_star,
            "performed": result.swap_record.performed,
        },
        variance_summary=variance_summary(series, model.config.commit_len),
        trace=result.trace_a,
    )


def cmd_transition(args: argparse.Namespace, outputs: Outputs, settings: EngineSettings) -> dict[str, Any]:
    if args.replay:
        previous = run_record.load_file(args.replay)
        config = previous.config
        if args.model:
            config = replace(config, model=str(args.model))
        record = execute_run(config, parallel=args.parallel)
        mismatch = next((i for i, (a, b) in enumerate(zip(previous.tokens, record.tokens)) if a != b), None)
        if mismatch is None and len(previous.tokens) != len(record.tokens):
            mismatch = min(len(previous.tokens), len(record.tokens))
        if mismatch is not None:
            raise ValueError(f"replay diverged from {args.replay} at token {mismatch}")
    else:
        if not args.model or not args.out:
            raise ValueError("transition needs --model and --out (or --replay)")
        config = _run_config(args)
        record = execute_run(config, parallel=args.parallel)
    if args.out:
        run_record.save_file(outputs.claim(args.out), record)
    return {
        "command": "transition",
        "out": str(args.out) if args.out else None,
        "replayed": bool(args.replay),
        "window": window_label(config.plan.window),
        "swap": record.swap,
        "readings": record.readings,
    }


def cmd_grid(args: argparse.Namespace, outputs: Outputs, settings: EngineSettings) -> dict[str, Any]:
    model = weights_file.load_file(args.model)
    rows = window_k_grid(
        model,
        args.windows,
        args.ks,
        alpha=args.alpha,
        t_star=args.t_star,
        steps=args.steps,
        a_src=args.a_src,
        a_tgt=args.a_tgt,
        segment=args.segment,
        workers=settings.workers,
    )
    write_csv(outputs.claim(args.out), ["window", "k", "delta_attribute", "sign_class"], [r.as_dict() for r in rows])
    return {"command": "grid", "out": str(args.out), "rows": len(rows)}


def cmd_diagnose(args: argparse.Namespace, outputs: Outputs, settings: EngineSettings) -> dict[str, Any]:
    record = run_record.load_file(args.run)
    trace = record.generation_trace()
    series = attention_variance(trace)
    directory = outputs.claim(args.out)
    directory.mkdir(parents=True, exist_ok=True)
    variance_path = outputs.claim(directory / "variance.csv")
    for layer in range(series.layers):
        outputs.claim(directory / f"attention_layer{layer}.csv")
    write_csv(variance_path, ["position", "layer", "var"], series.rows())
    maps = export_attention_map(trace, directory)
    return {
        "command": "diagnose",
        "out": str(directory),
        "variance_rows": series.steps * series.layers,
        "attention_maps": [str(p) for p in maps],
    }


def _add_attributes(parser: argparse.ArgumentParser, a_src: float, a_tgt: float) -> None:
    parser.add_argument("--a-src", type=float, default=a_src, help="source attribute level")
    parser.add_argument("--a-tgt", type=float, default=a_tgt, help="target attribute level")
    parser.add_argument("--segment", type=int, default=DEFAULT_SEGMENT, help="tokens per attribute reading")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvstyle", description="Toy style interpolation and transition experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build-model", help="write the toy model file")
    build.add_argument("--config", help="toy config JSON (defaults when omitted)")
    build.add_argument("--out", required=True)
    build.set_defaults(handler=cmd_build_model)

    sweep = sub.add_parser("interp-sweep", help="final attribute versus alpha")
    sweep.add_argument("--model", required=True)
    sweep.add_argument("--alphas", type=_float_list, default=alpha_grid())
    sweep.add_argument("--betas", type=_float_list, default=None, help="full-vector sweep over these betas")
    sweep.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    sweep.add_argument("--out", required=True)
    _add_attributes(sweep, -0.5, 0.5)
    sweep.set_defaults(handler=cmd_interp_sweep)

    transition = sub.add_parser("transition", help="one mid-generation style transition")
    transition.add_argument("--model")
    transition.add_argument("--t-star", type=int, default=DEFAULT_T_STAR)
    transition.add_argument("--k", type=int, default=4)
    transition.add_argument("--window", type=_window, default=8, help="window size or 'full'")
    transition.add_argument("--alpha", type=float, default=2.0)
    transition.add_argument("--beta", type=float, default=None)
    transition.add_argument("--naive", action="store_true", help="replace the style only, no cache swap")
    transition.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    transition.add_argument("--seed", type=int, default=0)
    transition.add_argument("--temperature", type=float, default=0.0)
    transition.add_argument("--no-window-before", action="store_true", help="full attention before t*")
    transition.add_argument("--parallel", action="store_true", help="run both decoders on worker threads")
    transition.add_argument("--replay", help="re-run the config echoed in a run record and compare tokens")
    transition.add_argument("--out")
    _add_attributes(transition, -1.0, 1.0)
    transition.set_defaults(handler=cmd_transition)

    grid = sub.add_parser("grid", help="window x k ablation")
    grid.add_argument("--model", required=True)
    grid.add_argument("--windows", type=_window_list, default=list(DEFAULT_WINDOWS))
    grid.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    grid.add_argument("--alpha", type=float, default=2.0)
    grid.add_argument("--t-star", type=int, default=DEFAULT_T_STAR)
    grid.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    grid.add_argument("--out", required=True)
    _add_attributes(grid, -1.0, 1.0)
    grid.set_defaults(handler=cmd_grid)

    diagnose = sub.add_parser("diagnose", help="attention variance and attention maps of a run")
    diagnose.add_argument("--run", required=True)
    diagnose.add_argument("--out", required=True, help="output directory")
    diagnose.set_defaults(handler=cmd_diagnose)
    return parser


Handler = Callable[[argparse.Namespace, Outputs, EngineSettings], dict[str, Any]]


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = EngineSettings.from_env()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    handler: Handler = args.handler
    outputs = Outputs()
    logger.info("starting %s", args.command)
    try:
        summary = handler(args, outputs, settings)
    except (ValueError, OSError, RuntimeError) as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except Exception:
        logger.exception("%s failed unexpectedly", args.command)
        outputs.discard()
        return EXIT_UNEXPECTED
    _emit(summary)
    logger.info("finished %s", args.command)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
