"""Command-line surface.

Subcommands: gen-data, train, eval, curves, oracle, show-config.
Exit codes: 0 ok, 1 usage, 2 validation, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .clustering import ClusterProblem, alternate
from .config import RunConfig, load_config
from .errors import ConfigError, ContractError, DivergenceError, ParameterError, ShapeError
from .evaluate import PhraseResult, ar_table, evaluate_scenes, round_count
from .metrics import CATEGORY_FILTERS, EvalRecord, average_recall
from .model import init_model, load_checkpoint, save_checkpoint
from .rng import RngState
from .scenes import build_dataset, load_dataset
from .train import train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

MONOTONE_TOL = 1e-12


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_cfg(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    build_dataset(cfg, Path(args.out))
    print(f"wrote {cfg.scenes} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    manifest, scenes = load_dataset(Path(args.data))
    for key in ("image_h", "image_w", "channels", "phrase_dim"):
        if manifest["config"][key] != getattr(cfg, key):
            raise ConfigError(f"dataset {key}={manifest['config'][key]} does not match "
                              f"config {key}={getattr(cfg, key)}")
    out = Path(args.out)
    params = init_model(cfg, RngState(cfg.seed))
    trace = train(scenes, params, cfg)
    save_checkpoint(out, params, cfg)

    n_rounds = cfg.rounds + 1
    header = ["step", "total", "bce", "dice"] + [f"round{r}" for r in range(n_rounds)]
    rows = [[t["step"], t["total"], t["bce"], t["dice"], *t["per_round"]] for t in trace]
    _write_csv(out / "loss_trace.csv", header, rows)

    run_meta = {"config": cfg.to_dict(), "seed": cfg.seed, "steps": len(trace),
                "refine_sharing": cfg.refine_sharing, "top_k": cfg.top_k,
                "rounds": cfg.rounds, "encoder_layers": cfg.encoder_layers}
    (out / "run.json").write_text(json.dumps(run_meta, sort_keys=True, indent=1),
                                  encoding="utf-8")
    print(f"trained {len(trace)} steps; checkpoint in {out}")
    return EXIT_OK


def _results_rows(results: list[PhraseResult]) -> list[list]:
    return [[r.scene, r.phrase, r.round, int(r.thing), int(r.plural), r.iou]
            for r in results]


def cmd_eval(args) -> int:
    from .dtf import write_dtf

    params, cfg = load_checkpoint(Path(args.checkpoint))
    _, scenes = load_dataset(Path(args.data))
    out = Path(args.out)
    map_sink = None
    if args.export_maps:
        (out / "maps").mkdir(parents=True, exist_ok=True)

        def map_sink(si, rnd, probs):
            write_dtf(out / "maps" / f"scene_{si:05d}_round{rnd}.dtf", probs)

    results = evaluate_scenes(params, scenes, cfg, map_sink=map_sink)
    _write_csv(out / "records.csv",
               ["scene", "phrase", "round", "thing", "plural", "iou"],
               _results_rows(results))
    table = ar_table(results)
    _write_csv(out / "ar.csv", ["round"] + list(CATEGORY_FILTERS),
               [[row["round"]] + [row[c] for c in CATEGORY_FILTERS] for row in table])
    final = table[-1]
    print(f"rounds: {len(table)}; final overall AR = {final['overall']:.4f}")
    return EXIT_OK


def _read_records_csv(path: Path) -> list[PhraseResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [PhraseResult(scene=int(r["scene"]), phrase=int(r["phrase"]),
                             round=int(r["round"]), thing=bool(int(r["thing"])),
                             plural=bool(int(r["plural"])), iou=float(r["iou"]))
                for r in csv.DictReader(fh)]


def cmd_curves(args) -> int:
    results = _read_records_csv(Path(args.records))
    rnd = args.round if args.round is not None else round_count(results) - 1
    subset = [r for r in results if r.round == rnd]
    if not subset:
        raise ConfigError(f"no records for round {rnd}")
    curves = average_recall([EvalRecord(iou=r.iou, thing=r.thing, plural=r.plural)
                             for r in subset])
    thresholds = curves["overall"].thresholds
    rows = []
    for i, tau in enumerate(thresholds):
        row = [float(tau)]
        for name in CATEGORY_FILTERS:
            row.append(None if curves[name] is None else float(curves[name].recalls[i]))
        rows.append(row)
    _write_csv(Path(args.out) / "curves.csv", ["threshold"] + list(CATEGORY_FILTERS), rows)
    print(f"wrote curves for round {rnd}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    path = Path(args.problem)
    try:
        desc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        problem = ClusterProblem(
            points=np.asarray(desc["points"], dtype=np.float64),
            targets=np.asarray(desc["targets"], dtype=np.float64),
            alpha=float(desc.get("alpha", 0.5)),
            k=int(desc.get("k", 1)),
            mode=str(desc.get("mode", "A")),
            memberships=(np.asarray(desc["memberships"], dtype=np.float64)
                         if "memberships" in desc else None),
        )
        iters = int(desc.get("iters", 20))
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from exc
    trace, _ = alternate(problem, iters)
    _write_csv(Path(args.out) / "trace.csv", ["iteration", "objective"],
               [[i, float(v)] for i, v in enumerate(trace)])
    increases = np.diff(trace) > MONOTONE_TOL
    if increases.any():
        first = int(np.argmax(increases))
        print(f"objective increased at iteration {first + 1}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trace of {len(trace)} values, non-increasing")
    return EXIT_OK


def cmd_show_config(args) -> int:
    cfg = _load_cfg(args)
    print(cfg.show())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phraseground",
                     description="Phrase-to-pixel grounding on procedural scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, seed=True):
        if config:
            p.add_argument("--config", type=str, default=None, help="key = value config file")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("gen-data", help="generate a scene dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint/trace output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-maps", action="store_true",
                   help="also write every round's similarity maps as DTF")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="recall curves from an eval records.csv")
    p.add_argument("--records", required=True, help="records.csv from eval")
    p.add_argument("--round", type=int, default=None, help="round to plot (default last)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("oracle", help="run the alternating clustering solver")
    p.add_argument("--problem", required=True, help="problem description JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("show-config", help="print the effective configuration")
    common(p)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, ParameterError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
