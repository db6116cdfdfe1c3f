"""Command-line entry point: ``deepsta <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 missing or invalid artifact,
4 numeric failure. Every command writes a JSON run manifest, also on failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import _accel
from .config import BASELINES, VARIANTS, RunConfig, dump_run_config, load_run_config
from .errors import ArtifactError, ConfigError, DataError, NumericError
from .graphs import build_district_graph, export_courier_graph_csv, build_courier_graph
from .model import DeepSTA, ModelInputs
from .node2vec import embed_districts, load_embedding_csv, save_embedding
from .scenario import PANEL_FILES, SPLITS, export_panel, fit_normalizer, generate, import_panel
from .training import (Context, evaluate, run_ablations, run_baseline, run_seeds, run_units, seed_list, sweep,
                       write_curves, write_tables)

RESULTS_ENV = "DEEPSTA_RESULTS"
EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4
EMBED_FILES = ("road_embedding.csv", "road_embedding.bin")


def git_blob_hash(path: str | Path) -> str:
    """Content hash as git computes it for a blob."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Manifest:
    def __init__(self, command: str, argv: list[str], results: Path):
        self.path = results / "manifests" / f"{command}.json"
        self.data = {"command": command, "argv": argv, "status": "running", "config": None, "seed": None,
                     "inputs": {}, "outputs": [], "backend": _accel.backend_name()}
        self.t0 = time.time()

    def retag(self, name: str) -> None:
        self.path = self.path.with_name(f"{name}.json")

    def inputs(self, paths) -> None:
        for p in paths:
            p = Path(p)
            if not p.is_file():
                raise ArtifactError(f"missing input artifact: {p}")
            self.data["inputs"][str(p)] = git_blob_hash(p)

    def outputs(self, paths) -> None:
        self.data["outputs"].extend(str(p) for p in paths)

    def write(self, error: BaseException | None = None) -> None:
        self.data["wall_clock_s"] = round(time.time() - self.t0, 3)
        if error is None:
            self.data["status"] = "ok"
        else:
            self.data["status"] = "failed"
            self.data["error"] = {"type": type(error).__name__, "message": str(error)}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _say(msg: str) -> None:
    print(msg, flush=True)


def _log(args):
    return (lambda m: print(m, file=sys.stderr, flush=True)) if args.verbose else None


def _resolve(args, man: Manifest) -> RunConfig:
    cfg = load_run_config(args.config, args.set)
    if args.config:
        man.inputs([args.config])
    man.data["config"] = cfg.to_dict()
    man.data["seed"] = cfg.experiment.seed
    return cfg


def _context(args, man: Manifest, need_emb: bool = True) -> Context:
    data = Path(args.data)
    man.inputs(data / f for f in PANEL_FILES)
    panel = import_panel(data)
    emb = None
    if need_emb:
        emb_path = Path(args.emb) if args.emb else data / EMBED_FILES[0]
        man.inputs([emb_path])
        emb = load_embedding_csv(emb_path)
        if emb.shape[0] != panel.n_districts:
            raise DataError(f"embedding has {emb.shape[0]} rows but the panel has {panel.n_districts} districts")
    return Context.from_panel(panel, emb)


def _fmt_metrics(rep) -> str:
    return "  ".join(f"{s}: MAE={rep.mae[s]:.5f} MSE={rep.mse[s]:.5f}" for s in SPLITS if s in rep.mae)


# -- commands -----------------------------------------------------------------

def cmd_gen(args, man: Manifest) -> None:
    cfg = _resolve(args, man)
    out = Path(args.out)
    panel = generate(cfg.scenario)
    files = export_panel(panel, out)
    stats = out / "norm_stats.json"
    stats.write_text(json.dumps(fit_normalizer(panel).to_json(), indent=2) + "\n")
    graph = out / "courier_graph.csv"
    export_courier_graph_csv(build_courier_graph(panel.calibration_rates()), graph)
    cfg_file = out / "run_config.cfg"
    cfg_file.write_text(dump_run_config(cfg))
    man.outputs([*files, stats, graph, cfg_file])
    b = panel.bounds()
    _say(f"generated {panel.n_couriers} couriers x {panel.n_days} days over {panel.n_districts} districts -> {out}")
    _say("splits (label days): " + ", ".join(f"{k} [{lo}, {hi})" for k, (lo, hi) in b.items()))


def cmd_embed(args, man: Manifest) -> None:
    cfg = _resolve(args, man)
    data = Path(args.data)
    man.inputs([data / "districts.txt", data / "road_edges.txt", data / "road_nodes.txt"])
    panel = import_panel(data)
    graph = build_district_graph(panel.network, panel.centroids)
    emb = embed_districts(graph.weights, cfg.walk)
    out = Path(args.out) if args.out else data
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in EMBED_FILES]
    save_embedding(emb, paths[0], paths[1], cfg.walk)
    man.outputs(paths)
    _say(f"embedded {emb.shape[0]} districts in {emb.shape[1]} dimensions -> {paths[0]}")


def cmd_train(args, man: Manifest) -> None:
    cfg = _resolve(args, man)
    exp = cfg.experiment
    tag = exp.variant.replace(":", "_")
    man.retag(f"train_{tag}")
    ctx = _context(args, man)
    results = Path(args.results)
    n_seeds = args.seeds if args.seeds is not None else exp.n_seeds
    reports = run_seeds(exp, ctx, n_seeds, args.jobs, _log(args), ckpt_dir=results / "checkpoints")
    outs = write_tables(results / f"train_{tag}", "variant", {exp.variant: reports})
    for rep in reports:
        outs.append(write_curves(results / "curves" / f"{tag}_seed{rep.seed}.csv", rep))
        outs.append(results / "checkpoints" / f"{tag}_seed{rep.seed}.ckpt")
        _say(f"seed {rep.seed}: {_fmt_metrics(rep)} (best epoch {rep.best_epoch})")
    man.outputs(outs)
    mae = np.mean([r.mae["test"] for r in reports])
    mse = np.mean([r.mse["test"] for r in reports])
    _say(f"{exp.variant} mean over {len(reports)} seeds: test MAE={mae:.5f} MSE={mse:.5f}")


def cmd_eval(args, man: Manifest) -> None:
    man.retag(f"eval_{Path(args.checkpoint).stem}_{args.split}")
    man.inputs([args.checkpoint])
    model, meta = DeepSTA.load(args.checkpoint)
    man.data["config"] = meta["config"]
    man.data["seed"] = meta["config"]["seed"]
    ctx = _context(args, man, need_emb=model.variant.road)
    if model.d_c != ctx.panel.d_c:
        raise DataError(f"checkpoint expects {model.d_c} feature columns, panel has {ctx.panel.d_c}")
    inputs = ModelInputs(ctx.prepared, ctx.emb, ctx.adj, model.variant)
    mae, mse, _ = evaluate(model, inputs, ctx.panel, args.split)
    results = Path(args.results)
    out = results / f"eval_{Path(args.checkpoint).stem}_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"checkpoint": str(args.checkpoint), "split": args.split, "mae": mae, "mse": mse},
                              indent=2) + "\n")
    man.outputs([out])
    _say(f"{args.split}: MAE={mae:.6f} MSE={mse:.6f}")


def cmd_baseline(args, man: Manifest) -> None:
    cfg = _resolve(args, man)
    exp = cfg.experiment
    ctx = _context(args, man, need_emb="full" in args.kind)
    seeds = seed_list(exp, args.seeds)
    units = []
    for kind in args.kind:
        if kind == "full":
            units += [("train", exp.with_(variant="full", seed=s)) for s in seeds]
        elif kind == "lstm":
            units += [("lstm", exp.with_(seed=s)) for s in seeds]
        else:
            units.append((kind, exp))  # deterministic, one run suffices
    reports = run_units(units, ctx, args.jobs, _log(args))
    groups: dict[str, list] = {}
    for rep in reports:
        groups.setdefault(rep.variant, []).append(rep)
    outs = write_tables(Path(args.results) / "baselines", "method", groups)
    man.outputs(outs)
    for name, reps in groups.items():
        _say(f"{name:22s} test MAE={np.mean([r.mae['test'] for r in reps]):.5f} "
             f"MSE={np.mean([r.mse['test'] for r in reps]):.5f} ({len(reps)} run(s))")


def cmd_ablate(args, man: Manifest) -> None:
    cfg = _resolve(args, man)
    ctx = _context(args, man)
    variants = args.variants or list(VARIANTS)
    groups = run_ablations(cfg.experiment, ctx, variants, args.seeds, args.jobs, _log(args))
    outs = write_tables(Path(args.results) / "ablation", "variant", groups)
    man.outputs(outs)
    for name, reps in groups.items():
        _say(f"{name:15s} test MAE={np.mean([r.mae['test'] for r in reps]):.5f} "
             f"MSE={np.mean([r.mse['test'] for r in reps]):.5f}")


def cmd_sweep(args, man: Manifest) -> None:
    man.retag(f"sweep_{args.param.replace('_', '')}")
    cfg = _resolve(args, man)
    ctx = _context(args, man)
    points = sweep(args.param, cfg.experiment, ctx, args.seeds, args.jobs, _log(args))
    stem = Path(args.results) / f"sweep_{args.param.replace('_', '')}"
    outs = write_tables(stem, "value", {v: reps for v, reps in points}, extra={"param": args.param})
    man.outputs(outs)
    for value, reps in points:
        _say(f"{args.param}={value:<3d} test MAE={np.mean([r.mae['test'] for r in reps]):.5f}")


COMMANDS = {"gen": cmd_gen, "embed": cmd_embed, "train": cmd_train, "eval": cmd_eval,
            "baseline": cmd_baseline, "ablate": cmd_ablate, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsta", description=__doc__.splitlines()[0])
    parser.add_argument("--results", default=os.environ.get(RESULTS_ENV, "results"),
                        help=f"results root (default: ${RESULTS_ENV} or ./results)")
    parser.add_argument("-v", "--verbose", action="store_true", help="per-epoch progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, config=True):
        if config:
            p.add_argument("--config", help="flat key = value config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        if data:
            p.add_argument("--data", default="data", help="panel directory written by `gen`")
            p.add_argument("--emb", help="district embedding CSV (default: <data>/road_embedding.csv)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("gen", help="generate a synthetic panel")
    common(p, data=False)
    p.add_argument("--out", default="data")
    p = sub.add_parser("embed", help="node2vec embedding of the road districts")
    common(p, data=False)
    p.add_argument("--data", default="data")
    p.add_argument("--out", help="output directory (default: the data directory)")
    p = sub.add_parser("train", help="train one variant over several seeds")
    common(p)
    p.add_argument("--seeds", type=int, help="number of seeds (default: experiment.n_seeds)")
    p = sub.add_parser("eval", help="score a checkpoint on one split")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p = sub.add_parser("baseline", help="MA / LR / LSTM / persistence baselines")
    common(p)
    p.add_argument("--kind", action="append", choices=[*BASELINES, "full"],
                   help="repeatable; default: all baselines plus the full model")
    p.add_argument("--seeds", type=int)
    p = sub.add_parser("ablate", help="full model and its six ablations")
    common(p)
    p.add_argument("--variants", nargs="+", choices=VARIANTS)
    p.add_argument("--seeds", type=int)
    p = sub.add_parser("sweep", help="vary T (1..10) or L_m (8..18)")
    common(p)
    p.add_argument("--param", required=True, choices=["T", "L_m"])
    p.add_argument("--seeds", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.command == "baseline" and not args.kind:
        args.kind = ["ma", "persistence", "lr", "lstm", "full"]
    results = Path(args.results)
    man = Manifest(args.command, argv, results)
    code, error = EXIT_OK, None
    try:
        COMMANDS[args.command](args, man)
    except ConfigError as exc:
        code, error = EXIT_CONFIG, exc
    except (ArtifactError, DataError, FileNotFoundError) as exc:
        code, error = EXIT_ARTIFACT, exc
    except (NumericError, FloatingPointError) as exc:
        code, error = EXIT_NUMERIC, exc
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then re-raised
        man.write(exc)
        raise
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
        if args.verbose:
            traceback.print_exception(error, file=sys.stderr)
    man.write(error)
    return code


if __name__ == "__main__":
    sys.exit(main())
