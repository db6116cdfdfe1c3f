"""Training loop, metrics, baselines, ablations and parameter sweeps."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import BASELINES, VARIANTS, ExperimentConfig
from .errors import ConfigError, DataError, TrainingError
from .graphs import build_courier_graph, normalize_adjacency
from .model import DeepSTA, ModelInputs, variant_flags
from .optim import Adam
from .scenario import SPLITS, Panel, PreparedPanel, prepare

SWEEP_VALUES = {"T": tuple(range(1, 11)), "L_m": tuple(range(8, 19))}


@dataclass
class Context:
    """Everything a run needs besides its :class:`ExperimentConfig`."""

    prepared: PreparedPanel
    adj: np.ndarray
    emb: np.ndarray | None

    @classmethod
    def from_panel(cls, panel: Panel, emb: np.ndarray | None) -> "Context":
        graph = build_courier_graph(panel.calibration_rates())
        return cls(prepare(panel), normalize_adjacency(graph.weights), emb)

    @property
    def panel(self) -> Panel:
        return self.prepared.panel


@dataclass
class MetricsReport:
    variant: str
    seed: int
    mae: dict[str, float] = field(default_factory=dict)
    mse: dict[str, float] = field(default_factory=dict)
    loss_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1
    runtime: float = 0.0
    predictions: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        out = {"variant": self.variant, "seed": self.seed}
        for s in SPLITS:
            if s in self.mae:
                out[f"{s}_mae"] = self.mae[s]
                out[f"{s}_mse"] = self.mse[s]
        out["best_epoch"] = self.best_epoch
        return out


def metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Plain mean absolute error and mean squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise DataError("cannot score an empty split")
    if pred.shape != target.shape:
        raise DataError(f"prediction shape {pred.shape} vs label shape {target.shape}")
    r = pred - target
    return float(np.mean(np.abs(r))), float(np.mean(r * r))


def split_pairs(panel: Panel, split: str, T: int) -> tuple[np.ndarray, np.ndarray]:
    """All (day, courier) samples whose label day falls in ``split``, day-major."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    days = panel.split_days(split)
    days = days[days - T >= 0]
    if not len(days):
        raise DataError(f"split {split!r} has no day with a full {T}-day history")
    n = panel.n_couriers
    return np.repeat(days, n), np.tile(np.arange(n), len(days))


def evaluate(model: DeepSTA, inputs: ModelInputs, panel: Panel, split: str) -> tuple[float, float, np.ndarray]:
    """Eval-mode MAE, MSE and per-sample predictions on one split."""
    days, couriers = split_pairs(panel, split, model.cfg.T)
    pred = model.predict(inputs, days, couriers)
    mae, mse = metrics(pred, panel.y[days, couriers])
    return mae, mse, pred


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def train(cfg: ExperimentConfig, ctx: Context, log=None) -> tuple[DeepSTA, MetricsReport]:
    """Fit one model; the best-validation-MAE parameters are kept and reported."""
    t0 = time.perf_counter()
    panel = ctx.panel
    variant = variant_flags(cfg.variant)
    inputs = ModelInputs(ctx.prepared, ctx.emb if variant.road else None, ctx.adj, variant)
    tr_days, tr_cour = split_pairs(panel, "train", cfg.T)
    lo, hi = cfg.target_eps, 1.0 - cfg.target_eps
    y_mean = float(np.clip(panel.y[tr_days, tr_cour].mean(), lo, hi))
    d_emb = ctx.emb.shape[1] if ctx.emb is not None else 0
    model = DeepSTA(cfg, d_c=panel.d_c, d_emb=d_emb, seed=cfg.seed, head_bias=_logit(y_mean), variant=variant)
    opt = Adam(model.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps, clip_norm=cfg.clip_norm)
    rng = np.random.default_rng([cfg.seed, 0xBA7C4])
    report = MetricsReport(cfg.variant, cfg.seed)
    best_val, best_state = np.inf, model.state_dict()
    n = len(tr_days)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = inputs.batch(tr_days[idx], tr_cour[idx], cfg.T)
            loss = ad.mse_loss(model.forward(batch, training=True, rng=rng), np.clip(batch.y, lo, hi))
            if not np.isfinite(loss.data):
                raise TrainingError(f"loss diverged to {float(loss.data)} in epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        report.loss_curve.append(total / n)
        val_mae = evaluate(model, inputs, panel, "val")[0]
        report.val_curve.append(val_mae)
        if val_mae < best_val:
            best_val, best_state, report.best_epoch = val_mae, model.state_dict(), epoch
        if log:
            log(f"[{cfg.variant} seed={cfg.seed}] epoch {epoch + 1}/{cfg.epochs} "
                f"train_mse={report.loss_curve[-1]:.5f} val_mae={val_mae:.5f}")
    model.load_state_dict(best_state)
    for split in SPLITS:
        report.mae[split], report.mse[split], report.predictions[split] = evaluate(model, inputs, panel, split)
    report.runtime = time.perf_counter() - t0
    return model, report


# -- baselines ------------------------------------------------------------------

def _window_rows(arr: np.ndarray, days: np.ndarray, couriers: np.ndarray, T: int) -> np.ndarray:
    idx = days[:, None] + np.arange(-T, 1)[None, :]
    return arr[idx, couriers[:, None]].reshape(len(days), -1)


def moving_average(y: np.ndarray, days: np.ndarray, couriers: np.ndarray, T: int) -> np.ndarray:
    """Mean of the ``T`` labels strictly before each target day."""
    if T < 1:
        raise ConfigError("moving average needs T >= 1")
    idx = days[:, None] + np.arange(-T, 0)[None, :]
    return y[idx, couriers[:, None]].mean(axis=1)


def fit_linear(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients with a trailing intercept term."""
    design = np.hstack([x, np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def predict_linear(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ coef[:-1] + coef[-1]


def run_baseline(kind: str, cfg: ExperimentConfig, ctx: Context, log=None) -> MetricsReport:
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    if kind == "lstm":
        return train(cfg.with_(variant="baseline:lstm"), ctx, log)[1]
    t0 = time.perf_counter()
    panel, prep = ctx.panel, ctx.prepared
    T = max(cfg.T, 1)
    report = MetricsReport(f"baseline:{kind}", cfg.seed)
    if kind == "lr":
        feats = np.concatenate([prep.c, prep.a], axis=2)
        d, c = split_pairs(panel, "train", T)
        coef = fit_linear(_window_rows(feats, d, c, T), panel.y[d, c])
    for split in SPLITS:
        d, c = split_pairs(panel, split, T)
        if kind == "ma":
            pred = moving_average(panel.y, d, c, T)
        elif kind == "persistence":
            pred = panel.y[d - 1, c]
        else:
            pred = predict_linear(coef, _window_rows(feats, d, c, T))
        report.mae[split], report.mse[split] = metrics(pred, panel.y[d, c])
        report.predictions[split] = pred
    report.runtime = time.perf_counter() - t0
    return report


# -- multi-run drivers ------------------------------------------------------------

def checkpoint_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.variant.replace(':', '_')}_seed{cfg.seed}.ckpt"


def _run_one(kind: str, cfg: ExperimentConfig, ctx: Context, ckpt_dir: Path | None, log=None) -> MetricsReport:
    if kind != "train":
        return run_baseline(kind, cfg, ctx, log)
    model, rep = train(cfg, ctx, log)
    if ckpt_dir is not None:
        model.save(Path(ckpt_dir) / checkpoint_name(cfg), meta={"best_epoch": rep.best_epoch})
    return rep


def _unit(args) -> MetricsReport:
    return _run_one(*args)


def run_units(units: list[tuple[str, ExperimentConfig]], ctx: Context, jobs: int = 1, log=None,
              ckpt_dir: str | Path | None = None) -> list[MetricsReport]:
    """Run independent (kind, config) units, optionally across processes; order is preserved."""
    ckpt = Path(ckpt_dir) if ckpt_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    if jobs <= 1 or len(units) <= 1:
        out = []
        for kind, cfg in units:
            rep = _run_one(kind, cfg, ctx, ckpt, log)
            out.append(rep)
            if log:
                log(f"done {rep.variant} seed={rep.seed} test_mae={rep.mae['test']:.5f} ({rep.runtime:.1f}s)")
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_unit, [(k, c, ctx, ckpt) for k, c in units]))


def seed_list(cfg: ExperimentConfig, n_seeds: int | None = None) -> list[int]:
    return [cfg.seed + k for k in range(cfg.n_seeds if n_seeds is None else n_seeds)]


def run_seeds(cfg: ExperimentConfig, ctx: Context, n_seeds: int | None = None, jobs: int = 1, log=None,
              ckpt_dir=None) -> list[MetricsReport]:
    return run_units([("train", cfg.with_(seed=s)) for s in seed_list(cfg, n_seeds)], ctx, jobs, log, ckpt_dir)


def run_ablations(cfg: ExperimentConfig, ctx: Context, variants=VARIANTS, n_seeds: int | None = None,
                  jobs: int = 1, log=None) -> dict[str, list[MetricsReport]]:
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {v!r}")
    seeds = seed_list(cfg, n_seeds)
    units = [("train", cfg.with_(variant=v, seed=s)) for v in variants for s in seeds]
    reports = run_units(units, ctx, jobs, log)
    return {v: reports[k * len(seeds):(k + 1) * len(seeds)] for k, v in enumerate(variants)}


def sweep_configs(param: str, base: ExperimentConfig) -> list[ExperimentConfig]:
    if param not in SWEEP_VALUES:
        raise ConfigError(f"sweep parameter must be one of {tuple(SWEEP_VALUES)}, got {param!r}")
    return [replace(base, **{param: v}) for v in SWEEP_VALUES[param]]


def config_diff(a: ExperimentConfig, b: ExperimentConfig) -> list[str]:
    return [f.name for f in fields(a) if getattr(a, f.name) != getattr(b, f.name)]


def sweep(param: str, cfg: ExperimentConfig, ctx: Context, n_seeds: int | None = None, jobs: int = 1,
          log=None) -> list[tuple[int, list[MetricsReport]]]:
    points = sweep_configs(param, cfg)
    seeds = seed_list(cfg, n_seeds)
    units = [("train", p.with_(seed=s)) for p in points for s in seeds]
    reports = run_units(units, ctx, jobs, log)
    return [(getattr(p, param), reports[k * len(seeds):(k + 1) * len(seeds)]) for k, p in enumerate(points)]


# -- result tables ----------------------------------------------------------------

METRIC_COLUMNS = [f"{s}_{m}" for s in SPLITS for m in ("mae", "mse")]


def summary_row(reports: list[MetricsReport], **keys) -> dict:
    """Mean and standard deviation over seeds of every split metric."""
    row = dict(keys)
    for s in SPLITS:
        for name, attr in (("mae", "mae"), ("mse", "mse")):
            vals = [getattr(r, attr)[s] for r in reports]
            row[f"{s}_{name}"] = float(np.mean(vals))
            row[f"{s}_{name}_std"] = float(np.std(vals))
    row["n_seeds"] = len(reports)
    return row


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


SUMMARY_COLUMNS = [c for m in METRIC_COLUMNS for c in (m, f"{m}_std")] + ["n_seeds"]
RUN_COLUMNS = ["seed", *METRIC_COLUMNS, "best_epoch"]


def write_tables(stem: str | Path, key: str, groups: dict, extra: dict | None = None) -> list[Path]:
    """``<stem>.csv`` holds one mean row per group; ``<stem>_runs.csv`` one row per seed."""
    stem = Path(stem)
    fixed = dict(extra or {})
    summary = [summary_row(reps, **fixed, **{key: name}) for name, reps in groups.items()]
    runs = [{**fixed, key: name, **{k: v for k, v in r.row().items() if k != "variant"}}
            for name, reps in groups.items() for r in reps]
    lead = [*fixed, key]
    return [write_csv(stem.with_suffix(".csv"), summary, lead + SUMMARY_COLUMNS),
            write_csv(stem.parent / f"{stem.name}_runs.csv", runs, lead + RUN_COLUMNS)]


def write_curves(path: str | Path, report: MetricsReport) -> Path:
    rows = [{"epoch": k, "train_loss": l, "val_mae": v}
            for k, (l, v) in enumerate(zip(report.loss_curve, report.val_curve))]
    return write_csv(path, rows, ["epoch", "train_loss", "val_mae"])
