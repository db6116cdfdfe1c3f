"""Synthetic courier-day panels with epidemic lockdowns, absences and backlog.

The generator mirrors the causal chain seen in real delivery data during
outbreaks: a spatially clustered epidemic field locks districts; couriers
working in locked districts slow down and some go absent; an absent
courier's orders move to the closest teammates, whose workload (and backlog)
rises, and the absent courier's parcels are scored at the receivers' rate.
Under zero epidemic intensity the timely rate only fluctuates within
``base_rate +/- 3 * noise_std``.

Row alignment: the features stored at day ``t`` are those known the evening
before ``t`` (order plan for ``t``, day ``t-1`` rates, day ``t-1`` district
order proportions, case counts reported on ``t-1``, backlog at the end of
``t-1``); the label at day ``t`` is the timely rate on ``t``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, WindowError
from .graphs import RoadNetwork, save_road_network, save_centroids, load_road_network, load_centroids

WEATHER = ("sunny", "cloudy", "rain", "snow", "haze")
SERVICES = ("delivery", "merchant_pickup", "customer_pickup")
C_COLUMNS = (
    [f"orders_{s}" for s in SERVICES]
    + [f"prev_rate_{s}" for s in SERVICES]
    + ["tenure", "age", "backlog", "no_orders"]
    + [f"weather_{w}" for w in WEATHER]
    + ["temp_high", "temp_low", "temp_avg"]
    + [f"dow_{k}" for k in range(7)]
    + ["holiday"]
)
A_COLUMNS = ("city_confirmed", "city_asymptomatic", "area_confirmed", "backlog")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ScenarioConfig:
    n_couriers: int = 48
    n_districts: int = 24
    n_days: int = 200
    seed: int = 0
    calibration_days: int = 30
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    min_history: int = 10
    # road grid
    block_m: float = 400.0
    detour_max: float = 0.3
    # epidemic process: one entry per outbreak, start given as a fraction of n_days
    outbreak_starts: tuple[float, ...] = (0.35, 0.6, 0.84, 0.905)
    outbreak_peaks: tuple[float, ...] = (0.6, 0.75, 0.6, 0.75)
    outbreak_durations: tuple[int, ...] = (14, 16, 12, 20)
    n_hotspots: int = 2
    hotspot_jitter: float = 0.15
    cluster_radius: float = 0.3
    growth_rate: float = 0.7
    spread_days: float = 4.0         # days for an outbreak front to travel one cluster radius
    lockdown_threshold: float = 0.3
    intensity_noise: float = 0.1
    case_scale: float = 40.0
    # staffing
    team_size: int = 12
    reassign_top_k: int = 5
    home_share: float = 0.25
    absence_start_prob: float = 0.1
    absence_mean_days: float = 4.0
    # timely-rate model
    base_rate: float = 0.92
    noise_std: float = 0.035
    team_shock_std: float = 0.8      # in units of noise_std
    team_shock_ar: float = 0.85
    courier_noise_std: float = 0.3   # in units of noise_std
    workload_threshold: float = 1.2
    workload_coef: float = 0.4
    lockdown_coef: float = 0.2
    backlog_coef: float = 0.15
    absence_penalty: float = 0.0
    hub_coef: float = 0.04
    anomaly_noise: float = 0.03

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if min(self.n_couriers, self.n_districts) < 1:
            raise ConfigError("n_couriers and n_districts must be >= 1")
        if self.n_days < self.calibration_days + self.min_history:
            raise ConfigError(f"n_days={self.n_days} leaves no room after the {self.calibration_days}-day calibration "
                              f"window and {self.min_history} days of history")
        if self.spread_days < 0:
            raise ConfigError("spread_days must be >= 0")
        lens = {len(self.outbreak_starts), len(self.outbreak_peaks), len(self.outbreak_durations)}
        if len(lens) != 1:
            raise ConfigError("outbreak_starts, outbreak_peaks and outbreak_durations must have equal length")
        # worst-case calm-day deviation: offset 0.2, weather 0.6, two-sigma clipped shocks
        if 0.8 + 2.0 * (self.team_shock_std + self.courier_noise_std) > 3.0 + 1e-12:
            raise ConfigError("team_shock_std + courier_noise_std must stay <= 1.1 so calm days remain "
                              "within base_rate +/- 3 noise_std")
        bounds = split_bounds(self.n_days, self.calibration_days, self.train_frac, self.val_frac)
        if any(hi <= lo for lo, hi in bounds.values()):
            raise ConfigError(f"config yields an empty split: {bounds}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            default = known[k].default
            kw[k] = tuple(v) if isinstance(default, tuple) else v
        return cls(**kw)


def split_bounds(n_days: int, calibration_days: int, train_frac: float, val_frac: float) -> dict[str, tuple[int, int]]:
    """Half-open label-day ranges of the chronological splits."""
    usable = n_days - calibration_days
    n_train = int(round(train_frac * usable))
    n_val = int(round(val_frac * usable))
    a = calibration_days
    return {"train": (a, a + n_train), "val": (a + n_train, a + n_train + n_val), "test": (a + n_train + n_val, n_days)}


@dataclass
class Panel:
    """Courier-day table in dense form: arrays indexed ``[day, courier, ...]``."""

    c: np.ndarray
    p: np.ndarray
    a: np.ndarray
    y: np.ndarray
    centroids: np.ndarray
    network: RoadNetwork
    calibration_days: int = 30
    train_frac: float = 0.8
    val_frac: float = 0.1
    c_columns: tuple[str, ...] = field(default=tuple(C_COLUMNS))
    meta: dict = field(default_factory=dict)
    diagnostics: dict | None = None

    @property
    def n_days(self) -> int:
        return self.y.shape[0]

    @property
    def n_couriers(self) -> int:
        return self.y.shape[1]

    @property
    def n_districts(self) -> int:
        return self.p.shape[2]

    @property
    def d_c(self) -> int:
        return self.c.shape[2]

    def bounds(self) -> dict[str, tuple[int, int]]:
        return split_bounds(self.n_days, self.calibration_days, self.train_frac, self.val_frac)

    def split_days(self, split: str) -> np.ndarray:
        lo, hi = self.bounds()[split]
        return np.arange(lo, hi)

    def calibration_rates(self) -> np.ndarray:
        """(N, calibration_days) label series used for the courier graph."""
        return self.y[:self.calibration_days].T.copy()

    def equals(self, other: "Panel") -> bool:
        same = all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("c", "p", "a", "y", "centroids"))
        same &= np.array_equal(self.network.edges, other.network.edges)
        same &= np.array_equal(self.network.node_xy, other.network.node_xy)
        return bool(same and self.calibration_days == other.calibration_days and self.c_columns == other.c_columns)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _road_grid(n_districts: int, cfg: ScenarioConfig, rng: np.random.Generator):
    side = int(np.ceil(np.sqrt(n_districts * 2.5))) + 1
    gx, gy = np.meshgrid(np.arange(side), np.arange(side))
    node_xy = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64) * cfg.block_m
    idx = np.arange(side * side).reshape(side, side)
    pairs = [(idx[r, k], idx[r, k + 1]) for r in range(side) for k in range(side - 1)]
    pairs += [(idx[r, k], idx[r + 1, k]) for r in range(side - 1) for k in range(side)]
    pairs = np.array(pairs)
    detour = 1.0 + cfg.detour_max * rng.random(len(pairs))
    edges = np.column_stack([pairs[:, 0], pairs[:, 1], cfg.block_m * detour]).astype(np.float64)
    chosen = np.sort(rng.choice(side * side, size=n_districts, replace=False))
    return RoadNetwork(edges=edges, node_xy=node_xy), node_xy[chosen].copy(), side * cfg.block_m


def _truncnorm(rng: np.random.Generator, size, bound: float) -> np.ndarray:
    return np.clip(rng.standard_normal(size), -bound, bound)


def balanced_clusters(xy: np.ndarray, k: int) -> np.ndarray:
    """Split points into ``k`` spatially compact groups of near-equal size by recursive bisection."""
    labels = np.zeros(len(xy), dtype=np.int64)

    def split(idx: np.ndarray, k: int, first: int) -> None:
        if k == 1:
            labels[idx] = first
            return
        k_left = k // 2
        pts = xy[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        order = idx[np.lexsort((pts[:, 1 - axis], pts[:, axis]))]
        cut = int(round(len(idx) * k_left / k))
        split(order[:cut], k_left, first)
        split(order[cut:], k - k_left, first + k_left)

    split(np.arange(len(xy)), k, 0)
    return labels


def epidemic_field(cfg: ScenarioConfig, centroids: np.ndarray, extent: float, rng: np.random.Generator):
    """Per-district intensity (n_days, M) and the outbreak centers used."""
    days = np.arange(cfg.n_days, dtype=np.float64)
    hotspots = rng.random((cfg.n_hotspots, 2)) * extent * 0.6 + extent * 0.2
    intensity = np.zeros((cfg.n_days, len(centroids)))
    centers = []
    for k, (start_frac, peak, dur) in enumerate(zip(cfg.outbreak_starts, cfg.outbreak_peaks, cfg.outbreak_durations)):
        start = start_frac * cfg.n_days
        c = hotspots[k % cfg.n_hotspots] + rng.normal(0.0, cfg.hotspot_jitter * extent, 2)
        centers.append(c)
        radius = cfg.cluster_radius * extent
        dist = np.sqrt(((centroids - c) ** 2).sum(axis=1))
        spatial = np.exp(-dist**2 / (2.0 * radius**2))
        # the front reaches farther districts later, so nearby couriers slow down first
        local = days[:, None] - start - cfg.spread_days * dist[None, :] / radius
        rise = 1.0 / (1.0 + np.exp(-cfg.growth_rate * (local - 4.0)))
        fall = 1.0 / (1.0 + np.exp(cfg.growth_rate * (local - dur)))
        intensity += peak * rise * fall * spatial[None, :]
    if cfg.intensity_noise > 0:
        intensity *= np.exp(cfg.intensity_noise * rng.standard_normal(intensity.shape))
    return intensity, np.array(centers).reshape(-1, 2)


def generate(cfg: ScenarioConfig | None = None) -> Panel:
    cfg = cfg or ScenarioConfig()
    ss = np.random.SeedSequence(cfg.seed)
    r_geo, r_epi, r_staff, r_days, r_rate, r_feat = (np.random.default_rng(s) for s in ss.spawn(6))
    n, m, n_days, sig = cfg.n_couriers, cfg.n_districts, cfg.n_days, cfg.noise_std

    network, centroids, extent = _road_grid(m, cfg, r_geo)
    intensity, centers = epidemic_field(cfg, centroids, extent, r_epi)
    locked = intensity > cfg.lockdown_threshold

    # staffing: each station serves a spatial cluster of districts; couriers cover their station's area
    n_teams = max(1, min(m, int(np.ceil(n / cfg.team_size))))
    district_team = balanced_clusters(centroids, n_teams)
    home = r_staff.permutation(np.arange(n) % m)  # couriers spread evenly over districts
    team = district_team[home]
    territory = np.zeros((n, m))
    for i in range(n):
        area = np.flatnonzero(district_team == team[i])
        territory[i, area] = (1.0 - cfg.home_share) / len(area)
        territory[i, home[i]] += cfg.home_share
    courier_dist = np.linalg.norm(centroids[home][:, None] - centroids[home][None], axis=-1)
    volume = r_staff.uniform(80.0, 120.0, n)
    tenure = r_staff.uniform(0.2, 10.0, n)
    age = r_staff.uniform(21.0, 50.0, n)
    offset = r_staff.uniform(-0.2, 0.2, n) * sig
    svc_share = np.array([0.7, 0.2, 0.1])
    svc_offset = np.array([0.0, 0.01, 0.02])

    # calendar and weather (city-wide)
    dow = np.arange(n_days) % 7
    holiday = np.zeros(n_days, dtype=bool)
    holiday[r_days.choice(np.arange(7, n_days), size=max(1, n_days // 40), replace=False)] = True
    weather = r_days.choice(len(WEATHER), size=n_days, p=[0.45, 0.25, 0.15, 0.05, 0.10])
    season = 15.0 + 12.0 * np.sin(2 * np.pi * (np.arange(n_days) - 30) / 365.0)
    t_avg = season + r_days.normal(0, 2.0, n_days)
    t_high, t_low = t_avg + r_days.uniform(3, 7, n_days), t_avg - r_days.uniform(3, 7, n_days)
    weather_pen = np.array([0.0, 0.0, 0.4, 0.6, 0.2])[weather] * sig
    dow_factor = np.array([1.05, 1.0, 1.0, 0.98, 1.02, 0.95, 0.9])[dow] * np.where(holiday, 0.9, 1.0)

    # case counts: study area plus a city-wide background around it
    area_load = intensity.sum(axis=1)
    city_bg = 0.3 * area_load + 0.2 * np.convolve(area_load, np.ones(5) / 5, mode="same")
    district_cases = r_epi.poisson(cfg.case_scale * intensity)
    area_cases = district_cases.sum(axis=1)
    city_cases = area_cases + r_epi.poisson(cfg.case_scale * city_bg)
    city_asym = r_epi.poisson(1.5 * cfg.case_scale * (area_load + city_bg))
    stress = np.tanh(area_load / max(m * 0.1, 1e-9))

    y = np.zeros((n_days, n))
    orders = np.zeros((n_days, n, 3))
    planned = np.zeros((n_days, n, 3))
    props = np.zeros((n_days, n, m))
    backlog = np.zeros((n_days, n))
    incoming = np.zeros((n_days, n))
    capacity = np.zeros((n_days, n))
    absent = np.zeros((n_days, n), dtype=bool)
    absent_left = np.zeros(n, dtype=np.int64)
    prev_backlog = np.zeros(n)
    team_state = np.zeros(n_teams)
    innov = np.sqrt(1.0 - cfg.team_shock_ar**2)

    for t in range(n_days):
        # absences begin only when the courier's home district is locked
        start = (absent_left == 0) & locked[t, home] & (r_staff.random(n) < cfg.absence_start_prob)
        length = r_staff.geometric(1.0 / cfg.absence_mean_days, n)
        absent_left = np.where(start, length, absent_left)
        absent[t] = absent_left > 0
        absent_left = np.maximum(absent_left - 1, 0)

        noise = np.exp(np.clip(0.05 * r_staff.standard_normal(n), -0.1, 0.1))
        boost = 1.0 + 0.3 * (territory @ np.minimum(intensity[t], 1.0))
        base_orders = volume * dow_factor[t] * noise * boost
        mix = np.zeros((n, m))
        for i in range(n):
            alpha = 60.0 * territory[i][territory[i] > 0]
            mix[i, territory[i] > 0] = r_staff.dirichlet(alpha)
        planned[t] = base_orders[:, None] * svc_share[None, :]
        load = base_orders.copy()
        mixload = mix * base_orders[:, None]
        # reassignment of absent couriers' orders to nearest present teammates
        present = ~absent[t]
        receivers = {}
        for i in np.flatnonzero(absent[t]):
            mates = [j for j in np.argsort(courier_dist[i], kind="stable")
                     if j != i and present[j] and team[j] == team[i]][: cfg.reassign_top_k]
            if not mates:
                mates = [j for j in np.argsort(courier_dist[i], kind="stable") if j != i and present[j]][:1]
            if not mates:
                continue
            receivers[i] = mates
            share = load[i] / len(mates)
            for j in mates:
                load[j] += share
                mixload[j] += mixload[i] / len(mates)
            load[i] = 0.0
            mixload[i] = 0.0
        orders[t] = load[:, None] * svc_share[None, :]
        tot = mixload.sum(axis=1, keepdims=True)
        props[t] = np.where(tot > 0, mixload / np.where(tot > 0, tot, 1.0), 0.0)

        lockfrac = props[t] @ locked[t].astype(np.float64)
        # a growing backlog draws in temporary help, so queues stay bounded
        capacity[t] = (volume * 1.3 * (1.0 - 0.4 * lockfrac) + 0.2 * prev_backlog) * np.where(absent[t], 0.0, 1.0)
        incoming[t] = load
        backlog[t] = np.maximum(0.0, prev_backlog + incoming[t] - capacity[t])

        # persistent station-level condition shared by a team
        # stations draw on one relief pool, so their conditions are relative to each other
        team_state = cfg.team_shock_ar * team_state + innov * _truncnorm(r_rate, n_teams, 2.0)
        team_state -= team_state.mean() if n_teams > 1 else 0.0
        normal = (offset - weather_pen[t]
                  + np.clip(team_state, -2.0, 2.0)[team] * cfg.team_shock_std * sig
                  + _truncnorm(r_rate, n, 2.0) * cfg.courier_noise_std * sig)
        workload = load / volume
        penalty = (cfg.workload_coef * np.maximum(0.0, workload - cfg.workload_threshold)
                   + cfg.lockdown_coef * lockfrac
                   + cfg.backlog_coef * np.tanh(prev_backlog / volume)
                   + cfg.hub_coef * stress[t]
                   + cfg.absence_penalty * absent[t])
        turbulence = cfg.anomaly_noise * stress[t] * r_rate.standard_normal(n)
        y[t] = np.clip(cfg.base_rate + normal - penalty + turbulence, 0.01, 0.99)
        # an absent courier's parcels are delivered by the teammates who took them over
        for i, mates in receivers.items():
            y[t, i] = np.clip(y[t, mates].mean() - cfg.absence_penalty, 0.01, 0.99)
        prev_backlog = backlog[t]

    # assemble feature rows known the evening before each day
    c = np.zeros((n_days, n, len(C_COLUMNS)))
    c[:, :, 0:3] = planned  # dispatch plan; reassignment happens on the day
    prev_y = np.vstack([np.full((1, n), cfg.base_rate), y[:-1]])
    svc_noise = r_feat.normal(0.0, 0.005, (n_days, n, 3))
    c[:, :, 3:6] = np.clip(prev_y[:, :, None] + svc_offset[None, None, :] + svc_noise, 0.0, 1.0)
    c[:, :, 6] = tenure[None, :]
    c[:, :, 7] = age[None, :]
    prev_backlog_all = np.vstack([np.zeros((1, n)), backlog[:-1]])
    c[:, :, 8] = prev_backlog_all
    prev_props = np.concatenate([territory[None], props[:-1]], axis=0)
    c[:, :, 9] = (prev_props.sum(axis=2) == 0).astype(np.float64)
    c[:, :, 10:15] = np.eye(len(WEATHER))[weather][:, None, :]
    c[:, :, 15] = t_high[:, None]
    c[:, :, 16] = t_low[:, None]
    c[:, :, 17] = t_avg[:, None]
    c[:, :, 18:25] = np.eye(7)[dow][:, None, :]
    c[:, :, 25] = holiday[:, None]

    lag = lambda v: np.concatenate([[0.0], v[:-1]])  # noqa: E731
    a = np.zeros((n_days, n, 4))
    a[:, :, 0] = np.log1p(lag(city_cases))[:, None]
    a[:, :, 1] = np.log1p(lag(city_asym))[:, None]
    a[:, :, 2] = np.log1p(lag(area_cases))[:, None]
    a[:, :, 3] = prev_backlog_all

    diagnostics = dict(intensity=intensity, locked=locked, outbreak_centers=centers, home=home, team=team,
                       territory=territory, orders=orders, planned=planned, props=props, backlog=backlog, incoming=incoming,
                       capacity=capacity, absent=absent, volume=volume, extent=extent)
    return Panel(c=c, p=prev_props, a=a, y=y, centroids=centroids, network=network,
                 calibration_days=cfg.calibration_days, train_frac=cfg.train_frac, val_frac=cfg.val_frac,
                 meta={"scenario": cfg.to_dict()}, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Z-score parameters fitted on training-split rows.

    Columns whose training values are all 0/1 are treated as one-hot
    indicators and passed through unscaled.
    """

    c_mean: np.ndarray
    c_std: np.ndarray
    c_scaled: np.ndarray
    a_mean: np.ndarray
    a_std: np.ndarray
    zero_variance: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"c_mean": self.c_mean.tolist(), "c_std": self.c_std.tolist(), "c_scaled": self.c_scaled.tolist(),
                "a_mean": self.a_mean.tolist(), "a_std": self.a_std.tolist(),
                "zero_variance": list(self.zero_variance)}

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        return cls(np.array(d["c_mean"]), np.array(d["c_std"]), np.array(d["c_scaled"], dtype=bool),
                   np.array(d["a_mean"]), np.array(d["a_std"]), tuple(d.get("zero_variance", ())))


def _zscore(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (x - mean) / safe, 0.0)


def fit_normalizer(panel: Panel) -> NormStats:
    lo, hi = panel.bounds()["train"]
    c = panel.c[lo:hi].reshape(-1, panel.d_c)
    a = panel.a[lo:hi].reshape(-1, panel.a.shape[2])
    indicator = np.all((c == 0.0) | (c == 1.0), axis=0)
    c_mean = np.where(indicator, 0.0, c.mean(axis=0))
    c_std = np.where(indicator, 1.0, c.std(axis=0))
    a_mean, a_std = a.mean(axis=0), a.std(axis=0)
    dead = [panel.c_columns[k] for k in np.flatnonzero(c_std == 0)]
    dead += [f"a_{k}" for k in np.flatnonzero(a_std == 0)]
    if dead:
        warnings.warn(f"columns constant on the training split are normalised to zero: {dead}", RuntimeWarning,
                      stacklevel=2)
    return NormStats(c_mean, c_std, ~indicator, a_mean, a_std, tuple(dead))


@dataclass
class PreparedPanel:
    """Normalised arrays ready for windowing."""

    c: np.ndarray
    p: np.ndarray
    a: np.ndarray
    y: np.ndarray
    panel: Panel
    stats: NormStats

    def window(self, t: int, T: int) -> "Window":
        return _window(self.c, self.p, self.a, self.y, t, T)


def prepare(panel: Panel, stats: NormStats | None = None) -> PreparedPanel:
    stats = stats or fit_normalizer(panel)
    c = np.where(stats.c_scaled, _zscore(panel.c, stats.c_mean, stats.c_std), panel.c)
    a = _zscore(panel.a, stats.a_mean, stats.a_std)
    return PreparedPanel(c=c, p=panel.p, a=a, y=panel.y, panel=panel, stats=stats)


@dataclass
class Window:
    """Inputs for days ``t-T .. t`` (axis 0) for every courier, plus labels at ``t``."""

    t: int
    c: np.ndarray   # (T+1, N, D)
    p: np.ndarray   # (T+1, N, M)
    a: np.ndarray   # (T+1, N, 4)
    y: np.ndarray   # (N,)


def _window(c, p, a, y, t: int, T: int) -> Window:
    if T < 0:
        raise WindowError(f"history length must be >= 0, got {T}")
    if t - T < 0 or t >= y.shape[0]:
        raise WindowError(f"day {t} with T={T} needs days {t - T}..{t}, panel covers 0..{y.shape[0] - 1}")
    sl = slice(t - T, t + 1)
    return Window(t=t, c=c[sl], p=p[sl], a=a[sl], y=y[t].copy())


def window(panel: Panel | PreparedPanel, t: int, T: int) -> Window:
    return _window(panel.c, panel.p, panel.a, panel.y, t, T)


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------

PANEL_FILES = ("panel.csv", "panel_meta.json", "districts.txt", "road_edges.txt", "road_nodes.txt")


def export_panel(panel: Panel, out_dir: str | Path) -> list[Path]:
    """Write the panel CSV plus district/road sidecars; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_days, n = panel.n_days, panel.n_couriers
    day, courier = np.meshgrid(np.arange(n_days), np.arange(n), indexing="ij")
    cols = {"courier_id": courier.ravel(), "day": day.ravel(), "y": panel.y.ravel()}
    for k in range(panel.d_c):
        cols[f"c_{k}"] = panel.c[:, :, k].ravel()
    for k in range(panel.n_districts):
        cols[f"p_{k}"] = panel.p[:, :, k].ravel()
    for k in range(panel.a.shape[2]):
        cols[f"a_{k}"] = panel.a[:, :, k].ravel()
    paths = [out / f for f in PANEL_FILES]
    pd.DataFrame(cols).to_csv(paths[0], index=False, float_format="%.17g")
    meta = {"calibration_days": panel.calibration_days, "train_frac": panel.train_frac, "val_frac": panel.val_frac,
            "c_columns": list(panel.c_columns), "a_columns": list(A_COLUMNS), **panel.meta}
    paths[1].write_text(json.dumps(meta, indent=2, sort_keys=True))
    save_centroids(panel.centroids, paths[2])
    save_road_network(panel.network, paths[3], paths[4])
    return paths


def _indexed(df: pd.DataFrame, prefix: str) -> list[str]:
    cols = [c for c in df.columns if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def import_panel(data_dir: str | Path, panel_csv: str | Path | None = None) -> Panel:
    """Load a panel from ``panel.csv`` and its sidecar files.

    Columns named ``cat_<name>`` hold categorical labels; each is one-hot
    encoded (levels in sorted order) and appended to the C features.
    """
    root = Path(data_dir)
    csv_path = Path(panel_csv) if panel_csv else root / "panel.csv"
    if not csv_path.is_file():
        raise DataError(f"panel CSV not found: {csv_path}")
    df = pd.read_csv(csv_path, float_precision="round_trip")
    for col in ("courier_id", "day", "y"):
        if col not in df.columns:
            raise DataError(f"{csv_path}: missing column {col!r}")
    c_cols, p_cols, a_cols = _indexed(df, "c_"), _indexed(df, "p_"), _indexed(df, "a_")
    cat_cols = sorted(c for c in df.columns if c.startswith("cat_"))
    if len(a_cols) != 4:
        raise DataError(f"{csv_path}: expected a_0..a_3, found {a_cols}")
    dup = df.duplicated(["courier_id", "day"])
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise DataError(f"duplicate row for courier {row.courier_id}, day {row.day}")
    couriers = np.sort(df["courier_id"].unique())
    days = np.arange(df["day"].min(), df["day"].max() + 1)
    full = pd.MultiIndex.from_product([days, couriers], names=["day", "courier_id"])
    df = df.set_index(["day", "courier_id"])
    missing = full.difference(df.index)
    if len(missing):
        d, cid = missing[0]
        raise DataError(f"missing cell: courier {cid}, day {d}")
    df = df.reindex(full)
    numeric = c_cols + p_cols + a_cols + ["y"]
    if df[numeric].isna().any().any():
        bad = df[numeric].isna().any(axis=1)
        d, cid = df.index[bad.values][0]
        raise DataError(f"missing value for courier {cid}, day {d}")
    y = df["y"].to_numpy(np.float64).reshape(len(days), len(couriers))
    if ((y <= 0) | (y >= 1)).any():
        d, cid = df.index[((df["y"] <= 0) | (df["y"] >= 1)).values][0]
        raise DataError(f"label outside (0, 1) for courier {cid}, day {d}")
    shape = (len(days), len(couriers))
    c = df[c_cols].to_numpy(np.float64).reshape(*shape, len(c_cols))
    meta_path = root / "panel_meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    names = list(meta.get("c_columns", c_cols))[: len(c_cols)]
    for col in cat_cols:
        levels = sorted(df[col].astype(str).unique())
        onehot = (df[col].astype(str).to_numpy()[:, None] == np.array(levels)[None, :]).astype(np.float64)
        c = np.concatenate([c, onehot.reshape(*shape, len(levels))], axis=2)
        names += [f"{col[4:]}={lv}" for lv in levels]
    p = df[p_cols].to_numpy(np.float64).reshape(*shape, len(p_cols))
    if (p < 0).any():
        raise DataError("negative order proportion")
    a = df[a_cols].to_numpy(np.float64).reshape(*shape, 4)
    centroids = load_centroids(root / "districts.txt")
    network = load_road_network(root / "road_edges.txt", root / "road_nodes.txt")
    extra = {k: v for k, v in meta.items() if k not in ("calibration_days", "train_frac", "val_frac", "c_columns",
                                                        "a_columns")}
    return Panel(c=c, p=p, a=a, y=y, centroids=centroids, network=network,
                 calibration_days=int(meta.get("calibration_days", 30)), train_frac=float(meta.get("train_frac", 0.8)),
                 val_frac=float(meta.get("val_frac", 0.1)), c_columns=tuple(names), meta=extra)
