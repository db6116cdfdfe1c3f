"""The DeepSTA forecaster.

Per day, district embeddings are mixed by each courier's order proportions,
concatenated with the day features and projected by a fully connected layer;
one GCN layer over the courier graph fuses neighbours. A two-layer LSTM
encodes the ``T+1`` day window, a small tanh RNN encodes the anomaly factors,
and their concatenation queries a trainable memory. A sigmoid head reads
``[S, E, a]``.

Two forward paths exist. :meth:`DeepSTA.forward_window` is the literal
per-day pipeline over all couriers. :meth:`DeepSTA.forward` is the training
path: since ``A (Z W + 1 b^T) = (A Z) W + (A 1) b^T`` and ``Z`` (mixed
embedding plus features) is frozen, ``A Z`` is computed once per dataset and
only the sampled couriers' rows are pushed through the network.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .config import ExperimentConfig
from .errors import ConfigError, DataError, DimensionError
from .scenario import PreparedPanel, Window

N_FACTORS = 4


@dataclass(frozen=True)
class Variant:
    road: bool = True
    gcn: str = "graph"      # graph | identity | none
    lstm: bool = True
    memory: bool = True
    rnn: bool = True


VARIANT_FLAGS = {
    "full": Variant(),
    "wo_road": Variant(road=False),
    "wo_gcn": Variant(gcn="identity"),
    "wo_lstm": Variant(lstm=False),
    "wo_memory": Variant(memory=False),
    "wo_rnn": Variant(rnn=False),
    "wo_memory_rnn": Variant(memory=False, rnn=False),
    "baseline:lstm": Variant(road=False, gcn="none", memory=False, rnn=False),
}


def variant_flags(tag: str) -> Variant:
    try:
        return VARIANT_FLAGS[tag]
    except KeyError:
        raise ConfigError(f"variant {tag!r} has no neural architecture") from None


def mix_district_embedding(proportions: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Order-proportion weighted sum of district embedding rows.

    Works on a single simplex vector or any stack of them (last axis = districts).
    """
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape[-1] != emb.shape[0]:
        raise DimensionError(f"proportions over {p.shape[-1]} districts vs embedding with {emb.shape[0]} rows")
    if (p < 0).any():
        raise DataError("order proportions must be non-negative")
    return p @ emb


def check_window_complete(days: np.ndarray, couriers: np.ndarray, *arrays: np.ndarray) -> None:
    """Raise on a non-finite input cell; arrays are laid out (steps, couriers, features)."""
    for arr in arrays:
        bad = ~np.isfinite(arr).all(axis=-1)
        if bad.any():
            k, j = (int(x[0]) for x in np.nonzero(bad))
            raise DataError(f"courier {int(couriers[j])} has no data for day {int(days[k])}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


@dataclass
class Batch:
    """Training-path inputs for ``B`` (courier, day) samples."""

    xs: np.ndarray             # (T+1, B, d_in) rows of A @ Z
    rowsum: np.ndarray | None  # (B,) row sums of A; None means 1
    a: np.ndarray              # (T+1, B, 4)
    y: np.ndarray              # (B,)
    days: np.ndarray
    couriers: np.ndarray


class ModelInputs:
    """Frozen per-dataset arrays for one architecture variant."""

    def __init__(self, prepared: PreparedPanel, emb: np.ndarray | None, adj: np.ndarray, variant: Variant):
        parts = []
        if variant.road:
            if emb is None:
                raise ConfigError("variant needs a district embedding")
            parts.append(mix_district_embedding(prepared.p, emb))
        parts.append(prepared.c)
        if not variant.rnn:
            parts.append(prepared.a)
        z = np.concatenate(parts, axis=2)
        n_days, n = prepared.y.shape
        # before graph mixing, which would smear a gap over the neighbours
        check_window_complete(np.arange(n_days), np.arange(n), z, prepared.a)
        if variant.gcn == "graph":
            if adj.shape != (z.shape[1], z.shape[1]):
                raise DimensionError(f"adjacency {adj.shape} vs {z.shape[1]} couriers")
            self.az = np.einsum("ij,djf->dif", adj, z)
            self.rowsum = adj.sum(axis=1)
        else:
            self.az = z
            self.rowsum = None
        self.a = prepared.a
        self.y = prepared.y
        self.variant = variant

    @property
    def d_in(self) -> int:
        return self.az.shape[2]

    def batch(self, days: np.ndarray, couriers: np.ndarray, T: int) -> Batch:
        days = np.asarray(days, dtype=np.int64)
        couriers = np.asarray(couriers, dtype=np.int64)
        if (days - T < 0).any():
            raise DataError(f"window reaches before day 0 (day {int(days.min())}, T={T})")
        idx = days[None, :] + np.arange(-T, 1)[:, None]
        return Batch(
            xs=self.az[idx, couriers[None, :]],
            rowsum=None if self.rowsum is None else self.rowsum[couriers],
            a=self.a[idx, couriers[None, :]],
            y=self.y[days, couriers],
            days=days,
            couriers=couriers,
        )


class DeepSTA:
    def __init__(self, cfg: ExperimentConfig, d_c: int, d_emb: int = 128, seed: int | None = None,
                 head_bias: float = 0.0, variant: Variant | None = None):
        self.cfg = cfg
        self.variant = variant or variant_flags(cfg.variant)
        self.d_c = d_c
        self.d_emb = d_emb
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self._init(rng, head_bias)

    # -- dimensions ---------------------------------------------------------
    @property
    def d_in(self) -> int:
        v = self.variant
        return (self.d_emb if v.road else 0) + self.d_c + (0 if v.rnn else N_FACTORS)

    @property
    def d_s(self) -> int:
        return self.cfg.d_lstm if self.variant.lstm else self.cfg.d_model

    @property
    def d_e(self) -> int:
        return self.cfg.rnn_hidden if self.variant.rnn else 0

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _init(self, rng: np.random.Generator, head_bias: float) -> None:
        c, v = self.cfg, self.variant
        d = c.d_model
        self._add("fc.W", _uniform(rng, (self.d_in, d), self.d_in))
        self._add("fc.b", np.zeros(d))
        if v.gcn != "none":
            self._add("gcn.W", _uniform(rng, (d, d), d))
        if v.lstm:
            h = c.d_lstm
            for layer in range(c.lstm_layers):
                fan = d if layer == 0 else h
                self._add(f"lstm.{layer}.Wx", _uniform(rng, (fan, 4 * h), h))
                self._add(f"lstm.{layer}.Wh", _uniform(rng, (h, 4 * h), h))
                b = np.zeros(4 * h)
                b[h:2 * h] = 1.0  # forget gate
                self._add(f"lstm.{layer}.b", b)
        if v.rnn:
            r = c.rnn_hidden
            self._add("rnn.W_ih", _uniform(rng, (N_FACTORS, r), r))
            self._add("rnn.W_hh", _uniform(rng, (r, r), r))
            self._add("rnn.b", np.zeros(r))
        if v.memory:
            q_in = self.d_s + self.d_e
            self._add("mem.M", rng.normal(0.0, c.memory_init_std, (c.L_m, c.D_m)))
            self._add("mem.W_q", _uniform(rng, (q_in, c.D_m), q_in))
            self._add("mem.b_q", np.zeros(c.D_m))
        head_in = self.d_s + self.d_e + (c.D_m if v.memory else 0)
        self._add("head.W", _uniform(rng, (head_in, 1), head_in))
        self._add("head.b", np.array([head_bias]))

    def census(self) -> dict[str, tuple[int, ...]]:
        return {k: p.shape for k, p in self.params.items()}

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -- components ---------------------------------------------------------
    def assemble_features(self, z: Tensor, rowsum: np.ndarray | None = None) -> Tensor:
        """FC projection of ``concat(Emb, C[, A])`` rows.

        With ``rowsum`` given, ``z`` rows are already graph-mixed and the bias
        is scaled by the adjacency row sums.
        """
        if z.shape[-1] != self.d_in:
            raise ConfigError(f"feature width {z.shape[-1]} does not match the configured input width {self.d_in}")
        x = ad.matmul(z, self.params["fc.W"])
        if rowsum is None:
            return ad.add_bias(x, self.params["fc.b"])
        b_row = ad.reshape(self.params["fc.b"], (1, self.cfg.d_model))
        return ad.add(x, ad.matmul(Tensor(rowsum[:, None]), b_row))

    def gcn_forward(self, x: Tensor, adj: np.ndarray) -> Tensor:
        if adj.shape != (x.shape[0], x.shape[0]):
            raise DimensionError(f"adjacency {adj.shape} does not match {x.shape[0]} feature rows")
        return ad.relu(ad.matmul(ad.matmul(Tensor(adj), x), self.params["gcn.W"]))

    def lstm_forward(self, seq: Tensor, n_steps: int, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        """Stacked LSTM over ``seq`` laid out step-major as ``(n_steps * B, F)``.

        Returns the top layer's final hidden state ``(B, d_lstm)``.
        """
        if seq.shape[0] % n_steps:
            raise DimensionError(f"{seq.shape[0]} rows do not split into {n_steps} steps")
        B = seq.shape[0] // n_steps
        h_dim = self.cfg.d_lstm
        inp = seq
        outs: list[Tensor] = []
        for layer in range(self.cfg.lstm_layers):
            if layer > 0:
                inp = ad.dropout(ad.concat(outs, axis=0), self.cfg.dropout, training, rng)
            wx, wh, b = (self.params[f"lstm.{layer}.{k}"] for k in ("Wx", "Wh", "b"))
            proj = ad.add_bias(ad.matmul(inp, wx), b)
            h = c = None
            outs = []
            for k in range(n_steps):
                z = proj[k * B:(k + 1) * B]
                if h is not None:
                    z = ad.add(z, ad.matmul(h, wh))
                sig = ad.sigmoid(z[:, :3 * h_dim])
                i_g, f_g, o_g = sig[:, :h_dim], sig[:, h_dim:2 * h_dim], sig[:, 2 * h_dim:]
                g_g = ad.tanh(z[:, 3 * h_dim:])
                c = ad.mul(i_g, g_g) if c is None else ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
                h = ad.mul(o_g, ad.tanh(c))
                outs.append(h)
        return outs[-1]

    def anomaly_forward(self, a_seq: Tensor, n_steps: int) -> Tensor:
        """tanh RNN over the factor window ``(n_steps * B, 4)``; returns ``(B, rnn_hidden)``."""
        B = a_seq.shape[0] // n_steps
        proj = ad.add_bias(ad.matmul(a_seq, self.params["rnn.W_ih"]), self.params["rnn.b"])
        h = None
        for k in range(n_steps):
            z = proj[k * B:(k + 1) * B]
            if h is not None:
                z = ad.add(z, ad.matmul(h, self.params["rnn.W_hh"]))
            h = ad.tanh(z)
        return h

    def memory_attend(self, s: Tensor, e: Tensor | None) -> tuple[Tensor, Tensor, Tensor]:
        """Query the memory with ``[s || e]``; returns ``(query, score, read)`` row-wise."""
        mem = self.params["mem.M"]
        q_in = s if e is None else ad.concat([s, e], axis=1)
        q = ad.add_bias(ad.matmul(q_in, self.params["mem.W_q"]), self.params["mem.b_q"])
        score = ad.softmax(ad.matmul(q, ad.transpose(mem)), axis=-1)
        return q, score, ad.matmul(score, mem)

    def _head(self, s: Tensor, e: Tensor | None, read: Tensor | None, training: bool,
              rng: np.random.Generator | None) -> Tensor:
        parts = [s] + ([e] if e is not None else []) + ([read] if read is not None else [])
        z = ad.concat(parts, axis=1) if len(parts) > 1 else s
        z = ad.dropout(z, self.cfg.head_dropout, training, rng)
        out = ad.sigmoid(ad.add_bias(ad.matmul(z, self.params["head.W"]), self.params["head.b"]))
        return ad.reshape(out, (out.shape[0],))

    def _encode(self, h_flat: Tensor, a_flat: Tensor, n_steps: int, training: bool,
                rng: np.random.Generator | None) -> Tensor:
        v = self.variant
        if v.lstm:
            s = self.lstm_forward(h_flat, n_steps, training, rng)
        else:
            B = h_flat.shape[0] // n_steps
            acc = h_flat[0:B]
            for k in range(1, n_steps):
                acc = ad.add(acc, h_flat[k * B:(k + 1) * B])
            s = ad.scale(acc, 1.0 / n_steps)
        e = self.anomaly_forward(a_flat, n_steps) if v.rnn else None
        read = self.memory_attend(s, e)[2] if v.memory else None
        return self._head(s, e, read, training, rng)

    # -- full forward passes --------------------------------------------------
    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        n_steps, B, d_in = batch.xs.shape
        z = Tensor(batch.xs.reshape(n_steps * B, d_in))
        rowsum = None if batch.rowsum is None else np.tile(batch.rowsum, n_steps)
        x = self.assemble_features(z, rowsum)
        h = ad.relu(ad.matmul(x, self.params["gcn.W"])) if self.variant.gcn != "none" else x
        a_flat = Tensor(batch.a.reshape(n_steps * B, N_FACTORS))
        return self._encode(h, a_flat, n_steps, training, rng)

    def forward_window(self, win: Window, emb: np.ndarray | None, adj: np.ndarray, training: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Literal per-day pipeline for all couriers of one (normalised) window."""
        v = self.variant
        n_steps, n = win.c.shape[0], win.c.shape[1]
        if win.p.shape[:2] != (n_steps, n) or win.a.shape[:2] != (n_steps, n):
            raise DataError("window arrays disagree on days/couriers")
        check_window_complete(np.arange(win.t - n_steps + 1, win.t + 1), np.arange(n), win.c, win.p, win.a)
        graph = adj if v.gcn == "graph" else np.eye(n)
        hs = []
        for k in range(n_steps):
            parts = []
            if v.road:
                parts.append(mix_district_embedding(win.p[k], emb))
            parts.append(win.c[k])
            if not v.rnn:
                parts.append(win.a[k])
            x = self.assemble_features(Tensor(np.concatenate(parts, axis=1)))
            hs.append(self.gcn_forward(x, graph) if v.gcn != "none" else x)
        h_flat = ad.concat(hs, axis=0)
        a_flat = Tensor(win.a.reshape(n_steps * n, N_FACTORS))
        return self._encode(h_flat, a_flat, n_steps, training, rng)

    def predict(self, inputs: ModelInputs, days: np.ndarray, couriers: np.ndarray) -> np.ndarray:
        """Eval-mode predictions for paired ``days``/``couriers`` arrays."""
        out = np.empty(len(days))
        step = self.cfg.eval_batch
        with ad.no_grad():
            for lo in range(0, len(days), step):
                b = inputs.batch(days[lo:lo + step], couriers[lo:lo + step], self.cfg.T)
                out[lo:lo + step] = self.forward(b, training=False).data
        return out

    # -- persistence ------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise DataError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {state[k].shape} vs model {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def save(self, path, meta: dict | None = None) -> None:
        info = {"config": self.cfg.to_dict(), "d_c": self.d_c, "d_emb": self.d_emb, **(meta or {})}
        save_arrays(path, self.state_dict(), info)

    @classmethod
    def load(cls, path) -> tuple["DeepSTA", dict]:
        arrays, meta = load_arrays(path)
        cfg = ExperimentConfig(**meta["config"])
        model = cls(cfg, d_c=meta["d_c"], d_emb=meta["d_emb"])
        model.load_state_dict(arrays)
        return model, meta
