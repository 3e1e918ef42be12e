"""Rank schedule variants: analytical cost model and learned pairwise judge.

The cost model charges every byte of working set resident at a cache level
with that level's latency-to-bandwidth ratio:

    C = sum_i WS_Li * lat_Li / bw_Li  +  WS_mem * lat_mem / bw_mem

computed in exact rational arithmetic; smaller is better.  The learned
ranker is a small feed-forward network judging one pair of variants at a
time from their jointly normalized per-level working-set statistics, with
a tournament over all pairs producing the final order.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .cachemap import CacheAssignment, MachineModel

LAYER_DIMS = (8, 64, 32, 16, 8, 2)
ACTIVATIONS = ("relu", "relu", "softsign", "relu")
DEFAULT_THETA = 0.6


class RankError(Exception):
    pass


@dataclass(frozen=True)
class VariantStats:
    variant_id: str
    ws_l1: float
    ws_l2: float
    ws_l3: float
    ws_mem: float

    @classmethod
    def from_assignment(cls, variant_id: str, a: CacheAssignment) -> "VariantStats":
        vals = [v for _, v in a.level_bytes]
        if len(vals) > 3:
            raise RankError("statistics assume at most three cache levels")
        vals += [0] * (3 - len(vals))
        return cls(variant_id, float(vals[0]), float(vals[1]), float(vals[2]),
                   float(a.mem_bytes))

    def vector(self) -> np.ndarray:
        return np.array([self.ws_l1, self.ws_l2, self.ws_l3, self.ws_mem],
                        dtype=np.float64)


@dataclass(frozen=True)
class RankedList:
    method: str  # "cost" | "dnn"
    order: tuple[str, ...]
    scores: tuple[tuple[str, float], ...]

    def top(self, k: int) -> tuple[str, ...]:
        return self.order[:max(1, k)]

    def to_dict(self) -> dict:
        return {"method": self.method, "order": list(self.order),
                "scores": {k: v for k, v in self.scores}}


# ---------------------------------------------------------------------------
# Analytical cost
# ---------------------------------------------------------------------------


def cost(assignment: CacheAssignment, m: MachineModel) -> Fraction:
    """Latency-per-bandwidth weighted size of each level's working set."""
    total = Fraction(0)
    for lv in m.levels:
        bw = Fraction(lv.bandwidth)
        if bw == 0:
            raise RankError(f"zero bandwidth at {lv.name}")
        total += Fraction(assignment.level_total(lv.name)) * Fraction(lv.latency) / bw
    mbw = Fraction(m.mem_bandwidth)
    if mbw == 0:
        raise RankError("zero memory bandwidth")
    total += Fraction(assignment.mem_bytes) * Fraction(m.mem_latency) / mbw
    return total


def cost_of_stats(stats: VariantStats, m: MachineModel) -> Fraction:
    levels = list(m.levels)
    vals = [stats.ws_l1, stats.ws_l2, stats.ws_l3][:len(levels)]
    total = Fraction(0)
    for lv, v in zip(levels, vals):
        total += Fraction(v) * Fraction(lv.latency) / Fraction(lv.bandwidth)
    total += Fraction(stats.ws_mem) * Fraction(m.mem_latency) / Fraction(m.mem_bandwidth)
    return total


def rank_by_cost(stats: Sequence[VariantStats], m: MachineModel) -> RankedList:
    """Ascending cost; ties fall back to variant id."""
    if not stats:
        raise RankError("nothing to rank")
    scored = sorted(((cost_of_stats(s, m), s.variant_id) for s in stats),
                    key=lambda t: (t[0], t[1]))
    return RankedList("cost",
                      tuple(vid for _, vid in scored),
                      tuple((vid, float(c)) for c, vid in scored))


# ---------------------------------------------------------------------------
# Pairwise DNN judge
# ---------------------------------------------------------------------------


def pair_features(v1: VariantStats, v2: VariantStats) -> np.ndarray:
    """Both variants' statistics normalized by their joint sum.

    Joint normalization preserves the relative magnitudes the judge needs;
    scaling each variant alone would erase exactly the signal that makes
    one variant's working sets larger than the other's."""
    raw = np.concatenate([v1.vector(), v2.vector()])
    total = raw.sum()
    if total == 0:
        warnings.warn("all-zero statistics pair; using the uniform vector")
        return np.full(8, 1.0 / 8.0)
    return raw / total


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return z / (1.0 + np.abs(z))  # softsign


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 / (1.0 + np.abs(z)) ** 2


@dataclass
class RankerModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    theta: float = DEFAULT_THETA

    @classmethod
    def initialize(cls, seed: int = 0, theta: float = DEFAULT_THETA) -> "RankerModel":
        """Fan-in scaled uniform weights; deterministic for a given seed."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(LAYER_DIMS, LAYER_DIMS[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, theta)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Softmax pair (p1, p2) for one feature vector."""
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        h = X
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = _act(ACTIVATIONS[i], z) if i < len(ACTIVATIONS) else z
        z = h - h.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        if not np.all(np.isfinite(p)):
            raise RankError("non-finite activation: corrupted model weights")
        return p

    def save(self, path: str):
        arrays = {"version": np.array([1]), "theta": np.array([self.theta]),
                  "dims": np.array(LAYER_DIMS)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str) -> "RankerModel":
        data = np.load(path)
        if int(data["version"][0]) != 1:
            raise RankError("unsupported model file version")
        if tuple(data["dims"]) != LAYER_DIMS:
            raise RankError("model file has unexpected layer dimensions")
        n = len(LAYER_DIMS) - 1
        return cls([data[f"w{i}"] for i in range(n)],
                   [data[f"b{i}"] for i in range(n)],
                   float(data["theta"][0]))


def dnn_judge(model: RankerModel, v1: VariantStats, v2: VariantStats) -> str:
    """'win1' / 'win2' when a softmax output clears theta, else 'draw'.

    theta > 0.5 and p1 + p2 = 1 guarantee at most one side can win."""
    p1, p2 = model.forward(pair_features(v1, v2))
    if p1 > model.theta:
        return "win1"
    if p2 > model.theta:
        return "win2"
    return "draw"


def tournament_rank(model: RankerModel, stats: Sequence[VariantStats],
                    both_directions: bool = False) -> RankedList:
    """Play every unordered pair once (lower id first), rank by wins."""
    if len(stats) < 2:
        raise RankError("a tournament needs at least two variants")
    by_id = sorted(stats, key=lambda s: s.variant_id)
    wins = {s.variant_id: 0 for s in by_id}
    for i in range(len(by_id)):
        for j in range(i + 1, len(by_id)):
            a, b = by_id[i], by_id[j]
            verdict = dnn_judge(model, a, b)
            if verdict == "win1":
                wins[a.variant_id] += 1
            elif verdict == "win2":
                wins[b.variant_id] += 1
            if both_directions:
                verdict = dnn_judge(model, b, a)
                if verdict == "win1":
                    wins[b.variant_id] += 1
                elif verdict == "win2":
                    wins[a.variant_id] += 1
    order = sorted(wins, key=lambda v: (-wins[v], v))
    return RankedList("dnn", tuple(order),
                      tuple((v, float(wins[v])) for v in order))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.3
    theta: float = DEFAULT_THETA


@dataclass
class TrainResult:
    model: RankerModel
    train_accuracy: float
    val_accuracy: float
    final_loss: float
    epochs_run: int


def loss_and_gradients(model: RankerModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch plus gradients for every layer."""
    acts = [X]
    zs = []
    h = X
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        zs.append(z)
        h = _act(ACTIVATIONS[i], z) if i < len(ACTIVATIONS) else z
        acts.append(h)
    zmax = h - h.max(axis=1, keepdims=True)
    e = np.exp(zmax)
    p = e / e.sum(axis=1, keepdims=True)
    n = X.shape[0]
    eps = 1e-12
    loss = -np.log(p[np.arange(n), y] + eps).mean()
    delta = p.copy()  # dL/dz of the linear output layer (softmax + CE)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in reversed(range(len(model.weights))):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * _act_grad(ACTIVATIONS[i - 1], zs[i - 1])
    return loss, grads_w, grads_b, p


def _accuracy(model: RankerModel, X: np.ndarray, y: np.ndarray) -> float:
    if len(X) == 0:
        return float("nan")
    p = model.forward_batch(X)
    return float((p.argmax(axis=1) == y).mean())


def train_ranker(dataset: Sequence[tuple[VariantStats, VariantStats, int]],
                 config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD on cross-entropy; label 0 means the first variant wins.

    Deterministic under a fixed seed: shuffling, init and batching all come
    from one generator."""
    if not dataset:
        raise RankError("empty training dataset")
    X = np.stack([pair_features(a, b) for a, b, _ in dataset])
    y = np.array([label for _, _, label in dataset], dtype=np.int64)
    if not set(np.unique(y)) <= {0, 1}:
        raise RankError("labels must be 0 (first better) or 1 (second better)")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(X))
    X, y = X[perm], y[perm]
    n_val = int(len(X) * config.val_fraction)
    X_val, y_val = X[:n_val], y[:n_val]
    X_tr, y_tr = X[n_val:], y[n_val:]
    if len(X_tr) == 0:
        X_tr, y_tr = X, y
    model = RankerModel.initialize(seed=config.seed, theta=config.theta)
    loss = float("nan")
    for _ in range(config.epochs):
        order = rng.permutation(len(X_tr))
        for start in range(0, len(X_tr), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, gw, gb, _ = loss_and_gradients(model, X_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise RankError(f"training diverged: loss={loss}")
            for i in range(len(model.weights)):
                model.weights[i] -= config.learning_rate * gw[i]
                model.biases[i] -= config.learning_rate * gb[i]
    return TrainResult(model,
                       _accuracy(model, X_tr, y_tr),
                       _accuracy(model, X_val, y_val),
                       float(loss), config.epochs)


# ---------------------------------------------------------------------------
# Dataset files: 8 raw statistics per pair + label
# ---------------------------------------------------------------------------

_FIELDS = ["a_l1", "a_l2", "a_l3", "a_mem", "b_l1", "b_l2", "b_l3", "b_mem",
           "label"]


def save_dataset(path: str,
                 rows: Sequence[tuple[VariantStats, VariantStats, int]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_FIELDS)
        for a, b, label in rows:
            w.writerow([*a.vector(), *b.vector(), label])


def load_dataset(path: str) -> list[tuple[VariantStats, VariantStats, int]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _FIELDS:
            raise RankError(f"unexpected dataset header {header}")
        for i, row in enumerate(reader):
            vals = [float(x) for x in row[:8]]
            label = int(row[8])
            out.append((VariantStats(f"a{i}", *vals[:4]),
                        VariantStats(f"b{i}", *vals[4:]), label))
    return out
