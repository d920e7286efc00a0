"""Gradient-boosted regression trees, from scratch.

Squared-error objective fitted by K additive trees.  Each round fits one
tree to the second-order statistics of the current residuals:

    g_i = 2*(yhat_i - y_i),  h_i = 2
    leaf weight  w* = -G/(H + lambda)
    split gain   1/2 * [GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)] - gamma

Splits are found by exact greedy enumeration over sorted feature columns
(vectorized: one argsort + cumsums per node); a split is accepted only when
its gain is strictly positive.  Ties in gain break toward the lowest feature
index, then the earliest split position.  Thresholds are the smallest
right-side value with routing ``x < threshold -> left``, which is exact on
repeated values.  Predictions sum eta-scaled leaf weights from a base score
of 0.  Feature importance is accumulated split gain, normalized.

Also defines the feature encoding gluing a model's macro-architecture
counts and a quantization configuration into one fixed-width vector
(one-hot per categorical dimension + raw counts).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ir import ModelFeatures
from .quantize import CACHE_SIZES, CLIPPINGS, GRANULARITIES, MIXED_MODES, QuantConfig
from .schemes import Scheme

SCHEME_ORDER = tuple(s.value for s in Scheme)

FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"cache={c}" for c in CACHE_SIZES]
    + [f"scheme={s}" for s in SCHEME_ORDER]
    + [f"clipping={c}" for c in CLIPPINGS]
    + [f"granularity={g}" for g in GRANULARITIES]
    + [f"mixed={m}" for m in MIXED_MODES]
    + ["fusion=Off", "fusion=On"]
    + ["n_nodes", "n_layers", "n_conv", "n_depthwise", "n_pointwise",
       "n_skip", "n_relu", "n_softmax"]
)
N_FEATURES = len(FEATURE_NAMES)  # 15 one-hot + 8 numeric = 23


def encode(e: ModelFeatures, s: QuantConfig) -> np.ndarray:
    def onehot(value, domain) -> list[float]:
        return [1.0 if value == d else 0.0 for d in domain]

    cols = (
        onehot(s.cache, CACHE_SIZES)
        + onehot(s.scheme.value, SCHEME_ORDER)
        + onehot(s.clipping, CLIPPINGS)
        + onehot(s.granularity, GRANULARITIES)
        + onehot(s.mixed, MIXED_MODES)
        + onehot(bool(s.fusion), (False, True))
        + [float(e.n_nodes), float(e.n_layers), float(e.n_conv),
           float(e.n_depthwise), float(e.n_pointwise), float(e.n_skip),
           float(e.activation_kinds.get("relu", 0)),
           float(e.activation_kinds.get("softmax", 0))]
    )
    return np.asarray(cols, dtype=np.float64)


def grad_hess(y: np.ndarray | float, yhat: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """First/second derivatives of squared loss (yhat - y)^2 w.r.t. yhat."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    return 2.0 * (yhat - y), np.full_like(yhat, 2.0)


def leaf_weight(G: float, H: float, lam: float) -> float:
    return -G / (H + lam)


def split_gain(GL: float, HL: float, GR: float, HR: float,
               lam: float, gamma: float) -> float:
    joint = (GL + GR) ** 2 / (HL + HR + lam)
    return 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - joint) - gamma


DEFAULT_HYPER = {"eta": 0.3, "gamma": 0.0, "lam": 1.0, "max_depth": 6, "n_trees": 100}


@dataclass
class GBTModel:
    trees: list[dict]
    hyper: dict
    n_features: int
    feature_gain: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray,
                lam: float, gamma: float) -> tuple[int, float, float] | None:
    n, d = X.shape
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    gains = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)) - gamma
    gains = np.where(Xs[1:] > Xs[:-1], gains, -np.inf)
    flat = gains.T.reshape(-1)  # feature-major: ties -> lowest feature, then position
    best = int(np.argmax(flat))
    best_gain = float(flat[best])
    if not np.isfinite(best_gain) or best_gain <= 0.0:
        return None
    f, k = divmod(best, n - 1)
    return f, float(Xs[k + 1, f]), best_gain


def _build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int,
                hyper: dict, gain_acc: np.ndarray) -> dict:
    lam, gamma = hyper["lam"], hyper["gamma"]
    if depth < hyper["max_depth"]:
        found = _best_split(X, g, h, lam, gamma)
    else:
        found = None
    if found is None:
        return {"leaf": leaf_weight(g.sum(), h.sum(), lam)}
    f, thr, gain = found
    gain_acc[f] += gain
    mask = X[:, f] < thr
    return {
        "feature": f,
        "threshold": thr,
        "left": _build_tree(X[mask], g[mask], h[mask], depth + 1, hyper, gain_acc),
        "right": _build_tree(X[~mask], g[~mask], h[~mask], depth + 1, hyper, gain_acc),
    }


def _predict_tree(tree: dict, X: np.ndarray) -> np.ndarray:
    out = np.zeros(len(X))
    stack = [(tree, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if "leaf" in node:
            out[idx] = node["leaf"]
            continue
        mask = X[idx, node["feature"]] < node["threshold"]
        stack.append((node["left"], idx[mask]))
        stack.append((node["right"], idx[~mask]))
    return out


def train(X: np.ndarray, y: np.ndarray, **hyper) -> GBTModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training set must be a nonempty 2-d matrix")
    if len(X) != len(y):
        raise ValueError("X/y length mismatch")
    hp = {**DEFAULT_HYPER, **hyper}
    unknown = set(hp) - set(DEFAULT_HYPER)
    if unknown:
        raise ValueError(f"unknown hyperparameters {sorted(unknown)}")
    gain_acc = np.zeros(X.shape[1])
    trees: list[dict] = []
    yhat = np.zeros(len(y))
    for _ in range(hp["n_trees"]):
        g, h = grad_hess(y, yhat)
        tree = _build_tree(X, g, h, 0, hp, gain_acc)
        yhat = yhat + hp["eta"] * _predict_tree(tree, X)
        trees.append(tree)
    return GBTModel(trees=trees, hyper=hp, n_features=X.shape[1], feature_gain=gain_acc)


def predict(model: GBTModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.zeros(len(X))
    for tree in model.trees:
        out += model.hyper["eta"] * _predict_tree(tree, X)
    return out[0] if single else out


def feature_importance(model: GBTModel) -> list[tuple[int, float]]:
    """(feature index, normalized total gain), descending; ties by index."""
    total = float(model.feature_gain.sum())
    if total <= 0.0:
        return []
    shares = model.feature_gain / total
    order = sorted(range(len(shares)), key=lambda i: (-shares[i], i))
    return [(i, float(shares[i])) for i in order if shares[i] > 0.0]


def save_gbt(model: GBTModel, path: str) -> None:
    doc = {
        "format": "gbt",
        "version": 1,
        "hyper": model.hyper,
        "n_features": model.n_features,
        "feature_gain": model.feature_gain.tolist(),
        "trees": model.trees,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_gbt(path: str) -> GBTModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "gbt":
        raise ValueError(f"{path}: not a tree-model file")
    return GBTModel(trees=doc["trees"], hyper=doc["hyper"],
                    n_features=int(doc["n_features"]),
                    feature_gain=np.asarray(doc["feature_gain"], dtype=np.float64))
