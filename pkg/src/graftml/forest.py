"""Balanced-bootstrap random forest for graft-failure classification.

Trees are grown to exhaustion (pure or unsplittable leaves) on 1:1 balanced
bootstrap samples, with Gini-gain splits over a random feature subset at each
node.  Training is deterministic for a fixed seed regardless of worker count:
each tree's RNG is derived by mixing (master seed, tree index) through
splitmix64, so scheduling cannot reorder random draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .cohort import (
    BOOL_FIELDS,
    DONOR_RACE_LEVELS,
    FIELD_NAMES,
    TransplantRecord,
)

MODEL_FORMAT = "graftml-forest"
MODEL_VERSION = 1

# Exhaustive subset search is used for categoricals up to this many levels;
# beyond that, one-vs-rest.
MAX_EXHAUSTIVE_LEVELS = 10


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # numeric | boolean | categorical
    levels: tuple[float, ...] | None = None


# Predictor fields available to the forest, with their split semantics.
_CATEGORICAL_LEVELS = {
    "donor_race": tuple(float(v) for v in DONOR_RACE_LEVELS),
}
DEFAULT_FEATURES = tuple(
    n for n in FIELD_NAMES
    if n not in (
        "record_id", "transplant_date", "graft_survival_months", "graft_failed",
        "recipient_prior_transplant", "multi_organ", "abo_incompatible",
    )
)
DONOR_FEATURES = tuple(n for n in DEFAULT_FEATURES if not n.startswith("recipient_"))


def feature_specs(names=DEFAULT_FEATURES) -> tuple[FeatureSpec, ...]:
    specs = []
    for n in names:
        if n in _CATEGORICAL_LEVELS:
            specs.append(FeatureSpec(n, "categorical", _CATEGORICAL_LEVELS[n]))
        elif n in BOOL_FIELDS:
            specs.append(FeatureSpec(n, "boolean"))
        else:
            specs.append(FeatureSpec(n, "numeric"))
    return tuple(specs)


def feature_matrix(records, names=DEFAULT_FEATURES) -> np.ndarray:
    """Stack record features into a float matrix, one row per record."""
    X = np.empty((len(records), len(names)))
    for j, n in enumerate(names):
        X[:, j] = [float(getattr(r, n)) for r in records]
    return X


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 1000
    mtry: int | None = None  # None -> floor(sqrt(p)) at train time
    min_node: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError("mtry must be >= 1")


@dataclass
class Leaf:
    n_pos: int
    n_neg: int

    @property
    def vote(self) -> int:
        # Tie votes positive: predicting failure is the cautious error.
        return 1 if self.n_pos >= self.n_neg else 0


@dataclass
class Split:
    feature: int
    threshold: float | None = None  # numeric/boolean: x <= threshold goes left
    levels: tuple[float, ...] | None = None  # categorical: x in levels goes left
    left: object = None
    right: object = None


_M64 = (1 << 64) - 1


def mix_seed(master_seed: int, index: int) -> int:
    """splitmix64 finalizer over (seed, index); stable across platforms."""
    z = (master_seed ^ (index * 0x9E3779B97F4A7C15)) & _M64
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def gini_impurity(n_pos: int, n_neg: int) -> float:
    n = n_pos + n_neg
    if n < 1:
        raise ForestError("gini_impurity of an empty node")
    p = n_pos / n
    q = n_neg / n
    return 1.0 - p * p - q * q


def balanced_bootstrap(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of a 1:1 sample: n_pos draws with replacement from each class."""
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) == 0:
        raise ForestError("degenerate class balance: no positive records")
    if len(neg) < len(pos):
        raise ForestError("degenerate class balance: fewer negatives than positives")
    return np.concatenate([rng.choice(pos, size=len(pos), replace=True),
                           rng.choice(neg, size=len(pos), replace=True)])


def _numeric_candidate(x: np.ndarray, y: np.ndarray, parent_gini: float):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    cuts = np.flatnonzero(xs[1:] > xs[:-1])
    if cuts.size == 0:
        return None
    n = len(xs)
    total_pos = float(ys.sum())
    nl = (cuts + 1).astype(float)
    pl = np.cumsum(ys)[cuts].astype(float)
    nr = n - nl
    pr = total_pos - pl
    gl = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
    gr = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
    gains = parent_gini - (nl * gl + nr * gr) / n
    j = int(np.argmax(gains))
    threshold = 0.5 * (xs[cuts[j]] + xs[cuts[j] + 1])
    return float(gains[j]), threshold


def _categorical_candidate(x: np.ndarray, y: np.ndarray, levels, parent_gini: float):
    lv = np.asarray(levels)
    codes = np.searchsorted(lv, x)
    k = len(lv)
    cnt = np.bincount(codes, minlength=k).astype(float)
    pos = np.bincount(codes, weights=y, minlength=k)
    n = len(x)
    total_pos = float(y.sum())
    if k <= MAX_EXHAUSTIVE_LEVELS:
        # Odd masks always contain level 0, so each partition appears once.
        masks = np.arange(1, 1 << k, 2, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(k)) & 1).astype(float)
    else:
        bits = np.eye(k)
    nl = bits @ cnt
    pl = bits @ pos
    valid = (nl > 0) & (nl < n)
    if not valid.any():
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        nr = n - nl
        pr = total_pos - pl
        gl = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
        gr = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
        gains = parent_gini - (nl * gl + nr * gr) / n
    gains[~valid] = -np.inf
    j = int(np.argmax(gains))
    subset = tuple(float(v) for v, b in zip(lv, bits[j]) if b > 0)
    return float(gains[j]), subset


def best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, candidates,
               specs) -> tuple[int, float | None, tuple | None, float] | None:
    """Best Gini-gain split over the candidate features, or None if no
    candidate improves impurity.  Candidates are scanned in ascending index
    order; ties keep the earlier feature (and the smaller threshold within a
    numeric feature), so the result is order-independent."""
    ysub = y[idx].astype(float)
    n_pos = int(ysub.sum())
    parent = gini_impurity(n_pos, len(idx) - n_pos)
    best = None
    for f in sorted(int(c) for c in candidates):
        x = X[idx, f]
        if specs[f].kind == "categorical":
            cand = _categorical_candidate(x, ysub, specs[f].levels, parent)
            if cand is not None:
                gain, subset = cand
                if gain > 0 and (best is None or gain > best[3]):
                    best = (f, None, subset, gain)
        else:
            cand = _numeric_candidate(x, ysub, parent)
            if cand is not None:
                gain, threshold = cand
                if gain > 0 and (best is None or gain > best[3]):
                    best = (f, threshold, None, gain)
    return best


def _partition(X, idx, feature, threshold, levels):
    x = X[idx, feature]
    mask = (x <= threshold) if threshold is not None else np.isin(x, levels)
    return idx[mask], idx[~mask]


def grow_tree(X: np.ndarray, y: np.ndarray, sample_idx: np.ndarray,
              params: ForestParams, rng: np.random.Generator,
              specs) -> tuple[object, np.ndarray]:
    """Grow one tree to exhaustion on a bootstrap sample.

    Returns the root node and this tree's impurity-decrease importance
    (gain weighted by node fraction of the root sample, per feature).
    """
    p = X.shape[1]
    mtry = params.mtry if params.mtry is not None else max(1, int(math.isqrt(p)))
    if mtry > p:
        raise ForestError(f"mtry={mtry} exceeds feature count {p}")
    importance = np.zeros(p)
    n_root = len(sample_idx)
    if n_root == 0:
        raise ForestError("empty bootstrap sample")

    root_box = [None]
    # Stack entries: (idx, parent node or root_box, side); LIFO with right
    # pushed first keeps the rng draw order fixed (left subtree first).
    stack = [(sample_idx, root_box, 0)]
    while stack:
        idx, parent, side = stack.pop()
        ysub = y[idx]
        n_pos = int(ysub.sum())
        n_neg = len(idx) - n_pos
        node = None
        if n_pos == 0 or n_neg == 0 or len(idx) < 2 * params.min_node:
            node = Leaf(n_pos, n_neg)
        else:
            candidates = rng.choice(p, size=mtry, replace=False)
            found = best_split(X, y, idx, candidates, specs)
            if found is None:
                node = Leaf(n_pos, n_neg)
            else:
                f, threshold, levels, gain = found
                importance[f] += gain * len(idx) / n_root
                node = Split(feature=f, threshold=threshold, levels=levels)
                left_idx, right_idx = _partition(X, idx, f, threshold, levels)
                stack.append((right_idx, node, 1))
                stack.append((left_idx, node, 0))
        if isinstance(parent, list):
            parent[0] = node
        elif side == 0:
            parent.left = node
        else:
            parent.right = node
    return root_box[0], importance


@dataclass
class ForestModel:
    trees: tuple
    params: ForestParams
    feature_names: tuple[str, ...]
    specs: tuple[FeatureSpec, ...]
    importance: np.ndarray = field(repr=False)

    def __eq__(self, other):
        return (isinstance(other, ForestModel)
                and self.trees == other.trees
                and self.params == other.params
                and self.feature_names == other.feature_names
                and self.specs == other.specs
                and np.array_equal(self.importance, other.importance))


def _train_one(X, y, params, specs, tree_index):
    rng = np.random.default_rng(mix_seed(params.seed, tree_index))
    sample = balanced_bootstrap(y, rng)
    return grow_tree(X, y, sample, params, rng, specs)


def train_forest(X: np.ndarray, y: np.ndarray, params: ForestParams,
                 feature_names=DEFAULT_FEATURES, n_jobs: int = 1) -> ForestModel:
    """Train n_trees balanced-bootstrap trees.

    n_jobs only affects wall time; tree i always sees the rng stream derived
    from (seed, i), so any worker count gives an identical model.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int8)
    if X.shape[1] != len(feature_names):
        raise ForestError("feature_names do not match matrix width")
    specs = feature_specs(feature_names)
    pos = int((y == 1).sum())
    if pos == 0:
        raise ForestError("degenerate class balance: no positive records")
    if int((y == 0).sum()) < pos:
        raise ForestError("degenerate class balance: fewer negatives than positives")

    if n_jobs == 1:
        results = [_train_one(X, y, params, specs, i) for i in range(params.n_trees)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_train_one)(X, y, params, specs, i) for i in range(params.n_trees)
        )
    trees = tuple(r[0] for r in results)
    importance = np.mean([r[1] for r in results], axis=0)
    return ForestModel(trees=trees, params=params, feature_names=tuple(feature_names),
                       specs=specs, importance=importance)


def tree_votes(node, X: np.ndarray) -> np.ndarray:
    """Route all rows of X through one tree; returns 0/1 votes."""
    out = np.empty(len(X), dtype=np.int8)
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if len(idx) == 0:
            continue
        if isinstance(nd, Leaf):
            out[idx] = nd.vote
        else:
            x = X[idx, nd.feature]
            mask = (x <= nd.threshold) if nd.threshold is not None else np.isin(x, nd.levels)
            stack.append((nd.left, idx[mask]))
            stack.append((nd.right, idx[~mask]))
    return out


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Fraction of trees voting graft failure, per row of X.

    Also accepts a single TransplantRecord and returns a scalar.
    """
    single = isinstance(X, TransplantRecord)
    if single:
        X = feature_matrix([X], model.feature_names)
    X = np.asarray(X, dtype=float)
    votes = np.zeros(len(X))
    for tree in model.trees:
        votes += tree_votes(tree, X)
    proba = votes / len(model.trees)
    return float(proba[0]) if single else proba


def variable_importance(model: ForestModel) -> list[tuple[str, float]]:
    """Mean impurity decrease per feature, descending; ties by name."""
    pairs = list(zip(model.feature_names, (float(v) for v in model.importance)))
    return sorted(pairs, key=lambda kv: (-kv[1], kv[0]))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _node_to_dict(node):
    if isinstance(node, Leaf):
        return {"leaf": [node.n_pos, node.n_neg]}
    d = {"f": node.feature, "l": _node_to_dict(node.left), "r": _node_to_dict(node.right)}
    if node.threshold is not None:
        d["t"] = node.threshold
    else:
        d["s"] = list(node.levels)
    return d


def _node_from_dict(d):
    if "leaf" in d:
        return Leaf(n_pos=d["leaf"][0], n_neg=d["leaf"][1])
    return Split(
        feature=d["f"],
        threshold=d.get("t"),
        levels=tuple(d["s"]) if "s" in d else None,
        left=_node_from_dict(d["l"]),
        right=_node_from_dict(d["r"]),
    )


def model_to_json(model: ForestModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": {
            "n_trees": model.params.n_trees,
            "mtry": model.params.mtry,
            "min_node": model.params.min_node,
            "seed": model.params.seed,
        },
        "features": [
            {"name": s.name, "kind": s.kind, "levels": list(s.levels) if s.levels else None}
            for s in model.specs
        ],
        "importance": [float(v) for v in model.importance],
        "trees": [_node_to_dict(t) for t in model.trees],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_model(model: ForestModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> ForestModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ForestError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} file")
    params = ForestParams(**doc["params"])
    specs = tuple(
        FeatureSpec(e["name"], e["kind"], tuple(e["levels"]) if e["levels"] else None)
        for e in doc["features"]
    )
    return ForestModel(
        trees=tuple(_node_from_dict(t) for t in doc["trees"]),
        params=params,
        feature_names=tuple(s.name for s in specs),
        specs=specs,
        importance=np.asarray(doc["importance"]),
    )
