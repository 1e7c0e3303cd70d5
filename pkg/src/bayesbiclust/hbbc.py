"""Hierarchical bi-clustering: grow a binary tree by splitting one leaf at a time.

At step t (t leaves) each splittable leaf r gets the score::

    w_r = q / (1 - q) * P(Y^r | K_r = 2) / P(Y^r | K_r = 1)

The leaf with the largest score is split with its two-cluster MAP labels
when ``w_r`` exceeds the threshold (``t`` by default); otherwise growth
stops. ``P(Y^r | K_r = 2)`` comes from the categorical model's Chib
estimate and ``P(Y^r | K_r = 1)`` is closed form.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._base import MCMCConfig
from ._validation import check_categorical
from .bbc2 import Bbc2Hyper, fit_bbc2_at_K, k1_log_marginal
from .exceptions import DomainError, UsageError


@dataclass(frozen=True)
class HbbcConfig:
    q: float = 0.05
    min_node_size: int | None = None  # None: max(5, n // 20)
    hyper: Bbc2Hyper = field(default_factory=Bbc2Hyper)
    threshold: float | None = None    # None: current number of leaves
    max_leaves: int | None = None

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise DomainError("q must lie in (0, 1)")
        if self.min_node_size is not None and self.min_node_size < 1:
            raise UsageError("min_node_size must be positive")

    def node_minimum(self, n):
        return self.min_node_size if self.min_node_size is not None else max(5, n // 20)


@dataclass
class HbbcNode:
    id: int
    members: list
    parent: int | None = None
    children: list = field(default_factory=list)
    split_step: int | None = None
    log_w: float | None = None
    log_marginal_k1: float | None = None
    log_marginal_k2: float | None = None
    terminal: bool = False
    blocked: str | None = None
    selected_features: list = field(default_factory=list)
    selection_prob: list = field(default_factory=list)


@dataclass
class HbbcTree:
    nodes: list
    n_objects: int
    config: dict

    @property
    def leaves(self):
        return [nd for nd in self.nodes if not nd.children]

    def labels(self) -> np.ndarray:
        """Leaf labels ``1..t`` in order of node creation."""
        out = np.zeros(self.n_objects, dtype=np.int64)
        for k, nd in enumerate(self.leaves, start=1):
            out[nd.members] = k
        return out

    def level_labels(self, n_leaves: int) -> np.ndarray:
        """Labels of the partition that existed when the tree had ``n_leaves`` leaves."""
        splits = sorted((nd for nd in self.nodes if nd.children), key=lambda nd: nd.split_step)
        if not 1 <= n_leaves <= len(splits) + 1:
            raise UsageError("no such level")
        cut = {nd.id for nd in splits[:n_leaves - 1]}
        out = np.zeros(self.n_objects, dtype=np.int64)
        k = 0
        for nd in self.nodes:
            in_frontier = nd.parent is None or nd.parent in cut
            if in_frontier and nd.id not in cut:
                k += 1
                out[nd.members] = k
        return out

    def to_dict(self):
        return {"n_objects": self.n_objects, "config": self.config,
                "nodes": [asdict(nd) for nd in self.nodes]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls([HbbcNode(**nd) for nd in d["nodes"]], d["n_objects"], d["config"])


def node_logmarg_K1(block, gamma=None, n_categories=None) -> float:
    """Closed-form ``ln P(Y^r | K_r = 1)``."""
    Y, L = check_categorical(block, n_categories)
    if Y.shape[0] == 0:
        raise UsageError("node block is empty")
    return k1_log_marginal(Y, L, Bbc2Hyper(gamma=gamma))


def node_split_score(block, config: HbbcConfig, mcmc: MCMCConfig, L=None, stream=(0,)):
    """Score one leaf. Returns ``(log_w, details)``; ``log_w`` is ``-inf``
    with ``details['blocked']`` set when the leaf is too small to split."""
    Y, L = check_categorical(block, L)
    n = Y.shape[0]
    if n < 2 * config.node_minimum(n) or n < 2:
        return -math.inf, {"blocked": "size"}
    lm1 = k1_log_marginal(Y, L, config.hyper)
    fit = fit_bbc2_at_K(Y, 2, L, config.hyper, mcmc, stream=stream)
    log_w = math.log(config.q) - math.log1p(-config.q) + fit.log_marginal - lm1
    return log_w, {"blocked": None, "k1": lm1, "k2": fit.log_marginal, "fit": fit}


def grow_tree(Y, config: HbbcConfig | None = None, mcmc: MCMCConfig | None = None,
              n_categories=None) -> HbbcTree:
    config = config or HbbcConfig()
    mcmc = mcmc or MCMCConfig(n_iter=500, burn_in=200)
    Y, L = check_categorical(Y, n_categories)
    n = Y.shape[0]
    min_size = config.node_minimum(n)
    node_cfg = HbbcConfig(q=config.q, min_node_size=min_size, hyper=config.hyper)
    nodes = [HbbcNode(id=0, members=list(range(n)))]
    cache = {}

    def score(nd):
        if nd.id not in cache:
            log_w, info = node_split_score(Y[nd.members], node_cfg, mcmc, L, stream=(nd.id,))
            nd.blocked = info["blocked"]
            nd.log_marginal_k1 = info.get("k1")
            nd.log_marginal_k2 = info.get("k2")
            cache[nd.id] = (log_w, info.get("fit"))
        return cache[nd.id]

    step = 0
    while True:
        t = sum(1 for nd in nodes if not nd.children)
        if config.max_leaves is not None and t >= config.max_leaves:
            break
        thr = math.log(config.threshold if config.threshold is not None else t)
        cands = []
        for nd in nodes:
            if nd.children or nd.terminal:
                continue
            log_w, _ = score(nd)
            nd.log_w = None if not math.isfinite(log_w) else log_w
            if math.isfinite(log_w):
                cands.append((log_w, -nd.id, nd))
        if not cands:
            break
        log_w, _, best = max(cands, key=lambda c: (c[0], c[1]))
        if log_w <= thr:
            break
        fit = cache[best.id][1]
        members = np.asarray(best.members)
        halves = [members[fit.labels == k].tolist() for k in (1, 2)]
        if min(len(h) for h in halves) < min_size:
            best.terminal = True
            best.blocked = "child-size"
            continue
        step += 1
        best.split_step = step
        sel = fit.selection.any(axis=1)
        best.selected_features = np.flatnonzero(sel).tolist()
        best.selection_prob = np.round(fit.extra["selection_prob"], 6).tolist()
        for h in halves:
            child = HbbcNode(id=len(nodes), members=h, parent=best.id)
            best.children.append(child.id)
            nodes.append(child)
    cfg = {"q": config.q, "min_node_size": min_size, "threshold": config.threshold,
           "alpha": config.hyper.alpha, "pi_s": config.hyper.pi_s,
           "n_iter": mcmc.n_iter, "burn_in": mcmc.burn_in, "seed": mcmc.seed}
    return HbbcTree(nodes, n, cfg)


class HBBC(ClusterMixin, BaseEstimator):
    """Divisive hierarchical bi-clustering of categorical data.

    Parameters
    ----------
    q : float
        Prior split probability scale; the split score is
        ``q / (1 - q)`` times the two-versus-one cluster Bayes factor.
    min_node_size : int or None
        Smallest allowed node; ``None`` means ``max(5, n // 20)``.
    threshold : float or None
        Fixed split threshold; ``None`` compares against the current leaf count.
    pi_s, gamma, n_categories, n_iter, burn_in, random_state
        Settings of the per-node two-cluster fits.

    Attributes
    ----------
    tree_ : HbbcTree
    labels_ : ndarray, leaf labels ``1..n_clusters_``
    n_clusters_ : int
    """

    def __init__(self, *, q=0.05, min_node_size=None, threshold=None, max_leaves=None,
                 pi_s=0.1, gamma=None, n_categories=None, n_iter=500, burn_in=200,
                 random_state=0):
        self.q = q
        self.min_node_size = min_node_size
        self.threshold = threshold
        self.max_leaves = max_leaves
        self.pi_s = pi_s
        self.gamma = gamma
        self.n_categories = n_categories
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.random_state = random_state

    def fit(self, X, y=None):
        g = None if self.gamma is None else tuple(float(x) for x in self.gamma)
        cfg = HbbcConfig(q=self.q, min_node_size=self.min_node_size,
                         hyper=Bbc2Hyper(pi_s=self.pi_s, gamma=g),
                         threshold=self.threshold, max_leaves=self.max_leaves)
        mcmc = MCMCConfig(self.n_iter, self.burn_in, 1, int(self.random_state or 0))
        self.tree_ = grow_tree(X, cfg, mcmc, self.n_categories)
        self.labels_ = self.tree_.labels()
        self.n_clusters_ = int(self.labels_.max())
        return self

    def get_tree(self):
        check_is_fitted(self, "tree_")
        return self.tree_
