"""Scoring heads: inner-product MF and a mean-aggregation graph convolution.

Item representations entering either head are the concatenation
[multimodal ; collaborative]. The GCN head runs L bulk-synchronous
propagation steps over the user-item interaction graph and scores with the
depth-L representations only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatchError
from .linalg import as_f64
from .util import LEAKY_SLOPE, leaky_relu, leaky_relu_grad, xavier_init


class CollaborativeTable:
    """Trainable ID-bound embeddings: users at full width, items at collab width."""

    def __init__(self, users: np.ndarray, items: np.ndarray):
        self.users = as_f64(users)
        self.items = as_f64(items)
        if self.users.ndim != 2 or self.items.ndim != 2:
            raise ShapeMismatchError("CollaborativeTable", "2-D tables",
                                     (self.users.shape, self.items.shape))

    @classmethod
    def create(cls, n_users: int, n_items: int, rep_dim: int, collab_dim: int,
               rng: np.random.Generator) -> "CollaborativeTable":
        return cls(xavier_init((n_users, rep_dim), rng),
                   xavier_init((n_items, collab_dim), rng))

    @property
    def rep_dim(self) -> int:
        return self.users.shape[1]

    @property
    def collab_dim(self) -> int:
        return self.items.shape[1]

    def named_params(self) -> Dict[str, np.ndarray]:
        return {"embed.users": self.users, "embed.items": self.items}


def mf_score(user: int, item_rep: np.ndarray, table: CollaborativeTable) -> float:
    """Inner product of the user embedding with [multimodal ; collaborative]."""
    if not 0 <= user < table.users.shape[0]:
        raise IndexError(f"user {user} out of range [0, {table.users.shape[0]})")
    item_rep = as_f64(item_rep).ravel()
    if item_rep.shape[0] != table.rep_dim:
        raise ShapeMismatchError("mf_score", table.rep_dim, item_rep.shape[0])
    return float(table.users[user] @ item_rep)


class InteractionGraph:
    """Bipartite user-item graph with row-normalized neighbor-mean operators.

    ``mean_users_for_items @ E_users`` gives each item the mean embedding of
    its interacting users (zero vector for isolated items), and vice versa.
    """

    def __init__(self, n_users: int, n_items: int, pairs: np.ndarray):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs[:, 0].max() >= n_users or pairs[:, 1].max() >= n_items):
            raise IndexError("interaction indices out of range")
        if pairs.size and (pairs.min() < 0):
            raise IndexError("negative interaction index")
        self.n_users = n_users
        self.n_items = n_items
        self.pairs = np.unique(pairs, axis=0) if pairs.size else pairs.reshape(0, 2)
        u, i = self.pairs[:, 0], self.pairs[:, 1]
        ones = np.ones(len(self.pairs))
        adj = sp.csr_matrix((ones, (i, u)), shape=(n_items, n_users))
        self.item_degree = np.asarray(adj.sum(axis=1)).ravel()
        self.user_degree = np.asarray(adj.sum(axis=0)).ravel()
        inv_i = np.divide(1.0, self.item_degree, out=np.zeros(n_items),
                          where=self.item_degree > 0)
        inv_u = np.divide(1.0, self.user_degree, out=np.zeros(n_users),
                          where=self.user_degree > 0)
        self.mean_users_for_items = sp.diags(inv_i) @ adj          # (n_items, n_users)
        self.mean_items_for_users = sp.diags(inv_u) @ adj.T        # (n_users, n_items)
        self.mean_users_for_items = self.mean_users_for_items.tocsr()
        self.mean_items_for_users = self.mean_items_for_users.tocsr()
        if not self.check_symmetry():
            raise ValueError("interaction graph lost user/item symmetry")

    def item_neighbors(self, item: int) -> np.ndarray:
        return np.sort(self.pairs[self.pairs[:, 1] == item, 0])

    def user_neighbors(self, user: int) -> np.ndarray:
        return np.sort(self.pairs[self.pairs[:, 0] == user, 1])

    def check_symmetry(self) -> bool:
        """u in neighbors(i) iff i in neighbors(u); holds by construction."""
        a = self.mean_users_for_items.copy()
        a.data[:] = 1.0
        b = self.mean_items_for_users.copy()
        b.data[:] = 1.0
        return (a != b.T).nnz == 0


class GcnParams:
    """Per-layer convolution weights, shared across node types by default."""

    SHARED_KEYS = ("self", "neigh")
    PER_TYPE_KEYS = ("user.self", "user.neigh", "item.self", "item.neigh")

    def __init__(self, layers: List[Dict[str, np.ndarray]], per_type: bool = False):
        self.layers = layers
        self.per_type = per_type
        keys = self.PER_TYPE_KEYS if per_type else self.SHARED_KEYS
        for layer in layers:
            if set(layer) != set(keys):
                raise ShapeMismatchError("GcnParams", tuple(keys), tuple(layer))

    @classmethod
    def create(cls, depth: int, dim: int, rng: np.random.Generator,
               per_type: bool = False) -> "GcnParams":
        if depth < 1:
            raise ValueError(f"GCN depth must be >= 1, got {depth}")
        keys = cls.PER_TYPE_KEYS if per_type else cls.SHARED_KEYS
        layers = [{k: xavier_init((dim, dim), rng) for k in keys} for _ in range(depth)]
        return cls(layers, per_type)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def weights_for(self, layer: int, side: str) -> Tuple[np.ndarray, np.ndarray]:
        entry = self.layers[layer]
        if self.per_type:
            return entry[f"{side}.self"], entry[f"{side}.neigh"]
        return entry["self"], entry["neigh"]

    def named_params(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for l, layer in enumerate(self.layers):
            for key in (self.PER_TYPE_KEYS if self.per_type else self.SHARED_KEYS):
                out[f"gcn.{l + 1}.{key}"] = layer[key]
        return out


def gcn_init(fused_items: np.ndarray, table: CollaborativeTable):
    """Layer-0 representations: users from the table, items [multimodal ; collab]."""
    fused_items = as_f64(fused_items)
    if fused_items.shape[0] != table.items.shape[0]:
        raise ShapeMismatchError("gcn_init", table.items.shape[0], fused_items.shape[0])
    if fused_items.shape[1] + table.collab_dim != table.rep_dim:
        raise ShapeMismatchError(
            "gcn_init", table.rep_dim, fused_items.shape[1] + table.collab_dim)
    e_users = table.users
    e_items = np.concatenate([fused_items, table.items], axis=1)
    return e_users, e_items


def gcn_propagate(graph: InteractionGraph, e_users: np.ndarray, e_items: np.ndarray,
                  params: GcnParams, layer: int, slope: float = LEAKY_SLOPE):
    """One propagation step; nodes with no neighbors aggregate a zero mean."""
    (u_new, i_new), _ = _propagate_cached(graph, e_users, e_items, params, layer, slope)
    return u_new, i_new


def _propagate_cached(graph, e_users, e_items, params, layer, slope):
    w1_u, w2_u = params.weights_for(layer, "user")
    w1_i, w2_i = params.weights_for(layer, "item")
    mean_u = graph.mean_users_for_items @ e_users      # per-item neighbor mean
    mean_i = graph.mean_items_for_users @ e_items      # per-user neighbor mean
    z_items = e_items @ w1_i.T + mean_u @ w2_i.T
    z_users = e_users @ w1_u.T + mean_i @ w2_u.T
    cache = {"e_users": e_users, "e_items": e_items, "mean_u": mean_u,
             "mean_i": mean_i, "z_users": z_users, "z_items": z_items}
    return (leaky_relu(z_users, slope), leaky_relu(z_items, slope)), cache


def gcn_forward(graph: InteractionGraph, e_users: np.ndarray, e_items: np.ndarray,
                params: GcnParams, slope: float = LEAKY_SLOPE):
    """All L propagation steps; returns final reps and per-layer caches."""
    caches = []
    for l in range(params.depth):
        (e_users, e_items), cache = _propagate_cached(
            graph, e_users, e_items, params, l, slope)
        caches.append(cache)
    return e_users, e_items, caches


def gcn_backward(graph: InteractionGraph, params: GcnParams, caches,
                 d_users: np.ndarray, d_items: np.ndarray,
                 slope: float = LEAKY_SLOPE):
    """Backward through all propagation steps.

    Returns (gradient dict keyed like named_params, d layer-0 users,
    d layer-0 items).
    """
    grads: Dict[str, np.ndarray] = {k: np.zeros_like(v)
                                    for k, v in params.named_params().items()}
    for l in reversed(range(params.depth)):
        cache = caches[l]
        dz_u = d_users * leaky_relu_grad(cache["z_users"], slope)
        dz_i = d_items * leaky_relu_grad(cache["z_items"], slope)
        w1_u, w2_u = params.weights_for(l, "user")
        w1_i, w2_i = params.weights_for(l, "item")
        if params.per_type:
            grads[f"gcn.{l + 1}.user.self"] += dz_u.T @ cache["e_users"]
            grads[f"gcn.{l + 1}.user.neigh"] += dz_u.T @ cache["mean_i"]
            grads[f"gcn.{l + 1}.item.self"] += dz_i.T @ cache["e_items"]
            grads[f"gcn.{l + 1}.item.neigh"] += dz_i.T @ cache["mean_u"]
        else:
            grads[f"gcn.{l + 1}.self"] += dz_u.T @ cache["e_users"] + dz_i.T @ cache["e_items"]
            grads[f"gcn.{l + 1}.neigh"] += dz_u.T @ cache["mean_i"] + dz_i.T @ cache["mean_u"]
        d_users = dz_u @ w1_u + graph.mean_users_for_items.T @ (dz_i @ w2_i)
        d_items = dz_i @ w1_i + graph.mean_items_for_users.T @ (dz_u @ w2_u)
    return grads, d_users, d_items


def gcn_score(user: int, item: int, e_users: np.ndarray, e_items: np.ndarray) -> float:
    """Inner product of the depth-L user and item representations."""
    if not 0 <= user < e_users.shape[0]:
        raise IndexError(f"user {user} out of range [0, {e_users.shape[0]})")
    if not 0 <= item < e_items.shape[0]:
        raise IndexError(f"item {item} out of range [0, {e_items.shape[0]})")
    return float(e_users[user] @ e_items[item])
