"""Finite-difference verification of every hand-derived backward pass.

Each group builds a toy instance, wraps its loss as a flat-vector function
returning (value, analytic gradient), and runs the central-difference
checker. The CLI's grad-check command and the test suite both drive this.
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from . import linalg
from .config import TrainConfig
from .fusion import FusionStack
from .heads import CollaborativeTable, GcnParams, InteractionGraph, gcn_backward, gcn_forward, gcn_init
from .model import Recommender
from .util import substream

RTOL = 1e-4


def _pack(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _unpack(flat, templates):
    out = []
    offset = 0
    for t in templates:
        out.append(flat[offset:offset + t.size].reshape(t.shape))
        offset += t.size
    return out


def check_mode3(rng: np.random.Generator) -> float:
    """<g, mode3_contract(t, s)> against central differences over (t, s)."""
    p, q, z = 4, 6, 3
    t0 = rng.standard_normal((z, p, q))
    s0 = rng.standard_normal(z)
    g = rng.standard_normal((p, q))

    def f(flat):
        t_flat, s = _unpack(flat, [t0, s0])
        t = linalg.FusionTensor(t_flat)
        value = float((g * linalg.mode3_contract(t, s)).sum())
        dt, ds = linalg.mode3_contract_backward(t, s, g)
        return value, _pack([dt.data, ds])

    return linalg.finite_diff_check(f, _pack([t0, s0]))


def check_cp(rng: np.random.Generator) -> float:
    """<g, cp_contract(t, s)> against central differences over (a, b, c, s)."""
    p, q, z, r = 4, 6, 5, 3
    a0 = rng.standard_normal((p, r))
    b0 = rng.standard_normal((q, r))
    c0 = rng.standard_normal((z, r))
    s0 = rng.standard_normal(z)
    g = rng.standard_normal((p, q))

    def f(flat):
        a, b, c, s = _unpack(flat, [a0, b0, c0, s0])
        t = linalg.CpTensor(a, b, c)
        value = float((g * linalg.cp_contract(t, s)).sum())
        da, db, dc, ds = linalg.cp_contract_backward(t, s, g)
        return value, _pack([da, db, dc, ds])

    return linalg.finite_diff_check(f, _pack([a0, b0, c0, s0]))


def _stack_check(rng: np.random.Generator, mode: str) -> float:
    stack = FusionStack.create(input_dim=8, out_dim=3, n_layers=2, mode=mode,
                               meta_dim=2, rng=rng, rank=2, meta_hidden=4)
    x = rng.standard_normal((3, 8))
    names = list(stack.named_params())
    arrays = stack.named_params()
    g = rng.standard_normal((3, 3))

    def f(flat):
        values = _unpack(flat, [arrays[n] for n in names])
        for name, value in zip(names, values):
            arrays[name][...] = value
        out, cache = stack.forward(x)
        grads = stack.backward(cache, g)
        return float((g * out).sum()), _pack([grads[n] for n in names])

    return linalg.finite_diff_check(f, _pack([arrays[n] for n in names]))


def check_fusion_full(rng: np.random.Generator) -> float:
    return _stack_check(rng, "dynamic-full")


def check_fusion_cp(rng: np.random.Generator) -> float:
    return _stack_check(rng, "dynamic-cp")


def check_fusion_static(rng: np.random.Generator) -> float:
    return _stack_check(rng, "static")


def check_gcn(rng: np.random.Generator) -> float:
    """Propagation backward on a small random graph, loss <g, final reps>."""
    n_users, n_items, dim, depth = 3, 4, 6, 2
    pairs = np.asarray([[0, 0], [0, 2], [1, 1], [1, 2], [2, 3], [2, 0]])
    graph = InteractionGraph(n_users, n_items, pairs)
    params = GcnParams.create(depth, dim, rng)
    e_u0 = rng.standard_normal((n_users, dim))
    e_i0 = rng.standard_normal((n_items, dim))
    g_u = rng.standard_normal((n_users, dim))
    g_i = rng.standard_normal((n_items, dim))
    named = params.named_params()
    names = list(named)
    templates = [named[n] for n in names] + [e_u0, e_i0]

    def f(flat):
        values = _unpack(flat, templates)
        for name, value in zip(names, values):
            named[name][...] = value
        u0, i0 = values[-2], values[-1]
        u_fin, i_fin, caches = gcn_forward(graph, u0, i0, params)
        value = float((g_u * u_fin).sum() + (g_i * i_fin).sum())
        grads, du0, di0 = gcn_backward(graph, params, caches, g_u.copy(), g_i.copy())
        return value, _pack([grads[n] for n in names] + [du0, di0])

    return linalg.finite_diff_check(f, _pack(templates))


def _toy_config(head: str) -> TrainConfig:
    return TrainConfig(l2=1e-3, mode="dynamic-full", layers=2, meta_dim=3,
                       meta_hidden=6, out_dim=4, collab_dim=4, head=head,
                       gcn_layers=1, seed=7)


def _bpr_check(rng: np.random.Generator, head: str) -> float:
    """End-to-end BPR loss (fusion + head + regularizer) on a toy model."""
    n_users, n_items, input_dim = 3, 5, 12
    config = _toy_config(head)
    model = Recommender.create(config, n_users, n_items, input_dim, rng)
    features = rng.standard_normal((n_items, input_dim))
    users = np.asarray([0, 1, 2, 0, 1, 2])
    pos = np.asarray([0, 1, 2, 3, 4, 0])
    neg = np.asarray([1, 2, 3, 4, 0, 1])
    graph = None
    if head == "gcn":
        graph = InteractionGraph(n_users, n_items,
                                 np.stack([users, pos], axis=1))

    def f(flat):
        model.set_flat_params(flat)
        loss, grads = model.triple_loss_and_grads(users, pos, neg, features, graph=graph)
        return loss, model.flatten_grads(grads)

    return linalg.finite_diff_check(f, model.flatten_params())


def check_bpr_mf(rng: np.random.Generator) -> float:
    return _bpr_check(rng, "mf")


def check_bpr_gcn(rng: np.random.Generator) -> float:
    return _bpr_check(rng, "gcn")


GROUPS: Dict[str, Callable[[np.random.Generator], float]] = {
    "mode3-contraction": check_mode3,
    "cp-contraction": check_cp,
    "fusion-dynamic-full": check_fusion_full,
    "fusion-dynamic-cp": check_fusion_cp,
    "fusion-static": check_fusion_static,
    "gcn-propagation": check_gcn,
    "bpr-end-to-end-mf": check_bpr_mf,
    "bpr-end-to-end-gcn": check_bpr_gcn,
}


def run_all(seed: int = 0, rtol: float = RTOL) -> Dict[str, float]:
    """Max relative error per group; caller compares against rtol."""
    results = {}
    for name, check in GROUPS.items():
        results[name] = check(substream(seed, f"gradcheck.{name}"))
    return results
