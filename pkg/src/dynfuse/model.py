"""The trainable recommender: fusion stack plus collaborative tables and a head.

Item representations are [fused multimodal ; collaborative]; users are a
single embedding table at the combined width. The MF head scores by inner
product directly; the GCN head first runs mean-aggregation propagation over
the interaction graph and scores with the depth-L representations.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from . import data as data_mod
from . import heads
from .config import TrainConfig, train_config_echo, train_config_from_echo
from .errors import CheckpointError, DivergenceError, ModeMismatchError, ShapeMismatchError
from .fusion import FusionStack
from .linalg import as_f64


class Recommender:
    def __init__(self, config: TrainConfig, fusion: FusionStack,
                 table: heads.CollaborativeTable,
                 gcn: Optional[heads.GcnParams], input_dim: int):
        self.config = config
        self.fusion = fusion
        self.table = table
        self.gcn = gcn
        self.input_dim = input_dim
        if config.head == "gcn" and gcn is None:
            raise ValueError("gcn head requires GcnParams")

    @classmethod
    def create(cls, config: TrainConfig, n_users: int, n_items: int,
               input_dim: int, rng: np.random.Generator) -> "Recommender":
        problems = config.validate()
        if problems:
            raise ValueError("; ".join(problems))
        fusion = FusionStack.create(
            input_dim, config.out_dim, config.layers, config.mode,
            config.meta_dim, rng, rank=config.rank, meta_hidden=config.meta_hidden)
        table = heads.CollaborativeTable.create(
            n_users, n_items, config.rep_dim, config.collab_dim, rng)
        gcn = None
        if config.head == "gcn":
            gcn = heads.GcnParams.create(
                config.gcn_layers, config.rep_dim, rng, config.gcn_per_type)
        return cls(config, fusion, table, gcn, input_dim)

    @property
    def n_users(self) -> int:
        return self.table.users.shape[0]

    @property
    def n_items(self) -> int:
        return self.table.items.shape[0]

    def params(self) -> Dict[str, np.ndarray]:
        out = self.fusion.named_params()
        out.update(self.table.named_params())
        if self.gcn is not None:
            out.update(self.gcn.named_params())
        return out

    def param_count(self) -> int:
        return sum(arr.size for arr in self.params().values())

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params().items()}

    # ---- forward ----------------------------------------------------------

    def item_representations(self, features: np.ndarray):
        """Fuse all items and append collaborative embeddings; returns cache too."""
        fused, cache = self.fusion.forward(features)
        reps = np.concatenate([fused, self.table.items], axis=1)
        return reps, cache

    def final_representations(self, features: np.ndarray,
                              graph: Optional[heads.InteractionGraph] = None
                              ) -> Tuple[np.ndarray, np.ndarray]:
        """User/item representations whose inner products are the scores."""
        features = as_f64(features)
        if features.shape != (self.n_items, self.input_dim):
            raise ShapeMismatchError(
                "final_representations", (self.n_items, self.input_dim), features.shape)
        fused, _ = self.fusion.forward(features)
        if self.config.head == "mf":
            return self.table.users, np.concatenate([fused, self.table.items], axis=1)
        if graph is None:
            raise ValueError("gcn head needs the interaction graph")
        e_users, e_items = heads.gcn_init(fused, self.table)
        u_final, i_final, _ = heads.gcn_forward(graph, e_users, e_items, self.gcn)
        return u_final, i_final

    # ---- loss and gradients ------------------------------------------------

    def triple_loss_and_grads(self, users, pos_items, neg_items,
                              features: np.ndarray,
                              graph: Optional[heads.InteractionGraph] = None,
                              l2: Optional[float] = None):
        """Pairwise ranking loss and exact gradients for one sampled batch."""
        users = np.asarray(users, dtype=np.int64)
        pos_items = np.asarray(pos_items, dtype=np.int64)
        neg_items = np.asarray(neg_items, dtype=np.int64)
        lam = self.config.l2 if l2 is None else l2
        if self.config.head == "mf":
            loss, grads = self._mf_batch(users, pos_items, neg_items, features, lam)
        else:
            loss, grads = self._gcn_batch(users, pos_items, neg_items, features, graph, lam)
        return loss, grads

    def _regularize(self, loss: float, grads: Dict[str, np.ndarray], lam: float):
        if lam == 0.0:
            return loss
        for name, arr in self.params().items():
            loss += lam * float((arr * arr).sum())
            grads[name] += 2.0 * lam * arr
        return loss

    @staticmethod
    def _margin_grad(pos_scores, neg_scores, context: str):
        if not (np.all(np.isfinite(pos_scores)) and np.all(np.isfinite(neg_scores))):
            raise DivergenceError(f"non-finite scores in {context} batch")
        margin = pos_scores - neg_scores
        # loss = sum softplus(-margin); d loss / d margin = sigmoid(margin) - 1
        loss = float(np.logaddexp(0.0, -margin).sum())
        d_margin = -1.0 / (1.0 + np.exp(margin))
        return loss, d_margin

    def _mf_batch(self, users, pos_items, neg_items, features, lam):
        needed = np.unique(np.concatenate([pos_items, neg_items]))
        local = {item: k for k, item in enumerate(needed)}
        pos_local = np.asarray([local[i] for i in pos_items])
        neg_local = np.asarray([local[j] for j in neg_items])

        fused, fcache = self.fusion.forward(features[needed])
        reps = np.concatenate([fused, self.table.items[needed]], axis=1)
        e_u = self.table.users[users]
        pos_scores = np.einsum("bd,bd->b", e_u, reps[pos_local])
        neg_scores = np.einsum("bd,bd->b", e_u, reps[neg_local])
        loss, d_margin = self._margin_grad(pos_scores, neg_scores, "mf")

        grads = self.zero_grads()
        np.add.at(grads["embed.users"], users,
                  d_margin[:, None] * (reps[pos_local] - reps[neg_local]))
        d_reps = np.zeros_like(reps)
        np.add.at(d_reps, pos_local, d_margin[:, None] * e_u)
        np.add.at(d_reps, neg_local, -d_margin[:, None] * e_u)
        d_m = self.config.out_dim
        grads["embed.items"][needed] += d_reps[:, d_m:]
        for name, grad in self.fusion.backward(fcache, d_reps[:, :d_m]).items():
            grads[name] += grad
        loss = self._regularize(loss, grads, lam)
        return loss, grads

    def _gcn_batch(self, users, pos_items, neg_items, features, graph, lam):
        if graph is None:
            raise ValueError("gcn head needs the interaction graph")
        fused, fcache = self.fusion.forward(features)
        e_users0, e_items0 = heads.gcn_init(fused, self.table)
        u_final, i_final, caches = heads.gcn_forward(graph, e_users0, e_items0, self.gcn)

        e_u = u_final[users]
        pos_scores = np.einsum("bd,bd->b", e_u, i_final[pos_items])
        neg_scores = np.einsum("bd,bd->b", e_u, i_final[neg_items])
        loss, d_margin = self._margin_grad(pos_scores, neg_scores, "gcn")

        d_users = np.zeros_like(u_final)
        d_items = np.zeros_like(i_final)
        np.add.at(d_users, users,
                  d_margin[:, None] * (i_final[pos_items] - i_final[neg_items]))
        np.add.at(d_items, pos_items, d_margin[:, None] * e_u)
        np.add.at(d_items, neg_items, -d_margin[:, None] * e_u)

        gcn_grads, d_users0, d_items0 = heads.gcn_backward(
            graph, self.gcn, caches, d_users, d_items)
        grads = self.zero_grads()
        for name, grad in gcn_grads.items():
            grads[name] += grad
        grads["embed.users"] += d_users0
        d_m = self.config.out_dim
        grads["embed.items"] += d_items0[:, d_m:]
        for name, grad in self.fusion.backward(fcache, d_items0[:, :d_m]).items():
            grads[name] += grad
        loss = self._regularize(loss, grads, lam)
        return loss, grads

    # ---- flat parameter vector (for gradient checking) ---------------------

    def flatten_params(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.params().values()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = as_f64(flat)
        offset = 0
        for arr in self.params().values():
            arr.flat[:] = flat[offset:offset + arr.size]
            offset += arr.size
        if offset != flat.size:
            raise ShapeMismatchError("set_flat_params", offset, flat.size)

    def flatten_grads(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(grads[name]).ravel() for name in self.params()])

    # ---- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        echo = train_config_echo(self.config)
        echo["data.n_users"] = str(self.n_users)
        echo["data.n_items"] = str(self.n_items)
        echo["data.input_dim"] = str(self.input_dim)
        data_mod.write_checkpoint(path, echo, self.params())

    @classmethod
    def load(cls, path, expected_mode: Optional[str] = None) -> "Recommender":
        echo, arrays = data_mod.read_checkpoint(path)
        config = train_config_from_echo(echo)
        if expected_mode is not None and config.mode != expected_mode:
            raise ModeMismatchError(
                f"{path}: checkpoint fusion mode is {config.mode!r}, "
                f"requested {expected_mode!r}")
        try:
            dims = {k: int(echo[k]) for k in ("data.n_users", "data.n_items", "data.input_dim")}
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing {exc.args[0]} in config echo") from None
        model = cls.create(config, dims["data.n_users"], dims["data.n_items"],
                           dims["data.input_dim"], np.random.default_rng(0))
        params = model.params()
        if set(params) != set(arrays):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise CheckpointError(
                f"{path}: array names do not match the echoed config "
                f"(missing {missing}, unexpected {extra})")
        for name, arr in params.items():
            if arrays[name].shape != arr.shape:
                raise CheckpointError(
                    f"{path}: {name} has shape {arrays[name].shape}, expected {arr.shape}")
            arr[...] = arrays[name]
        return model
