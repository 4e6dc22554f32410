"""Per-item dynamic multimodal fusion.

An item's modality features are concatenated, squeezed into a short meta
vector by a small MLP, and that meta vector parameterizes the weights of an
N-layer fusion tower through a 3-D generator tensor (full or factorized).
Four modes are supported:

  static             shared weight matrices only, no meta path
  dynamic-full       W_n + T_n contracted with the meta vector
  dynamic-cp         W_n + factorized generator contracted with the meta vector
  dynamic-no-static  generated weights only

Forward and backward passes are hand-derived; the batched contraction work
is delegated to the kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeMismatchError
from .linalg import CpTensor, FusionTensor, as_f64
from .util import LEAKY_SLOPE, leaky_relu, leaky_relu_grad, relu, relu_grad, xavier_init

MODES = ("static", "dynamic-full", "dynamic-cp", "dynamic-no-static")
DEFAULT_META_HIDDEN = 64


@dataclass
class ItemModalities:
    """Per-item feature vectors; any subset of modalities may be present."""

    visual: Optional[np.ndarray] = None
    acoustic: Optional[np.ndarray] = None
    textual: Optional[np.ndarray] = None

    def __post_init__(self):
        present = 0
        for name in ("visual", "acoustic", "textual"):
            vec = getattr(self, name)
            if vec is None:
                continue
            vec = as_f64(vec).ravel()
            if not np.all(np.isfinite(vec)):
                raise NonFiniteError(f"{name} features hold non-finite values")
            setattr(self, name, vec)
            present += 1
        if present == 0:
            raise ValueError("at least one modality must be present")

    def concat(self) -> np.ndarray:
        """Fixed-order concatenation (visual, acoustic, textual) of present modalities."""
        parts = [v for v in (self.visual, self.acoustic, self.textual) if v is not None]
        return np.concatenate(parts)


class MetaExtractor:
    """Three affine layers (input/hidden/output), each followed by a rectifier.

    Maps the concatenated modality features (length D) to a short meta
    vector; biases are kept here even though fusion layers omit theirs.
    """

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        if len(weights) != 3 or len(biases) != 3:
            raise ShapeMismatchError("MetaExtractor", "3 affine layers", len(weights))
        self.weights = [as_f64(w) for w in weights]
        self.biases = [as_f64(b) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ShapeMismatchError("MetaExtractor", w.shape, b.shape)

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, out_dim: int,
               rng: np.random.Generator) -> "MetaExtractor":
        dims = [(hidden_dim, input_dim), (hidden_dim, hidden_dim), (out_dim, hidden_dim)]
        weights = [xavier_init(shape, rng) for shape in dims]
        # small positive bias keeps rectified units alive at init (and keeps
        # pre-activations off the exact kink, where gradients are undefined)
        biases = [np.full(shape[0], 0.01) for shape in dims]
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[2].shape[0]

    def forward(self, x_batch: np.ndarray):
        """Returns (meta batch, cache); cache holds inputs and pre-activations."""
        h = x_batch
        inputs, pres = [], []
        for w, b in zip(self.weights, self.biases):
            inputs.append(h)
            pre = h @ w.T + b
            pres.append(pre)
            h = relu(pre)
        return h, (inputs, pres)

    def backward(self, cache, d_meta: np.ndarray):
        """Gradients for all weights/biases plus the input batch."""
        inputs, pres = cache
        grads_w = [None] * 3
        grads_b = [None] * 3
        d_out = d_meta
        for n in (2, 1, 0):
            d_pre = d_out * relu_grad(pres[n])
            grads_w[n] = d_pre.T @ inputs[n]
            grads_b[n] = d_pre.sum(axis=0)
            d_out = d_pre @ self.weights[n]
        return grads_w, grads_b, d_out

    def named_params(self, prefix: str = "meta") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for label, w, b in zip(("in", "mid", "out"), self.weights, self.biases):
            out[f"{prefix}.{label}.w"] = w
            out[f"{prefix}.{label}.b"] = b
        return out


def extract_meta(x_concat, extractor: MetaExtractor) -> np.ndarray:
    """Meta vector for a single concatenated feature vector."""
    x = as_f64(x_concat).ravel()
    if x.shape[0] != extractor.input_dim:
        raise ShapeMismatchError("extract_meta", extractor.input_dim, x.shape[0])
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("extract_meta input is non-finite")
    meta, _ = extractor.forward(x[None, :])
    return meta[0]


def build_tower(input_dim: int, output_dim: int, n_layers: int) -> List[int]:
    """Layer widths from the input dim down to the output dim.

    One layer maps straight to the output. Deeper towers start at the
    largest power of two at most half the input, halve each hidden layer,
    and never drop below the output width.
    """
    if n_layers < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}")
    if output_dim > input_dim:
        raise ValueError(f"output dim {output_dim} exceeds input dim {input_dim}")
    if output_dim < 1:
        raise ValueError(f"output dim must be positive, got {output_dim}")
    if n_layers == 1:
        return [input_dim, output_dim]
    width = 1
    while width * 2 <= input_dim // 2:
        width *= 2
    width = max(width, output_dim)
    widths = [input_dim, width]
    for _ in range(n_layers - 2):
        width = max(width // 2, output_dim)
        widths.append(width)
    widths.append(output_dim)
    return widths


@dataclass
class FusionLayerParams:
    """One fusion layer: optional shared weight plus optional generator."""

    mode: str
    static: Optional[np.ndarray] = None
    generator: object = None  # FusionTensor | CpTensor | None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.mode == "static":
            if self.static is None or self.generator is not None:
                raise ValueError("static mode takes a shared weight and no generator")
        elif self.mode == "dynamic-no-static":
            if self.generator is None or self.static is not None:
                raise ValueError("dynamic-no-static mode takes a generator only")
        else:
            if self.static is None or self.generator is None:
                raise ValueError(f"{self.mode} mode takes both a shared weight and a generator")
        if self.static is not None:
            self.static = as_f64(self.static)
        if self.generator is not None and self.static is not None:
            gshape = (self.generator.p, self.generator.q)
            if gshape != self.static.shape:
                raise ShapeMismatchError("FusionLayerParams", self.static.shape, gshape)

    @property
    def out_dim(self) -> int:
        return self.static.shape[0] if self.static is not None else self.generator.p

    @property
    def in_dim(self) -> int:
        return self.static.shape[1] if self.static is not None else self.generator.q


def layer_weight(params: FusionLayerParams, s) -> np.ndarray:
    """Materialize the per-item weight matrix for one layer given meta vector s."""
    if params.mode == "static":
        return params.static.copy()
    gen = params.generator
    if isinstance(gen, FusionTensor):
        dyn = _kernels.mode3_contract(gen.data, as_f64(s))
    else:
        dyn = _kernels.cp_contract(gen.a, gen.b, gen.c, as_f64(s))
    if params.mode == "dynamic-no-static":
        return dyn
    return params.static + dyn


class FusionStack:
    """Meta extractor plus N dynamically parameterized fusion layers."""

    def __init__(self, mode: str, widths: List[int], extractor: Optional[MetaExtractor],
                 layers: List[FusionLayerParams], slope: float = LEAKY_SLOPE):
        if mode not in MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        if (extractor is None) != (mode == "static"):
            raise ValueError("extractor is present exactly in dynamic modes")
        self.mode = mode
        self.widths = list(widths)
        self.extractor = extractor
        self.layers = layers
        self.slope = slope
        for n, layer in enumerate(layers):
            expected = (widths[n + 1], widths[n])
            actual = (layer.out_dim, layer.in_dim)
            if expected != actual:
                raise ShapeMismatchError(f"fusion layer {n + 1}", expected, actual)

    @classmethod
    def create(cls, input_dim: int, out_dim: int, n_layers: int, mode: str,
               meta_dim: int, rng: np.random.Generator, rank: int = 8,
               meta_hidden: int = DEFAULT_META_HIDDEN) -> "FusionStack":
        widths = build_tower(input_dim, out_dim, n_layers)
        extractor = None
        if mode != "static":
            extractor = MetaExtractor.create(input_dim, meta_hidden, meta_dim, rng)
        layers = []
        for n in range(n_layers):
            p, q = widths[n + 1], widths[n]
            static = None if mode == "dynamic-no-static" else xavier_init((p, q), rng)
            generator = None
            if mode in ("dynamic-full", "dynamic-no-static"):
                generator = FusionTensor(xavier_init((meta_dim, p, q), rng))
            elif mode == "dynamic-cp":
                generator = CpTensor(
                    xavier_init((p, rank), rng),
                    xavier_init((q, rank), rng),
                    xavier_init((meta_dim, rank), rng),
                )
            layers.append(FusionLayerParams(mode=mode, static=static, generator=generator))
        return cls(mode, widths, extractor, layers)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def meta_dim(self) -> int:
        return 0 if self.extractor is None else self.extractor.out_dim

    def forward(self, x_batch) -> Tuple[np.ndarray, dict]:
        """Fuse a batch of concatenated feature rows into output representations.

        The meta vector is extracted once per item and feeds every layer;
        the leaky rectifier sits between layers but not after the last one.
        """
        x = as_f64(np.atleast_2d(x_batch))
        if x.shape[1] != self.input_dim:
            raise ShapeMismatchError("fuse", self.input_dim, x.shape[1])
        meta, meta_cache = (None, None)
        if self.extractor is not None:
            meta, meta_cache = self.extractor.forward(x)
        h = x
        inputs, pres = [], []
        for n, layer in enumerate(self.layers):
            inputs.append(h)
            pre = np.zeros((x.shape[0], layer.out_dim))
            if layer.static is not None:
                pre += h @ layer.static.T
            gen = layer.generator
            if isinstance(gen, FusionTensor):
                pre += _kernels.mode3_apply(gen.data, meta, h)
            elif isinstance(gen, CpTensor):
                pre += _kernels.cp_apply(gen.a, gen.b, gen.c, meta, h)
            pres.append(pre)
            h = leaky_relu(pre, self.slope) if n < self.n_layers - 1 else pre
        cache = {"x": x, "meta": meta, "meta_cache": meta_cache,
                 "inputs": inputs, "pres": pres}
        return h, cache

    def backward(self, cache, d_out) -> Dict[str, np.ndarray]:
        """Chain-rule gradients for every parameter, including the meta path."""
        if cache is None:
            raise ValueError("fusion backward requires the forward cache")
        d_out = as_f64(np.atleast_2d(d_out))
        meta = cache["meta"]
        d_meta = None if meta is None else np.zeros_like(meta)
        grads: Dict[str, np.ndarray] = {}
        d_after = d_out
        for n in reversed(range(self.n_layers)):
            layer = self.layers[n]
            h_in = cache["inputs"][n]
            if n == self.n_layers - 1:
                d_pre = d_after
            else:
                d_pre = d_after * leaky_relu_grad(cache["pres"][n], self.slope)
            d_h = np.zeros_like(h_in)
            name = f"fusion.{n + 1}"
            if layer.static is not None:
                grads[f"{name}.static"] = d_pre.T @ h_in
                d_h += d_pre @ layer.static
            gen = layer.generator
            if isinstance(gen, FusionTensor):
                dt, d_s, d_h_dyn = _kernels.mode3_apply_backward(gen.data, meta, h_in, d_pre)
                grads[f"{name}.tensor"] = dt
                d_meta += d_s
                d_h += d_h_dyn
            elif isinstance(gen, CpTensor):
                da, db, dc, d_s, d_h_dyn = _kernels.cp_apply_backward(
                    gen.a, gen.b, gen.c, meta, h_in, d_pre)
                grads[f"{name}.cp_a"] = da
                grads[f"{name}.cp_b"] = db
                grads[f"{name}.cp_c"] = dc
                d_meta += d_s
                d_h += d_h_dyn
            d_after = d_h
        if self.extractor is not None:
            gw, gb, _ = self.extractor.backward(cache["meta_cache"], d_meta)
            for label, w_grad, b_grad in zip(("in", "mid", "out"), gw, gb):
                grads[f"meta.{label}.w"] = w_grad
                grads[f"meta.{label}.b"] = b_grad
        return grads

    def named_params(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        if self.extractor is not None:
            out.update(self.extractor.named_params("meta"))
        for n, layer in enumerate(self.layers):
            name = f"fusion.{n + 1}"
            if layer.static is not None:
                out[f"{name}.static"] = layer.static
            gen = layer.generator
            if isinstance(gen, FusionTensor):
                out[f"{name}.tensor"] = gen.data
            elif isinstance(gen, CpTensor):
                out[f"{name}.cp_a"] = gen.a
                out[f"{name}.cp_b"] = gen.b
                out[f"{name}.cp_c"] = gen.c
        return out

    def generator_param_count(self) -> int:
        return sum(l.generator.param_count() for l in self.layers if l.generator is not None)


def fuse(stack: FusionStack, item) -> np.ndarray:
    """Multimodal representation of one item (ItemModalities or flat vector)."""
    x = item.concat() if isinstance(item, ItemModalities) else as_f64(item).ravel()
    out, _ = stack.forward(x[None, :])
    return out[0]


def fuse_with_cache(stack: FusionStack, item):
    x = item.concat() if isinstance(item, ItemModalities) else as_f64(item).ravel()
    out, cache = stack.forward(x[None, :])
    return out[0], cache


def fuse_backward(stack: FusionStack, cache, grad_out) -> Dict[str, np.ndarray]:
    """Parameter gradients for a single-item fuse; needs the forward cache."""
    g = as_f64(grad_out)
    if g.ndim == 1:
        g = g[None, :]
    return stack.backward(cache, g)


def generator_count_full(widths: List[int], meta_dim: int) -> int:
    """Closed-form generator size for the full parameterization: sum p*q*z."""
    return sum(widths[n + 1] * widths[n] * meta_dim for n in range(len(widths) - 1))


def generator_count_cp(widths: List[int], meta_dim: int, rank: int) -> int:
    """Closed-form generator size under factorization: sum r*(p+q+z)."""
    return sum(rank * (widths[n + 1] + widths[n] + meta_dim) for n in range(len(widths) - 1))
