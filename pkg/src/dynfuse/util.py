"""Small shared helpers: RNG substreams, activations, initialization, formatting."""

import hashlib

import numpy as np

LEAKY_SLOPE = 0.01


def substream(seed: int, label: str) -> np.random.Generator:
    """Derive an independent generator from a root seed and a stream label.

    Every source of randomness in the package (splitting, initialization,
    sampling, synthesis) pulls from its own named substream, so fixing the
    root seed reproduces each component independently.
    """
    tag = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(pre: np.ndarray) -> np.ndarray:
    return (pre > 0.0).astype(np.float64)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_grad(pre: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(pre > 0.0, 1.0, slope)


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform Xavier/Glorot draw on +-sqrt(6/(fan_in+fan_out)).

    2-D shapes are (rows, cols) weight matrices with fan_out=rows,
    fan_in=cols. 3-D shapes are slice-major generator tensors (z, p, q)
    with fan_in = q*z and fan_out = p, since a generated weight entry sums
    q*z products.
    """
    shape = tuple(int(d) for d in shape)
    if any(d <= 0 for d in shape):
        raise ValueError(f"xavier_init needs positive dims, got {shape}")
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 3:
        z, p, q = shape
        fan_in, fan_out = q * z, p
    else:
        raise ValueError(f"xavier_init supports 2-D and 3-D shapes, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def fmt_sig9(value: float) -> str:
    """Decimal feature text, lossless to 1e-9 relative.

    Ten significant digits: nine would leave up to ~5e-9 relative rounding
    error for mantissas near 1, breaking the 1e-9 round-trip bound.
    """
    return format(float(value), ".10g")


def fmt_fixed6(value: float) -> str:
    return format(float(value), ".6f")
