"""Dataset ingestion, splitting, synthesis, and the binary checkpoint container.

On-disk dataset layout (one directory):

  interactions.tsv   one ``user<TAB>item`` pair per line, raw IDs are tokens
  visual.csv / acoustic.csv / textual.csv
                     header ``item_id,dim=<d>`` then rows ``item_id,v1,...,vd``

IDs are remapped to dense 0-based indices in first-appearance order, so a
write/load round trip is stable. Checkpoints are a little-endian binary
container: magic ``MMFC1``, a config echo, a named-array manifest, then the
float64 payload.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CheckpointError, DataFormatError
from .util import fmt_sig9, substream

log = logging.getLogger(__name__)

MODALITIES = ("visual", "acoustic", "textual")
CHECKPOINT_MAGIC = b"MMFC1"


@dataclass
class Dataset:
    n_users: int
    n_items: int
    interactions: np.ndarray                  # (m, 2) dense (user, item), deduplicated
    features: Dict[str, np.ndarray]           # modality -> (n_items, dim)
    user_labels: List[str]
    item_labels: List[str]
    truth: Optional["SynthTruth"] = None

    def dims(self) -> Dict[str, int]:
        return {m: self.features[m].shape[1] for m in MODALITIES if m in self.features}

    def feature_matrix(self) -> np.ndarray:
        """Items-by-D concatenation of present modalities in fixed order."""
        parts = [self.features[m] for m in MODALITIES if m in self.features]
        return np.concatenate(parts, axis=1)

    @property
    def input_dim(self) -> int:
        return sum(self.dims().values())

    def user_items(self) -> List[np.ndarray]:
        """Interacted item ids per user, in interaction-file order."""
        out: List[List[int]] = [[] for _ in range(self.n_users)]
        for u, i in self.interactions:
            out[u].append(i)
        return [np.asarray(items, dtype=np.int64) for items in out]


def _check_dataset(ds: Dataset) -> Dataset:
    if not ds.features:
        raise DataFormatError("dataset declares no modality features")
    for name, table in ds.features.items():
        if table.shape[0] != ds.n_items:
            raise DataFormatError(
                f"{name} features cover {table.shape[0]} items, expected {ds.n_items}")
        if not np.all(np.isfinite(table)):
            raise DataFormatError(f"{name} features hold non-finite values")
    return ds


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    inter_path = directory / "interactions.tsv"
    if not inter_path.is_file():
        raise DataFormatError(f"missing {inter_path}")

    user_index: Dict[str, int] = {}
    item_index: Dict[str, int] = {}
    seen = set()
    pairs: List[Tuple[int, int]] = []
    duplicates = 0
    with inter_path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise DataFormatError(
                    f"{inter_path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            u = user_index.setdefault(cols[0], len(user_index))
            i = item_index.setdefault(cols[1], len(item_index))
            if (u, i) in seen:
                duplicates += 1
                continue
            seen.add((u, i))
            pairs.append((u, i))
    if duplicates:
        log.warning("%s: dropped %d duplicate interaction(s)", inter_path, duplicates)
    if not pairs:
        raise DataFormatError(f"{inter_path}: no interactions")

    n_items = len(item_index)
    features: Dict[str, np.ndarray] = {}
    for modality in MODALITIES:
        path = directory / f"{modality}.csv"
        if path.is_file():
            features[modality] = _load_feature_table(path, item_index)
    if not features:
        raise DataFormatError(f"{directory}: no modality feature files found")

    return _check_dataset(Dataset(
        n_users=len(user_index),
        n_items=n_items,
        interactions=np.asarray(pairs, dtype=np.int64),
        features=features,
        user_labels=list(user_index),
        item_labels=list(item_index),
    ))


def _load_feature_table(path: Path, item_index: Dict[str, int]) -> np.ndarray:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(",")
        if len(parts) != 2 or parts[0] != "item_id" or not parts[1].startswith("dim="):
            raise DataFormatError(f"{path}:1: bad header {header!r}")
        try:
            dim = int(parts[1][4:])
        except ValueError:
            raise DataFormatError(f"{path}:1: bad dim in header {header!r}") from None
        if dim < 1:
            raise DataFormatError(f"{path}:1: dim must be >= 1, got {dim}")
        table = np.full((len(item_index), dim), np.nan)
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            cols = line.split(",")
            if len(cols) != dim + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(cols) - 1}")
            idx = item_index.get(cols[0])
            if idx is None:
                continue  # feature row for an item with no interactions
            try:
                table[idx] = [float(v) for v in cols[1:]]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value") from None
    missing = np.nonzero(np.isnan(table).any(axis=1))[0]
    if missing.size:
        raise DataFormatError(
            f"{path}: missing feature row(s) for {missing.size} interacting item(s), "
            f"first item index {missing[0]}")
    return table


def write_dataset(ds: Dataset, directory) -> None:
    """Inverse of load_dataset; features keep 9 significant digits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "interactions.tsv").open("w", encoding="utf-8") as fh:
        for u, i in ds.interactions:
            fh.write(f"{ds.user_labels[u]}\t{ds.item_labels[i]}\n")
    for modality, table in ds.features.items():
        with (directory / f"{modality}.csv").open("w", encoding="utf-8") as fh:
            fh.write(f"item_id,dim={table.shape[1]}\n")
            for idx in range(ds.n_items):
                row = ",".join(fmt_sig9(v) for v in table[idx])
                fh.write(f"{ds.item_labels[idx]},{row}\n")


@dataclass
class Split:
    """Per-user train/validation/test item arrays; disjoint, union = all."""

    train: List[np.ndarray]
    val: List[np.ndarray]
    test: List[np.ndarray]

    @property
    def n_users(self) -> int:
        return len(self.train)

    def train_pairs(self) -> np.ndarray:
        pairs = [(u, i) for u in range(self.n_users) for i in self.train[u]]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    def train_sets(self) -> List[set]:
        return [set(items.tolist()) for items in self.train]

    def users_with(self, part: str) -> np.ndarray:
        fold = getattr(self, part)
        return np.asarray([u for u in range(self.n_users) if len(fold[u])], dtype=np.int64)


def split_dataset(ds: Dataset, seed: int) -> Split:
    """Shuffle each user's interactions and hold out ~10% for val and test.

    Hold-out counts are floor(n/10) with a minimum of 1; users with fewer
    than 3 interactions keep everything in train and are skipped by
    evaluation. The remainder goes to train.
    """
    rng = substream(seed, "split")
    train, val, test = [], [], []
    for items in ds.user_items():
        items = items.copy()
        rng.shuffle(items)
        n = len(items)
        if n < 3:
            train.append(np.sort(items))
            val.append(np.asarray([], dtype=np.int64))
            test.append(np.asarray([], dtype=np.int64))
            continue
        hold = max(n // 10, 1)
        val.append(np.sort(items[:hold]))
        test.append(np.sort(items[hold:2 * hold]))
        train.append(np.sort(items[2 * hold:]))
    return Split(train=train, val=val, test=test)


@dataclass
class SynthTruth:
    """Ground truth behind a synthetic dataset, for diagnostics and tests."""

    item_cluster: np.ndarray
    item_latents: np.ndarray
    user_latents: np.ndarray
    encoders: Dict[Tuple[int, str], np.ndarray]


@dataclass
class SynthSpec:
    """Synthetic data with planted cluster-dependent modality relationships.

    Items belong to clusters; within a cluster only the assigned
    "informative" modalities carry a linear encoding of the item's latent
    vector, the rest are pure noise of matching variance. Interactions are
    each user's top items by latent affinity plus logistic noise.
    """

    users: int = 200
    items: int = 300
    clusters: int = 2
    latent_dim: int = 8
    dims: Dict[str, int] = field(
        default_factory=lambda: {"visual": 32, "acoustic": 32, "textual": 32})
    informative: Dict[int, Tuple[str, ...]] = field(
        default_factory=lambda: {0: ("visual",), 1: ("acoustic", "textual")})
    noise: float = 0.1
    interactions_per_user: int = 20
    pref_noise: float = 1.0
    latent_mean: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.clusters < 2:
            raise ValueError(f"need >= 2 clusters, got {self.clusters}")
        if self.interactions_per_user > self.items:
            raise ValueError("more interactions per user than items")
        if set(self.informative) != set(range(self.clusters)):
            raise ValueError("informative assignment must cover every cluster")
        assigned = {m for mods in self.informative.values() for m in mods}
        declared = set(self.dims)
        if not assigned <= declared:
            raise ValueError(f"informative modalities {assigned - declared} not declared")
        if assigned != declared:
            raise ValueError(
                f"modalities {declared - assigned} are never informative in any cluster")
        for m, d in self.dims.items():
            if d < self.latent_dim:
                raise ValueError(f"{m} dim {d} smaller than latent dim {self.latent_dim}")


def generate_synthetic(spec: SynthSpec) -> Dataset:
    spec.validate()
    rng = substream(spec.seed, "synth")

    cluster = np.arange(spec.items) % spec.clusters
    rng.shuffle(cluster)
    # the shared latent mean gives informative features a nonzero first
    # moment, so the informative modality is identifiable from the features
    # themselves (noise modalities stay zero-mean; variances still match)
    item_lat = spec.latent_mean + rng.standard_normal((spec.items, spec.latent_dim))
    user_lat = rng.standard_normal((spec.users, spec.latent_dim))

    encoders: Dict[Tuple[int, str], np.ndarray] = {}
    for c in range(spec.clusters):
        for m in spec.informative[c]:
            encoders[(c, m)] = (rng.standard_normal((spec.dims[m], spec.latent_dim))
                                / np.sqrt(spec.latent_dim))

    # Informative features: E @ latent + noise. Others: pure noise whose
    # variance matches the informative total (1 + noise^2).
    features: Dict[str, np.ndarray] = {}
    for m in MODALITIES:
        if m not in spec.dims:
            continue
        table = np.empty((spec.items, spec.dims[m]))
        for c in range(spec.clusters):
            members = np.nonzero(cluster == c)[0]
            if m in spec.informative[c]:
                signal = item_lat[members] @ encoders[(c, m)].T
                table[members] = signal + spec.noise * rng.standard_normal(signal.shape)
            else:
                scale = np.sqrt(1.0 + spec.noise ** 2)
                table[members] = scale * rng.standard_normal((len(members), spec.dims[m]))
        features[m] = table

    affinity = user_lat @ item_lat.T
    affinity += rng.logistic(0.0, spec.pref_noise, size=affinity.shape)
    top = np.argsort(-affinity, axis=1, kind="stable")[:, :spec.interactions_per_user]
    pairs = [(u, int(i)) for u in range(spec.users) for i in np.sort(top[u])]

    return _check_dataset(Dataset(
        n_users=spec.users,
        n_items=spec.items,
        interactions=np.asarray(pairs, dtype=np.int64),
        features=features,
        user_labels=[f"u{u}" for u in range(spec.users)],
        item_labels=[f"i{i}" for i in range(spec.items)],
        truth=SynthTruth(cluster, item_lat, user_lat, encoders),
    ))


SYNTH_KEYS = {
    "users": int, "items": int, "clusters": int, "latent_dim": int,
    "noise": float, "interactions_per_user": int, "pref_noise": float,
    "latent_mean": float, "seed": int,
}


def synth_spec_from_overrides(overrides: Dict[str, str]) -> SynthSpec:
    """Build a SynthSpec from string overrides like {'clusters': '3'}.

    With k clusters the informative assignment cycles through the declared
    modalities so that each is informative in at least one cluster.
    """
    spec = SynthSpec()
    for key, value in overrides.items():
        if key not in SYNTH_KEYS:
            raise ValueError(f"unknown synthetic spec key {key!r}")
        setattr(spec, key, SYNTH_KEYS[key](value))
    if spec.clusters != 2:
        names = [m for m in MODALITIES if m in spec.dims]
        assignment = {c: (names[c % len(names)],) for c in range(spec.clusters)}
        for idx, m in enumerate(names):  # guarantee full modality coverage
            assignment[idx % spec.clusters] = tuple(sorted(
                set(assignment[idx % spec.clusters]) | {m}))
        spec.informative = assignment
    spec.validate()
    return spec


def write_checkpoint(path, config: Dict[str, str], arrays: Dict[str, np.ndarray]) -> None:
    """Binary container: magic, config echo, named-array manifest, payload."""
    config_blob = "".join(f"{k}={config[k]}\n" for k in sorted(config)).encode("utf-8")
    manifest = bytearray()
    manifest += struct.pack("<I", len(arrays))
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        manifest += struct.pack("<H", len(encoded)) + encoded
        manifest += struct.pack("<B", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.tobytes(order="C")  # float64 little-endian on all targets here
    blob = (CHECKPOINT_MAGIC + struct.pack("<I", len(config_blob)) + config_blob
            + bytes(manifest) + bytes(payload))
    Path(path).write_bytes(blob)


def read_checkpoint(path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if blob[:5] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:5]!r}")
    offset = 5

    def take(n: int, what: str):
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    (config_len,) = struct.unpack("<I", take(4, "config length"))
    config_blob = bytes(take(config_len, "config echo")).decode("utf-8")
    config: Dict[str, str] = {}
    for line in config_blob.splitlines():
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed config line {line!r}")
        key, _, value = line.partition("=")
        config[key] = value

    (count,) = struct.unpack("<I", take(4, "array count"))
    manifest: List[Tuple[str, Tuple[int, ...]]] = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "array name")).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        manifest.append((name, dims))

    expected = sum(int(np.prod(dims)) for _, dims in manifest) * 8
    remaining = len(blob) - offset
    if remaining != expected:
        raise CheckpointError(
            f"{path}: payload length mismatch, manifest needs {expected} bytes "
            f"but {remaining} remain")
    arrays: Dict[str, np.ndarray] = {}
    for name, dims in manifest:
        n_bytes = int(np.prod(dims)) * 8
        flat = np.frombuffer(take(n_bytes, name), dtype="<f8")
        arrays[name] = flat.reshape(dims).copy()
    return config, arrays
