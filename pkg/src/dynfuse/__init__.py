"""dynfuse: per-item dynamic multimodal fusion for implicit-feedback ranking.

A small meta MLP turns an item's concatenated modality features into a meta
vector; a 3-D generator tensor (full or rank-factorized) maps that vector to
the weights of the item's own fusion network. Fused representations feed an
MF or GCN scoring head trained with pairwise ranking loss.
"""

from ._kernels import BACKEND_NAME as kernel_backend
from .config import RunConfig, TrainConfig
from .data import Dataset, Split, SynthSpec, generate_synthetic, load_dataset, split_dataset
from .evaluation import EvalReport, evaluate, metrics_at_k, rank_all, silhouette
from .fusion import FusionStack, ItemModalities, MetaExtractor, build_tower, fuse
from .heads import CollaborativeTable, GcnParams, InteractionGraph
from .linalg import CpTensor, FusionTensor, cp_contract, finite_diff_check, mode3_contract
from .model import Recommender
from .training import Adam, TrainResult, bpr_loss, sample_batch, train, xavier_init

__version__ = "0.1.0"

__all__ = [
    "Adam", "CollaborativeTable", "CpTensor", "Dataset", "EvalReport",
    "FusionStack", "FusionTensor", "GcnParams", "InteractionGraph",
    "ItemModalities", "MetaExtractor", "Recommender", "RunConfig", "Split",
    "SynthSpec", "TrainConfig", "TrainResult", "bpr_loss", "build_tower",
    "cp_contract", "evaluate", "finite_diff_check", "fuse",
    "generate_synthetic", "kernel_backend", "load_dataset", "metrics_at_k",
    "mode3_contract", "rank_all", "sample_batch", "silhouette",
    "split_dataset", "train", "xavier_init",
]
