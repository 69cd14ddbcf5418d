"""One-shot subgraph link prediction on knowledge graphs."""

from .evaluation import MetricReport, coverage_ratio, evaluate, extrapolation_sweep, rank_filtered
from .kg import ConfigError, KnowledgeGraph, augment_inverse, load_dataset, split_train_edges
from .predictor import Predictor, PredictorConfig, load_checkpoint, save_checkpoint
from .sampler import ObservedGraph, SamplerConfig, Subgraph, extract_subgraph, ppr_scores, top_k
from .search import bilevel_search, search_predictor, search_sampler
from .training import TrainConfig, bce_loss, fit, train_epoch

__version__ = "0.1.0"
