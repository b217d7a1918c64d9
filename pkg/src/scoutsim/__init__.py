"""scoutsim: a desk-scale scholarly-search agent trained with sequence-level
policy optimization on a fully synthetic corpus."""

__version__ = "0.1.0"

from .corpus import Corpus, Paper, Query, build_corpus, read_corpus, write_corpus
from .env import EnvConfig, Environment
from .training import TrainConfig, Trainer, train

__all__ = [
    "Corpus",
    "Paper",
    "Query",
    "build_corpus",
    "read_corpus",
    "write_corpus",
    "EnvConfig",
    "Environment",
    "TrainConfig",
    "Trainer",
    "train",
    "__version__",
]
