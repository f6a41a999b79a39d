"""Python access to the scen engine (see the scen CLI for training and editing)."""
from ._scen import (
    Checkpoint,
    KnowledgeBase,
    ScenError,
    decide,
    gen_synthetic_facts,
    indexing_loss,
    normalize_config,
)

__all__ = [
    "Checkpoint",
    "KnowledgeBase",
    "ScenError",
    "decide",
    "gen_synthetic_facts",
    "indexing_loss",
    "normalize_config",
]
