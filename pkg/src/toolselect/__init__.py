"""API-selection harness for multimodal tool-augmented LLMs."""

from .dataset import (
    AmbiguityTag,
    Attachment,
    GoldSpec,
    Instruction,
    SplitResult,
    SubsetKey,
    load_instructions,
    partition_subsets,
    resolve_gold,
    split_dataset,
)
from .errors import BackendError, ConfigError, CoverageError, ReplayMiss, ValidationError
from .metrics import (
    MetricsReport,
    ScoredInstruction,
    accuracy,
    format_accuracy,
    hallucination,
    recall_at_k,
    render_report,
    report,
)
from .outparse import ParsedPrediction, parse_prediction, render_prediction
from .prompts import build_generation_prompt
from .registry import (
    UNKNOWN,
    FilterPolicy,
    ModelCard,
    Registry,
    Taxonomy,
    apply_filters,
    build_registry,
    functionality_group,
    load_cards,
)
from .selector import BackendConfig, PromptMode, assemble_prompt, run_eval

__version__ = "0.1.0"
