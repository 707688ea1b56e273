"""Dataset synthesis, training, evaluation and export."""

from .config import DESK_CLIP_PARAMS, DESK_PRESET, ExperimentConfig, load_config, save_config
from .corpus import TOY_CLASSES, CorpusEntry, load_corpus, make_toy_corpus
from .synth import load_manifest, resimulate_targets, synthesize_dataset
from .train import (
    EarlyStopping, EvalReport, evaluate, export_trajectory, load_examples, lr_at_epoch, score_predictions,
    train,
)

__all__ = [
    "DESK_CLIP_PARAMS", "DESK_PRESET", "CorpusEntry", "EarlyStopping", "EvalReport", "ExperimentConfig", "TOY_CLASSES",
    "evaluate", "export_trajectory", "load_config", "load_corpus", "load_examples", "load_manifest",
    "lr_at_epoch", "make_toy_corpus", "resimulate_targets", "save_config", "score_predictions",
    "synthesize_dataset", "train",
]
