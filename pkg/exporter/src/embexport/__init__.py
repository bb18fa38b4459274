"""Dual-encoder feature exporter producing engine-format embedding archives."""
from .checkpoint import (CheckpointConfig, DualEncoder, load_checkpoint,
                         save_checkpoint)
from .export import ExportError, export_archive, reference_zero_shot
from .lexicon_file import (ClassKnowledge, LexiconError, LexiconFile,
                           load_lexicon, parse_lexicon, populate_gpt3,
                           render_variants, save_lexicon)

__version__ = "0.1.0"
