"""Embedding-space evaluation engine for language-augmented visual models.

Operates on archives of precomputed image/text embeddings: zero-shot scoring
via composed class-text embeddings, linear-probe and fine-tuning-surrogate
adaptation with random or language-based head initialization, automatic
hyper-parameter grid search, and a four-metric evaluation suite.
"""
from .archive import (ArchiveError, ArchiveManifest, EmbeddingArchive,
                      SynthSpec, VariantDescriptor, load_archive, save_archive,
                      synthesize_archive, validate_archive)
from .heads import (Adaptor, HeadAssembly, InitStrategy, init_head, predict,
                    score, zero_shot_predict)
from .lexicon import (ClassMatrix, KnowledgeSelection, compose_class_matrix,
                      select_variants)
from .metrics import (AggregateResult, MetricError, MetricResult,
                      aggregate_runs, compute_metric)
from .optim import (DivergenceError, PlateauState, TrainConfig, loss_and_grad,
                    make_optimizer_state, optimizer_step, plateau_step)
from .protocol import (GridSpec, ProtocolError, RunRecord, RunSetting,
                       evaluate_zero_shot, execute_setting, grid_search,
                       run_adaptation, sample_few_shot, split_train_val,
                       train_assembly)

__version__ = "0.1.0"
