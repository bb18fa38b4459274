"""Per-class embedding composition from text variants.

A KnowledgeSelection picks which variant rows feed each class: the plain
prompts, a single knowledge source, or the wiki+gpt3 union. Selected rows are
defensively renormalized, averaged, and renormalized again, so every composed
class column is unit-norm and insensitive to positive rescaling of the stored
rows. Classes that lack the requested source fall back (optionally through
gpt3) to the plain prompts, so selection never returns an empty set.
"""
import dataclasses

import numpy as np

from .archive import ArchiveError

SOURCE_SETS = ("none", "wn_path", "wn_def", "wiki_def", "gpt3", "wiki+gpt3")
FALLBACKS = ("plain", "gpt3-then-plain")


@dataclasses.dataclass(frozen=True)
class KnowledgeSelection:
    source_set: str = "none"
    gpt3_count: int = 5
    fallback: str = "gpt3-then-plain"

    def __post_init__(self):
        if self.source_set not in SOURCE_SETS:
            raise ValueError(f"unknown source_set {self.source_set!r}")
        if not 1 <= self.gpt3_count <= 5:
            raise ValueError(f"gpt3_count must be in 1..5, got {self.gpt3_count}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}")

    @classmethod
    def parse(cls, text):
        """Parse CLI syntax: none|wn_path|wn_def|wiki_def|gpt3:K|wiki+gpt3:K."""
        base, _, count = text.partition(":")
        if count:
            return cls(source_set=base, gpt3_count=int(count))
        return cls(source_set=base)

    def __str__(self):
        if self.source_set in ("gpt3", "wiki+gpt3"):
            return f"{self.source_set}:{self.gpt3_count}"
        return self.source_set


@dataclasses.dataclass
class ClassMatrix:
    """Composed unit-norm class embeddings, column k for class k."""
    matrix: np.ndarray    # (joint_dim, K) float64
    provenance: list      # per class, the variant_ids averaged


def select_variants(archive, selection, class_id):
    """Variant ids feeding class `class_id` under `selection`, never empty."""
    cand = archive.variants_of_class(class_id)
    if not cand:
        raise ArchiveError(f"class {class_id} has no text variants at all")

    def of(source):
        ids = [v.variant_id for v in cand if v.source == source]
        if source == "gpt3":
            ids = [v.variant_id for v in cand
                   if v.source == "gpt3" and v.knowledge_index < selection.gpt3_count]
        return ids

    plain = of("none")
    src = selection.source_set
    if src == "none":
        chosen = plain
    elif src in ("wn_path", "wn_def", "gpt3"):
        chosen = of(src)
    elif src == "wiki_def":
        chosen = of("wiki_def")
        if not chosen and selection.fallback == "gpt3-then-plain":
            chosen = of("gpt3")
    else:  # wiki+gpt3
        chosen = sorted(of("wiki_def") + of("gpt3"))
    if not chosen:
        chosen = plain
    if not chosen:
        raise ArchiveError(
            f"class {class_id} has no plain variants to fall back on")
    return chosen


def compose_class_matrix(archive, selection):
    """Average the selected text rows per class into unit-norm columns."""
    p = archive.manifest.joint_dim
    k = archive.n_classes
    text = archive.text.astype(np.float64)
    matrix = np.empty((p, k))
    provenance = []
    for c in range(k):
        ids = select_variants(archive, selection, c)
        rows = text[ids]
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        if (norms < 1e-12).any():
            raise ArchiveError(f"class {c}: selected variant with zero norm")
        mean = (rows / norms).mean(axis=0)
        scale = np.linalg.norm(mean)
        if scale < 1e-12:
            raise ArchiveError(
                f"class {c}: selected variants average to the zero vector")
        matrix[:, c] = mean / scale
        provenance.append(ids)
    return ClassMatrix(matrix=matrix, provenance=provenance)
