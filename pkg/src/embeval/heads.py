"""Scoring assemblies: linear heads over backbone or joint space.

Three initializations: random gaussian, language-separate (head = composed
class-text matrix, joint space), language-merge (head = image projection
transposed times the class matrix, backbone space). The fine-tuning surrogate
feature paths either update the stored projection or pass backbone features
through a residual two-layer perceptron that starts as the identity map.

All arithmetic is float64; argmax ties resolve to the lowest class index.
"""
import dataclasses

import numpy as np

from .kernels import normalize_rows
from .lexicon import KnowledgeSelection, compose_class_matrix

SPACES = ("joint", "backbone")
FEATURE_PATHS = ("frozen", "train-projection", "train-adaptor")
INIT_KINDS = ("random", "language-separate", "language-merge")

DEFAULT_TEMPERATURE = {"random": 1.0, "language-separate": 100.0,
                       "language-merge": 100.0}


@dataclasses.dataclass(frozen=True)
class InitStrategy:
    kind: str
    seed: int = 0
    selection: KnowledgeSelection = KnowledgeSelection()

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown init kind {self.kind!r}")


@dataclasses.dataclass
class Adaptor:
    """Residual two-layer perceptron on backbone features.

    apply(X) = X + tanh(X @ w_in + b_in) @ w_out + b_out. With w_out and b_out
    zeroed the map is exactly the identity, which is the initial state.
    """
    w_in: np.ndarray    # (D, hidden)
    b_in: np.ndarray    # (hidden,)
    w_out: np.ndarray   # (hidden, D)
    b_out: np.ndarray   # (D,)

    @classmethod
    def identity_init(cls, dim, hidden, rng):
        return cls(w_in=rng.standard_normal((dim, hidden)) / np.sqrt(dim),
                   b_in=np.zeros(hidden),
                   w_out=np.zeros((hidden, dim)),
                   b_out=np.zeros(dim))

    def apply(self, x):
        return x + np.tanh(x @ self.w_in + self.b_in) @ self.w_out + self.b_out


@dataclasses.dataclass
class HeadAssembly:
    space: str
    W: np.ndarray               # (P, K) joint or (D, K) backbone, float64
    b: np.ndarray               # (K,)
    temperature: float
    feature_path: str = "frozen"
    adaptor: Adaptor = None
    normalize_input: bool = False
    proj: np.ndarray = None     # (P, D) float64, present for joint space
    init_kind: str = "random"

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown space {self.space!r}")
        if self.feature_path not in FEATURE_PATHS:
            raise ValueError(f"unknown feature_path {self.feature_path!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.space == "joint" and self.proj is None:
            raise ValueError("joint-space assembly needs the image projection")
        if self.space == "joint" and self.W.shape[0] != self.proj.shape[0]:
            raise ValueError(f"joint-space W has {self.W.shape[0]} rows, "
                             f"projection implies {self.proj.shape[0]}")
        if self.b.shape != (self.W.shape[1],):
            raise ValueError("bias length must match the class count")
        if self.feature_path == "train-projection" and self.space != "joint":
            raise ValueError("train-projection requires a joint-space assembly")
        if (self.adaptor is not None) != (self.feature_path == "train-adaptor"):
            raise ValueError("adaptor present iff feature_path=train-adaptor")

    @property
    def feature_dim(self):
        if self.space == "backbone":
            return self.W.shape[0]
        return self.proj.shape[1]

    def trainable_params(self):
        """Name -> live array; optimizer steps mutate these in place."""
        params = {"W": self.W, "b": self.b}
        if self.feature_path == "train-projection":
            params["P_v"] = self.proj
        elif self.feature_path == "train-adaptor":
            params.update({"adaptor.w_in": self.adaptor.w_in,
                           "adaptor.b_in": self.adaptor.b_in,
                           "adaptor.w_out": self.adaptor.w_out,
                           "adaptor.b_out": self.adaptor.b_out})
        return params

    def clone_params(self):
        return {k: v.copy() for k, v in self.trainable_params().items()}

    def load_params(self, snapshot):
        for k, v in self.trainable_params().items():
            v[...] = snapshot[k]


@dataclasses.dataclass
class ForwardCache:
    """Intermediates of one scoring pass, kept for the backward pass."""
    x: np.ndarray           # float64 input features
    path_out: np.ndarray    # features after the adaptor (or x itself)
    tanh_z: np.ndarray      # adaptor hidden activations, if any
    feats: np.ndarray       # what multiplies W (normalized joint or backbone)
    raw: np.ndarray         # pre-normalization joint features (joint space)
    norms: np.ndarray       # row norms used in normalization
    logits: np.ndarray


def init_head(archive, strategy, *, feature_path="frozen", adaptor_hidden=64,
              temperature=None, space=None):
    """Build a HeadAssembly for `archive` under an InitStrategy.

    Random heads draw W entries i.i.d. gaussian scaled by 1/sqrt(rows)
    (deterministic in strategy.seed) with zero bias. Language heads copy the
    composed class matrix: separate in joint space, merge premultiplied by the
    transposed image projection in backbone space.
    """
    man = archive.manifest
    d, p, k = man.feature_dim, man.joint_dim, man.n_classes
    if temperature is None:
        temperature = DEFAULT_TEMPERATURE[strategy.kind]

    if strategy.kind == "random":
        space = space or "joint"
        rows = p if space == "joint" else d
        rng = np.random.default_rng(strategy.seed)
        w = rng.standard_normal((rows, k)) / np.sqrt(rows)
        normalize = space == "joint"
    else:
        if not man.variant_table:
            raise ValueError("language initialization needs text variants")
        classes = compose_class_matrix(archive, strategy.selection)
        if strategy.kind == "language-separate":
            space = "joint"
            w = classes.matrix.copy()
            normalize = True
        else:  # language-merge
            space = "backbone"
            w = archive.proj.astype(np.float64).T @ classes.matrix
            normalize = False

    adaptor = None
    if feature_path == "train-adaptor":
        adaptor = Adaptor.identity_init(d, adaptor_hidden,
                                        np.random.default_rng(strategy.seed))
    proj = (np.ascontiguousarray(archive.proj, dtype=np.float64)
            if space == "joint" else None)
    return HeadAssembly(space=space, W=w, b=np.zeros(k), temperature=temperature,
                        feature_path=feature_path, adaptor=adaptor,
                        normalize_input=normalize, proj=proj,
                        init_kind=strategy.kind)


def forward_pass(assembly, features):
    """Score features, returning all intermediates needed for gradients."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.shape[1] != assembly.feature_dim:
        raise ValueError(f"features have dim {x.shape[1]}, "
                         f"assembly expects {assembly.feature_dim}")
    tanh_z = None
    path_out = x
    if assembly.feature_path == "train-adaptor":
        a = assembly.adaptor
        tanh_z = np.tanh(x @ a.w_in + a.b_in)
        path_out = x + tanh_z @ a.w_out + a.b_out

    raw = norms = None
    if assembly.space == "joint":
        raw = path_out @ assembly.proj.T
        if assembly.normalize_input:
            feats, norms = normalize_rows(np.ascontiguousarray(raw))
        else:
            feats = raw
    else:
        feats = path_out
    logits = assembly.temperature * (feats @ assembly.W + assembly.b)
    return ForwardCache(x=x, path_out=path_out, tanh_z=tanh_z, feats=feats,
                        raw=raw, norms=norms, logits=logits)


def score(assembly, features):
    """Logits for a feature matrix (n x D) -> (n x K)."""
    return forward_pass(assembly, features).logits


def predict(assembly, features):
    """Argmax class per row; ties resolve to the lowest index."""
    return np.argmax(score(assembly, features), axis=1)


def zero_shot_predict(archive, selection=KnowledgeSelection()):
    """Cosine zero-shot classification of the test split.

    Equivalent to scoring with a language-separate head at initialization:
    normalized joint-space test features against composed class columns.
    Returns (predicted class indices, logits).
    """
    classes = compose_class_matrix(archive, selection)
    raw = archive.h_test.astype(np.float64) @ archive.proj.astype(np.float64).T
    feats, _ = normalize_rows(np.ascontiguousarray(raw))
    logits = feats @ classes.matrix
    return np.argmax(logits, axis=1), logits
