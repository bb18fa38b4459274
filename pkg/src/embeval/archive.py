"""Embedding-archive data model, on-disk format, validation, and synthesis.

An archive is a directory holding ``manifest.json`` plus raw tensor files:
``H_train.f32``, ``H_test.f32``, ``P_v.f32``, ``T.f32`` (little-endian IEEE-754
float32, row-major, headerless) and ``labels_train.u32`` / ``labels_test.u32``
(little-endian uint32), or ``labels_*.multi.u8`` (N x K bytes of 0/1) for
multilabel tasks. The manifest records tensor shapes and SHA-256 checksums.

Backbone image features are stored pre-projection together with the image
projection matrix, so joint-space embeddings are recomputed on demand; text
embeddings are stored post-projection and unit-normalized. Tensors are float32
on disk; downstream training and metric arithmetic runs in float64.
"""
import dataclasses
import hashlib
import json
import os

import numpy as np

FORMAT_VERSION = 1

TASK_KINDS = ("single-label", "multilabel", "binary")
METRIC_KINDS = ("accuracy", "mean-per-class", "roc-auc", "map-11pt")
SOURCES = ("none", "wn_path", "wn_def", "wiki_def", "gpt3")

UNIT_NORM_TOL = 1e-4


class ArchiveError(Exception):
    """Raised for unloadable or invalid archives."""


@dataclasses.dataclass(frozen=True)
class VariantDescriptor:
    """Tags one text-embedding row by (class, template, knowledge source)."""
    variant_id: int
    class_id: int
    template_id: int
    source: str
    knowledge_index: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(variant_id=int(d["variant_id"]), class_id=int(d["class_id"]),
                   template_id=int(d["template_id"]), source=str(d["source"]),
                   knowledge_index=int(d.get("knowledge_index", 0)))


@dataclasses.dataclass
class ArchiveManifest:
    dataset_name: str
    task_kind: str
    metric_kind: str
    feature_dim: int
    joint_dim: int
    n_train: int
    n_test: int
    n_classes: int
    class_names: list
    variant_table: list
    format_version: int = FORMAT_VERSION
    tensors: dict = dataclasses.field(default_factory=dict)
    meta: dict = dataclasses.field(default_factory=dict)

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "dataset_name": self.dataset_name,
            "task_kind": self.task_kind,
            "metric_kind": self.metric_kind,
            "feature_dim": self.feature_dim,
            "joint_dim": self.joint_dim,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_classes": self.n_classes,
            "class_names": list(self.class_names),
            "variant_table": [v.to_dict() for v in self.variant_table],
            "tensors": self.tensors,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                format_version=int(d["format_version"]),
                dataset_name=str(d["dataset_name"]),
                task_kind=str(d["task_kind"]),
                metric_kind=str(d["metric_kind"]),
                feature_dim=int(d["feature_dim"]),
                joint_dim=int(d["joint_dim"]),
                n_train=int(d["n_train"]),
                n_test=int(d["n_test"]),
                n_classes=int(d["n_classes"]),
                class_names=list(d["class_names"]),
                variant_table=[VariantDescriptor.from_dict(v) for v in d["variant_table"]],
                tensors=dict(d.get("tensors", {})),
                meta=dict(d.get("meta", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ArchiveError(f"malformed manifest: {e!r}") from e


@dataclasses.dataclass
class EmbeddingArchive:
    """In-memory archive. Immutable after load; treat arrays as read-only."""
    manifest: ArchiveManifest
    h_train: np.ndarray   # (n_train, feature_dim) float32, backbone features
    h_test: np.ndarray    # (n_test, feature_dim) float32
    labels_train: np.ndarray  # (n_train,) int or (n_train, K) uint8
    labels_test: np.ndarray
    proj: np.ndarray      # (joint_dim, feature_dim) float32, image projection
    text: np.ndarray      # (M, joint_dim) float32, unit-norm text variants

    @property
    def n_classes(self):
        return self.manifest.n_classes

    @property
    def multilabel(self):
        return self.manifest.task_kind == "multilabel"

    def train_indices_by_class(self, class_id):
        """Indices of training samples belonging to one class, ascending."""
        if self.multilabel:
            return np.nonzero(self.labels_train[:, class_id] != 0)[0]
        return np.nonzero(self.labels_train == class_id)[0]

    def variants_of_class(self, class_id):
        return [v for v in self.manifest.variant_table if v.class_id == class_id]


# ---------------------------------------------------------------------------
# on-disk format

_LABEL_FILES = {
    False: ("labels_train.u32", "labels_test.u32"),
    True: ("labels_train.multi.u8", "labels_test.multi.u8"),
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_tensor(dirpath, name, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    path = os.path.join(dirpath, name)
    arr.tofile(path)
    return {"shape": list(arr.shape), "dtype": np.dtype(dtype).str, "sha256": _sha256(path)}


def _read_tensor(dirpath, name, entry):
    path = os.path.join(dirpath, name)
    if not os.path.isfile(path):
        raise ArchiveError(f"missing tensor file: {name}")
    if _sha256(path) != entry["sha256"]:
        raise ArchiveError(f"checksum mismatch for {name}")
    dtype = np.dtype(entry["dtype"])
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise ArchiveError(
            f"shape mismatch for {name}: manifest shape {shape} needs "
            f"{expected} bytes, file has {actual}")
    return np.fromfile(path, dtype=dtype).reshape(shape)


def save_archive(archive, path):
    """Write the archive directory; computes shapes and SHA-256 checksums."""
    os.makedirs(path, exist_ok=True)
    man = archive.manifest
    lt, le = _LABEL_FILES[man.task_kind == "multilabel"]
    tensors = {
        "H_train.f32": _write_tensor(path, "H_train.f32", archive.h_train, "<f4"),
        "H_test.f32": _write_tensor(path, "H_test.f32", archive.h_test, "<f4"),
        "P_v.f32": _write_tensor(path, "P_v.f32", archive.proj, "<f4"),
        "T.f32": _write_tensor(path, "T.f32", archive.text, "<f4"),
        lt: _write_tensor(path, lt, archive.labels_train,
                          "|u1" if man.task_kind == "multilabel" else "<u4"),
        le: _write_tensor(path, le, archive.labels_test,
                          "|u1" if man.task_kind == "multilabel" else "<u4"),
    }
    man.tensors = tensors
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(man.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_archive(path):
    """Load and fully validate an archive directory.

    Raises ArchiveError on missing files, manifest/shape mismatches, checksum
    failures, or any invariant violation (all violations listed).
    """
    man_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(man_path):
        raise ArchiveError(f"missing file: {man_path}")
    with open(man_path, encoding="utf-8") as f:
        try:
            man = ArchiveManifest.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise ArchiveError(f"manifest is not valid JSON: {e}") from e
    if man.format_version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported format_version {man.format_version}")

    multilabel = man.task_kind == "multilabel"
    lt, le = _LABEL_FILES[multilabel]
    needed = ["H_train.f32", "H_test.f32", "P_v.f32", "T.f32", lt, le]
    missing = [n for n in needed if n not in man.tensors]
    if missing:
        raise ArchiveError(f"manifest lacks tensor entries for: {', '.join(missing)}")

    arrays = {n: _read_tensor(path, n, man.tensors[n]) for n in needed}
    labels_train = arrays[lt]
    labels_test = arrays[le]
    if not multilabel:
        labels_train = labels_train.astype(np.int64)
        labels_test = labels_test.astype(np.int64)

    archive = EmbeddingArchive(
        manifest=man,
        h_train=arrays["H_train.f32"], h_test=arrays["H_test.f32"],
        labels_train=labels_train, labels_test=labels_test,
        proj=arrays["P_v.f32"], text=arrays["T.f32"])
    violations = validate_archive(archive)
    if violations:
        raise ArchiveError("invalid archive:\n  " + "\n  ".join(violations))
    return archive


# ---------------------------------------------------------------------------
# validation

def validate_archive(archive):
    """Check every archive invariant; returns a list of violations (empty = valid)."""
    v = []
    man = archive.manifest
    k = man.n_classes

    if man.task_kind not in TASK_KINDS:
        v.append(f"unknown task_kind {man.task_kind!r}")
    if man.metric_kind not in METRIC_KINDS:
        v.append(f"unknown metric_kind {man.metric_kind!r}")
    if not (man.feature_dim >= man.joint_dim >= 1):
        v.append(f"need feature_dim >= joint_dim >= 1, got "
                 f"{man.feature_dim} / {man.joint_dim}")
    if k < 2:
        v.append(f"need at least 2 classes, got {k}")
    if man.n_train < 0:
        v.append(f"negative n_train {man.n_train}")
    if man.n_test < 1:
        v.append(f"need n_test >= 1, got {man.n_test}")
    if len(man.class_names) != k:
        v.append(f"class_names has {len(man.class_names)} entries, expected {k}")

    # metric/task consistency
    if man.metric_kind == "roc-auc" and man.task_kind != "binary":
        v.append("metric_kind roc-auc requires task_kind binary")
    if man.metric_kind == "map-11pt" and man.task_kind != "multilabel":
        v.append("metric_kind map-11pt requires task_kind multilabel")
    if man.task_kind == "multilabel" and man.metric_kind != "map-11pt":
        v.append("multilabel task requires metric_kind map-11pt")
    if man.task_kind == "binary" and k != 2:
        v.append(f"binary task requires 2 classes, got {k}")

    # variant table
    ids = [d.variant_id for d in man.variant_table]
    if sorted(ids) != list(range(len(ids))):
        v.append("variant_id values are not dense unique 0..M-1")
    plain = set()
    gpt3_seen = {}
    for d in man.variant_table:
        if d.source not in SOURCES:
            v.append(f"variant {d.variant_id}: unknown source {d.source!r}")
        if not (0 <= d.class_id < k):
            v.append(f"variant {d.variant_id}: class_id {d.class_id} out of range")
        if d.source == "none":
            plain.add(d.class_id)
        if d.source == "gpt3":
            if not (0 <= d.knowledge_index <= 4):
                v.append(f"variant {d.variant_id}: gpt3 knowledge_index "
                         f"{d.knowledge_index} outside 0..4")
            key = (d.class_id, d.template_id)
            seen = gpt3_seen.setdefault(key, set())
            if d.knowledge_index in seen:
                v.append(f"duplicate gpt3 knowledge_index {d.knowledge_index} "
                         f"for class {d.class_id} template {d.template_id}")
            seen.add(d.knowledge_index)
        elif d.knowledge_index != 0:
            v.append(f"variant {d.variant_id}: non-gpt3 source with "
                     f"knowledge_index {d.knowledge_index}")
    for c in range(k):
        if c not in plain:
            v.append(f"class {c} has no source=\"none\" variant")

    # tensor shapes
    m = len(man.variant_table)
    for name, arr, shape in (
            ("H_train", archive.h_train, (man.n_train, man.feature_dim)),
            ("H_test", archive.h_test, (man.n_test, man.feature_dim)),
            ("P_v", archive.proj, (man.joint_dim, man.feature_dim)),
            ("T", archive.text, (m, man.joint_dim))):
        if tuple(arr.shape) != shape:
            v.append(f"{name} has shape {tuple(arr.shape)}, manifest implies {shape}")

    # labels
    for name, lab, n in (("labels_train", archive.labels_train, man.n_train),
                         ("labels_test", archive.labels_test, man.n_test)):
        if man.task_kind == "multilabel":
            if tuple(lab.shape) != (n, k):
                v.append(f"{name} has shape {tuple(lab.shape)}, expected {(n, k)}")
            elif not np.isin(lab, (0, 1)).all():
                v.append(f"{name} has entries outside {{0,1}}")
        else:
            if tuple(lab.shape) != (n,):
                v.append(f"{name} has shape {tuple(lab.shape)}, expected {(n,)}")
            elif n > 0 and (lab.min() < 0 or lab.max() >= k):
                v.append(f"{name} references classes outside 0..{k - 1}")

    # unit-norm text rows
    if archive.text.ndim == 2 and archive.text.shape[0] == m:
        norms = np.linalg.norm(archive.text.astype(np.float64), axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]
        for i in bad:
            v.append(f"T row {i} has norm {norms[i]:.6f}, expected 1 within {UNIT_NORM_TOL}")
    return v


# ---------------------------------------------------------------------------
# synthetic archives

@dataclasses.dataclass
class SynthSpec:
    """Recipe for a desk-scale synthetic archive.

    Class text directions are orthonormal in the joint space; each image's
    joint embedding is normalize(direction(label) + noise * gaussian) and its
    backbone feature is the projection right-inverse pre-image, so projecting
    reproduces the joint embedding. Fully deterministic in `seed`.
    """
    n_classes: int
    samples_per_class: int
    feature_dim: int = 768
    joint_dim: int = 512
    noise: float = 0.0
    seed: int = 0
    test_per_class: int = None      # defaults to samples_per_class
    task_kind: str = "single-label"
    metric_kind: str = None         # derived from task_kind when None
    templates_per_class: int = 1
    gpt3_per_class: int = 0
    wiki_def_coverage: float = 0.0  # fraction of classes given a wiki_def variant
    knowledge_noise: float = 0.05
    dataset_name: str = None


_DEFAULT_METRIC = {"single-label": "accuracy", "binary": "accuracy",
                   "multilabel": "map-11pt"}


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))  # fix QR sign ambiguity


def synthesize_archive(spec):
    """Generate a synthetic archive per SynthSpec (float32 tensors, validated)."""
    k, d, p = spec.n_classes, spec.feature_dim, spec.joint_dim
    if spec.task_kind not in TASK_KINDS:
        raise ValueError(f"unknown task_kind {spec.task_kind!r}")
    if spec.task_kind == "binary" and k != 2:
        raise ValueError("binary task requires n_classes=2")
    if p > d:
        raise ValueError(f"joint_dim {p} exceeds feature_dim {d}")
    if k > p:
        raise ValueError(f"n_classes {k} exceeds joint_dim {p}; "
                         "orthonormal class directions must fit")
    if spec.noise < 0:
        raise ValueError(f"negative noise {spec.noise}")

    rng = np.random.default_rng(spec.seed)
    directions = _orthonormal(rng, p, k)          # (P, K), columns orthonormal
    proj = np.ascontiguousarray(_orthonormal(rng, d, p).T)  # (P, D), orthonormal rows
    right_inv = proj.T                            # P_v @ right_inv = I

    def make_split(per_class):
        n = per_class * k
        if spec.task_kind == "multilabel":
            members = np.zeros((n, k), dtype=np.uint8)
            primary = np.repeat(np.arange(k), per_class)
            members[np.arange(n), primary] = 1
            extra = rng.integers(0, k, size=n)
            pick = rng.random(n) < 0.3
            members[np.arange(n)[pick], extra[pick]] = 1
            base = (members.astype(np.float64) @ directions.T)
            base /= np.linalg.norm(base, axis=1, keepdims=True)
            labels = members
        else:
            labels = np.repeat(np.arange(k), per_class)
            base = directions[:, labels].T
        joint = base + spec.noise * rng.standard_normal((n, p))
        joint /= np.maximum(np.linalg.norm(joint, axis=1, keepdims=True), 1e-30)
        order = rng.permutation(n)
        return (joint[order] @ right_inv.T), labels[order]

    h_train, labels_train = make_split(spec.samples_per_class)
    test_pc = spec.test_per_class if spec.test_per_class is not None else spec.samples_per_class
    h_test, labels_test = make_split(test_pc)

    # text variants: template 0 is the exact class direction; further
    # templates and knowledge records are jittered, renormalized copies
    variants, rows = [], []

    def add_variant(c, template, source, ki, exact):
        vec = directions[:, c]
        if not exact:
            vec = vec + spec.knowledge_noise * rng.standard_normal(p)
            vec = vec / np.linalg.norm(vec)
        variants.append(VariantDescriptor(len(variants), c, template, source, ki))
        rows.append(vec)

    n_wiki = int(round(spec.wiki_def_coverage * k))
    for c in range(k):
        for t in range(max(1, spec.templates_per_class)):
            add_variant(c, t, "none", 0, exact=(t == 0))
        if c < n_wiki:
            add_variant(c, 0, "wiki_def", 0, exact=False)
        for ki in range(min(spec.gpt3_per_class, 5)):
            add_variant(c, 0, "gpt3", ki, exact=False)

    name = spec.dataset_name or (
        f"synth-k{k}-d{d}-p{p}-n{spec.noise:g}-s{spec.seed}")
    manifest = ArchiveManifest(
        dataset_name=name, task_kind=spec.task_kind,
        metric_kind=spec.metric_kind or _DEFAULT_METRIC[spec.task_kind],
        feature_dim=d, joint_dim=p,
        n_train=len(h_train), n_test=len(h_test), n_classes=k,
        class_names=[f"class_{c}" for c in range(k)],
        variant_table=variants)
    archive = EmbeddingArchive(
        manifest=manifest,
        h_train=h_train.astype(np.float32), h_test=h_test.astype(np.float32),
        labels_train=labels_train if spec.task_kind == "multilabel"
        else labels_train.astype(np.int64),
        labels_test=labels_test if spec.task_kind == "multilabel"
        else labels_test.astype(np.int64),
        proj=proj.astype(np.float32),
        text=np.asarray(rows).astype(np.float32))
    violations = validate_archive(archive)
    if violations:  # defensive: synthesis must always produce valid archives
        raise ArchiveError("synthesized archive invalid:\n  " + "\n  ".join(violations))
    return archive
