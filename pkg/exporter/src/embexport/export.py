"""Archive export: encode a labeled image dataset and a lexicon into the
engine's archive directory format, plus a reference zero-shot prediction file.

The dataset directory must hold `train/` and `test/` splits, each either a
per-class-subfolder layout or a flat folder with `labels.csv` (filename,
class index). The writer implements the archive wire format independently:
manifest.json with tensor shapes and SHA-256 checksums, headerless
little-endian float32/uint32 tensor files.
"""
import csv
import dataclasses
import datetime
import hashlib
import json
import os

import numpy as np
import torch

from .checkpoint import load_image
from .lexicon_file import render_variants

FORMAT_VERSION = 1
BATCH = 64


class ExportError(Exception):
    pass


@dataclasses.dataclass
class SplitFiles:
    paths: list
    labels: np.ndarray


def scan_split(split_dir, class_names):
    """Resolve (image path, class index) pairs for one split directory."""
    csv_path = os.path.join(split_dir, "labels.csv")
    pairs = []
    if os.path.isfile(csv_path):
        with open(csv_path, newline="", encoding="utf-8") as f:
            for row in csv.reader(f):
                if not row or row[0].startswith("#"):
                    continue
                pairs.append((os.path.join(split_dir, row[0]), int(row[1])))
    else:
        for class_id, name in enumerate(class_names):
            sub = os.path.join(split_dir, name)
            if not os.path.isdir(sub):
                continue
            for fname in sorted(os.listdir(sub)):
                pairs.append((os.path.join(sub, fname), class_id))
    if not pairs:
        raise ExportError(f"no labeled images under {split_dir}")
    pairs.sort()
    bad = [(p, c) for p, c in pairs if not 0 <= c < len(class_names)]
    if bad:
        raise ExportError(f"labels outside 0..{len(class_names) - 1}: "
                          f"{[p for p, _ in bad[:5]]}")
    return SplitFiles(paths=[p for p, _ in pairs],
                      labels=np.array([c for _, c in pairs], dtype=np.int64))


def encode_split(model, split):
    """Backbone features for every image; decode failures are collected."""
    feats, failures = [], []
    pixels = []
    kept = []
    for path in split.paths:
        try:
            pixels.append(load_image(path))
            kept.append(path)
        except OSError as e:
            failures.append(f"{path}: {e}")
    if failures:
        raise ExportError("undecodable images:\n  " + "\n  ".join(failures))
    for start in range(0, len(pixels), BATCH):
        batch = torch.stack(pixels[start:start + BATCH])
        feats.append(model.encode_image_batch(batch))
    return torch.cat(feats).numpy().astype(np.float32)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_tensor(out_dir, name, arr):
    path = os.path.join(out_dir, name)
    arr.tofile(path)
    return {"shape": list(arr.shape), "dtype": arr.dtype.str,
            "sha256": _sha256(path)}


def export_archive(model, dataset_dir, lexicon, out_dir, *,
                   dataset_name=None, metric_kind="accuracy",
                   write_reference=True):
    """Write a complete archive directory; returns the manifest dict."""
    torch.set_num_threads(1)  # bit-stable re-exports
    class_names = lexicon.class_names
    train = scan_split(os.path.join(dataset_dir, "train"), class_names)
    test = scan_split(os.path.join(dataset_dir, "test"), class_names)

    h_train = encode_split(model, train)
    h_test = encode_split(model, test)
    proj = model.projection_matrix().numpy().astype(np.float32)

    variants = render_variants(lexicon)
    text = model.encode_text([s for _, s in variants]).numpy().astype(np.float32)

    os.makedirs(out_dir, exist_ok=True)
    tensors = {
        "H_train.f32": _write_tensor(out_dir, "H_train.f32", h_train),
        "H_test.f32": _write_tensor(out_dir, "H_test.f32", h_test),
        "P_v.f32": _write_tensor(out_dir, "P_v.f32", np.ascontiguousarray(proj)),
        "T.f32": _write_tensor(out_dir, "T.f32", text),
        "labels_train.u32": _write_tensor(
            out_dir, "labels_train.u32",
            train.labels.astype("<u4")),
        "labels_test.u32": _write_tensor(
            out_dir, "labels_test.u32", test.labels.astype("<u4")),
    }
    task_kind = "binary" if len(class_names) == 2 else "single-label"
    manifest = {
        "format_version": FORMAT_VERSION,
        "dataset_name": dataset_name or os.path.basename(
            os.path.normpath(dataset_dir)),
        "task_kind": task_kind,
        "metric_kind": metric_kind,
        "feature_dim": model.config.feature_dim,
        "joint_dim": model.config.joint_dim,
        "n_train": len(train.labels),
        "n_test": len(test.labels),
        "n_classes": len(class_names),
        "class_names": list(class_names),
        "variant_table": [d for d, _ in variants],
        "tensors": tensors,
        "meta": {
            "exporter": "embexport",
            "created_at": datetime.datetime.now(
                datetime.timezone.utc).isoformat(),
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    if write_reference:
        preds = reference_zero_shot(model, out_dir)
        preds.astype("<u4").tofile(
            os.path.join(out_dir, "reference_predictions.u32"))
    return manifest


def reference_zero_shot(model, archive_dir):
    """Recompute zero-shot argmax predictions from the written archive files.

    Independent of the engine: plain-variant rows are averaged per class and
    renormalized; projected test features are cosine-scored in torch float32.
    """
    with open(os.path.join(archive_dir, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)

    def read(name):
        entry = manifest["tensors"][name]
        arr = np.fromfile(os.path.join(archive_dir, name),
                          dtype=np.dtype(entry["dtype"]))
        return arr.reshape(entry["shape"])

    if (manifest["feature_dim"] != model.config.feature_dim
            or manifest["joint_dim"] != model.config.joint_dim):
        raise ExportError("checkpoint dimensions do not match the archive")
    h_test = torch.from_numpy(read("H_test.f32").copy())
    proj = torch.from_numpy(read("P_v.f32").copy())
    text = torch.from_numpy(read("T.f32").copy())

    k = manifest["n_classes"]
    columns = []
    for class_id in range(k):
        rows = [v["variant_id"] for v in manifest["variant_table"]
                if v["class_id"] == class_id and v["source"] == "none"]
        if not rows:
            raise ExportError(f"class {class_id} has no plain variants")
        mean = torch.nn.functional.normalize(text[rows], dim=1).mean(dim=0)
        columns.append(mean / mean.norm())
    class_matrix = torch.stack(columns, dim=1)

    joint = torch.nn.functional.normalize(h_test @ proj.T, dim=1)
    return torch.argmax(joint @ class_matrix, dim=1).numpy()
