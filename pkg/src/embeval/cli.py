"""Command-line entry point: synth / zeroshot / search / adapt / run / report.

Results are JSONL, one RunRecord per line, appended as runs complete (crash
safe) and rewritten in canonical key order once a batch finishes. Re-running a
manifest skips (dataset, setting, seed) keys already present unless --force.
The --canonical flag zeroes wall-clock fields so outputs are byte-comparable.
"""
import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import threading

from .archive import (ArchiveError, SynthSpec, load_archive, save_archive,
                      synthesize_archive, validate_archive)
from .heads import zero_shot_predict
from .lexicon import KnowledgeSelection, compose_class_matrix
from .metrics import aggregate_runs
from .optim import TrainConfig
from .protocol import (GridSpec, ProtocolError, RunRecord, RunSetting,
                       execute_setting, sample_few_shot, split_train_val,
                       grid_search, _InitSpec, INIT_NAMES, MODES)

RESULTS_NAME = "results.jsonl"


def _floats(text):
    return [float(t) for t in text.split(",") if t]


def _ints(text):
    return [int(t) for t in text.split(",") if t]


def _shots_value(text):
    return "full" if text == "full" else int(text)


def _add_common(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--force", action="store_true",
                   help="recompute settings already present in the results file")
    p.add_argument("--canonical", action="store_true",
                   help="zero wall-clock fields in written results")


def _add_grid(p):
    p.add_argument("--grid-lr", type=_floats, default=None,
                   help="comma-separated learning rates")
    p.add_argument("--grid-wd", type=_floats, default=None,
                   help="comma-separated weight decays")
    p.add_argument("--search-epochs", type=int, default=10)
    p.add_argument("--final-epochs", type=int, default=50)
    p.add_argument("--control", choices=("fixed", "plateau"), default="fixed")
    p.add_argument("--optimizer", choices=("sgd", "sgd-momentum", "adamw"),
                   default="adamw")
    p.add_argument("--batch-size", type=int, default=4)


def _grid_from_args(args):
    kw = {}
    if args.grid_lr:
        kw["learning_rates"] = args.grid_lr
    if args.grid_wd:
        kw["weight_decays"] = args.grid_wd
    return GridSpec(search_epochs=args.search_epochs,
                    final_epochs=args.final_epochs, **kw)


def _config_from_args(args):
    return TrainConfig(optimizer=args.optimizer, batch_size=args.batch_size,
                       control="plateau" if args.control == "plateau"
                       else "fixed-epochs")


# ---------------------------------------------------------------------------
# results files

def _record_line(record, canonical):
    d = record.to_dict()
    if canonical:
        d["wall_clock"] = 0.0
    return json.dumps(d, sort_keys=True)


def read_results(path):
    """Parse a results JSONL file; returns (records, [(lineno, error), ...])."""
    records, errors = [], []
    if not os.path.isfile(path):
        return records, errors
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                errors.append((lineno, str(e)))
    return records, errors


def _canonicalize_file(path, records, canonical):
    records = sorted({r.key(): r for r in records}.values(), key=lambda r: r.key())
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(_record_line(r, canonical) + "\n")


class _ResultsWriter:
    """Append-as-completed writer with a final canonical rewrite."""

    def __init__(self, path, existing, canonical):
        self.path = path
        self.canonical = canonical
        self.records = list(existing)
        self._lock = threading.Lock()

    def append(self, record):
        with self._lock:
            self.records.append(record)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(_record_line(record, self.canonical) + "\n")

    def finalize(self):
        with self._lock:
            _canonicalize_file(self.path, self.records, self.canonical)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    spec = SynthSpec(
        n_classes=args.classes, samples_per_class=args.per_class,
        test_per_class=args.test_per_class, feature_dim=args.dim,
        joint_dim=args.proj_dim, noise=args.noise, seed=args.seed,
        task_kind=args.task, metric_kind=args.metric,
        templates_per_class=args.templates, gpt3_per_class=args.gpt3_per_class,
        wiki_def_coverage=args.wiki_coverage, dataset_name=args.name)
    archive = synthesize_archive(spec)
    save_archive(archive, args.out)
    print(f"wrote {archive.manifest.dataset_name} to {args.out} "
          f"(train {archive.manifest.n_train}, test {archive.manifest.n_test})")
    return 0


def cmd_validate(args):
    try:
        archive = load_archive(args.archive)
    except ArchiveError as e:
        print(str(e), file=sys.stderr)
        return 1
    violations = validate_archive(archive)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return 1
    print(f"ok: {archive.manifest.dataset_name}")
    return 0


def cmd_zeroshot(args):
    from .protocol import evaluate_zero_shot
    archive = load_archive(args.archive)
    selection = KnowledgeSelection.parse(args.knowledge)
    record = evaluate_zero_shot(archive, selection)
    if args.dump_predictions:
        preds, _ = zero_shot_predict(archive, selection)
        preds.astype("<u4").tofile(args.dump_predictions)
    if args.dump_provenance:
        classes = compose_class_matrix(archive, selection)
        with open(args.dump_provenance, "w", encoding="utf-8") as f:
            json.dump({"knowledge": str(selection),
                       "per_class": {str(c): ids for c, ids
                                     in enumerate(classes.provenance)}},
                      f, indent=2, sort_keys=True)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, RESULTS_NAME)
    existing, _ = read_results(out)
    writer = _ResultsWriter(out, existing, args.canonical)
    writer.append(record)
    writer.finalize()
    print(f"{record.dataset} zeroshot {record.knowledge}: "
          f"{record.metric_kind}={record.value:.4f}")
    return 0


def _single_setting_parser(p):
    p.add_argument("--archive", required=True)
    p.add_argument("--shots", type=_shots_value, required=True)
    p.add_argument("--init", choices=tuple(INIT_NAMES), default="lang-sep")
    p.add_argument("--mode", choices=("lp", "ft-proj", "ft-adaptor"),
                   default="lp")
    p.add_argument("--knowledge", default="none")
    _add_grid(p)


def cmd_search(args):
    archive = load_archive(args.archive)
    selection = KnowledgeSelection.parse(args.knowledge)
    init = _InitSpec(kind=args.init, seed=args.seed, selection=selection)
    split = sample_few_shot(archive, args.shots, args.seed)
    split_train_val(split)
    grid = _grid_from_args(args)
    config = _config_from_args(args).replace(seed=args.seed)
    result = grid_search(archive, split, args.mode, init, grid, config)
    print(json.dumps({"eta": result.eta, "alpha": result.alpha,
                      "score": result.score,
                      "diverged": [list(c) for c in result.diverged]},
                     sort_keys=True))
    return 0


def cmd_adapt(args):
    archive = load_archive(args.archive)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, RESULTS_NAME)
    existing, _ = read_results(out)
    done = {r.key() for r in existing if r.status == "ok"}
    writer = _ResultsWriter(out, existing, args.canonical)
    grid = _grid_from_args(args)
    config = _config_from_args(args)
    failures = []
    for seed in args.seeds:
        setting = RunSetting(mode=args.mode, init=args.init,
                             knowledge=args.knowledge, shots=args.shots,
                             seed=seed)
        key = (archive.manifest.dataset_name, setting.mode, setting.init,
               setting.knowledge, str(setting.shots), setting.seed)
        if not args.force and key in done:
            continue
        record = execute_setting(archive, setting, grid, config)
        writer.append(record)
        if record.status != "ok":
            failures.append({"setting": dataclasses.asdict(setting),
                             "error": record.error})
    writer.finalize()
    if failures:
        print(json.dumps({"failed": failures}), file=sys.stderr)
        return 1
    return 0


def cmd_run(args):
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return 1
    if args.workers is not None:
        manifest["workers"] = args.workers
    if args.out is not None:
        manifest["out_dir"] = args.out
    os.makedirs(manifest["out_dir"], exist_ok=True)
    out = os.path.join(manifest["out_dir"], RESULTS_NAME)

    existing, parse_errors = read_results(out)
    if parse_errors:
        for lineno, err in parse_errors:
            print(f"{out}:{lineno}: {err}", file=sys.stderr)
        return 1
    done = {r.key() for r in existing if r.status == "ok"}

    tasks = []
    for path in manifest["archives"]:
        name = _dataset_name(path)
        for setting in _enumerate_settings(manifest):
            key = (name, setting.mode, setting.init, setting.knowledge,
                   str(setting.shots), setting.seed)
            if not args.force and key in done:
                continue
            tasks.append((path, setting))

    writer = _ResultsWriter(out, existing, args.canonical)
    grid = GridSpec(**manifest["grid"])
    config = TrainConfig(optimizer=manifest["optimizer"],
                         batch_size=manifest["batch_size"],
                         control=manifest["control"])
    cache, cache_lock = {}, threading.Lock()

    def get_archive(path):
        with cache_lock:
            if path not in cache:
                cache[path] = load_archive(path)
            return cache[path]

    failures = []

    def work(task):
        path, setting = task
        record = execute_setting(get_archive(path), setting, grid, config)
        writer.append(record)
        if record.status != "ok":
            failures.append({"archive": path,
                             "setting": dataclasses.asdict(setting),
                             "error": record.error})

    errors = []
    if tasks:
        with concurrent.futures.ThreadPoolExecutor(
                max_workers=manifest["workers"]) as pool:
            futures = {pool.submit(work, t): t for t in tasks}
            for fut in concurrent.futures.as_completed(futures):
                try:
                    fut.result()
                except Exception as e:  # keep going; report at the end
                    path, setting = futures[fut]
                    errors.append({"archive": path,
                                   "setting": dataclasses.asdict(setting),
                                   "error": f"{type(e).__name__}: {e}"})
    writer.finalize()
    print(f"executed {len(tasks)} settings "
          f"({len(existing)} already present) -> {out}")
    if errors or failures:
        print(json.dumps({"errors": errors + failures}, sort_keys=True),
              file=sys.stderr)
        return 1
    return 0


def cmd_report(args):
    records, parse_errors = read_results(args.results)
    if parse_errors:
        for lineno, err in parse_errors:
            print(f"{args.results}:{lineno}: {err}", file=sys.stderr)
        return 1
    text = render_report(records)
    csv_text = render_csv(records)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(text)
        with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as f:
            f.write(csv_text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# manifest handling

_MANIFEST_DEFAULTS = {
    "knowledge": ["none"],
    "control": "fixed-epochs",
    "workers": 1,
    "optimizer": "adamw",
    "batch_size": 4,
    "out_dir": ".",
}


def load_manifest(path):
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    manifest = dict(_MANIFEST_DEFAULTS)
    manifest.update(raw)
    for field in ("archives", "modes", "inits", "shots", "seeds"):
        if not manifest.get(field):
            raise ValueError(f"manifest field {field!r} missing or empty")
    for path_ in manifest["archives"]:
        if not os.path.isdir(path_):
            raise ValueError(f"archive does not exist: {path_}")
    for mode in manifest["modes"]:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "zeroshot" and "random" in manifest["inits"]:
            raise ValueError("zeroshot forbids random init")
        if mode == "ft-proj" and "lang-merge" in manifest["inits"]:
            raise ValueError("ft-proj forbids lang-merge init (backbone space)")
    for init in manifest["inits"]:
        if init not in INIT_NAMES:
            raise ValueError(f"unknown init {init!r}")
    for shots in manifest["shots"]:
        if shots != "full" and (not isinstance(shots, int) or shots < 1):
            raise ValueError(f"bad shots value {shots!r}; zero-shot is a mode")
    grid = dict(manifest.get("grid", {}))
    manifest["grid"] = {
        k: grid[k] for k in
        ("learning_rates", "weight_decays", "search_epochs", "final_epochs")
        if k in grid}
    if manifest["control"] == "fixed":
        manifest["control"] = "fixed-epochs"
    return manifest


def _dataset_name(path):
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as f:
        return json.load(f)["dataset_name"]


def _enumerate_settings(manifest):
    """Cross-product of manifest axes; zeroshot collapses shots/seeds/inits."""
    settings = []
    for mode in manifest["modes"]:
        for knowledge in manifest["knowledge"]:
            if mode == "zeroshot":
                settings.append(RunSetting(mode="zeroshot", init="lang-sep",
                                           knowledge=knowledge, shots=0, seed=0))
                continue
            for init in manifest["inits"]:
                for shots in manifest["shots"]:
                    for seed in manifest["seeds"]:
                        settings.append(RunSetting(mode=mode, init=init,
                                                   knowledge=knowledge,
                                                   shots=shots, seed=seed))
    return settings


# ---------------------------------------------------------------------------
# reporting

def render_report(records):
    """Plain-text tables, one per setting: per-dataset 'mean ± std' percent
    cells over seeds plus an unweighted AVERAGE row. Deterministic layout.
    """
    lines = ["embeval results report (sample std over seeds, values in %)", ""]
    usable = [r for r in records if r.value is not None]
    if not usable:
        lines.append("(no results)")
        return "\n".join(lines) + "\n"
    for agg in aggregate_runs(usable):
        mode, init, knowledge, shots = agg.setting
        lines.append(f"== mode={mode} init={init} knowledge={knowledge} "
                     f"shots={shots} ==")
        width = max([len(d) for d in agg.per_dataset] + [len("AVERAGE")])
        for dataset, stat in agg.per_dataset.items():
            cell = f"{100 * stat.mean:.2f} ± {100 * stat.std:.2f}"
            flag = "" if stat.n > 1 else "  (n=1)"
            lines.append(f"  {dataset:<{width}}  {cell}{flag}")
        lines.append(f"  {'AVERAGE':<{width}}  {100 * agg.cross_mean:.2f}")
        lines.append("")
    return "\n".join(lines) + "\n"


def render_csv(records):
    rows = ["mode,init,knowledge,shots,dataset,n_seeds,mean_pct,std_pct"]
    usable = [r for r in records if r.value is not None]
    if usable:
        for agg in aggregate_runs(usable):
            mode, init, knowledge, shots = agg.setting
            for dataset, stat in agg.per_dataset.items():
                rows.append(f"{mode},{init},{knowledge},{shots},{dataset},"
                            f"{stat.n},{100 * stat.mean:.4f},{100 * stat.std:.4f}")
            rows.append(f"{mode},{init},{knowledge},{shots},AVERAGE,,"
                        f"{100 * agg.cross_mean:.4f},")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="embeval",
        description="Embedding-space evaluation engine for language-augmented "
                    "visual models (zero-/few-/full-shot adaptation).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic archive")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=None)
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--proj-dim", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=("single-label", "binary", "multilabel"),
                   default="single-label")
    p.add_argument("--metric", default=None)
    p.add_argument("--templates", type=int, default=1)
    p.add_argument("--gpt3-per-class", type=int, default=0)
    p.add_argument("--wiki-coverage", type=float, default=0.0)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="load and validate an archive")
    p.add_argument("--archive", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("zeroshot", help="zero-shot evaluation of an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--knowledge", default="none")
    p.add_argument("--dump-predictions", default=None,
                   help="write per-test-item argmax predictions (uint32 LE)")
    p.add_argument("--dump-provenance", default=None,
                   help="write the per-class variant ids used (JSON)")
    _add_common(p)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("search", help="hyper-parameter grid search only")
    _single_setting_parser(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("adapt", help="search + final run for one setting")
    _single_setting_parser(p)
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    _add_common(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("run", help="execute an experiment manifest (JSON)")
    p.add_argument("manifest")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--canonical", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render mean ± std tables from results")
    p.add_argument("results")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArchiveError, ProtocolError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
