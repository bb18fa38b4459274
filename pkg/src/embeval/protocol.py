"""Evaluation protocols: deterministic few-shot splits, grid search, final runs.

Few-shot sampling shuffles each class's index list with a seed derived from
(seed, class), then takes a prefix, so splits with more shots nest splits with
fewer. Hyper-parameter search trains each (lr, weight-decay) cell for a fixed
number of epochs, scores it by the best validation metric along the whole
trace, and breaks ties toward the smaller learning rate, then smaller decay.
The final run restarts from the chosen configuration: with fixed-epoch control
it retrains on train+val; with plateau control it keeps the validation split
to drive the controller and returns the best-validation checkpoint.
"""
import dataclasses
import itertools
import time

import numpy as np

from .heads import InitStrategy, init_head, score, zero_shot_predict
from .lexicon import KnowledgeSelection
from .metrics import compute_metric
from .optim import (DivergenceError, PlateauState, loss_and_grad,
                    make_optimizer_state, optimizer_step, plateau_step)

MODES = ("zeroshot", "lp", "ft-proj", "ft-adaptor")
INIT_NAMES = {"random": "random", "lang-sep": "language-separate",
              "lang-merge": "language-merge"}
_MODE_PATH = {"lp": "frozen", "ft-proj": "train-projection",
              "ft-adaptor": "train-adaptor"}


class ProtocolError(Exception):
    pass


# ---------------------------------------------------------------------------
# splits

@dataclasses.dataclass
class SplitSpec:
    shots: object               # positive int or "full"
    seed: int
    per_class: list             # per class: selected train indices, shuffled
    train: np.ndarray = None    # filled by split_train_val
    val: np.ndarray = None

    def selected_indices(self):
        if not any(len(c) for c in self.per_class):
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([c for c in self.per_class if len(c)]))


def sample_few_shot(archive, shots, seed):
    """Select min(shots, population) training indices per class.

    Each class's index list is shuffled by a (seed, class)-derived generator
    and a prefix is taken, so the same seed yields nested selections as the
    shot count grows. shots="full" selects everything (still shuffled per
    class, which later seeds the train/val split).
    """
    if archive.manifest.n_train == 0:
        raise ProtocolError("archive has an empty training split")
    if shots != "full" and (not isinstance(shots, (int, np.integer)) or shots < 1):
        raise ValueError(f"shots must be a positive int or 'full', got {shots!r}")
    per_class = []
    for c in range(archive.n_classes):
        idx = archive.train_indices_by_class(c)
        rng = np.random.default_rng([seed, c])
        shuffled = idx[rng.permutation(len(idx))]
        if shots != "full":
            shuffled = shuffled[:min(shots, len(shuffled))]
        per_class.append(shuffled.astype(np.int64))
    return SplitSpec(shots=shots, seed=seed, per_class=per_class)


def split_train_val(split):
    """80/20 per-class partition of the selected indices.

    Per class: val gets max(1, round(0.2 * count)) samples but never the last
    one (count >= 2 keeps at least one in train); a singleton class goes
    entirely to train and is absent from val. Assignments already made to an
    earlier class win (multilabel lists can overlap). Returns sorted, disjoint
    (train, val) index arrays and records them on the split.
    """
    assigned = {}
    for sel in split.per_class:
        fresh = [i for i in sel if int(i) not in assigned]
        count = len(fresh)
        if count == 0:
            continue
        if count == 1:
            n_val = 0
        else:
            n_val = min(max(1, int(round(0.2 * count))), count - 1)
        for pos, i in enumerate(fresh):
            assigned[int(i)] = pos >= count - n_val
    train = np.array(sorted(i for i, in_val in assigned.items() if not in_val),
                     dtype=np.int64)
    val = np.array(sorted(i for i, in_val in assigned.items() if in_val),
                   dtype=np.int64)
    split.train, split.val = train, val
    return train, val


# ---------------------------------------------------------------------------
# training loop

@dataclasses.dataclass
class GridSpec:
    learning_rates: list = dataclasses.field(
        default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    weight_decays: list = dataclasses.field(
        default_factory=lambda: [0.0, 1e-4, 1e-2])
    search_epochs: int = 10
    final_epochs: int = 50

    def __post_init__(self):
        if not self.learning_rates or not self.weight_decays:
            raise ValueError("grid axes must be non-empty")
        if self.search_epochs < 1 or self.final_epochs < 0:
            raise ValueError("epoch counts out of range")


def _val_metric(assembly, archive, x_val, y_val):
    logits = score(assembly, x_val)
    return compute_metric(archive.manifest.metric_kind, logits, y_val).value


def train_assembly(assembly, x, y, config, epochs, *, archive=None,
                   x_val=None, y_val=None):
    """Mini-batch training; returns the per-epoch validation trace.

    Batch order is a deterministic shuffle seeded by config.seed. With plateau
    control the controller consumes the validation metric after every epoch,
    decays the lr on its schedule, and the best-validation parameter snapshot
    is restored before returning. Raises DivergenceError on non-finite loss.
    """
    params = assembly.trainable_params()
    state = make_optimizer_state(params, config)
    rng = np.random.default_rng(config.seed)
    n = len(x)
    if n == 0:
        raise ProtocolError("no training samples")
    has_val = x_val is not None and len(x_val) > 0
    plateau = None
    best_snapshot = None
    if config.control == "plateau":
        if not has_val:
            raise ProtocolError("plateau control needs a validation split")
        plateau = PlateauState(lr=config.eta, patience=config.plateau_patience,
                               factor=config.plateau_factor,
                               terminate=config.plateau_terminate)
    trace = []
    for _epoch in range(epochs):
        perm = rng.permutation(n)
        lr = plateau.lr if plateau is not None else config.eta
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = loss_and_grad(assembly, x[idx], y[idx], config)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss!r}")
            optimizer_step(state, params, grads, config, lr=lr)
        if has_val:
            trace.append(_val_metric(assembly, archive, x_val, y_val))
        if plateau is not None:
            plateau = plateau_step(plateau, trace[-1])
            if plateau.bad_epochs == 0:
                best_snapshot = assembly.clone_params()
            if plateau.terminated:
                break
    if plateau is not None and best_snapshot is not None:
        assembly.load_params(best_snapshot)
    return trace


@dataclasses.dataclass(frozen=True)
class _InitSpec:
    kind: str
    seed: int = 0
    selection: KnowledgeSelection = KnowledgeSelection()


def _train_labels(archive, idx):
    if archive.multilabel:
        return archive.labels_train[idx].astype(np.float64)
    return archive.labels_train[idx]


def _loss_kind(archive):
    return "per-class-binary-ce" if archive.multilabel else "softmax-ce"


# ---------------------------------------------------------------------------
# grid search

@dataclasses.dataclass
class GridResult:
    eta: float
    alpha: float
    score: float
    traces: dict       # (eta, alpha) -> per-epoch val trace
    diverged: list     # cells that produced non-finite losses


def grid_search(archive, split, mode, init, grid, config_template, trainer=None):
    """Pick (lr, weight decay) by the best validation score along each cell's
    whole search trace; ties break toward smaller lr, then smaller decay.

    `trainer` (for harnesses) maps (eta, alpha) -> per-epoch val trace; the
    default trains a fresh assembly per cell for grid.search_epochs with
    fixed-epoch control.
    """
    if split.train is None or split.val is None:
        raise ProtocolError("split not partitioned; call split_train_val first")
    if len(split.val) == 0:
        raise ProtocolError("grid search needs a non-empty validation side")

    if trainer is None:
        x_tr = archive.h_train[split.train]
        y_tr = _train_labels(archive, split.train)
        x_val = archive.h_train[split.val]
        y_val = _train_labels(archive, split.val)

        def trainer(eta, alpha):
            assembly = init_head(archive, InitStrategy(
                kind=INIT_NAMES[init.kind], seed=init.seed,
                selection=init.selection), feature_path=_MODE_PATH[mode])
            config = config_template.replace(
                eta=eta, alpha=alpha, control="fixed-epochs",
                loss=_loss_kind(archive))
            return train_assembly(assembly, x_tr, y_tr, config,
                                  grid.search_epochs, archive=archive,
                                  x_val=x_val, y_val=y_val)

    traces, diverged = {}, []
    best = None
    for eta, alpha in itertools.product(
            sorted(grid.learning_rates), sorted(grid.weight_decays)):
        try:
            trace = [float(v) for v in trainer(eta, alpha)]
        except DivergenceError:
            diverged.append((eta, alpha))
            traces[(eta, alpha)] = []
            continue
        traces[(eta, alpha)] = trace
        cell_score = max(trace) if trace else -np.inf
        if best is None or cell_score > best[0]:
            best = (cell_score, eta, alpha)
    if best is None:
        raise ProtocolError(
            "every grid cell diverged: " + ", ".join(map(str, diverged)))
    return GridResult(eta=best[1], alpha=best[2], score=best[0],
                      traces=traces, diverged=diverged)


# ---------------------------------------------------------------------------
# run records and final runs

@dataclasses.dataclass
class RunRecord:
    dataset: str
    mode: str
    init_kind: str          # CLI name: random | lang-sep | lang-merge
    knowledge: str
    shots: object           # int or "full" (0 for zeroshot)
    seed: int
    metric_kind: str
    eta: float = None
    alpha: float = None
    val_trace: list = dataclasses.field(default_factory=list)
    value: float = None
    status: str = "ok"
    error: str = None
    control: str = None
    optimizer: str = None
    final_train: str = None  # "train+val" | "train" | "none"
    wall_clock: float = 0.0

    def key(self):
        return (self.dataset, self.mode, self.init_kind, self.knowledge,
                str(self.shots), self.seed)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def evaluate_zero_shot(archive, selection=KnowledgeSelection(), init_name="lang-sep"):
    """Zero-shot RunRecord; identical regardless of seed (none is involved)."""
    start = time.perf_counter()
    _, logits = zero_shot_predict(archive, selection)
    result = compute_metric(archive.manifest.metric_kind, logits,
                            archive.labels_test)
    return RunRecord(dataset=archive.manifest.dataset_name, mode="zeroshot",
                     init_kind=init_name, knowledge=str(selection), shots=0,
                     seed=0, metric_kind=result.kind, value=result.value,
                     final_train="none",
                     wall_clock=time.perf_counter() - start)


def run_adaptation(archive, split, mode, init, config, eta=None, alpha=None):
    """Final training run at a chosen configuration, scored on the test split.

    Fixed-epoch control retrains on the recombined train+val indices for
    config.epochs; plateau control trains on train with val driving the
    controller (best-val checkpoint wins). Divergence produces a failed
    record with a diagnostic rather than an exception.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    start = time.perf_counter()
    selection = init.selection
    if mode == "zeroshot":
        rec = evaluate_zero_shot(archive, selection, init_name=init.kind)
        rec.seed = split.seed if split is not None else 0
        return rec

    config = config_for(archive, config, eta=eta, alpha=alpha)
    strategy = InitStrategy(kind=INIT_NAMES[init.kind], seed=init.seed,
                            selection=selection)
    record = RunRecord(dataset=archive.manifest.dataset_name, mode=mode,
                       init_kind=init.kind, knowledge=str(selection),
                       shots=split.shots, seed=split.seed,
                       metric_kind=archive.manifest.metric_kind,
                       eta=config.eta, alpha=config.alpha,
                       control=config.control, optimizer=config.optimizer)
    try:
        assembly = init_head(archive, strategy, feature_path=_MODE_PATH[mode])
        if config.control == "plateau":
            train_idx, val_idx = split.train, split.val
            record.final_train = "train"
            trace = train_assembly(
                assembly, archive.h_train[train_idx],
                _train_labels(archive, train_idx), config, config.epochs,
                archive=archive, x_val=archive.h_train[val_idx],
                y_val=_train_labels(archive, val_idx))
        else:
            both = np.sort(np.concatenate([split.train, split.val]))
            record.final_train = "train+val"
            trace = train_assembly(assembly, archive.h_train[both],
                                   _train_labels(archive, both), config,
                                   config.epochs)
        record.val_trace = trace
        logits = score(assembly, archive.h_test)
        result = compute_metric(archive.manifest.metric_kind, logits,
                                archive.labels_test)
        record.value = result.value
    except DivergenceError as e:
        record.status = "failed"
        record.error = str(e)
    record.wall_clock = time.perf_counter() - start
    return record


def config_for(archive, config, eta=None, alpha=None):
    kw = {"loss": _loss_kind(archive)}
    if eta is not None:
        kw["eta"] = eta
    if alpha is not None:
        kw["alpha"] = alpha
    return config.replace(**kw)


@dataclasses.dataclass(frozen=True)
class RunSetting:
    """One cell of the experiment cross-product."""
    mode: str
    init: str              # CLI name
    knowledge: str
    shots: object          # int or "full"
    seed: int


def execute_setting(archive, setting, grid, config_template):
    """Full protocol for one setting: sample, search, final run.

    With fixed-epoch control the final run has no validation side, so the
    record carries the chosen cell's search trace as its val_trace.
    """
    selection = KnowledgeSelection.parse(setting.knowledge)
    init = _InitSpec(kind=setting.init, seed=setting.seed, selection=selection)
    if setting.mode == "zeroshot":
        if setting.init == "random":
            raise ProtocolError("zeroshot forbids random init")
        return evaluate_zero_shot(archive, selection, init_name=setting.init)
    if setting.mode == "ft-proj" and setting.init == "lang-merge":
        raise ProtocolError("ft-proj needs a joint-space head; "
                            "lang-merge lives in backbone space")
    split = sample_few_shot(archive, setting.shots, setting.seed)
    split_train_val(split)
    config = config_template.replace(seed=setting.seed)
    chosen = grid_search(archive, split, setting.mode, init, grid, config)
    final = config.replace(epochs=grid.final_epochs)
    record = run_adaptation(archive, split, setting.mode, init, final,
                            eta=chosen.eta, alpha=chosen.alpha)
    if not record.val_trace:
        record.val_trace = chosen.traces[(chosen.eta, chosen.alpha)]
    return record
