"""Joint loss, optimizer schedule, cross-validation folds, metrics, and the
ablation matrix.

Training uses rectified Adam wrapped in lookahead slow/fast weight averaging,
a subject-stratified validation split for early stopping, and is fully
deterministic for a given seed. Cross-validation modes: "all-hc" trains on
every healthy-control subject, "loo-hc" trains on one HC subject per fold,
"loo-pd" trains on one PD subject per fold; all modes test on PD subjects
(excluding the training subject in loo-pd).
"""

import copy
import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import torch
from joblib import Parallel, delayed
from sklearn.metrics import precision_recall_fscore_support

from . import crf, data
from .errors import ConfigError, DivergenceError, PlanError
from .model import ABLATIONS, DCMN, ModelConfig

# hyperparameter grid defaults
D_GRID = (128, 256)
EPOCHS_GRID = (200, 300)
LR_GRID = (0.01, 0.0001)

CV_MODES = ("all-hc", "loo-hc", "loo-pd")

# a loss beyond this is treated as divergence even while still finite
DIVERGENCE_LOSS_CAP = 1e12


@dataclass
class TrainConfig:
    d: int = 128
    heads: int = 4
    T: int = 10
    epochs: int = 200
    learning_rate: float = 0.0001
    dropout: float = 0.15
    tau: float = 1.0
    batch_size: int = 64
    seed: int = 0
    patience: int = 20  # early-stopping epochs without validation improvement
    ablation: str = "full"
    val_fraction: float = 0.1  # 0 validates on the training windows themselves
    train_stride: int = 1
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; valid: {list(ABLATIONS)}")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        for name in ("epochs", "batch_size", "patience", "train_stride", "lookahead_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"train config: invalid JSON ({exc})")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"train config: unknown keys {sorted(unknown)}")
        return cls(**obj)

    def model_config(self, n_rooms, n_rssi=data.N_RSSI, n_accel=data.N_ACCEL):
        return ModelConfig(
            d=self.d,
            heads=self.heads,
            T=self.T,
            n_rssi=n_rssi,
            n_accel=n_accel,
            n_rooms=n_rooms,
            dropout_rate=self.dropout,
            tau=self.tau,
        )


def hyperparameter_grid(base):
    """The default search grid: d x epochs x learning rate."""
    return [
        replace(base, d=d, epochs=e, learning_rate=lr)
        for d in D_GRID
        for e in EPOCHS_GRID
        for lr in LR_GRID
    ]


def huber(predicted, target, tau):
    """Elementwise robust loss: quadratic inside |error| < tau, linear outside."""
    if tau <= 0:
        raise ConfigError(f"huber: tau must be > 0, got {tau}")
    if not isinstance(predicted, torch.Tensor):
        predicted = torch.as_tensor(predicted, dtype=torch.float64)
    target = torch.as_tensor(target, dtype=predicted.dtype)
    err = (predicted - target).abs()
    return torch.where(err < tau, 0.5 * err**2, tau * (err - 0.5 * tau))


def total_loss(emissions, labels, backcast, rssi_window, tm, tau):
    """One window's loss: CRF NLL plus the summed backcast reconstruction loss.

    The backcast target is the normalized RSSI window (model-input scale).
    """
    return crf.nll(emissions, labels, tm) + huber(backcast, rssi_window, tau).sum()


def batch_loss(model, output, labels, rssi_target, tau):
    """Mean-over-batch training loss for any variant.

    CRF variants use the sequence NLL; the no-crf variant uses per-timestep
    cross-entropy summed over the window so scales stay comparable.
    """
    if model.ablation == "no-crf":
        B, T, n = output.emissions.shape
        seq = torch.nn.functional.cross_entropy(
            output.emissions.reshape(B * T, n), labels.reshape(B * T), reduction="sum"
        ) / B
    else:
        seq = crf.nll_batch(output.emissions, labels, model.transition_matrix())
    recon = huber(output.backcast, rssi_target, tau).sum(dim=(1, 2)).mean()
    return seq + recon


class Lookahead:
    """Slow/fast weight averaging around an inner optimizer.

    Every k inner steps the slow weights move a fraction alpha toward the
    fast weights and the fast weights are reset onto them.
    """

    def __init__(self, optimizer, k=5, alpha=0.5):
        if k < 1 or not 0.0 < alpha <= 1.0:
            raise ConfigError("lookahead: need k >= 1 and 0 < alpha <= 1")
        self.optimizer = optimizer
        self.k = k
        self.alpha = alpha
        self._count = 0
        self._params = [p for group in optimizer.param_groups for p in group["params"]]
        self._slow = [p.detach().clone() for p in self._params]

    def zero_grad(self):
        self.optimizer.zero_grad()

    def step(self):
        self.optimizer.step()
        self._count += 1
        if self._count % self.k == 0:
            with torch.no_grad():
                for slow, fast in zip(self._slow, self._params):
                    slow.add_(fast.detach() - slow, alpha=self.alpha)
                    fast.copy_(slow)


@dataclass
class Metrics:
    """Percent scores for one evaluation."""

    precision: float
    accuracy: float
    f1: float


def compute_metrics(y_true, y_pred):
    """Accuracy over timesteps; macro precision/F1 over rooms present in truth."""
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    labels = sorted(set(y_true.tolist()))
    precision, _, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average="macro", zero_division=0
    )
    accuracy = float((y_true == y_pred).mean())
    return Metrics(precision=100.0 * precision, accuracy=100.0 * accuracy, f1=100.0 * f1)


@dataclass
class FoldResult:
    subject: str  # training subject (or "all-hc")
    metrics: Metrics


@dataclass
class MetricsReport:
    mode: str
    variant: str
    folds: list
    mean: Metrics
    std: Metrics

    def to_json_dict(self):
        return {
            "mode": self.mode,
            "variant": self.variant,
            "folds": [
                {"subject": f.subject, **asdict(f.metrics)} for f in self.folds
            ],
            "mean": asdict(self.mean),
            "std": asdict(self.std),
        }

    def to_csv_rows(self):
        rows = [
            {"mode": self.mode, "variant": self.variant, "fold": f.subject, **asdict(f.metrics)}
            for f in self.folds
        ]
        rows.append(
            {"mode": self.mode, "variant": self.variant, "fold": "mean", **asdict(self.mean)}
        )
        rows.append(
            {"mode": self.mode, "variant": self.variant, "fold": "std", **asdict(self.std)}
        )
        return rows


def aggregate_folds(mode, variant, fold_results):
    values = np.array(
        [[f.metrics.precision, f.metrics.accuracy, f.metrics.f1] for f in fold_results]
    )
    mean = Metrics(*values.mean(axis=0).tolist())
    std = Metrics(*values.std(axis=0).tolist())  # population std across folds
    return MetricsReport(mode=mode, variant=variant, folds=list(fold_results), mean=mean, std=std)


@dataclass
class Fold:
    name: str
    train_subjects: tuple
    test_subjects: tuple


@dataclass
class FoldPlan:
    mode: str
    folds: list


def build_fold_plan(groups, mode):
    """Folds for a cross-validation mode from subject -> 'PD'/'HC' annotations."""
    mode = mode.lower()
    if mode not in CV_MODES:
        raise PlanError(f"unknown cv mode {mode!r}; valid: {list(CV_MODES)}")
    hc = tuple(sorted(s for s, g in groups.items() if g == "HC"))
    pd = tuple(sorted(s for s, g in groups.items() if g == "PD"))
    if not pd:
        raise PlanError("no PD subjects in the dataset; every mode tests on PD subjects")
    if mode == "all-hc":
        if not hc:
            raise PlanError("all-hc requires at least one HC subject")
        folds = [Fold(name="all-hc", train_subjects=hc, test_subjects=pd)]
    elif mode == "loo-hc":
        if not hc:
            raise PlanError("loo-hc requires at least one HC subject")
        folds = [Fold(name=s, train_subjects=(s,), test_subjects=pd) for s in hc]
    else:  # loo-pd
        if len(pd) < 2:
            raise PlanError("loo-pd requires at least two PD subjects")
        folds = [
            Fold(name=s, train_subjects=(s,), test_subjects=tuple(t for t in pd if t != s))
            for s in pd
        ]
    for fold in folds:
        assert not set(fold.train_subjects) & set(fold.test_subjects)
    return FoldPlan(mode=mode, folds=folds)


@dataclass
class FrameStore:
    """Resampled + imputed (but not yet normalized) frames per (subject, day)."""

    frames: dict  # (subject, day) -> list[SensorFrame]
    vocabulary: data.RoomVocabulary

    @classmethod
    def from_recordings(cls, recordings, vocabulary=None, aggregator="mean"):
        vocabulary = vocabulary or data.RoomVocabulary.default()
        frames = {}
        for rec in recordings:
            frames[(rec.subject_id, rec.day_index)] = data.impute(
                data.resample_1hz(rec.frames, aggregator=aggregator)
            )
        return cls(frames=frames, vocabulary=vocabulary)

    def subjects(self):
        return sorted({subject for subject, _ in self.frames})

    def groups(self):
        return {s: data.subject_group(s) for s in self.subjects()}

    def all_frames(self, subjects):
        chosen = set(subjects)
        out = []
        for key in sorted(self.frames):
            if key[0] in chosen:
                out.extend(self.frames[key])
        return out

    def fit_stats(self, subjects):
        return data.fit_norm(self.all_frames(subjects))

    def samples(self, subjects, stats, T, stride):
        chosen = set(subjects)
        out = []
        for key in sorted(self.frames):
            if key[0] in chosen:
                normalized = data.apply_norm(self.frames[key], stats)
                out.extend(data.window(normalized, self.vocabulary, T=T, stride=stride))
        return out


def _to_tensors(samples, dtype=torch.float32):
    rssi, accel, labels = data.samples_to_arrays(samples)
    return (
        torch.as_tensor(rssi, dtype=dtype),
        torch.as_tensor(accel, dtype=dtype),
        torch.as_tensor(labels, dtype=torch.long),
    )


def _validation_split(samples, val_fraction, rng):
    """Per-subject (stratified) index split; returns (train_idx, val_idx)."""
    if val_fraction == 0.0:
        idx = np.arange(len(samples))
        return idx, idx  # validate on the training windows
    by_subject = {}
    for i, s in enumerate(samples):
        by_subject.setdefault(s.subject_id, []).append(i)
    train_idx, val_idx = [], []
    for subject in sorted(by_subject):
        idx = np.array(by_subject[subject])
        rng.shuffle(idx)
        n_val = max(1, int(round(val_fraction * len(idx)))) if len(idx) > 1 else 0
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    if not train_idx:
        raise PlanError("validation split left no training windows")
    return np.array(sorted(train_idx)), np.array(sorted(val_idx) or sorted(train_idx))


@dataclass
class TrainResult:
    model: DCMN
    history: list  # (epoch, train_loss, val_accuracy)
    best_epoch: int
    best_val_accuracy: float


def predict(model, rssi, accel, batch_size=512, forbidden_mask=None):
    """Decode labels for stacked windows; returns (B, T) int array."""
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, rssi.shape[0], batch_size):
            out = model(
                rssi[start : start + batch_size],
                None if accel is None else accel[start : start + batch_size],
                training=False,
                capture_attention=False,
            )
            outputs.append(model.decode(out.emissions, forbidden_mask=forbidden_mask))
    return np.concatenate(outputs)


def evaluate(model, samples, forbidden_mask=None):
    """Viterbi-decode the samples and score them; returns Metrics."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample set")
    dtype = next(model.parameters()).dtype
    rssi, accel, labels = _to_tensors(samples, dtype)
    pred = predict(model, rssi, accel, forbidden_mask=forbidden_mask)
    return compute_metrics(labels.numpy(), pred)


def majority_class_accuracy(train_samples, test_samples):
    """Accuracy of always predicting the training set's most common room."""
    _, _, train_labels = data.samples_to_arrays(train_samples)
    _, _, test_labels = data.samples_to_arrays(test_samples)
    majority = np.bincount(train_labels.ravel()).argmax()
    return float((test_labels.ravel() == majority).mean())


def train(samples, cfg, vocabulary, initial_model=None, start_epoch=1, log=None):
    """Fit a model on the given windows; returns the best-validation model.

    Deterministic given cfg.seed: batching, dropout, and initialization all
    derive from it. Raises DivergenceError (with the epoch) when the loss
    goes non-finite or beyond DIVERGENCE_LOSS_CAP.
    """
    if not samples:
        raise PlanError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    drop_rng = torch.Generator().manual_seed(cfg.seed + 1)
    model = initial_model
    if model is None:
        mc = cfg.model_config(
            len(vocabulary), n_rssi=samples[0].rssi.shape[1], n_accel=samples[0].accel.shape[1]
        )
        model = DCMN(mc, ablation=cfg.ablation, seed=cfg.seed)
    rssi, accel, labels = _to_tensors(samples, next(model.parameters()).dtype)
    train_idx, val_idx = _validation_split(samples, cfg.val_fraction, rng)
    optimizer = Lookahead(
        torch.optim.RAdam(model.parameters(), lr=cfg.learning_rate),
        k=cfg.lookahead_k,
        alpha=cfg.lookahead_alpha,
    )
    history = []
    best_state, best_acc, best_epoch = None, -1.0, start_epoch - 1
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        model.train()
        order = train_idx.copy()
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            out = model(
                rssi[batch], accel[batch], training=True, rng=drop_rng, capture_attention=False
            )
            loss = batch_loss(model, out, labels[batch], rssi[batch], cfg.tau)
            value = float(loss.detach())
            if not np.isfinite(value) or value > DIVERGENCE_LOSS_CAP:
                raise DivergenceError(
                    f"training diverged at epoch {epoch} (loss={value:g})", epoch=epoch
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(value)
        val_pred = predict(model, rssi[val_idx], accel[val_idx])
        val_acc = float((val_pred == labels[val_idx].numpy()).mean())
        train_loss = float(np.mean(losses))
        history.append((epoch, train_loss, val_acc))
        if log is not None:
            log(epoch, train_loss, val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - best_epoch >= cfg.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model, history=history, best_epoch=best_epoch, best_val_accuracy=best_acc
    )


def _fold_seed(seed, variant, fold_index):
    entropy = np.random.SeedSequence((seed, ABLATIONS.index(variant), fold_index))
    return int(entropy.generate_state(1)[0])


def _run_fold(store, fold, cfg):
    stats = store.fit_stats(fold.train_subjects)
    train_samples = store.samples(fold.train_subjects, stats, cfg.T, cfg.train_stride)
    test_samples = store.samples(fold.test_subjects, stats, cfg.T, cfg.T)
    result = train(train_samples, cfg, store.vocabulary)
    metrics = evaluate(result.model, test_samples)
    return FoldResult(subject=fold.name, metrics=metrics)


def cross_validate(store, mode, cfg, jobs=1):
    """Train/evaluate every fold of a mode; returns an aggregated report."""
    plan = build_fold_plan(store.groups(), mode)
    tasks = [
        (fold, replace(cfg, seed=_fold_seed(cfg.seed, cfg.ablation, i)))
        for i, fold in enumerate(plan.folds)
    ]
    results = Parallel(n_jobs=jobs)(
        delayed(_run_fold)(store, fold, fold_cfg) for fold, fold_cfg in tasks
    )
    return aggregate_folds(plan.mode, cfg.ablation, results)


def ablate(store, mode, cfg, jobs=1):
    """All six variants on identical folds and per-fold seeds.

    Returns {variant: MetricsReport} in the canonical variant order.
    """
    plan = build_fold_plan(store.groups(), mode)
    tasks = []
    for variant in ABLATIONS:
        for i, fold in enumerate(plan.folds):
            fold_cfg = replace(cfg, ablation=variant, seed=_fold_seed(cfg.seed, "full", i))
            tasks.append((variant, fold, fold_cfg))
    results = Parallel(n_jobs=jobs)(
        delayed(_run_fold)(store, fold, fold_cfg) for _, fold, fold_cfg in tasks
    )
    reports = {}
    for variant in ABLATIONS:
        fold_results = [r for (v, _, _), r in zip(tasks, results) if v == variant]
        reports[variant] = aggregate_folds(plan.mode, variant, fold_results)
    return reports


def write_training_log(path, history, append=False):
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for epoch, loss, acc in history:
            writer.writerow([epoch, repr(loss), repr(acc)])


def read_training_log(path):
    history = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            history.append((int(row[0]), float(row[1]), float(row[2])))
    return history
