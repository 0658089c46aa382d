"""Training loop, evaluation metrics, dataset preparation and the
experiment grid."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor
from .capsnet import predict
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_to_text, save_config, validate
from .errors import ConfigError, DivergenceFault, InsufficientData, NumericsFault, ShapeError
from .features import FeatureConfig, ScalerParams, apply_scaler, fit_scaler
from .manifest import load_manifest, materialize, targets_for
from .models import build_model
from .optim import Adam

EVAL_BATCH = 64


# ---------------------------------------------------------------------------
# datasets

@dataclass
class ArrayDataset:
    """Scaled, fixed-length model inputs with multi-hot targets."""

    X: np.ndarray            # [N, T_fix, n_dims]
    Y: np.ndarray            # [N, n_classes]
    class_names: list[str]

    def __len__(self):
        return self.X.shape[0]


def pad_to(mat: np.ndarray, t_fix: int) -> np.ndarray:
    """Zero-pad or truncate [T, D] to [t_fix, D]."""
    t, d = mat.shape
    if t >= t_fix:
        return mat[:t_fix]
    out = np.zeros((t_fix, d))
    out[:t] = mat
    return out


def make_dataset(manifest, mats, class_names: list[str], scaler: ScalerParams,
                 t_fix: int) -> ArrayDataset:
    X = np.stack([pad_to(apply_scaler(m, scaler).data, t_fix) for m in mats])
    return ArrayDataset(X, targets_for(manifest, class_names), class_names)


def prepare_data(data_dir: str, t_fix: int,
                 feature_cfg: FeatureConfig = FeatureConfig(),
                 cache_dir: str | None = None, jobs: int = 1,
                 scaler: ScalerParams | None = None):
    """Load train.csv/test.csv under data_dir into model-ready arrays.

    The min-max scaler is fitted on the training split unless one is given
    (e.g. from a checkpoint). Class order is the sorted union of labels.
    """
    train_man = load_manifest(os.path.join(data_dir, "train.csv"), "train")
    test_man = load_manifest(os.path.join(data_dir, "test.csv"), "test")
    train_mats = materialize(train_man, data_dir, feature_cfg, cache_dir, jobs)
    test_mats = materialize(test_man, data_dir, feature_cfg, cache_dir, jobs)
    if scaler is None:
        scaler = fit_scaler(train_mats)
    class_names = sorted(set(train_man.class_names) | set(test_man.class_names))
    train_ds = make_dataset(train_man, train_mats, class_names, scaler, t_fix)
    test_ds = make_dataset(test_man, test_mats, class_names, scaler, t_fix)
    return train_ds, test_ds, scaler


# ---------------------------------------------------------------------------
# metrics

def accuracy(preds: np.ndarray, targets: np.ndarray, mode: str) -> float:
    """single: fraction of exactly-correct rows. multi: per-class binary
    accuracy averaged over classes and examples (weighted accuracy)."""
    if preds.shape != targets.shape:
        raise ShapeError(f"preds {preds.shape} vs targets {targets.shape}")
    if mode == "single":
        return float(np.mean(np.all(preds == targets, axis=1)))
    return float(np.mean(preds == targets))


def confusion_matrix(preds: np.ndarray, targets: np.ndarray, mode: str) -> np.ndarray:
    """single: [C, C] counts, rows = true class. multi: per-class binary
    counts [C, 4] ordered tp, fp, fn, tn."""
    C = targets.shape[1]
    if mode == "single":
        out = np.zeros((C, C), dtype=np.int64)
        for t, p in zip(targets.argmax(axis=1), preds.argmax(axis=1)):
            out[t, p] += 1
        return out
    out = np.zeros((C, 4), dtype=np.int64)
    for k in range(C):
        t, p = targets[:, k] > 0, preds[:, k] > 0
        out[k] = [np.sum(t & p), np.sum(~t & p), np.sum(t & ~p), np.sum(~t & ~p)]
    return out


@dataclass
class Metrics:
    metric_name: str
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_metric: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    confusion: np.ndarray | None = None
    best_epoch: int | None = None

    @property
    def best_test_metric(self) -> float | None:
        if self.best_epoch is None:
            return None
        return self.test_metric[self.epochs.index(self.best_epoch)]


_METRIC_NOTES = {
    "accuracy": "fraction of exactly correct predictions",
    "weighted_accuracy": "per-class binary accuracy averaged over classes and examples",
}


def write_metrics(path, cfg: RunConfig, metrics: Metrics) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# capsaudio metrics v1\n")
        for line in config_to_text(cfg).splitlines():
            fh.write(f"# {line}\n")
        fh.write("# selection: best_test\n")
        fh.write(f"# metric: {metrics.metric_name} "
                 f"({_METRIC_NOTES[metrics.metric_name]})\n")
        fh.write(f"# best_epoch: {metrics.best_epoch}\n")
        fh.write("# columns: epoch,train_loss,test_metric,seconds\n")
        for e, l, m, s in zip(metrics.epochs, metrics.train_loss,
                              metrics.test_metric, metrics.seconds):
            fh.write(f"{e},{l!r},{m!r},{s:.3f}\n")


def read_metrics_rows(path) -> list[tuple[int, float, float, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            e, l, m, s = line.strip().split(",")
            rows.append((int(e), float(l), float(m), float(s)))
    return rows


# ---------------------------------------------------------------------------
# trained model container

@dataclass
class TrainedModel:
    model: object
    cfg: RunConfig
    class_names: list[str]
    scaler: ScalerParams | None = None

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Inference class scores [N, C], batched."""
        chunks = [self.model.forward(X[i:i + EVAL_BATCH], training=False,
                                     rng=None).scores.data
                  for i in range(0, X.shape[0], EVAL_BATCH)]
        return np.concatenate(chunks, axis=0)

    def caps_vectors(self, X: np.ndarray) -> np.ndarray:
        """Capsule activity vectors [N, C, caps_dim] (caps model only)."""
        chunks = [self.model.forward(X[i:i + EVAL_BATCH], training=False,
                                     rng=None).caps.data
                  for i in range(0, X.shape[0], EVAL_BATCH)]
        return np.concatenate(chunks, axis=0)

    def blocks(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.model.params().items()}
        for name, arr in self.model.state().items():
            out[f"state.{name}"] = arr
        if self.scaler is not None:
            out["scaler.min"] = self.scaler.minimum
            out["scaler.max"] = self.scaler.maximum
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.cfg, self.blocks())


def load_trained(path) -> TrainedModel:
    """Rebuild a TrainedModel from a checkpoint; shapes come from the blocks."""
    cfg, blocks = load_checkpoint(path)
    n_dims = blocks["bn.gamma"].shape[0]
    n_classes = (blocks["caps.W"].shape[1] if cfg.model == "caps"
                 else blocks["head.b"].shape[0])
    model = build_model(cfg, n_dims, n_classes, np.random.default_rng(0))
    model.set_params({name: Tensor(blocks[name], requires_grad=True)
                      for name in model.params()})
    model.set_state({k[len("state."):]: v for k, v in blocks.items()
                     if k.startswith("state.")})
    scaler = None
    if "scaler.min" in blocks:
        scaler = ScalerParams(blocks["scaler.min"], blocks["scaler.max"])
    return TrainedModel(model, cfg, class_names=[], scaler=scaler)


# ---------------------------------------------------------------------------
# training

def evaluate(trained: TrainedModel, ds: ArrayDataset) -> tuple[float, np.ndarray]:
    scores = trained.scores(ds.X)
    preds = predict(scores, trained.cfg.mode, trained.cfg.threshold)
    return accuracy(preds, ds.Y, trained.cfg.mode), confusion_matrix(
        preds, ds.Y, trained.cfg.mode)


def _snapshot(model) -> dict[str, np.ndarray]:
    snap = {name: t.data.copy() for name, t in model.params().items()}
    for name, arr in model.state().items():
        snap[f"state.{name}"] = arr.copy()
    return snap


def _restore(model, snap: dict[str, np.ndarray]) -> None:
    model.set_params({name: Tensor(snap[name], requires_grad=True)
                      for name in model.params()})
    model.set_state({k[len("state."):]: v for k, v in snap.items()
                     if k.startswith("state.")})


def train(cfg: RunConfig, train_set: ArrayDataset,
          test_set: ArrayDataset) -> tuple[TrainedModel, Metrics]:
    """Train per cfg and return the best-test-epoch model plus metrics."""
    validate(cfg)
    if len(train_set) == 0 or len(test_set) == 0:
        raise InsufficientData("empty train or test split")
    if train_set.X.shape[1] != cfg.T_fix:
        raise ShapeError(f"dataset frames {train_set.X.shape[1]} != T_fix {cfg.T_fix}")
    if cfg.mode == "single" and not np.all(train_set.Y.sum(axis=1) == 1):
        raise ConfigError("mode=single requires exactly one label per entry")

    n_dims = train_set.X.shape[2]
    n_classes = train_set.Y.shape[1]
    init_rng, shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    model = build_model(cfg, n_dims, n_classes, init_rng)
    opt = Adam(cfg.lr)
    trained = TrainedModel(model, cfg, train_set.class_names)
    metric_name = "accuracy" if cfg.mode == "single" else "weighted_accuracy"
    metrics = Metrics(metric_name)

    use_decoder = cfg.model == "caps" and cfg.use_decoder
    recon_all = train_set.X.reshape(len(train_set), -1) if use_decoder else None

    best_snap = _snapshot(model)
    best_metric = -1.0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with Graph() as g:
                    out = model.forward(
                        train_set.X[idx], training=True, rng=dropout_rng,
                        targets=train_set.Y[idx],
                        recon_target=recon_all[idx] if use_decoder else None)
                    loss = out.loss
                if not np.isfinite(loss.data):
                    raise NumericsFault("non-finite loss")
                g.backward(loss)
            except NumericsFault as e:
                raise DivergenceFault(f"diverged at epoch {epoch} step {step}: {e}",
                                      epoch=epoch, step=step) from e
            opt.step(model.params())
            losses.append(float(loss.data))

        test_metric, confusion = evaluate(trained, test_set)
        metrics.epochs.append(epoch)
        metrics.train_loss.append(float(np.mean(losses)))
        metrics.test_metric.append(test_metric)
        metrics.seconds.append(time.perf_counter() - t0)
        if test_metric > best_metric:
            best_metric = test_metric
            best_snap = _snapshot(model)
            metrics.best_epoch = epoch

    _restore(model, best_snap)
    _, metrics.confusion = evaluate(trained, test_set)
    return trained, metrics


def run_training(cfg: RunConfig, data_dir: str, out_dir: str | None = None,
                 feature_cfg: FeatureConfig = FeatureConfig(),
                 cache_dir: str | None = None,
                 jobs: int = 1) -> tuple[TrainedModel, Metrics]:
    """Feature pipeline + train; optionally write the run directory."""
    train_ds, test_ds, scaler = prepare_data(data_dir, cfg.T_fix, feature_cfg,
                                             cache_dir, jobs)
    trained, metrics = train(cfg, train_ds, test_ds)
    trained.scaler = scaler
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_config(os.path.join(out_dir, "config.cfg"), cfg)
        write_metrics(os.path.join(out_dir, "metrics.csv"), cfg, metrics)
        np.savetxt(os.path.join(out_dir, "confusion.csv"), metrics.confusion,
                   fmt="%d", delimiter=",")
        trained.save(os.path.join(out_dir, "checkpoint.cpsn"))
    return trained, metrics


# ---------------------------------------------------------------------------
# experiment grid

GRID_AXES = {
    "routing": ("routing_iters", (1, 3, 5)),
    "caps_dim": ("caps_dim", (2, 4, 8, 16, 32)),
    "regularization": ("use_decoder", (False, True)),
}


def grid_configs(base: RunConfig, axis: str,
                 seeds: list[int]) -> list[tuple[object, int, RunConfig]]:
    if axis not in GRID_AXES:
        raise ConfigError(f"unknown grid axis {axis!r}; "
                          f"expected one of {sorted(GRID_AXES)}")
    from dataclasses import replace

    fname, values = GRID_AXES[axis]
    return [(value, seed, replace(base, **{fname: value, "seed": seed}))
            for value in values for seed in seeds]


def run_grid(base: RunConfig, axis: str, seeds: list[int], runner,
             jobs: int = 1) -> list[dict]:
    """Run the sweep; runner(cfg) -> best test metric. jobs > 1 uses a
    process pool, so runner must then be picklable."""
    combos = grid_configs(base, axis, seeds)
    cfgs = [cfg for _, _, cfg in combos]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(runner, cfgs))
    else:
        results = [runner(cfg) for cfg in cfgs]
    return [{"axis": axis, "value": value, "seed": seed, "metric": metric}
            for (value, seed, _), metric in zip(combos, results)]


def write_grid_table(path, axis: str, rows: list[dict], metric_name: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# capsaudio grid axis={axis} metric={metric_name}\n")
        fh.write("axis,value,seed,best_test_metric\n")
        for r in rows:
            fh.write(f"{r['axis']},{r['value']},{r['seed']},{r['metric']!r}\n")
