"""Experiment execution: data plumbing, the training loop, artifacts.

Randomness is split into two independent streams derived from the run
seed: the data stream ([seed, 0]) owns synthetic generation, the
train/val split, and every epoch's batch order, while the init stream
([seed, 1]) owns the subsample draw and all weight randomness. Scheme
comparisons therefore see bit-identical batches; only the weights differ.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np

from . import datasets
from .config import RunConfig, parse_architecture, with_out_dir, with_scheme
from .errors import (
    ConfigError,
    DsinitError,
    InvalidArgumentError,
    NumericalFailureError,
)
from .initializers import init_network
from .model_io import save_model
from .network import batch_gradients, evaluate, sgd_step
from .plots import write_line_chart

CSV_HEADER = "epoch,train_loss,val_loss,val_accuracy"


@dataclasses.dataclass(frozen=True)
class RunMetrics:
    """Per-epoch (epoch, train_loss, val_loss, val_accuracy) rows."""

    rows: tuple
    val_digest: str = ""

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        for i, row in enumerate(rows):
            if len(row) != 4:
                raise InvalidArgumentError(f"row {i} must have 4 fields, got {len(row)}")
            if row[0] != i + 1:
                raise InvalidArgumentError(f"epochs must be contiguous from 1, row {i} has {row[0]}")
            if not all(np.isfinite(v) for v in row[1:]):
                raise InvalidArgumentError(f"row {i} carries non-finite metrics: {row}")
        object.__setattr__(self, "rows", rows)

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1][3]

    @property
    def best_accuracy(self) -> float:
        return max(r[3] for r in self.rows)


def _metrics_line(epoch: int, train_loss: float, val_loss: float, val_accuracy: float) -> str:
    return f"{epoch},{train_loss:.17g},{val_loss:.17g},{val_accuracy:.17g}"


def load_dataset(config: RunConfig, rng) -> datasets.Dataset:
    """Materialize the configured dataset (consumes rng only for synthetic)."""
    if config.dataset == "mnist":
        if not config.mnist_images or not config.mnist_labels:
            raise ConfigError("mnist dataset needs mnist_images and mnist_labels paths")
        data = datasets.load_mnist_idx(config.mnist_images, config.mnist_labels)
    elif config.dataset == "cifar10":
        if not config.cifar_batches:
            raise ConfigError("cifar10 dataset needs cifar_batches paths")
        data = datasets.load_cifar10(config.cifar_batches)
    elif config.dataset == "pgm":
        if not config.pgm_dir:
            raise ConfigError("pgm dataset needs a pgm_dir path")
        data = datasets.load_pgm_directory(config.pgm_dir)
    else:
        spec = datasets.SyntheticSpec(
            image_side=config.synthetic_image_side,
            signal_patch=datasets.make_bar_patch(config.synthetic_patch_size),
            noise_std=config.synthetic_noise_std,
            patch_jitter=config.synthetic_patch_jitter,
            samples_per_class=config.synthetic_samples_per_class,
        )
        data = datasets.synthetic_dataset(spec, rng)
    if config.sample_limit and config.sample_limit < len(data):
        data = data.subset(np.arange(config.sample_limit))
    if config.center_data:
        data = datasets.center_images(data)
    return data


def _dataset_digest(data: datasets.Dataset) -> str:
    h = hashlib.sha256()
    h.update(data.images.tobytes())
    h.update(data.labels.tobytes())
    return h.hexdigest()


def prepare_run(config: RunConfig):
    """Everything up to the first SGD step: (network, train, val, data_rng)."""
    data_rng = np.random.default_rng([config.seed, 0])
    data = load_dataset(config, data_rng)
    train, val = datasets.split(data, config.train_fraction, data_rng)
    net_spec = parse_architecture(config.architecture, data.image_shape, data.class_count)
    init_rng = np.random.default_rng([config.seed, 1])
    dataset_arg = train if config.init.scheme in ("pca", "datastats") else None
    network = init_network(net_spec, dataset_arg, config.init, init_rng)
    return network, train, val, data_rng


def run_experiment(config: RunConfig) -> RunMetrics:
    """Initialize, train, and write metrics.csv, model.dsin, and SVG plots.

    metrics.csv grows one flushed row per epoch, so completed epochs
    survive a later numerical failure. train_loss is the mean per-sample
    loss in visit order (measured as each batch is processed); val metrics
    are computed after the epoch's final update.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    network, train, val, data_rng = prepare_run(config)
    rows = []
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8") as csv:
        csv.write(CSV_HEADER + "\n")
        csv.flush()
        for epoch in range(1, config.epochs + 1):
            loss_sum = 0.0
            seen = 0
            for images, labels in datasets.minibatches(train, config.batch_size, data_rng):
                batch_loss, grads = batch_gradients(network, images, labels)
                if not np.isfinite(batch_loss):
                    raise NumericalFailureError(
                        f"non-finite training loss in epoch {epoch} after {seen} samples"
                    )
                network = sgd_step(network, grads.scaled(1.0 / len(labels)), config.lr)
                loss_sum += batch_loss
                seen += len(labels)
            train_loss = loss_sum / seen
            val_loss, val_accuracy = evaluate(network, val)
            if not np.isfinite(val_loss):
                raise NumericalFailureError(f"non-finite validation loss in epoch {epoch}")
            rows.append((epoch, train_loss, val_loss, val_accuracy))
            csv.write(_metrics_line(*rows[-1]) + "\n")
            csv.flush()
    save_model(network, out_dir / "model.dsin")
    epochs = [r[0] for r in rows]
    write_line_chart(
        out_dir / "loss.svg",
        [("train loss", epochs, [r[1] for r in rows]), ("val loss", epochs, [r[2] for r in rows])],
        "loss per epoch",
        "epoch",
        "loss",
    )
    write_line_chart(
        out_dir / "accuracy.svg",
        [("val accuracy", epochs, [r[3] for r in rows])],
        "validation accuracy per epoch",
        "epoch",
        "accuracy",
    )
    return RunMetrics(tuple(rows), val_digest=_dataset_digest(val))


def compare_initializers(config: RunConfig, schemes):
    """Run one experiment per scheme under one shared seed and data split.

    Returns (results, errors): scheme -> RunMetrics for the runs that
    finished, scheme -> exception for those that did not (one scheme's
    failure does not stop the others). Artifacts land in per-scheme
    subdirectories plus a combined val-accuracy overlay.
    """
    schemes = list(schemes)
    if len(schemes) < 2:
        raise InvalidArgumentError(f"need at least 2 schemes to compare, got {schemes}")
    if len(set(schemes)) != len(schemes):
        raise InvalidArgumentError(f"duplicate scheme in {schemes}")
    out_dir = Path(config.out_dir)
    results = {}
    errors = {}
    for scheme in schemes:
        scheme_config = with_out_dir(with_scheme(config, scheme), out_dir / scheme)
        try:
            results[scheme] = run_experiment(scheme_config)
        except DsinitError as exc:
            errors[scheme] = exc
    digests = {m.val_digest for m in results.values()}
    if len(digests) > 1:
        raise NumericalFailureError(
            "validation sets diverged across schemes; the data stream leaked"
        )
    if results:
        out_dir.mkdir(parents=True, exist_ok=True)
        series = [
            (scheme, [r[0] for r in m.rows], [r[3] for r in m.rows])
            for scheme, m in results.items()
        ]
        write_line_chart(
            out_dir / "overlay.svg",
            series,
            "validation accuracy per epoch, by initializer",
            "epoch",
            "accuracy",
        )
    return results, errors
