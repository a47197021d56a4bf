"""Run configuration: `key = value` files and the architecture mini-language.

Config files are UTF-8 text, one assignment per line, `#` starts a comment.
Unknown and duplicate keys are errors so typos cannot silently fall back to
defaults. Paths are resolved relative to the config file's own directory.

Architectures are recorded in configs, not code, as a comma-separated layer
list: `conv:<out_channels>:<kernel>`, `dense:<out>`, `relu`, `maxpool`,
`flatten`. Input channels and fan_in are derived by shape chaining.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError, InvalidArgumentError
from .initializers import SCHEMES, InitConfig
from .network import LayerSpec, NetworkSpec, _shape_after

DATASET_KINDS = ("mnist", "cifar10", "synthetic", "pgm")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    architecture: str
    dataset: str
    mnist_images: str = ""
    mnist_labels: str = ""
    cifar_batches: tuple = ()
    pgm_dir: str = ""
    synthetic_image_side: int = 12
    synthetic_patch_size: int = 5
    synthetic_noise_std: float = 0.25
    synthetic_patch_jitter: int = 0
    synthetic_samples_per_class: int = 100
    init: InitConfig = dataclasses.field(default_factory=InitConfig)
    epochs: int = 5
    lr: float = 0.01
    batch_size: int = 32
    seed: int = 0
    train_fraction: float = 0.9
    sample_limit: int = 0  # 0 = use everything
    center_data: bool = False
    out_dir: str = "runs"

    def __post_init__(self):
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset {self.dataset!r}, expected one of {DATASET_KINDS}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.sample_limit < 0:
            raise ConfigError(f"sample_limit must be >= 0, got {self.sample_limit}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def parse_architecture(text: str, input_shape, class_count: int) -> NetworkSpec:
    """Build a validated NetworkSpec from the layer mini-language."""
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("architecture is empty")
    layers = []
    shape = tuple(int(s) for s in input_shape)
    for token in tokens:
        parts = token.split(":")
        name = parts[0]
        try:
            if name == "conv" and len(parts) == 3:
                if len(shape) != 3:
                    raise ConfigError(f"conv layer {token!r} needs an image input, have {shape}")
                layer = LayerSpec(
                    "conv2d",
                    out_channels=int(parts[1]),
                    kernel=int(parts[2]),
                    in_channels=shape[0],
                )
            elif name == "dense" and len(parts) == 2:
                if len(shape) != 1:
                    raise ConfigError(
                        f"dense layer {token!r} needs a flat input, have {shape} (missing flatten?)"
                    )
                layer = LayerSpec("dense", fan_in=shape[0], fan_out=int(parts[1]))
            elif name == "relu" and len(parts) == 1:
                layer = LayerSpec("relu")
            elif name == "maxpool" and len(parts) == 1:
                layer = LayerSpec("maxpool2x2")
            elif name == "flatten" and len(parts) == 1:
                layer = LayerSpec("flatten")
            else:
                raise ConfigError(f"cannot parse layer {token!r}")
        except ValueError as exc:
            raise ConfigError(f"bad number in layer {token!r}: {exc}") from None
        try:
            shape = _shape_after(layer, shape, len(layers))
        except InvalidArgumentError as exc:
            raise ConfigError(f"layer {token!r} does not fit: {exc}") from exc
        layers.append(layer)
    try:
        return NetworkSpec(tuple(layers), tuple(int(s) for s in input_shape), class_count)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


_INT_KEYS = {
    "synthetic_image_side",
    "synthetic_patch_size",
    "synthetic_patch_jitter",
    "synthetic_samples_per_class",
    "subsample_size",
    "crops_per_image",
    "epochs",
    "batch_size",
    "seed",
    "sample_limit",
}
_FLOAT_KEYS = {"synthetic_noise_std", "epsilon", "lr", "train_fraction"}
_BOOL_KEYS = {"pca_center", "center_data"}
_STR_KEYS = {
    "architecture",
    "dataset",
    "mnist_images",
    "mnist_labels",
    "cifar_batches",
    "pgm_dir",
    "init_scheme",
    "out_dir",
}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS


def _parse_value(key: str, raw: str, path, line_no: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{path}:{line_no}: {key} needs a number, got {raw!r}") from None
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"{path}:{line_no}: {key} must be true or false, got {raw!r}")
    return raw


def load_config(path) -> RunConfig:
    """Parse a config file into a RunConfig."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected `key = value`, got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, path, line_no)
    for required in ("architecture", "dataset"):
        if required not in values:
            raise ConfigError(f"{path}: missing required key {required!r}")

    base = p.resolve().parent

    def resolve(value: str) -> str:
        return str((base / value).resolve()) if value and not Path(value).is_absolute() else value

    init_kwargs = {}
    if "init_scheme" in values:
        scheme = values.pop("init_scheme")
        if scheme not in SCHEMES:
            raise ConfigError(f"{path}: unknown init_scheme {scheme!r}, expected one of {SCHEMES}")
        init_kwargs["scheme"] = scheme
    for key in ("subsample_size", "crops_per_image", "epsilon", "pca_center"):
        if key in values:
            init_kwargs[key] = values.pop(key)
    init_kwargs["seed"] = values.get("seed", 0)

    if "mnist_images" in values:
        values["mnist_images"] = resolve(values["mnist_images"])
    if "mnist_labels" in values:
        values["mnist_labels"] = resolve(values["mnist_labels"])
    if "pgm_dir" in values:
        values["pgm_dir"] = resolve(values["pgm_dir"])
    if "cifar_batches" in values:
        values["cifar_batches"] = tuple(
            resolve(part.strip()) for part in values["cifar_batches"].split(",") if part.strip()
        )
    if "out_dir" in values:
        values["out_dir"] = resolve(values["out_dir"])

    try:
        init = InitConfig(**init_kwargs)
        return RunConfig(init=init, **values)
    except InvalidArgumentError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def with_scheme(config: RunConfig, scheme: str) -> RunConfig:
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}, expected one of {SCHEMES}")
    return dataclasses.replace(config, init=dataclasses.replace(config.init, scheme=scheme))


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return dataclasses.replace(
        config, seed=seed, init=dataclasses.replace(config.init, seed=seed)
    )


def with_out_dir(config: RunConfig, out_dir) -> RunConfig:
    return dataclasses.replace(config, out_dir=str(out_dir))
