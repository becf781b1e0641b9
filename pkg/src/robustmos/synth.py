"""Synthetic classification data with planted shortcut features.

Each instance carries a "core" block (a noisy label prototype, the genuine
but harder signal) and several "shortcut" blocks: near-one-hot codes that
agree with the true label with a per-split probability rho. Training and
in-distribution splits use high rho (shortcuts predictive), out-of-
distribution splits use low rho (association flipped), while the label
marginal and the core signal stay identical across splits. The latent
shortcut values are recorded per instance but never exposed to training,
which only ever sees (features, label).
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "GeneratorConfig",
    "SplitSpec",
    "Instance",
    "Dataset",
    "ShortcutGenerator",
    "make_generator",
    "sample_split",
    "bayes_core_accuracy",
    "shortcut_only_accuracy",
    "default_config",
    "default_splits",
    "save_dataset",
    "load_dataset",
    "record_dataset_reads",
]

DATASET_HEADER = "robustmos-dataset v1"


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape and noise levels of the synthetic task.

    ``rho`` maps split name -> probability that a shortcut block encodes the
    true label on that split. Core noise must exceed shortcut noise: the
    whole point of a shortcut is that it is the easier feature.
    """

    num_labels: int = 3
    num_shortcuts: int = 3
    core_dim: int = 10
    sigma_core: float = 0.55
    sigma_shortcut: float = 0.05
    seed: int = 0
    rho: dict[str, float] = field(
        default_factory=lambda: {"train": 0.9, "id_dev": 0.9, "ood_test": 0.1}
    )

    def __post_init__(self):
        if self.num_labels < 2 or self.num_shortcuts < 1:
            raise ValueError("need at least 2 labels and 1 shortcut")
        if self.core_dim < self.num_labels:
            raise ValueError("core_dim must be at least num_labels")
        if not self.sigma_core > self.sigma_shortcut >= 0:
            raise ValueError("require sigma_core > sigma_shortcut >= 0")
        for name, r in self.rho.items():
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"rho[{name!r}] must be in [0, 1]")

    @property
    def feature_dim(self) -> int:
        return self.core_dim + self.num_shortcuts * self.num_labels


@dataclass(frozen=True)
class SplitSpec:
    """One split to sample: a name, a size and optionally its own rho.

    ``rho`` may be a scalar or one value per shortcut (per-shortcut values
    enable splits where a single feature dominates). When omitted, the
    generator config's map supplies it by split name.
    """

    name: str
    size: int
    rho: float | tuple[float, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("split size must be at least 1")


@dataclass(frozen=True)
class Instance:
    features: np.ndarray
    label: int
    shortcut_values: np.ndarray  # label encoded by each shortcut block


@dataclass
class Dataset:
    """A sampled split: feature matrix, labels, and the planted shortcut values."""

    name: str
    features: np.ndarray         # (n, feature_dim)
    labels: np.ndarray           # (n,)
    shortcut_values: np.ndarray  # (n, num_shortcuts)
    config: GeneratorConfig
    rho: np.ndarray              # per-shortcut rho this split was sampled with

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> Instance:
        return Instance(self.features[i], int(self.labels[i]), self.shortcut_values[i])


def _stream(config_seed: int, *names: str) -> np.random.Generator:
    # independent, reproducible child streams: seed sequence from name digests
    digests = [
        int.from_bytes(hashlib.sha256(n.encode()).digest()[:4], "big") for n in names
    ]
    return np.random.default_rng([config_seed, *digests])


class ShortcutGenerator:
    """Samples splits against a fixed set of seeded core prototypes."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        rng = _stream(config.seed, "prototypes")
        protos = rng.normal(size=(config.num_labels, config.core_dim))
        self.prototypes = protos / np.linalg.norm(protos, axis=1, keepdims=True)

    def _resolve_rho(self, spec: SplitSpec) -> np.ndarray:
        cfg = self.config
        if spec.rho is None:
            if spec.name not in cfg.rho:
                raise ValueError(f"no rho configured for split {spec.name!r}")
            value = cfg.rho[spec.name]
        else:
            value = spec.rho
        rho = np.broadcast_to(np.asarray(value, dtype=np.float64), (cfg.num_shortcuts,)).copy()
        if np.any((rho < 0) | (rho > 1)):
            raise ValueError("rho values must be in [0, 1]")
        return rho

    def sample(self, spec: SplitSpec) -> Dataset:
        """Draw a split; deterministic given (config, spec)."""
        cfg = self.config
        rho = self._resolve_rho(spec)
        rng = _stream(cfg.seed, "split", spec.name)
        n = spec.size

        labels = rng.integers(cfg.num_labels, size=n)
        core = self.prototypes[labels] + rng.normal(0.0, cfg.sigma_core, size=(n, cfg.core_dim))

        blocks = []
        shortcut_values = np.empty((n, cfg.num_shortcuts), dtype=np.int64)
        for g in range(cfg.num_shortcuts):
            agree = rng.random(n) < rho[g]
            # disagreeing blocks encode a label drawn uniformly from the others
            offsets = rng.integers(1, cfg.num_labels, size=n)
            values = np.where(agree, labels, (labels + offsets) % cfg.num_labels)
            shortcut_values[:, g] = values
            block = np.zeros((n, cfg.num_labels))
            block[np.arange(n), values] = 1.0
            block += rng.normal(0.0, cfg.sigma_shortcut, size=(n, cfg.num_labels))
            blocks.append(block)

        features = np.concatenate([core, *blocks], axis=1)
        return Dataset(
            name=spec.name,
            features=features,
            labels=labels,
            shortcut_values=shortcut_values,
            config=cfg,
            rho=rho,
        )


def make_generator(config: GeneratorConfig) -> ShortcutGenerator:
    return ShortcutGenerator(config)


def sample_split(generator: ShortcutGenerator, spec: SplitSpec) -> Dataset:
    return generator.sample(spec)


def bayes_core_accuracy(generator: ShortcutGenerator, n: int, seed: int = 0) -> float:
    """Monte-Carlo accuracy of nearest-prototype classification on the core block.

    Calibration oracle for how hard the genuine feature is: 1.0 at zero core
    noise, chance level as the noise grows.
    """
    if n < 1:
        raise ValueError("n must be positive")
    cfg = generator.config
    rng = _stream(cfg.seed, "bayes-core", str(seed))
    labels = rng.integers(cfg.num_labels, size=n)
    core = generator.prototypes[labels] + rng.normal(0.0, cfg.sigma_core, size=(n, cfg.core_dim))
    dists = ((core[:, None, :] - generator.prototypes[None, :, :]) ** 2).sum(axis=2)
    return float((dists.argmin(axis=1) == labels).mean())


def shortcut_only_accuracy(generator: ShortcutGenerator, spec: SplitSpec, n: int | None = None) -> float:
    """Accuracy on a split of majority vote over the shortcut blocks' argmax.

    Label ties break toward the lowest label index.
    """
    if n is not None:
        spec = replace(spec, size=n)
    data = generator.sample(spec)
    cfg = generator.config
    votes = np.empty((len(data), cfg.num_shortcuts), dtype=np.int64)
    for g in range(cfg.num_shortcuts):
        start = cfg.core_dim + g * cfg.num_labels
        votes[:, g] = data.features[:, start : start + cfg.num_labels].argmax(axis=1)
    counts = np.zeros((len(data), cfg.num_labels))
    rows = np.arange(len(data))
    for g in range(cfg.num_shortcuts):
        counts[rows, votes[:, g]] += 1.0
    return float((counts.argmax(axis=1) == data.labels).mean())


def default_config(seed: int = 0) -> GeneratorConfig:
    """Benchmark defaults: 3 labels, 3 shortcuts, core calibrated to ~0.85 accuracy."""
    return GeneratorConfig(seed=seed)


def default_splits() -> list[SplitSpec]:
    return [
        SplitSpec("train", 8000),
        SplitSpec("id_dev", 2000),
        SplitSpec("ood_test", 2000),
    ]


# ---------------------------------------------------------------------------
# dataset files: commented header with the config echo, then plain CSV rows
# ---------------------------------------------------------------------------

_READ_LOGS: list[list[str]] = []


@contextmanager
def record_dataset_reads():
    """Collect the paths of every dataset file loaded inside the block."""
    log: list[str] = []
    _READ_LOGS.append(log)
    try:
        yield log
    finally:
        _READ_LOGS.remove(log)


def _note_read(path: str) -> None:
    for log in _READ_LOGS:
        log.append(path)


def save_dataset(data: Dataset, path) -> None:
    """Write a split as CSV: `# key=value` header lines, then y, a_*, x_* rows.

    Floats carry 17 significant digits, so reloading reproduces the exact
    values.
    """
    cfg = data.config
    lines = [
        f"# {DATASET_HEADER}",
        f"# split={data.name}",
        f"# seed={cfg.seed}",
        f"# num_labels={cfg.num_labels}",
        f"# num_shortcuts={cfg.num_shortcuts}",
        f"# core_dim={cfg.core_dim}",
        f"# sigma_core={cfg.sigma_core:.17g}",
        f"# sigma_shortcut={cfg.sigma_shortcut:.17g}",
        "# rho=" + ",".join(format(r, ".17g") for r in data.rho),
        f"# size={len(data)}",
    ]
    columns = (
        ["y"]
        + [f"a_{g + 1}" for g in range(cfg.num_shortcuts)]
        + [f"x_{j + 1}" for j in range(cfg.feature_dim)]
    )
    lines.append(",".join(columns))
    for i in range(len(data)):
        row = [str(int(data.labels[i]))]
        row += [str(int(v)) for v in data.shortcut_values[i]]
        row += [format(v, ".17g") for v in data.features[i]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, expected_config: GeneratorConfig | None = None) -> Dataset:
    """Read a dataset file; optionally validate its header against a config."""
    path = Path(path)
    _note_read(str(path))
    meta: dict[str, str] = {}
    rows: list[str] = []
    with path.open() as fh:
        first = fh.readline().strip()
        if first != f"# {DATASET_HEADER}":
            raise ValueError(f"{path} is not a dataset file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                meta[key] = value
            elif line.startswith("y,"):
                continue
            else:
                rows.append(line)

    num_labels = int(meta["num_labels"])
    num_shortcuts = int(meta["num_shortcuts"])
    core_dim = int(meta["core_dim"])
    config = GeneratorConfig(
        num_labels=num_labels,
        num_shortcuts=num_shortcuts,
        core_dim=core_dim,
        sigma_core=float(meta["sigma_core"]),
        sigma_shortcut=float(meta["sigma_shortcut"]),
        seed=int(meta["seed"]),
        rho=(expected_config.rho if expected_config is not None else {}),
    )
    if expected_config is not None:
        for field_name in ("num_labels", "num_shortcuts", "core_dim", "sigma_core", "sigma_shortcut", "seed"):
            if getattr(config, field_name) != getattr(expected_config, field_name):
                raise ValueError(
                    f"{path}: header {field_name}={getattr(config, field_name)} does not match "
                    f"configured {getattr(expected_config, field_name)}"
                )
        config = expected_config

    size = int(meta["size"])
    if len(rows) != size:
        raise ValueError(f"{path}: header size {size} but {len(rows)} rows")
    feature_dim = core_dim + num_shortcuts * num_labels
    labels = np.empty(size, dtype=np.int64)
    shortcut_values = np.empty((size, num_shortcuts), dtype=np.int64)
    features = np.empty((size, feature_dim))
    for i, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != 1 + num_shortcuts + feature_dim:
            raise ValueError(f"{path}: row {i} has {len(parts)} fields")
        labels[i] = int(parts[0])
        shortcut_values[i] = [int(v) for v in parts[1 : 1 + num_shortcuts]]
        features[i] = [float(v) for v in parts[1 + num_shortcuts :]]
    rho = np.array([float(v) for v in meta["rho"].split(",")])
    return Dataset(
        name=meta["split"],
        features=features,
        labels=labels,
        shortcut_values=shortcut_values,
        config=config,
        rho=rho,
    )
