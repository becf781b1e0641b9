"""Shared benchmark experiment for the acceptance and analysis tests.

The committed configuration trains the mixture model and a single-softmax
baseline on the default synthetic task for five fixed seeds. Training is
deterministic, so every run of the suite sees identical numbers.
"""

import time
from dataclasses import replace

import pytest

from robustmos.evaluate import accuracy, penalty_statistic
from robustmos.model import MosConfig
from robustmos.synth import GeneratorConfig, SplitSpec, make_generator
from robustmos.train import TrainConfig, fit

BENCHMARK_SEEDS = (101, 202, 303, 404, 505)
BENCHMARK_GENERATOR = GeneratorConfig(
    sigma_core=0.55,
    sigma_shortcut=0.05,
    rho={"train": 0.9, "id_dev": 0.9, "ood_test": 0.1, "id_check": 0.9},
    seed=42,
)
BENCHMARK_MODEL = dict(num_experts=8, num_labels=3, hidden_dim=32, encoded_dim=16)
BENCHMARK_TRAIN = TrainConfig(
    penalty_weight=1.0, drop_count=16, batch_size=32, epochs=10, learning_rate=0.1, seed=0
)
STAT_SEEDS = {"id_dev": 11, "ood_test": 12, "id_check": 13}


@pytest.fixture(scope="session")
def benchmark():
    """Per-seed models, accuracies and penalty statistics on the default task."""
    started = time.monotonic()
    gen = make_generator(BENCHMARK_GENERATOR)
    splits = {
        "train": gen.sample(SplitSpec("train", 8000)),
        "id_dev": gen.sample(SplitSpec("id_dev", 2000)),
        "ood_test": gen.sample(SplitSpec("ood_test", 2000)),
        "id_check": gen.sample(SplitSpec("id_check", 2000)),
    }
    train_pair = (splits["train"].features, splits["train"].labels)
    dev_pair = (splits["id_dev"].features, splits["id_dev"].labels)
    input_dim = BENCHMARK_GENERATOR.feature_dim
    mos_cfg = MosConfig(input_dim=input_dim, **BENCHMARK_MODEL)
    base_cfg = MosConfig(input_dim=input_dim, **{**BENCHMARK_MODEL, "num_experts": 1})

    rows = []
    for seed in BENCHMARK_SEEDS:
        model, _ = fit(mos_cfg, replace(BENCHMARK_TRAIN, seed=seed), train_pair, dev_pair)
        baseline, _ = fit(
            base_cfg, replace(BENCHMARK_TRAIN, penalty_weight=0.0, seed=seed), train_pair, dev_pair
        )
        dev, ood = splits["id_dev"], splits["ood_test"]
        stats = {
            name: penalty_statistic(
                model,
                splits[name].features,
                BENCHMARK_TRAIN.batch_size,
                BENCHMARK_TRAIN.drop_count,
                seed=STAT_SEEDS[name],
            )
            for name in ("id_dev", "ood_test", "id_check")
        }
        rows.append(
            {
                "seed": seed,
                "model": model,
                "id_estimated": accuracy(model, dev.features, dev.labels, "estimated"),
                "id_baseline": accuracy(baseline, dev.features, dev.labels, "estimated"),
                "ood_estimated": accuracy(model, ood.features, ood.labels, "estimated"),
                "ood_uniform": accuracy(model, ood.features, ood.labels, "uniform"),
                "ood_argmin": accuracy(model, ood.features, ood.labels, "argmin"),
                "stats": stats,
            }
        )
    return {
        "rows": rows,
        "splits": splits,
        "generator": gen,
        "elapsed": time.monotonic() - started,
    }
