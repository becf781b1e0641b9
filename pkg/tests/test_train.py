"""Tests for training, epoch selection, loss evaluation, and the two-stage sweep."""

import numpy as np
import pytest

from robustmos.model import MosConfig, init_model, named_parameters
from robustmos.synth import GeneratorConfig, SplitSpec, make_generator
from robustmos.train import (
    TrainConfig,
    best_epoch,
    eval_losses,
    fit,
    train_epoch,
    two_stage_search,
)
from robustmos.nn import adam_init


def toy_problem(seed=0, size=240):
    """Small, nearly separable task for fast smoke training."""
    cfg = GeneratorConfig(sigma_core=0.4, sigma_shortcut=0.05, rho={"train": 0.9, "id_dev": 0.9}, seed=seed)
    gen = make_generator(cfg)
    train = gen.sample(SplitSpec("train", size))
    dev = gen.sample(SplitSpec("id_dev", 120))
    model_cfg = MosConfig(
        num_experts=2, num_labels=3, input_dim=cfg.feature_dim, hidden_dim=12, encoded_dim=8
    )
    return model_cfg, (train.features, train.labels), (dev.features, dev.labels)


def perfect_passthrough_model():
    """Hand-built model that classifies scaled one-hot inputs near-perfectly."""
    cfg = MosConfig(num_experts=2, num_labels=3, input_dim=3, hidden_dim=3, encoded_dim=3)
    model = init_model(cfg, seed=0)
    for part in (model.encoder.first, model.encoder.second):
        part.weight[:] = np.eye(3)
        part.bias[:] = 0.0
    for head in model.experts:
        head.transform.weight[:] = np.eye(3)
        head.transform.bias[:] = 0.0
        head.norm.gain[:] = 1.0
        head.norm.bias[:] = 0.0
        head.output.weight[:] = 20.0 * np.eye(3)
        head.output.bias[:] = 0.0
    return cfg, model


class TestTrainEpoch:
    def test_loss_decreases_on_separable_toy(self):
        model_cfg, train, dev = toy_problem()
        config = TrainConfig(penalty_weight=0.0, batch_size=16, epochs=5, learning_rate=1e-3, seed=0)
        model = init_model(model_cfg, seed=0)
        optimizer = adam_init(named_parameters(model), config.learning_rate)
        rng = np.random.default_rng(0)
        losses = [
            train_epoch(model, optimizer, train[0], train[1], config, drop_count=2, rng=rng)[0]
            for _ in range(5)
        ]
        assert losses[-1] < losses[0]

    def test_zero_learning_rate_freezes_parameters(self):
        model_cfg, train, dev = toy_problem()
        config = TrainConfig(penalty_weight=0.5, batch_size=16, epochs=2, learning_rate=0.0, seed=0)
        model = init_model(model_cfg, seed=0)
        before = {k: v.copy() for k, v in named_parameters(model).items()}
        optimizer = adam_init(named_parameters(model), 0.0)
        rng = np.random.default_rng(0)
        stats = [
            train_epoch(model, optimizer, train[0], train[1], config, drop_count=2, rng=rng)
            for _ in range(2)
        ]
        for name, arr in named_parameters(model).items():
            assert np.array_equal(arr, before[name])
        assert stats[0][0] == pytest.approx(stats[1][0])

    def test_fixed_seed_reproduces_history(self):
        model_cfg, train, dev = toy_problem()
        config = TrainConfig(penalty_weight=0.5, batch_size=16, epochs=3, learning_rate=1e-3, seed=7)
        _, hist_a = fit(model_cfg, config, train, dev)
        _, hist_b = fit(model_cfg, config, train, dev)
        assert hist_a.to_dict() == hist_b.to_dict()


class TestBestEpoch:
    def test_single_epoch(self):
        assert best_epoch([0.5]) == 0

    def test_monotone_improvement_picks_last(self):
        assert best_epoch([0.1, 0.2, 0.3, 0.4]) == 3

    def test_injected_peak(self):
        assert best_epoch([0.5, 0.6, 0.7, 0.9, 0.8]) == 3

    def test_tie_goes_earliest(self):
        assert best_epoch([0.5, 0.9, 0.9, 0.9]) == 1

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            best_epoch([])

    def test_fit_returns_best_checkpoint(self):
        model_cfg, train, dev = toy_problem()
        config = TrainConfig(penalty_weight=0.0, batch_size=16, epochs=1, learning_rate=1e-3, seed=1)
        _, hist = fit(model_cfg, config, train, dev)
        assert hist.best_epoch == 0
        assert len(hist.dev_accuracy) == 1


class TestEvalLosses:
    def test_perfect_model_near_zero_loss(self):
        cfg, model = perfect_passthrough_model()
        rng = np.random.default_rng(2)
        labels = rng.integers(3, size=30)
        features = 5.0 * np.eye(3)[labels]
        loss_cls, _ = eval_losses(model, features, labels, batch_size=8, drop_count=1)
        assert loss_cls < 1e-6

    def test_uniform_router_closed_form_penalty(self):
        # zeroed router head gives a constant uniform router distribution
        cfg, model = perfect_passthrough_model()
        model.router.transform.weight[:] = 0.0
        model.router.transform.bias[:] = 0.0
        model.router.norm.bias[:] = 0.0
        model.router.output.weight[:] = 0.0
        rng = np.random.default_rng(3)
        labels = rng.integers(3, size=8)
        features = 5.0 * np.eye(3)[labels]
        _, mean_penalty = eval_losses(model, features, labels, batch_size=4, drop_count=1)
        assert mean_penalty == pytest.approx(np.sqrt(3) / np.sqrt(8), abs=1e-12)

    def test_instance_mean_is_order_invariant(self):
        model_cfg, train, _ = toy_problem()
        model = init_model(model_cfg, seed=4)
        a, _ = eval_losses(model, train[0], train[1], batch_size=16, drop_count=2)
        b, _ = eval_losses(model, train[0], train[1], batch_size=16, drop_count=2, shuffle_seed=5)
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_split_rejected(self):
        model_cfg, _, _ = toy_problem()
        model = init_model(model_cfg, seed=5)
        with pytest.raises(ValueError):
            eval_losses(model, np.empty((0, model_cfg.input_dim)), np.empty(0, dtype=int), 8, 1)


# dev-loss table: candidate -> (loss_cls, penalty); sums select 10 then 0.5
INJECTED_STAGE1 = {5: (0.706, 0.379), 10: (0.433, 0.127), 15: (0.501, 0.301)}
INJECTED_STAGE2 = {0.0: (0.433, 0.127), 0.5: (0.437, 0.022), 1.0: (0.666, 0.005)}


def injected_measure(num_experts, penalty_weight, seed):
    if penalty_weight == 0.0:
        return INJECTED_STAGE1[num_experts]
    return INJECTED_STAGE2[penalty_weight]


class TestTwoStageSearch:
    def _run(self, **kwargs):
        model_cfg, train, dev = toy_problem()
        config = TrainConfig(penalty_weight=0.0, batch_size=16, epochs=1, learning_rate=1e-3, seed=0)
        return two_stage_search(
            kwargs.pop("expert_grid", [5, 10, 15]),
            kwargs.pop("weight_grid", [0.0, 0.5, 1.0]),
            model_cfg,
            config,
            train,
            dev,
            **kwargs,
        )

    def test_injected_losses_select_reference_optimum(self):
        result = self._run(measure=injected_measure)
        assert result.selected_num_experts == 10
        assert result.selected_penalty_weight == 0.5
        assert result.stage1[10]["total"] == pytest.approx(0.560)
        assert result.stage2[0.5]["total"] == pytest.approx(0.459)

    def test_stage2_reuses_stage1_zero_weight_cell(self):
        result = self._run(measure=injected_measure)
        assert result.stage2[0.0] == result.stage1[10]

    def test_single_candidate_grids(self):
        result = self._run(expert_grid=[4], weight_grid=[0.7], measure=lambda k, w, s: (1.0, 0.5))
        assert result.selected_num_experts == 4
        assert result.selected_penalty_weight == 0.7

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            self._run(expert_grid=[])

    def test_workers_match_sequential(self):
        sequential = self._run(measure=injected_measure)
        threaded = self._run(measure=injected_measure, workers=3)
        assert sequential.to_dict() == threaded.to_dict()

    def test_real_training_path_runs(self):
        result = self._run(expert_grid=[2], weight_grid=[0.0, 0.5], num_seeds=1)
        assert result.selected_num_experts == 2
        assert set(result.stage2) == {0.0, 0.5}


class TestPenaltyTrainingEffect:
    def test_penalty_weight_reduces_final_penalty(self):
        # directional on the default generator: training with the penalty ends
        # with a lower mean train penalty than training without it
        cfg = GeneratorConfig(seed=77)
        gen = make_generator(cfg)
        train_split = gen.sample(SplitSpec("train", 640))
        dev_split = gen.sample(SplitSpec("id_dev", 160))
        train = (train_split.features, train_split.labels)
        dev = (dev_split.features, dev_split.labels)
        model_cfg = MosConfig(
            num_experts=4, num_labels=3, input_dim=cfg.feature_dim, hidden_dim=16, encoded_dim=8
        )
        with_pen, without_pen = [], []
        for seed in range(5):
            penalized = TrainConfig(penalty_weight=1.0, batch_size=16, epochs=3, learning_rate=5e-3, seed=seed)
            plain = TrainConfig(penalty_weight=0.0, batch_size=16, epochs=3, learning_rate=5e-3, seed=seed)
            _, hist_with = fit(model_cfg, penalized, train, dev)
            _, hist_without = fit(model_cfg, plain, train, dev)
            with_pen.append(hist_with.train_penalty[-1])
            without_pen.append(hist_without.train_penalty[-1])
        assert np.mean(with_pen) < np.mean(without_pen)
