"""Two-stage hyperparameter search, tuned on in-distribution data only.

Stage 1 fixes the penalty weight at zero and picks the expert count that
minimizes dev cross-entropy + penalty; stage 2 picks the penalty weight
under the chosen expert count. No out-of-distribution data is touched.
This demo uses a reduced task so it finishes in about a minute.
"""

from robustmos.model import MosConfig
from robustmos.synth import SplitSpec, default_config, make_generator
from robustmos.train import TrainConfig, two_stage_search

generator = make_generator(default_config(seed=42))
train_d = generator.sample(SplitSpec("train", 2000))
dev_d = generator.sample(SplitSpec("id_dev", 800))

model_cfg = MosConfig(
    num_experts=2, num_labels=3, input_dim=generator.config.feature_dim,
    hidden_dim=16, encoded_dim=8,
)
train_cfg = TrainConfig(batch_size=32, epochs=3, learning_rate=0.05, seed=0)

result = two_stage_search(
    expert_grid=[2, 4],
    weight_grid=[0.0, 0.5, 1.0],
    model_config=model_cfg,
    config=train_cfg,
    train=(train_d.features, train_d.labels),
    dev=(dev_d.features, dev_d.labels),
    num_seeds=2,
)

print("stage 1 (penalty weight fixed at 0): choose the expert count")
for experts, losses in result.stage1.items():
    marker = " <-- selected" if experts == result.selected_num_experts else ""
    print(f"  experts={experts:2d}: cls {losses['loss_cls']:.3f} + penalty {losses['penalty']:.3f} "
          f"= {losses['total']:.3f}{marker}")

print(f"\nstage 2 (experts fixed at {result.selected_num_experts}): choose the penalty weight")
for weight, losses in result.stage2.items():
    marker = " <-- selected" if weight == result.selected_penalty_weight else ""
    print(f"  weight={weight:.1f}: cls {losses['loss_cls']:.3f} + penalty {losses['penalty']:.3f} "
          f"= {losses['total']:.3f}{marker}")

print(f"\nselected: {result.selected_num_experts} experts, penalty weight {result.selected_penalty_weight}")
