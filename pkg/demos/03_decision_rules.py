"""The three aggregation rules on a two-expert, three-label example.

The estimated rule trusts the learned mixture weights; uniform assumes all
experts are equally good; argmin plays the worst case: score each label by
its minimum probability across experts and take the best floor. A
brute-force enumeration over gridded mixture weights confirms argmin solves
the minimax problem.
"""

import numpy as np

from robustmos.control import aggregate, minimax_oracle, simplex_grid, worst_case_risk

np.set_printoptions(precision=3, suppress=True)

expert_probs = np.array(
    [
        [0.6, 0.3, 0.1],  # expert 0 leans to label 0
        [0.2, 0.5, 0.3],  # expert 1 leans to label 1
    ]
)
router = np.array([0.9, 0.1])  # the router trusts expert 0

print("expert distributions:\n", expert_probs)
print("router weights:", router)
print()

for rule in ("estimated", "uniform", "argmin"):
    decision = aggregate(expert_probs, router, rule)
    extra = f", worst expert {decision.expert}" if decision.expert is not None else ""
    print(f"{rule:10s} scores {decision.scores} -> label {decision.label}{extra}")

print("\nworst-case risk of committing to each label (over all possible weights):")
for label in range(3):
    print(f"  label {label}: {worst_case_risk(expert_probs, label):.3f}")

print("\nbrute-force check: enumerate mixture weights on a 0.01 grid")
grid = simplex_grid(2, 0.01)
oracle = minimax_oracle(expert_probs, 0.01)
print(f"  grid of {len(grid)} weightings -> oracle label {oracle.label}, scores {oracle.scores}")
print(f"  matches the argmin rule: {oracle.label == aggregate(expert_probs, rule='argmin').label}")

# when every expert agrees, the rules cannot disagree either
same = np.tile([[0.2, 0.5, 0.3]], (4, 1))
labels = {aggregate(same, np.full(4, 0.25), r).label for r in ("estimated", "uniform", "argmin")}
print("\nidentical experts -> all rules pick", labels)
