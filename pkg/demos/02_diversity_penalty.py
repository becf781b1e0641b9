"""Walk through the router-diversity penalty on hand-sized batches.

The penalty is the Frobenius norm of the batch similarity matrix (Gram
matrix of the stacked router outputs, identity removed), after zeroing the
top values of each row, normalized so 0 means "maximally diverse routing"
and 1 means "everyone on the same expert".
"""

import numpy as np

from robustmos.diversity import penalty, set_ell, topl_dropout

np.set_printoptions(precision=4, suppress=True)

print("=== case 1: two instances routed one-hot to different experts ===")
comp = penalty([[1.0, 0.0], [0.0, 1.0]], 0)
print("gram - I:\n", comp.gram)
print("penalty:", comp.value, "(distinct one-hot columns are orthogonal)")

print("\n=== case 2: two instances pinned to the same expert ===")
comp = penalty([[1.0, 0.0], [1.0, 0.0]], 0)
print("gram - I:\n", comp.gram)
print(f"penalty: {comp.value} (numerator {comp.numerator:.4f} / denominator {comp.denominator:.4f})")

print("\n=== case 3: four instances with a uniform router, one drop per row ===")
comp = penalty([[0.5, 0.5]] * 4, 1)
print("keep mask after top-1 drop per row:\n", comp.keep_mask)
print(f"penalty: {comp.value:.6f}  closed form sqrt(3)/sqrt(8) = {np.sqrt(3)/np.sqrt(8):.6f}")

print("\n=== row-wise top dropout keeps positions ===")
a = np.array([[0.5, 0.2, -0.1], [0.9, 0.9, 0.9], [0.1, 0.8, 0.3]])
print("input:\n", a)
print("top-1 per row zeroed (ties break to the lowest column):\n", topl_dropout(a, 1))

print("\n=== groups up to drop+1 instances cost nothing ===")
grouped = np.zeros((6, 3))
grouped[[0, 1], 0] = 1.0
grouped[[2, 3], 1] = 1.0
grouped[[4, 5], 2] = 1.0
print("three one-hot groups of two, drop=1 -> penalty", penalty(grouped, 1).value)

print("\n=== dropout count rule ===")
for batch, experts in ((32, 5), (32, 8), (64, 5), (4, 2)):
    print(f"batch {batch:3d}, smallest expert count {experts:2d} -> drop {set_ell(batch, experts)}")
