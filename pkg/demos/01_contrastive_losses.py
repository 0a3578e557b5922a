"""
Contrastive losses on toy embeddings
====================================

How the supervised contrastive loss and the total coding rate react to
three hand-made batches: a collapsed one, a well-clustered one and a
clustered one whose clusters all sit in the same direction.
"""
import numpy as np
import torch

from fsbsed.losses import effective_rank, scl_loss, total_coding_rate

rng = np.random.default_rng(0)
labels = np.repeat(np.arange(4), 4)

# Every row identical: the loss cannot tell positives from negatives.
collapsed = np.ones((16, 8))

# Four clusters along four orthogonal axes.
spread = np.eye(8)[labels] + 0.05 * rng.normal(size=(16, 8))

# Four clusters squeezed into a two-dimensional subspace.
flat_dirs = np.array([[1, 0.2], [0.2, 1], [-1, 0.2], [0.2, -1]])
flat = np.zeros((16, 8))
flat[:, :2] = flat_dirs[labels]
flat += 0.05 * rng.normal(size=(16, 8))

for name, z in [("collapsed", collapsed), ("spread", spread), ("flat", flat)]:
    zt = torch.tensor(z)
    scl = scl_loss(zt, labels, temperature=0.06).item()
    tcr = total_coding_rate(torch.nn.functional.normalize(zt, dim=1)).item()
    print(f"{name:>9}: SCL {scl:7.3f}   TCR {tcr:6.2f}   effective rank {effective_rank(z):4.2f}")

# With every similarity equal, each positive gets probability 1/15.
print("collapsed SCL equals ln 15 =", round(np.log(15), 3))

# SCL barely separates "spread" from "flat"; the coding rate does.

# Pre-training minimises SCL - lambda * TCR. A larger coding rate lowers
# the objective, which is what keeps the clusters from folding onto a
# few directions even when SCL alone is already small.
for lam in (0.0, 1e-4, 1e-2):
    z = torch.tensor(flat)
    obj = scl_loss(z, labels, 0.06) - lam * total_coding_rate(torch.nn.functional.normalize(z, dim=1))
    print(f"lambda={lam:g}: objective {obj.item():.4f}")
