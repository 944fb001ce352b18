"""Backward pass: recompute, then run two reverse scans.

Only the inputs and the tile carries are kept from the forward pass. The
backward pass rebuilds each tile's states from the carries and propagates
cotangents bottom-up and right-to-left. Finite differences through the
sequential oracle in extended precision are the judge.
"""

import numpy as np

from scan2d.bench import compare_gradients, finite_difference_grads, random_instance
from scan2d.parallel import tiled_scan2d_backward, tiled_scan2d_forward

x, inputs, params = random_instance(5, 4, 3, seed=0)
dy = np.random.default_rng(1).standard_normal(x.shape)

_, saved, _ = tiled_scan2d_forward(x, inputs, params, tile=2)
grads = tiled_scan2d_backward(saved, dy)
print("retained elements:", saved.retained_elements)

numeric = finite_difference_grads(x, inputs, params, dy)
for row in compare_gradients(grads.as_dict(), numeric):
    print(f"  {row['group']:<7} max rel err {row['max_rel_error']:.1e}  {'ok' if row['passed'] else 'FAIL'}")

print("dD equals sum(dy * x):", np.isclose(grads.dD, float((dy * x).sum()), rtol=1e-14))
