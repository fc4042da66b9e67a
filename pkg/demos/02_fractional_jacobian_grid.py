"""Grid transforms under the fractional Jacobian of (x^2 - y^2, 3xy).

At order 1 the induced map p -> J(p) p is the classical linear
approximation; away from order 1 the transform bends.  Writes one CSV
per order so the grids can be plotted side by side.
"""

import numpy as np

from fracgrad.frac_calculus import frac_jacobian_example, grid_transform
from fracgrad.ioutil import write_csv

grid = (0.1, 1.0, 12)

for alpha in (1.0, 1.2, 1.25):
    pairs = grid_transform(grid, alpha)
    out = f"grid_alpha_{alpha:g}.csv"
    write_csv(out, ["in_x", "in_y", "out_x", "out_y"],
              [(ix, iy, ox, oy) for (ix, iy), (ox, oy) in pairs])
    print(f"alpha = {alpha}: wrote {len(pairs)} transformed points to {out}")

print("\nJacobian at (0.5, 0.5):")
for alpha in (1.0, 1.2, 1.25):
    jac = frac_jacobian_example(0.5, 0.5, alpha)
    print(f"  alpha = {alpha}:")
    for row in jac.entries:
        print(f"    [{row[0]:+9.5f} {row[1]:+9.5f}]")

# how far the fractional transform strays from the best linear map
base = {p: np.array(q) for p, q in grid_transform(grid, 1.0)}
bent = {p: np.array(q) for p, q in grid_transform(grid, 1.2)}
gap = max(np.linalg.norm(bent[p] - base[p]) for p in base)
print(f"\nmax displacement between alpha=1 and alpha=1.2 grids: {gap:.4f}")
