"""Train the learned optimizer on a single function and watch it work.

Meta-trains the (alpha_t, eta_t) network on the 2D sphere (a fast,
everything-converges sanity target), then rolls the learned update from
a few start points and prints the per-step predictions.  Training is a
desk-scale run; expect a couple of minutes.
"""

import numpy as np

from fracgrad.bench import BenchConfig, run_benchmark
from fracgrad.meta_optimizer import (MetaTrainConfig, meta_step_batch,
                                     meta_train)
from fracgrad.objectives import lookup

fn = lookup("sphere2d")
cfg = MetaTrainConfig(regime="with_supervision", target_fn="sphere2d",
                      outer_steps=500, inner_steps=20, batch_starts=32,
                      seed=0)
net, record = meta_train(cfg, [fn])
curve = record["meta_loss_curve"]
print(f"trained {cfg.outer_steps} outer steps on {record['batch_functions']}")
print(f"mean per-step loss: first 25 {np.mean(curve[:25]):+.3f}  "
      f"last 25 {np.mean(curve[-25:]):+.3f}")

print("\none rollout from (4, -3):")
x = np.array([[4.0, -3.0]])
for t in range(12):
    f_val = float(fn.eval(x)[0])
    x_next, alpha, eta = meta_step_batch(net, fn, x)
    print(f"  t={t:2d}  f={f_val:10.3e}  alpha={alpha[0]:.3f}  eta={eta[0]:.4f}")
    x = x_next

report = run_benchmark(
    BenchConfig(target_fn="sphere2d", optimizers=("meta", "gd"),
                n_starts=200, horizon=100, seed=1),
    meta_checkpoint=net)
for r in report.results:
    lr = "-" if r.best_lr is None else f"{r.best_lr:g}"
    print(f"\n{r.label}: convergence rate {100 * r.convergence_rate:.1f}%  "
          f"mean steps {r.mean_truncated_length:.1f}  (lr {lr})")
