"""
Sweeping the ring width and the layer grouping
==============================================

The same sweep machinery behind ``fgsa sweep`` is a plain function. Short
runs keep this quick; lengthen ``max_steps`` for a real comparison.
"""

from fgsa.cli import run_sweep
from fgsa.config import RunConfig

cfg = RunConfig().with_values("train", max_steps=40)

for param, values in (("d", [1, 2, 4]), ("K", [2, 4])):
    print(f"-- {param}")
    for row in run_sweep(cfg, param, values):
        print(f"{param}={row['param_value']}  S {row['s_alpha']:.3f}  E {row['e_phi']:.3f}  "
              f"Fw {row['f_w_beta']:.3f}  MAE {row['mae']:.3f}")
