"""Is the local objective convex where the controller operates?

At a few snapshots of the day this evaluates the single-phase condition D and
the measured curvature of the monitored-branch |I|^2 at node 4, then sweeps
pv4's reactive output to show the bowl directly.

    python demos/convexity_check.py
"""

import numpy as np

from esdroop.convexity import convexity_report, sample_branch
from esdroop.feeder import load_feeder
from esdroop.powerflow import build_injections
from esdroop.scenario import ScenarioConfig, profile_matrix

model = load_feeder("4bus.json")
cfg = ScenarioConfig()
load_mult, pv_kw = profile_matrix(model, cfg)

for step in (0, 1200, 1440, 2280):
    inj = build_injections(model, load_mult[step], pv_kw[step], [0.0, 0.0])
    rep = convexity_report(model, inj, "pv4")
    print(f"hour {step * cfg.dt / 3600:5.1f}: D = {rep.denominator:.3f}, K = {rep.k_value:.3e}, "
          f"d2|I|^2/dq^2 = {rep.second_derivative:.3e}")

step = 1440
inj = build_injections(model, load_mult[step], pv_kw[step], [0.0, 0.0])
qmax = np.sqrt(3600.0 ** 2 - pv_kw[step, 1] ** 2)
q = np.linspace(-qmax, qmax, 9)
s = sample_branch(model, inj, "pv4", q)
print("\npv4 kvar   |I|^2 on branch 3-4 (pu)")
for qi, i2 in zip(q, s.i2):
    print(f"{qi:8.0f}   {i2:.5f}")
