"""Why adapt the droop: a narrow saturation band makes static droop hunt.

With the curve squeezed to [0.88, 1.12] the fixed controller's gain is high
enough that inverter output swings every step. The adaptive controller runs
on the same curve but moves its offset and reference slowly instead.

    python demos/oscillation.py
"""

import numpy as np

from esdroop.feeder import load_feeder
from esdroop.scenario import ScenarioConfig, run_qsts, violations_between

band = dict(v_min=0.88, v_max=1.12)
model = load_feeder("4bus.json")
fixed, s_fixed = run_qsts(ScenarioConfig(controller="fixed-droop", params=band), model)
adaptive, s_es = run_qsts(ScenarioConfig(params=band), model)

for name, recs, s in (("fixed-droop", fixed, s_fixed), ("es-adaptive", adaptive, s_es)):
    q = np.stack([r.q_pv for r in recs])[:, 1]
    print(f"{name:>12}: oscillation index {max(s.oscillation_index.values()):8.1f}, "
          f"violations 0-8 h {violations_between(model, recs, 0, 8 * 3600):4d}, "
          f"pv4 kvar over steps 600-610: {np.round(q[600:610]).astype(int).tolist()}")
