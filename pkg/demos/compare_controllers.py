"""Oracle, adaptive and fixed droop side by side on both bundled feeders.

The oracle re-solves a brute-force dispatch every ten steps with full feeder
knowledge, so it bounds what any local scheme can reach. Takes about a minute.

    python demos/compare_controllers.py
"""

from esdroop.scenario import ScenarioConfig, run_qsts

SOURCES = {"4bus.json": 1.05, "13bus.json": None}

for feeder, source in SOURCES.items():
    rows = {}
    for kind in ("oracle", "es-adaptive", "fixed-droop"):
        _, s = run_qsts(ScenarioConfig(feeder=feeder, controller=kind, substation_pu=source))
        rows[kind] = s
    best = rows["oracle"].kwh
    print(f"\n{feeder} (source {source or 'as shipped'} pu)")
    print(f"{'controller':>12}  {'kWh':>8}  {'over oracle':>11}  {'violations':>10}")
    for kind, s in rows.items():
        print(f"{kind:>12}  {s.kwh:8.1f}  {100 * (s.kwh / best - 1):10.1f}%  {s.violations:10d}")
