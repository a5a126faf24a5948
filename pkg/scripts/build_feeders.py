"""Regenerate the bundled feeder JSON files.

    python3 scripts/build_feeders.py [--out DIR]

The 4-bus feeder uses the classic 4-node line geometry (ohm/mile) reduced to a
balanced 3x3 matrix. The 13-bus feeder is a synthetic unbalanced radial feeder
built from the familiar 13-node line configurations.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from esdroop.feeder import from_dict, save_feeder

FT_PER_MILE = 5280.0
KV_12 = 12.47 / math.sqrt(3)
KV_4 = 4.16 / math.sqrt(3)
KV_LV = 0.48 / math.sqrt(3)


def _z_json(z: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in z]


def _sym(entries: dict[str, complex]) -> np.ndarray:
    """3x3 symmetric matrix from keys like 'aa', 'ab'; missing entries are zero."""
    z = np.zeros((3, 3), dtype=complex)
    for key, val in entries.items():
        i, j = "abc".index(key[0]), "abc".index(key[1])
        z[i, j] = z[j, i] = val
    return z


def four_bus(transformer_pct=(1.0, 8.0), line34_ft=2500.0, source_pu=1.0) -> dict:
    zmile = np.array([
        [0.4576 + 1.0780j, 0.1560 + 0.5017j, 0.1535 + 0.3849j],
        [0.1560 + 0.5017j, 0.4666 + 1.0482j, 0.1580 + 0.4236j],
        [0.1535 + 0.3849j, 0.1580 + 0.4236j, 0.4615 + 1.0651j],
    ])
    zs = np.mean(np.diag(zmile))
    zm = np.mean(zmile[~np.eye(3, dtype=bool)])
    balanced = np.full((3, 3), zm)
    np.fill_diagonal(balanced, zs)
    r_pct, x_pct = transformer_pct
    z_xfmr = np.eye(3) * (r_pct + 1j * x_pct) / 100.0 * (4.16 ** 2 / 6.0)
    load = [("load3", "3", 1400.0, "load_2"), ("load4", "4", 5400.0, "load_1")]
    tan_phi = math.tan(math.acos(0.90))
    return {
        "name": "4bus",
        "comment": (
            f"Step-down transformer 2-3 (6 MVA, 12.47/4.16 kV) modeled as a series "
            f"impedance of {r_pct}+j{x_pct} % on its own rating, no tap, impedance "
            f"referred to the 4.16 kV side. Lines use the 4-node geometry reduced to a "
            f"balanced 3x3 matrix; 1-2 is 2000 ft, 3-4 is {line34_ft:.0f} ft."
        ),
        "base_mva": 6.0,
        "source": {"bus": "1", "voltage_pu": source_pu},
        "buses": [
            {"id": "1", "phases": "abc", "base_kv": KV_12},
            {"id": "2", "phases": "abc", "base_kv": KV_12},
            {"id": "3", "phases": "abc", "base_kv": KV_4},
            {"id": "4", "phases": "abc", "base_kv": KV_4},
        ],
        "branches": [
            {"id": "1-2", "from": "1", "to": "2", "phases": "abc",
             "z": _z_json(balanced * 2000.0 / FT_PER_MILE)},
            {"id": "2-3", "from": "2", "to": "3", "phases": "abc", "z": _z_json(z_xfmr)},
            {"id": "3-4", "from": "3", "to": "4", "phases": "abc",
             "z": _z_json(balanced * line34_ft / FT_PER_MILE)},
        ],
        "loads": [
            {"id": lid, "bus": bus, "profile": prof, "zip": [0.0, 0.5, 0.5],
             "per_phase": [{"phase": p, "kw": kw / 3, "kvar": kw * tan_phi / 3} for p in "abc"]}
            for lid, bus, kw, prof in load
        ],
        "pvs": [
            {"id": "pv3", "bus": "3", "phases": "abc", "rated_kva": 2400.0, "rated_kw": 2000.0,
             "profile": "solar_smooth"},
            {"id": "pv4", "bus": "4", "phases": "abc", "rated_kva": 3600.0, "rated_kw": 3000.0,
             "profile": "solar_smooth"},
        ],
        "regulators": [],
    }


# 13-node line configurations, ohm/mile
CFG = {
    "601": _sym({"aa": 0.3465 + 1.0179j, "ab": 0.1560 + 0.5017j, "ac": 0.1580 + 0.4236j,
                 "bb": 0.3375 + 1.0478j, "bc": 0.1535 + 0.3849j, "cc": 0.3414 + 1.0348j}),
    "602": _sym({"aa": 0.7526 + 1.1814j, "ab": 0.1580 + 0.4236j, "ac": 0.1560 + 0.5017j,
                 "bb": 0.7475 + 1.1983j, "bc": 0.1535 + 0.3849j, "cc": 0.7436 + 1.2112j}),
    "603": _sym({"bb": 1.3294 + 1.3471j, "bc": 0.2066 + 0.4591j, "cc": 1.3238 + 1.3569j}),
    "604": _sym({"aa": 1.3238 + 1.3569j, "ac": 0.2066 + 0.4591j, "cc": 1.3294 + 1.3471j}),
    "605": _sym({"cc": 1.3292 + 1.3475j}),
    "606": _sym({"aa": 0.7982 + 0.4463j, "ab": 0.3192 + 0.0328j, "ac": 0.2849 - 0.0143j,
                 "bb": 0.7891 + 0.4041j, "bc": 0.3192 + 0.0328j, "cc": 0.7982 + 0.4463j}),
    "607": _sym({"aa": 1.3425 + 0.5124j}),
}


def thirteen_bus(source_pu=1.03, reg_setpoint=1.02) -> dict:
    buses = [("650", "abc", KV_4), ("632", "abc", KV_4), ("633", "abc", KV_4), ("634", "abc", KV_LV),
             ("645", "bc", KV_4), ("646", "bc", KV_4), ("671", "abc", KV_4), ("680", "abc", KV_4),
             ("684", "ac", KV_4), ("611", "c", KV_4), ("652", "a", KV_4), ("692", "abc", KV_4),
             ("675", "abc", KV_4)]
    lines = [("650", "632", "abc", "601", 2000), ("632", "633", "abc", "602", 500),
             ("632", "645", "bc", "603", 500), ("645", "646", "bc", "603", 300),
             ("632", "671", "abc", "601", 2000), ("671", "680", "abc", "601", 1000),
             ("671", "684", "ac", "604", 300), ("684", "611", "c", "605", 300),
             ("684", "652", "a", "607", 800), ("671", "692", "abc", "606", 10),
             ("692", "675", "abc", "606", 500)]
    branches = [
        {"id": f"{f}-{t}", "from": f, "to": t, "phases": ph, "z": _z_json(CFG[cfg] * ft / FT_PER_MILE)}
        for f, t, ph, cfg, ft in lines
    ]
    # 500 kVA, 4.16/0.48 kV, 1.1+j2 %, referred to the 0.48 kV side
    z_xf = np.eye(3) * (1.1 + 2.0j) / 100.0 * (0.48 ** 2 / 0.5)
    branches.insert(2, {"id": "633-634", "from": "633", "to": "634", "phases": "abc", "z": _z_json(z_xf)})

    pq, i_, z_ = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]
    loads = [
        ("L634", "634", {"a": (160, 110), "b": (120, 90), "c": (120, 90)}, pq, "load_2"),
        ("L645", "645", {"b": (170, 125)}, pq, "load_1"),
        ("L646", "646", {"b": (115, 66), "c": (115, 66)}, z_, "load_1"),
        ("L652", "652", {"a": (128, 86)}, z_, "load_1"),
        ("L671", "671", {"a": (385, 220), "b": (385, 220), "c": (385, 220)}, pq, "load_2"),
        ("L675", "675", {"a": (385, 190), "b": (260, 140), "c": (290, 212)}, pq, "load_1"),
        ("L692", "692", {"c": (170, 151)}, i_, "load_1"),
        ("L611", "611", {"c": (170, 80)}, i_, "load_1"),
        ("L632", "632", {"a": (17, 10), "b": (66, 38), "c": (117, 68)}, pq, "load_2"),
    ]
    return {
        "name": "13bus",
        "comment": (
            "Synthetic unbalanced radial feeder built from the 13-node line configurations. "
            "The regulator sits on branch 650-632 and regulates bus 632. The 633-634 "
            "transformer is a series impedance referred to the 0.48 kV side."
        ),
        "base_mva": 5.0,
        "source": {"bus": "650", "voltage_pu": source_pu},
        "buses": [{"id": b, "phases": ph, "base_kv": kv} for b, ph, kv in buses],
        "branches": branches,
        "loads": [
            {"id": lid, "bus": bus, "zip": zp, "profile": prof,
             "per_phase": [{"phase": p, "kw": float(kw), "kvar": float(kq)} for p, (kw, kq) in per.items()]}
            for lid, bus, per, zp, prof in loads
        ],
        "pvs": [
            {"id": "pv671", "bus": "671", "phases": "abc", "rated_kva": 1200.0, "rated_kw": 1000.0,
             "profile": "solar_smooth"},
            {"id": "pv675", "bus": "675", "phases": "abc", "rated_kva": 900.0, "rated_kw": 750.0,
             "profile": "solar_smooth"},
            {"id": "pv634", "bus": "634", "phases": "abc", "rated_kva": 480.0, "rated_kw": 400.0,
             "profile": "solar_smooth"},
            {"id": "pv646", "bus": "646", "phases": "b", "rated_kva": 240.0, "rated_kw": 200.0,
             "profile": "solar_smooth"},
        ],
        "regulators": [
            {"branch": "650-632", "taps": [0, 0, 0], "setpoint_pu": reg_setpoint,
             "bandwidth_pu": 0.0167, "step": 0.00625},
        ],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/esdroop/data/feeders"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, doc in (("4bus.json", four_bus()), ("13bus.json", thirteen_bus())):
        save_feeder(from_dict(doc), out / name)
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
