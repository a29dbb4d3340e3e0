"""Regenerate the illustrative fiber configs under src/cotdr/configs/.

Skews follow a smooth cross-section gradient plus a small seeded scatter,
then are nudged so every splitter group keeps its echoes resolvable.
"""

import itertools
from pathlib import Path

import numpy as np
import yaml

from cotdr.fiber_channel import hex_layout

OUT = Path(__file__).resolve().parents[1] / "src" / "cotdr" / "configs"
MIN_GAP = 0.25e-9  # one-way; echoes sit twice this apart


def groups(ids, center, ports=4):
    others = [c for c in ids if c != center]
    return [[center] + others[i : i + ports - 1] for i in range(0, len(others), ports - 1)]


def resolvable(skews, center, ids):
    for g in groups(ids, center):
        for a, b in itertools.combinations(g, 2):
            if abs(skews[a] - skews[b]) < MIN_GAP:
                return False
    return True


def gradient_skews(layout, gx, gy, scatter, seed, center):
    ids = [cid for cid, _ in layout]
    rng = np.random.default_rng(seed)
    while True:
        skews = {
            cid: 0.0 if cid == center else gx * x + gy * y + scatter * rng.standard_normal()
            for cid, (x, y) in layout
        }
        if resolvable(skews, center, ids):
            return {k: float(f"{v:.4e}") for k, v in skews.items()}


def core_entries(layout, length, skews, tdc, pmd):
    out = []
    for i, (cid, (x, y)) in enumerate(layout):
        out.append(
            {
                "core_id": cid,
                "position": [float(x), float(y)],
                "length": length,
                "group_index": 1.468,
                "skew_offset": skews[cid],
                "tdc": float(tdc[cid]),
                "end_reflectance": 1.0,
                "birefringence": {"target_pmd": float(pmd[cid]), "n_segments": 100, "seed": 100 + i},
            }
        )
    return out


def acquisition():
    return {
        "prbs_order": 15,
        "prbs_seed": 1,
        "bit_rate": 1.0e10,
        "sample_rate": 5.0e10,
        "rise_time": 3.0e-11,
        "frontend": "adc7",
        "n_traces": 1000,
        "noise_sigma": 0.05,
        "adc_bits": 7,
    }


def common(name, cores, center, jitter):
    return {
        "name": name,
        "fiber": {
            "center_core_id": center,
            "reference_reflector_delay": 1.0e-7,
            "reference_reflectance": float(f"{10 ** -1.4:.6e}"),
            "splitter_excess_delay": 0.0,
            "backscatter_level": 0.01,
            "attenuation_db_per_km": 0.2,
            "splitter_ports": 4,
            "delay_jitter_rms": jitter,
            "cores": cores,
        },
        "acquisition": acquisition(),
        "environment": {"temperature": 20.0, "reference_temperature": 20.0},
        "sweep": {"temperatures": [10.0, 20.0, 30.0, 40.0, 50.0]},
        "pmd": {
            "band": [1.495e-6, 1.605e-6],
            "n_points": 64,
            "sops": [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 1]],
            "mod_freq": 2.0e9,
        },
        "consecutive": {"drift_rms": 0.5},
    }


def mcf19():
    layout = hex_layout(19, 41.1)
    center = "10"
    skews = gradient_skews(layout, 35e-12, 8e-12, 0.15e-9, 19, center)
    rmax = max(np.hypot(*p) for _, p in layout)
    tdc = {cid: round(7.30 + 0.012 * x / rmax, 4) for cid, (x, _) in layout}
    pmd = {}
    for cid, p in layout:
        r = np.hypot(*p) / rmax
        pmd[cid] = 0.3e-12 if r == 0 else float(f"{0.6e-12 + 5.4e-12 * r**3:.3e}")
    return common("mcf19_5km (illustrative)", core_entries(layout, 5000.0, skews, tdc, pmd), center, 3e-12)


def mcf7():
    layout = hex_layout(7, 45.0)
    center = "4"
    skews = gradient_skews(layout, 110e-12, 40e-12, 0.3e-9, 7, center)
    tdc = {cid: round(7.12 + 0.02 * x / 45.0, 4) for cid, (x, _) in layout}
    pmd = {cid: (0.4e-12 if cid == center else v) for cid, v in zip(
        [c for c, _ in layout], [3e-12, 22e-12, 5e-12, 0.4e-12, 14e-12, 8e-12, 18e-12])}
    return common("mcf7_10km (illustrative)", core_entries(layout, 10000.0, skews, tdc, pmd), center, 10e-12)


def mcf4():
    layout = [("c", (0.0, 0.0)), ("a", (41.1, 0.0)), ("b", (-41.1, 0.0)), ("d", (0.0, 41.1))]
    skews = {"c": 0.0, "a": 2.5e-9, "b": -1.2e-9, "d": 5.0e-9}
    tdc = {k: 7.49 for k in skews}
    pmd = {"c": 0.3e-12, "a": 2e-12, "b": 6e-12, "d": 22e-12}
    return common("mcf4_5km (illustrative)", core_entries(layout, 5000.0, skews, tdc, pmd), "c", 0.0)


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    for fname, cfg in (("mcf19_5km", mcf19()), ("mcf7_10km", mcf7()), ("mcf4_5km", mcf4())):
        text = "# Illustrative parameters, not measured data. All quantities in SI units.\n"
        text += yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None, width=100)
        (OUT / f"{fname}.yaml").write_text(text)
        print(fname, "written")
