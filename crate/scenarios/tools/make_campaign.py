"""Generate scenarios/campaign.json: a 6x7 grid site with 75 edges, a dock
at the corner node and landmark populations that wither on a subset of
edges."""

import json
import math
import random
import sys

ROWS, COLS, SPACING = 6, 7, 12.0
DAY = 86400.0
DAYS = 42


def code(r, c):
    return "D" if (r, c) == (0, 0) else f"P{r}{c}"


def main(out):
    rng = random.Random(20260412)
    nodes, edges = [], []
    for r in range(ROWS):
        for c in range(COLS):
            n = {"code": code(r, c), "position": {"x": c * SPACING, "y": r * SPACING}}
            if (r, c) != (0, 0):
                n["plot"] = r * COLS + c
            nodes.append(n)
    pairs = []
    for r in range(ROWS):
        for c in range(COLS):
            if c + 1 < COLS:
                pairs.append(((r, c), (r, c + 1)))
            if r + 1 < ROWS:
                pairs.append(((r, c), (r + 1, c)))
    for cell in [(1, 1), (3, 4), (4, 1), (2, 5)]:
        r, c = cell
        pairs.append(((r, c), (r + 1, c + 1)))
    assert len(pairs) == 75, len(pairs)
    for a, b in pairs:
        ax, ay = a[1] * SPACING, a[0] * SPACING
        bx, by = b[1] * SPACING, b[0] * SPACING
        length = math.hypot(bx - ax, by - ay)
        nx, ny = -(by - ay) / length, (bx - ax) / length
        off = rng.uniform(-1.2, 1.2)
        mid = {"x": round((ax + bx) / 2 + nx * off, 3), "y": round((ay + by) / 2 + ny * off, 3)}
        edges.append({"a": code(*a), "b": code(*b), "waypoints": [mid]})

    # The far corner of the site is a meadow whose appearance turns over;
    # the yard around the dock barely changes.
    def in_meadow(n):
        return n[0] >= 2 and n[1] >= 2

    keys = ["-".join(sorted([code(*a), code(*b)])) for a, b in pairs]
    withering = sorted(k for k, (a, b) in zip(keys, pairs) if in_meadow(a) and in_meadow(b))
    stable = sorted(k for k in keys if k not in withering)

    half_life = 2.0 * DAY
    births = [-3.0 * half_life, DAYS * DAY]
    window = births[1] - births[0]
    visible = 0.7
    churn_density = visible * window * math.log(2) / half_life

    scenario = {
        "name": "campaign",
        "seed": 42,
        "world": {
            "bounds": {"min": {"x": -10, "y": -10}, "max": {"x": (COLS - 1) * SPACING + 10, "y": (ROWS - 1) * SPACING + 10}},
            "landmark_zones": [
                {"region": {"site_edges": {"edges": stable, "half_width": 3.0}},
                 "populations": [{"density": 0.8}]},
                {"region": {"site_edges": {"edges": withering, "half_width": 3.0}},
                 "populations": [
                     {"density": 0.15},
                     {"density": round(churn_density, 4), "half_life": half_life, "birth": births},
                 ]},
            ],
            "dock": {"pose": {"x": -2.5, "y": 0.0, "theta": 0.0}},
            "plots": [],
        },
        "site": {"nodes": nodes, "edges": edges, "dock_node": "D"},
        "start": "docked",
        "runtime": {"accel": 100.0, "telemetry_every": 10, "max_duration": DAYS * DAY / 100.0},
        "campaign": {
            "days": DAYS,
            "first_mission_day": 2,
            "targets_per_mission": 10,
            "missions_per_day": 1,
            "mission_cutoff": 600.0,
            "min_battery": 0.5,
        },
    }
    with open(out, "w") as f:
        json.dump(scenario, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "scenarios/campaign.json")
