"""Writes crates/core/data/corridor.json: ten rooms on both sides of a corridor."""
import json
import math

W, H = 50.0, 14.0
CORR_LO, CORR_HI = 5.0, 9.0
T = 0.1          # half wall thickness
DOOR = 2.4       # door gap width


def rect(x0, y0, x1, y1):
    return {"min_x": x0, "min_y": y0, "max_x": x1, "max_y": y1}


obstacles = []
for y in (CORR_LO, CORR_HI):
    # wall with one door per room, centred on the room
    x = 0.0
    for i in range(5):
        cx = 10.0 * i + 5.0
        obstacles.append(rect(x, y - T, cx - DOOR / 2, y + T))
        x = cx + DOOR / 2
    obstacles.append(rect(x, y - T, W, y + T))
for xw in (10.0, 20.0, 30.0, 40.0):
    obstacles.append(rect(xw - T, 0.0, xw + T, CORR_LO - T))
    obstacles.append(rect(xw - T, CORR_HI + T, xw + T, H))

names = [f"L{i}" for i in range(1, 11)]
regions = []
for i in range(5):
    regions.append({"id": names[i], "rect": rect(10 * i + 0.6, 0.6, 10 * i + 9.4, CORR_LO - 0.6)})
for i in range(5):
    regions.append({"id": names[5 + i], "rect": rect(10 * i + 0.6, CORR_HI + 0.6, 10 * i + 9.4, H - 0.6)})
for r in regions:
    r["connected_to"] = [n for n in names if n != r["id"]]

# L1 is the only room with features, in its far corner: r starts there
# freshly localized, and r' only sees them once it has arrived.
landmarks = [
    {"id": "printer", "x": 1.0, "y": 0.8},
    {"id": "bin", "x": 3.0, "y": 0.8},
    {"id": "plant", "x": 1.0, "y": 3.0},
]

scenario = {
    "name": "corridor",
    "map": {
        "bounds": rect(0.0, 0.0, W, H),
        "obstacles": obstacles,
        "regions": regions,
        "landmarks": landmarks,
        "sensor_range": 4.0,
    },
    "noise": {
        "process_sigma": [0.002, 0.002, 0.001],
        "landmark_sigma": [0.1, 0.02],
        "mutual_sigma": [0.05, 0.02],
    },
    "weights": {"M_u": 1.0, "M_G": 1.0, "M_sigma": 5.0},
    "prm": {"samples_per_region": 5, "free_samples": 600, "k_nearest": 20, "step": 0.5, "mutual_range": 4.0},
    "robots": [
        # r knows its pose; r' knows its position but not its heading
        {"id": "r", "mean": [5.0, 4.0, math.pi / 2], "cov_diag": [1e-4, 1e-4, 1e-6]},
        {"id": "rp", "mean": [45.0, 10.0, -math.pi / 2], "cov_diag": [1e-4, 1e-4, 0.0025]},
    ],
    "task": {"visit": ["L10", "L1"], "destinations": {"r": "L10", "rp": "L1"}},
}

with open("crates/core/data/corridor.json", "w") as f:
    json.dump(scenario, f, indent=2)
    f.write("\n")
