"""Smoke test for the fplab Python module.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python python/smoke_test.py
"""

import json
import math
import sys
import tempfile

import fplab

SMALL = ["grid.points=128", "time.steps=32", "n_paths=20000"]


def main() -> int:
    cfg = json.loads(fplab.validate_config("{}", SMALL))
    assert cfg["grid"]["points"] == 128

    nodes, times, dens = fplab.solve_fpe("{}", SMALL)
    h = nodes[1] - nodes[0]
    masses = [sum(u) * h for u in dens]
    assert len(times) == 33 and all(abs(m - 1.0) < 1e-6 for m in masses), masses

    states, weights = fplab.simulate('{"seed": 3}', SMALL)
    mean = sum(w * s[0] for s, w in zip(states, weights))
    assert abs(mean) < 0.05, mean

    rows = fplab.superpose("{}", SMALL)
    worst = max(d - tau for _, d, tau in rows)
    assert worst <= 0.0, rows

    smooth = fplab.heat_smooth([math.sin(2 * math.pi * k / 64) for k in range(64)], math.pi, 0.1)
    assert max(abs(v) for v in smooth) < 1.0

    with tempfile.TemporaryDirectory() as out:
        passed, criteria, written = fplab.run_experiment(json.dumps({"kind": "solve-fpe", "output": out}), SMALL)
        assert passed and written, criteria

    try:
        fplab.validate_config('{"grid": {"pionts": 3}}')
    except fplab.FplabError as e:
        assert "pionts" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("fplab smoke test ok:", len(criteria), "criteria,", len(rows), "checkpoints")
    return 0


if __name__ == "__main__":
    sys.exit(main())
