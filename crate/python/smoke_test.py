"""Smoke test for the pyvolterra extension.

Build and run from the repository root:

    cargo build --release -p volterra-games-py --features extension-module
    cp target/release/libpyvolterra.so python/pyvolterra.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyvolterra as vg


def main():
    names = vg.list_scenarios()
    assert "scenario-5-2" in names and "decoupled-quadratic" in names, names

    sc = vg.Scenario("martingale")
    ens = sc.ensemble(seed=7, paths=400)
    assert (ens.paths, ens.cells) == (400, sc.cells)
    x = sc.simulate(ens, (0.0, 0.0))
    assert len(x) == 400 and len(x[0]) == sc.cells + 1
    # dX = u dt + dB with u = 0, X(0) = 1: X(T) - 1 = B(T) path by path.
    for p in (0, 17, 399):
        assert abs(x[p][-1] - 1.0 - ens.brownian_level(p, sc.cells)) < 1e-12

    game = vg.Scenario("decoupled-quadratic")
    cand = game.solve(game.ensemble(seed=1, paths=300), (0.0, 0.0))
    assert cand.converged, cand.residual_norms
    nodes = game.ensemble(seed=1, paths=300).nodes()
    err = max(abs(c - (0.5 + 0.5 * t)) for c, t in zip(cand.control(0), nodes))
    assert err < 1e-3, err
    again = vg.Candidate.from_json(cand.to_json())
    assert again.control(1) == cand.control(1)
    assert json.loads(cand.to_json())["scenario"] == "decoupled-quadratic"

    (j1, j2), _ = vg.Scenario("quadratic-saddle").performance(
        vg.Scenario("quadratic-saddle").ensemble(seed=2, paths=200), (0.7, 0.1)
    )
    assert j1 + j2 == 0.0

    results = vg.run_oracles("scenario-5-2", {"cells": 16, "gamma": 0.2}, paths=500, seed=3)
    assert all(r["passed"] for r in results), results
    z = next(r for r in results if r["name"] == "z-exponential")
    assert "exp(-gamma t)" in z["note"]

    try:
        vg.Scenario("scenario-5-1", {"no_such_key": 1})
    except ValueError as e:
        assert "no_such_key" in str(e)
    else:
        raise AssertionError("unknown parameter accepted")

    assert math.isfinite(sc.performance(ens, (0.5, 0.0))[0][0])
    print("pyvolterra", vg.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
