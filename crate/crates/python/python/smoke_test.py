"""Smoke test for the compiled `spillfree` module.

Build and install with `maturin develop --release` (or `pip install .`) from
crates/python, then run `python python/smoke_test.py`.
"""

import json
import math

import spillfree as sf


def main():
    params = sf.PhysicalParams(g=1.0, mu=1.0, L=1.0, m=1.0, H_max=2.0)
    grid = sf.Grid(params, 50)
    assert grid.n == 50 and abs(grid.dx - 0.02) < 1e-15
    assert params.h_star == 1.0

    for h in (0.05, 0.5, 1.0, 3.0, 40.0):
        assert abs(sf.barrier_inv(sf.barrier(h, params), params) - h) < 1e-10

    gains = sf.Gains(sigma=1.0, q=3.0, k=0.05, r=0.03)
    ok, bound, margin = sf.check_gain_condition(params, gains)
    assert ok and margin > 0 and abs(bound - sf.gain_bound(params, 1.0, 3.0, 0.03)) == 0.0
    constants = gains.derived_constants(params)
    assert constants["lambda"] > 0 and constants["M"] >= 1

    eq = sf.State.equilibrium(params, grid)
    assert sf.control_force(eq, params, gains, grid) == 0.0
    assert sf.clf_value(eq, params, gains, grid) == 0.0

    ic = sf.State.initial_condition(params, grid, "combined", 0.02, xi0=0.05)
    assert abs(ic.mass(grid) - 1.0) < 1e-12
    traj = sf.simulate(ic, params, gains, grid, t_end=1.0, snapshot_times=[0.0, 1.0])
    assert traj.completed and traj.failure is None
    records = traj.records()
    assert records[-1]["t"] == 1.0
    assert max(abs(r["mass"] - 1.0) for r in records) < 1e-10
    assert records[-1]["V"] < records[0]["V"]
    assert [t for t, _ in traj.snapshots()] == [0.0, 1.0]
    failed = [c["name"] for c in traj.checks() if c["hard"] and not c["skipped"] and not c["passed"]]
    assert not failed, failed

    plan = sf.plan_transfer(1.0, 0.05, params)
    assert plan["certified_clf_bound"] <= plan["gains"]["r"]
    expected = math.log(plan["constants"]["M"] * (1.0 + 0.05) / 0.05) / plan["constants"]["lambda"]
    assert abs(plan["T"] - expected) <= 1e-9 * expected
    planned = sf.Gains(**plan["gains"])
    assert sf.check_gain_condition(params, planned)[0]
    assert json.loads(sf.design(params, 0.05, 1.0))["plan"]["T"] == plan["T"]

    reports = sf.check_static_inequalities(200, params, gains, grid, seed=42)
    assert all(r["passed"] for r in reports), reports

    try:
        sf.PhysicalParams(g=1.0, mu=1.0, L=1.0, m=3.0, H_max=2.0)
    except ValueError as e:
        assert "h*" in str(e)
    else:
        raise AssertionError("overfull tank accepted")

    print("smoke test passed: T = %.1f, final V = %.3e" % (plan["T"], records[-1]["V"]))


if __name__ == "__main__":
    main()
