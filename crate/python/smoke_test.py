"""Smoke test for the uncloc extension module.

Build and install with

    pip install --no-build-isolation ./crates/py

then run this script from any directory.
"""

import math
import tempfile
from pathlib import Path

import uncloc


def check_geometry():
    p = uncloc.Pose(1.0, 2.0, 0.5, yaw=0.3, pitch=-0.02, roll=0.01)
    q = uncloc.Pose(-0.4, 0.1, 0.0, yaw=-0.1)
    back = p.compose(q).compose(q.inverse())
    assert all(abs(a - b) < 1e-12 for a, b in zip(back.translation, p.translation))
    delta = [0.1, -0.2, 0.05, 0.01, 0.02, -0.03]
    d = p.boxplus(delta).boxminus(p)
    assert all(abs(a - b) < 1e-12 for a, b in zip(d, delta))
    uv = uncloc.project(uncloc.Pose(), [20.0, 0.0, 1.0])
    assert uv is not None and 0 <= uv[0] < 320 and 0 <= uv[1] < 240
    assert uncloc.project(uncloc.Pose(), [-20.0, 0.0, 1.0]) is None


def check_costmap_primitives():
    mask = [[False] * 5 for _ in range(4)]
    mask[1][2] = True
    d = uncloc.distance_transform_2d(mask)
    assert d[1][2] == 0.0 and d[3][0] == math.hypot(2, 2)
    t = uncloc.otsu([0.1] * 50 + [0.9] * 50)
    assert 0.1 < t < 0.9


def check_evidential():
    probs, u = uncloc.dirichlet([1.0, 1.0, 1.0])
    assert abs(u - 1.0) < 1e-12 and all(abs(p - 1 / 3) < 1e-12 for p in probs)
    ua, ue = uncloc.nig_uncertainty(0.0, 2.0, 3.0, 4.0)
    assert abs(ua - 2.0) < 1e-12 and abs(ue - 1.0) < 1e-12
    assert math.isfinite(uncloc.nig_nll(0.0, 2.0, 3.0, 4.0, 0.5))
    assert abs(uncloc.ece([0.9] * 10, [True] * 8 + [False] * 2) - 0.1) < 1e-12
    assert uncloc.ence([1.0, 1.0], [1.0, 1.0]) < 1e-12


def check_runs():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        uncloc.write_builtin_scenarios(tmp)
        m = uncloc.Map.load(tmp / "map.txt")
        assert m.lane_borders > 0 and m.traffic_lights > 0
        assert uncloc.Map.parse(m.to_text()).to_text() == m.to_text()

        sc = uncloc.Scenario.load(tmp / "single_frame.toml")
        sc.seed = 3
        sc.ablate("lights")
        assert sc.ablations == ["lights"]
        # Shorten the drive to keep the smoke test quick.
        lines = (tmp / "trajectory.csv").read_text().splitlines()
        (tmp / "short.csv").write_text("\n".join(lines[:21]) + "\n")
        sc.trajectory = tmp / "short.csv"
        records = uncloc.run_single_frame(sc)
        assert len(records) == 10
        assert all(r["n_tl"] == 0 for r in records)
        summary = uncloc.summarize(records)
        assert set(summary) == {"lon", "lat", "z", "yaw", "pitch", "roll"}
        assert all(rmse >= mae for rmse, mae in summary.values())
        assert records == uncloc.run_single_frame(sc)

        seq = uncloc.Scenario.load(tmp / "sequence.toml")
        seq.trajectory = tmp / "short.csv"
        tracked = uncloc.run_sequence(seq)
        assert len(tracked) == 20

        try:
            sc.ablate("odometry")
        except ValueError:
            pass
        else:
            raise AssertionError("unknown ablation accepted")


def main():
    check_geometry()
    check_costmap_primitives()
    check_evidential()
    check_runs()
    print("uncloc smoke test passed")


if __name__ == "__main__":
    main()
