"""Smoke test for the conftorus_py extension module."""

import json
import math

import conftorus_py as ct

SPEC = """
kind = "scaled_mode"
dim = 3
res = 16
indices = [10, 20]

[pipeline]
pairs = 64
diameter_sources = 4
"""


def main():
    grid = ct.GridSpec.cubic(2, 16)
    flat = ct.FlatMetric.identity(2)
    zero = ct.ConformalMetric(flat, grid, [0.0] * len(grid))
    assert max(abs(r) for r in zero.scalar_curvature()) == 0.0
    assert abs(zero.volume() - 4 * math.pi**2) < 1e-12
    d = zero.diameter()
    assert abs(d - math.pi * math.sqrt(2)) / (math.pi * math.sqrt(2)) < 0.03, d

    shifted = ct.ConformalMetric(flat, grid, [0.5] * len(grid))
    x, y = [0.0, 0.0], [1.0, 2.0]
    ratio = shifted.geodesic_distance(x, y) / zero.geodesic_distance(x, y)
    assert abs(ratio - math.exp(0.5)) < 1e-12, ratio

    m = ct.generate(SPEC, 10)
    reports = json.loads(m.check(10, "scalar"))
    assert reports[0]["name"] == "scalar_lower_bound" and reports[0]["pass"], reports

    obstruction = json.loads(ct.negative_scalar_obstruction(1.0, 1.0, 4, 3))
    assert abs(obstruction["rhs"] + 0.75) < 1e-12
    assert "CONTRADICTION" in obstruction["note"]

    report = json.loads(ct.run_pipeline(SPEC))
    assert [row["j"] for row in report["rows"]] == [10, 20]
    assert report["bubbling"]["detected"] is False

    try:
        ct.GridSpec([7, 8])
    except ValueError:
        pass
    else:
        raise AssertionError("odd grid accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
