"""Smoke test for the pylinewatch extension.

Build and install first:
    pip install --no-build-isolation ./crates/py
then run from the repository root:
    python python/smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

import pylinewatch as lw

ROOT = pathlib.Path(__file__).resolve().parent.parent
STANDARD = ROOT / "scenarios" / "standard.toml"


def main():
    t = lw.ScenarioTemplate.load(str(STANDARD))
    short = t.with_("run.horizon", "20 min")
    assert short.hash() != t.hash()

    s = short.build()
    assert s.node_count == 101
    assert "PT-5000" in s.instruments
    assert s.leaks[0]["mass_rate"] == 0.7

    steady = s.steady_state()
    assert len(steady["x"]) == 101
    assert steady["pressure"][0] > steady["pressure"][-1]
    q = steady["mass_flow"][0]
    assert 60.0 < q < 80.0, q

    run = s.run()
    assert run.completed
    assert run.declared_time is not None and run.declared_time > 900.0
    report = run.report()
    assert report["metadata"]["config_hash"] == s.config_hash
    assert report["ground_truth"] == s.leaks
    m = run.metrics()
    assert m["rtm_latency"] <= 600.0
    print(f"leak declared after {m['rtm_latency']:.0f} s, located within {m['rtm_location_error']:.0f} m")

    frames = run.telemetry()
    assert len(frames) == 241 * len(s.instruments)

    with tempfile.TemporaryDirectory() as d:
        paths = run.write(d)
        names = {pathlib.Path(p).name for p in paths}
        assert {"report.json", "telemetry.csv", "trace.csv"} <= names
        first = (pathlib.Path(d) / "telemetry.csv").read_text().splitlines()[0]
        assert first == f"# config_sha256={s.config_hash}"

    rows, summary = lw.sweep(short.with_("telemetry.noise_fraction", 0.0),
                             '[[parameter]]\npath = "leaks.0.rate"\nvalues = [0.7, 3.5]\n')
    assert summary["cells"] == 2 and summary["failed"] == 0
    lat = [r["report"]["metrics"]["rtm_latency"] for r in rows]
    assert lat[1] <= lat[0], lat

    try:
        t.with_("leaks.0.position", "40 km").build()
    except lw.ConfigError as e:
        assert "leaks[0].position" in str(e)
    else:
        raise AssertionError("out-of-line leak accepted")

    x = lw.localize(0.0, 1.0, 10_000.0, 1.0 + 4000.0 / 1414.0, 1414.0)
    assert math.isclose(x, 3000.0, abs_tol=1e-6), x

    ranking = lw.availability_presets(0.99)
    assert [r["availability"]["name"] for r in ranking] == ["acoustic", "mass_flow", "pressure"]
    assert abs(ranking[0]["availability"]["product"] - 0.99 ** 7) < 1e-12

    print(f"pylinewatch {lw.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
