import json

import pytest

from macsim import presets
from macsim.cli import main
from macsim.engine import RunConfig
from macsim.scenario import ScenarioConfig

SMALL = ScenarioConfig(road_length=200.0, lane_count=2, lane_speeds=(30.0, 25.0), density=30.0,
                       mmwave_los_range=40.0)


@pytest.fixture
def tiny(preset_dir):
    presets.save(RunConfig(scenario=SMALL, r_tx=0.5, replications=3, min_replications=3,
                           cbr_window_us=0), preset_dir / "tiny.ini")
    return preset_dir


def test_run_writes_outputs(tiny, capsys):
    out = tiny / "out"
    assert main(["run", "--preset", "tiny", "--out", str(out)]) == 0
    flat = json.loads(capsys.readouterr().out)
    assert flat["replications"] == 3 and flat["mac"] == "assisted"
    names = {p.name for p in out.iterdir()}
    assert names == {f"assisted_rtx50_{k}" for k in ("replications.csv", "reservations.csv",
                                                     "beacons.csv", "report.json",
                                                     "trace.ndjson")}


def test_run_is_deterministic(tiny):
    for d in ("a", "b"):
        assert main(["run", "--preset", "tiny", "--mac", "ref-ad", "--out", str(tiny / d)]) == 0
    for name in ("ref-ad_rtx50_replications.csv", "ref-ad_rtx50_trace.ndjson"):
        assert (tiny / "a" / name).read_bytes() == (tiny / "b" / name).read_bytes()


def test_sweep(tiny, capsys):
    out = tiny / "sw"
    assert main(["sweep", "--preset", "tiny", "--rtx", "20,40", "--out", str(out)]) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [(r["mac"], r["r_tx"]) for r in rows] == [
        ("assisted", 0.2), ("assisted", 0.4), ("ref-ad", 0.2), ("ref-ad", 0.4)]
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_golden_all(capsys, tmp_path):
    assert main(["golden", "all", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "fig2: PASS" in out and "fig3: PASS" in out
    assert (tmp_path / "golden_fig3_reservations.csv").exists()


def test_calibrate_writes_preset(tiny, capsys):
    path = tiny / "tiny.ini"
    before = path.read_text()
    assert main(["calibrate", "--preset", "tiny", "--seeds", "2", "--target", "3",
                 "--dry-run"]) == 0
    assert path.read_text() == before
    assert main(["calibrate", "--preset", "tiny", "--seeds", "2", "--target", "3"]) == 0
    rng = presets.load("tiny").scenario.mmwave_los_range
    assert rng != 40.0 and f"{rng:g}" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run", "--preset", "does-not-exist"],
    ["run", "--preset", "tiny", "--set", "warp=1"],
    ["run", "--preset", "tiny", "--set", "run.r_tx=2"],
])
def test_config_errors_exit_2(tiny, argv):
    assert main(argv + ["--out", str(tiny / "x")]) == 2


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--format", "xml"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["golden", "fig9"])
    assert exc.value.code == 2


def test_invariant_violation_exits_1(tiny, monkeypatch, capsys):
    from macsim import engine

    def boom(self, entry, t):
        raise engine.InvariantViolation("half-duplex violated", [])

    monkeypatch.setattr(engine.Simulator, "_commit", boom)
    assert main(["sweep", "--preset", "tiny", "--mac", "assisted", "--rtx", "50",
                 "--out", str(tiny / "x")]) == 1
    assert "replication seed" in capsys.readouterr().err
