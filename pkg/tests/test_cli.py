import json
import shutil
import subprocess
import sys

import numpy as np

from bevplan.bevg import seq_to_channels, write_bevg
from bevplan.cli import main
from bevplan.scenarios import bundled_path
from bevplan.trajectory import RoutePolyline, write_route

DATA = bundled_path()
SUITE = DATA / "suite"


def _run(*argv):
    return main([str(a) for a in argv])


# -- lift -----------------------------------------------------------------------

def test_lift_writes_grid(tmp_path, capsys):
    assert _run("lift", "--rig", DATA / "rig.ini", "--features", DATA / "features", "--out", tmp_path,
                "--csv") == 0
    assert (tmp_path / "bev.bevg").is_file()
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 0
    header, row = capsys.readouterr().out.split()
    assert header == "points,dropped,channels"
    assert row.split(",")[2] == "15"


def test_lift_missing_camera(tmp_path, capsys):
    feats = shutil.copytree(DATA / "features", tmp_path / "features")
    (feats / "frame0_cam3.bevg").unlink()
    assert _run("lift", "--rig", DATA / "rig.ini", "--features", feats, "--out", tmp_path / "o") == 2
    assert "frame0_cam3.bevg" in capsys.readouterr().err


def test_lift_corrupt_magic(tmp_path):
    feats = shutil.copytree(DATA / "features", tmp_path / "features")
    raw = (feats / "frame2_cam4.bevg").read_bytes()
    (feats / "frame2_cam4.bevg").write_bytes(b"GVEB" + raw[4:])
    assert _run("lift", "--rig", DATA / "rig.ini", "--features", feats, "--out", tmp_path / "o") == 3


def test_lift_wrong_depth_count(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"depths": {"count": 80}}))
    assert _run("lift", "--rig", DATA / "rig.ini", "--features", DATA / "features",
                "--config", tmp_path / "c.json", "--out", tmp_path / "o") == 3


# -- plan -----------------------------------------------------------------------

def test_plan_straight_scene(tmp_path):
    assert _run("plan", SUITE / "00_straight.json", "--out", tmp_path) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "x,y,theta,kappa,v,a"
    assert len(lines) == 11
    costs = (tmp_path / "costs.csv").read_text().splitlines()
    assert len(costs) == 26
    assert sum(line.endswith(",1") for line in costs[1:]) == 1


def _curving_inputs(tmp_path):
    arc = np.linspace(0.0, np.pi / 2, 50)
    write_route(tmp_path / "route.txt", RoutePolyline(np.column_stack([25 * np.sin(arc), 25 * (1 - np.cos(arc))])))
    values = np.zeros((11, 200, 200, 4))
    values[..., 0] = 1.0
    write_bevg(tmp_path / "maps.bevg", seq_to_channels(values))
    (tmp_path / "straight_only.json").write_text(json.dumps({"sampler": {"kappa_max": 0.0}}))


def test_plan_from_maps(tmp_path):
    _curving_inputs(tmp_path)
    assert _run("plan", "--maps", tmp_path / "maps.bevg", "--route", tmp_path / "route.txt",
                "--ego", "0,0,0,6", "--out", tmp_path / "o") == 0


def test_plan_zero_curvature_on_curve_is_infeasible(tmp_path):
    _curving_inputs(tmp_path)
    code = _run("plan", "--maps", tmp_path / "maps.bevg", "--route", tmp_path / "route.txt",
                "--ego", "0,0,0,6", "--config", tmp_path / "straight_only.json", "--out", tmp_path / "o")
    assert code == 4


def test_plan_map_dims_mismatch(tmp_path):
    _curving_inputs(tmp_path)
    write_bevg(tmp_path / "small.bevg", np.zeros((50, 50, 44)))
    assert _run("plan", "--maps", tmp_path / "small.bevg", "--route", tmp_path / "route.txt",
                "--ego", "0,0,0,6", "--out", tmp_path / "o") == 3


def test_plan_bad_config(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"sampler": {"kappa_max": -1}}))
    assert _run("plan", SUITE / "00_straight.json", "--config", tmp_path / "bad.json",
                "--out", tmp_path) == 1
    assert _run("plan", tmp_path / "none.json", "--out", tmp_path) == 2


def test_plan_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert _run("plan", SUITE / "03_pedestrian_crossing.json", "--seed", 7, "--out", tmp_path / name) == 0
    for f in ("trajectory.csv", "costs.csv", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- learn ----------------------------------------------------------------------

def test_learn_bundled_manifest(tmp_path):
    manifest = DATA / "dataset" / "manifest.txt"
    for name in ("a", "b"):
        assert _run("learn", manifest, "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "weights.txt").read_bytes() == (tmp_path / "b" / "weights.txt").read_bytes()
    rows = (tmp_path / "a" / "loss_curve.csv").read_text().splitlines()[1:]
    losses = [float(r.split(",")[1]) for r in rows]
    assert len(losses) == 201
    assert losses[-1] < 0.1 * losses[0]


def test_learn_empty_manifest(tmp_path):
    (tmp_path / "manifest.txt").write_text("# nothing here\n")
    assert _run("learn", tmp_path / "manifest.txt", "--out", tmp_path) == 5


def test_learn_degenerate_features(tmp_path):
    # one scene whose candidates and human all have zero features
    (tmp_path / "c.json").write_text(json.dumps({
        "thresholds": {"v_target": 0.0},
        "training_sampler": {"lateral_offsets": [0.0]},
    }))
    scn = json.loads((DATA / "suite" / "00_straight.json").read_text())
    scn["ego"]["v"] = 0.0
    scn["human"] = None
    (tmp_path / "s.json").write_text(json.dumps(scn))
    traj = "x,y,theta,kappa,v,a\n" + "0.0,0.0,0.0,0.0,0.0,0.0\n" * 10
    (tmp_path / "h.csv").write_text(traj)
    (tmp_path / "manifest.txt").write_text("s.json h.csv\n")
    assert _run("learn", tmp_path / "manifest.txt", "--config", tmp_path / "c.json", "--out", tmp_path) == 5


# -- simulate -------------------------------------------------------------------

def test_simulate_empty_directory(tmp_path):
    assert _run("simulate", tmp_path, "--out", tmp_path / "o") == 2
    assert _run("simulate", tmp_path / "missing", "--out", tmp_path / "o") == 2


def test_simulate_skips_unreadable(tmp_path, caplog):
    suite = tmp_path / "suite"
    suite.mkdir()
    shutil.copy(SUITE / "00_straight.json", suite)
    shutil.copy(SUITE / "00_straight_human.csv", suite)
    (suite / "01_broken.json").write_text("{not json")
    assert _run("simulate", suite, "--episodes", 1, "--csv", "--out", tmp_path / "o") == 0
    assert "skipping unreadable scenario" in caplog.text
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert rows[0] == "scenario,seed,outcome,time,route_time"
    assert rows[1].startswith("straight,0,success,")
    (suite / "00_straight.json").write_text("[]")
    assert _run("simulate", suite, "--out", tmp_path / "o") == 3


# -- metrics --------------------------------------------------------------------

def test_metrics_grids(tmp_path, capsys):
    a = np.zeros((4, 4, 4))
    a[0, :2, :] = 1.0
    b = np.zeros((4, 4, 4))
    b[0, 1:3, :] = 1.0
    write_bevg(tmp_path / "a.bevg", a)
    write_bevg(tmp_path / "b.bevg", b)
    write_bevg(tmp_path / "c.bevg", np.roll(a, 2, axis=0))
    assert _run("metrics", tmp_path / "a.bevg", tmp_path / "a.bevg", "--csv") == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mean,1.00"
    assert _run("metrics", tmp_path / "a.bevg", tmp_path / "c.bevg", "--csv") == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mean,0.00"
    assert _run("metrics", tmp_path / "a.bevg", tmp_path / "b.bevg", "--csv") == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mean,0.33"
    write_bevg(tmp_path / "d.bevg", np.zeros((4, 5, 4)))
    assert _run("metrics", tmp_path / "a.bevg", tmp_path / "d.bevg") == 3


def test_metrics_trajectories(tmp_path, capsys):
    human = SUITE / "00_straight_human.csv"
    assert _run("metrics", human, human, "--csv") == 0
    assert capsys.readouterr().out.split() == ["l2_5s", "0.0000"]


# -- packaging ------------------------------------------------------------------

def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bevplan.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("lift", "plan", "learn", "simulate", "metrics", "bundle"):
        assert sub in out.stdout


def test_bundle_matches_shipped_data(tmp_path):
    assert _run("bundle", "--out", tmp_path) == 0
    for rel in ("suite/00_straight.json", "dataset/manifest.txt", "weights.txt", "rig.ini",
                "features/frame4_cam6.bevg"):
        assert (tmp_path / rel).read_bytes() == (DATA / rel).read_bytes(), rel
