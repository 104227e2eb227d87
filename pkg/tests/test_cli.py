import json
import math
import re

import numpy as np
import pytest

from regrade.cli import EXIT_GEOMETRY, EXIT_OK, EXIT_PARSE, main, parse_site, ConfigError
from regrade.gridmap import HeightMap, compute_metrics, save_heightmap
from regrade.render import read_ppm
from regrade.sim import make_crater_site

import oracles


@pytest.fixture
def maps(tmp_path):
    site = make_crater_site(craters=[(2.5, 2.5, 1.0)])
    crater = tmp_path / "crater.csv"
    save_heightmap(site.truth, crater)
    flat = tmp_path / "flat.csv"
    save_heightmap(HeightMap.flat(20, 20, 0.1), flat)
    X = np.arange(30) * 0.1
    ramp = tmp_path / "ramp.csv"
    save_heightmap(HeightMap.from_array(np.tile(X * math.tan(math.radians(1)), (30, 1)), 0.1), ramp)
    return {"crater": crater, "flat": flat, "ramp": ramp, "site": site, "dir": tmp_path}


def test_plan_nodes_json(tmp_path, capsys):
    p = tmp_path / "n.json"
    p.write_text(json.dumps(oracles.FOUR_NODE))
    out = tmp_path / "plan.json"
    assert main(["plan", "--nodes", str(p), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    obj = float(re.search(r"objective ([0-9.]+)", text).group(1))
    assert abs(obj - 1.680712) < 1e-6
    doc = json.loads(out.read_text())
    assert len(doc["moves"]) == 3 and len(doc["triplets"]) == 3


def test_plan_live_equals_design(maps, capsys):
    out = maps["dir"] / "p.json"
    assert main(["plan", "--live", str(maps["flat"]), "--design", str(maps["flat"]),
                 "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["moves"] == []


def test_plan_crater_high_to_low(maps):
    out = maps["dir"] / "p.json"
    assert main(["plan", "--live", str(maps["crater"]), "--design", "flat:0",
                 "--out", str(out)]) == EXIT_OK
    z = maps["site"].truth
    for mv in json.loads(out.read_text())["moves"]:
        r0, c0 = z.world_to_cell(*mv["src"])
        r1, c1 = z.world_to_cell(*mv["dst"])
        assert z.heights[r0, c0] > z.heights[r1, c1]


def test_debug_tableau(tmp_path, capsys):
    p = tmp_path / "n.json"
    p.write_text(json.dumps(oracles.FOUR_NODE))
    assert main(["plan", "--nodes", str(p), "--solver", "simplex", "--debug-tableau"]) == EXIT_OK
    assert "entering column" in capsys.readouterr().err


def test_geometry_mismatch_exit(maps, capsys):
    assert main(["plan", "--live", str(maps["crater"]), "--design", str(maps["flat"])]) == EXIT_GEOMETRY
    assert "error" in capsys.readouterr().err


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("2,2,0.1\n0,0\n")
    assert main(["metrics", "--map", str(bad)]) == EXIT_PARSE
    assert "line" in capsys.readouterr().err


def test_config_precedence(tmp_path, maps, capsys, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grade_spec": 0.5}))
    main(["--config", str(cfg), "metrics", "--map", str(maps["ramp"])])
    strict = json.loads(capsys.readouterr().out)
    main(["--config", str(cfg), "metrics", "--map", str(maps["ramp"]), "--grade-spec", "2"])
    loose = json.loads(capsys.readouterr().out)
    assert strict["area_oos"] > 0 and loose["area_oos"] == 0
    monkeypatch.setenv("REGRADE_CONFIG", str(cfg))
    main(["metrics", "--map", str(maps["ramp"])])
    assert json.loads(capsys.readouterr().out)["area_oos"] == strict["area_oos"]


def test_unknown_config_key(tmp_path, maps):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grade_specs": 0.5}))
    assert main(["--config", str(cfg), "metrics", "--map", str(maps["flat"])]) == EXIT_PARSE


def test_metrics(maps, capsys):
    main(["metrics", "--map", str(maps["flat"])])
    d = json.loads(capsys.readouterr().out)
    assert (d["grade"], d["smoothness"], d["area_oos"]) == (0.0, 0.0, 0.0)
    main(["metrics", "--map", str(maps["ramp"])])
    assert json.loads(capsys.readouterr().out)["grade"] == pytest.approx(1.0, abs=1e-6)
    main(["metrics", "--map", str(maps["crater"])])
    d = json.loads(capsys.readouterr().out)
    assert d["area_oos"] > 0
    assert d["area_oos"] == pytest.approx(compute_metrics(maps["site"].truth).area_oos)


def test_render_flat_single_color(maps, capsys):
    out = maps["dir"] / "f.ppm"
    assert main(["render", "--map", str(maps["flat"]), "--out", str(out)]) == EXIT_OK
    rgb, legend = read_ppm(out)
    assert len(np.unique(rgb.reshape(-1, 3), axis=0)) == 1
    assert legend == {"min": 0.0, "max": 0.0}


def test_render_arrow_count(maps, capsys):
    plan = maps["dir"] / "p.json"
    main(["plan", "--live", str(maps["crater"]), "--design", "flat:0", "--out", str(plan)])
    n = len(json.loads(plan.read_text())["moves"])
    svg = maps["dir"] / "c.svg"
    capsys.readouterr()
    assert main(["render", "--map", str(maps["crater"]), "--plan", str(plan), "--out", str(svg)]) == 0
    assert svg.read_text().count('class="move"') == n
    assert f"arrows {n}" in capsys.readouterr().out
    empty = maps["dir"] / "e.svg"
    main(["render", "--map", str(maps["crater"]), "--out", str(empty)])
    assert empty.read_text().count('class="move"') == 0


def test_render_crater_radial(maps):
    out = maps["dir"] / "c.ppm"
    main(["render", "--map", str(maps["crater"]), "--out", str(out), "--pixel-scale", "1"])
    rgb, legend = read_ppm(out)
    assert legend["min"] < 0 < legend["max"]
    # crater center is the bluest pixel
    center = rgb[50, 50].astype(int)
    assert center[2] > center[0]


def test_render_bad_extension(maps):
    with pytest.raises(SystemExit) as exc:
        main(["render", "--map", str(maps["flat"]), "--out", str(maps["dir"] / "x.png")])
    assert exc.value.code == 2


def test_parse_site():
    assert parse_site("crater")["craters"] == [[2.5, 2.5, 1.0]]
    s = parse_site("6x4@0.1:2,2,1;4.5,2,0.5")
    assert (s["width"], s["height"], s["resolution"]) == (6.0, 4.0, 0.1)
    assert len(s["craters"]) == 2
    with pytest.raises(ConfigError):
        parse_site("6x4@0.1:2,2")


def test_simulate_flat(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["simulate", "--site", "flat", "--seed", "1", "--out", str(out)]) == EXIT_OK
    d = json.loads(out.read_text())
    assert d["before"]["area_oos"] == 0 and d["after"]["area_oos"] == 0


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["simulate", "--site", "crater", "--seed", "1", "--budget", "2", "--out", str(p)])
    assert a.read_text() == b.read_text()


def test_simulate_episodes(tmp_path, capsys):
    out = tmp_path / "r.json"
    main(["simulate", "--site", "flat", "--episodes", "2", "--out", str(out)])
    d = json.loads(out.read_text())
    assert [e["seed"] for e in d["episodes"]] == [0, 1]


def test_plan_byte_deterministic(maps):
    a, b = maps["dir"] / "a.json", maps["dir"] / "b.json"
    for p in (a, b):
        main(["plan", "--live", str(maps["crater"]), "--design", "flat:0", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()
