import json

import pytest

from egfl_lab import artifacts, cli
from egfl_lab.cli import main
from egfl_lab.config import SEED_ENV, load_config
from egfl_lab.theory import BOUND_REPORT_HEADER

DESK_CONFIG = """\
K = 2
D = 120
T = 2
L = 2
R_lambda = 10
oracle_steps = 4
ig_steps = 6
hidden = 5
threads = 2
variants = EGFL-JS, FL-vanilla
"""


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _gen(out, seed="4"):
    return main(["gen-data", "--seed", seed, "--k", "2", "--n", "3", "--d", "120", "--out", str(out)])


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "desk.conf"
    conf.write_text(DESK_CONFIG)
    assert _gen(root / "data") == 0
    code = main(["train", "--config", str(conf), "--data", str(root / "data"), "--out", str(root / "run")])
    assert code == 0
    return root


def test_gen_data_is_reproducible(tmp_path):
    """Test the same seed writes byte-identical datasets"""
    assert _gen(tmp_path / "a") == 0
    assert _gen(tmp_path / "b") == 0
    assert artifacts.hash_tree(tmp_path / "a") == artifacts.hash_tree(tmp_path / "b")
    assert len(list((tmp_path / "a").glob("bs*_*.csv"))) == 6


def test_gen_data_rejects_zero_base_stations(tmp_path, capsys):
    """Test --k 0 is a usage error"""
    assert main(["gen-data", "--k", "0", "--out", str(tmp_path)]) == 2
    assert "must be >= 1" in capsys.readouterr().err


def test_train_without_data(tmp_path, capsys):
    """Test a missing dataset directory exits 2 and names the path"""
    missing = tmp_path / "nowhere"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "run")]) == 2
    error = _error(capsys)
    assert error["exit_code"] == 2
    assert str(missing) in error["message"]


def test_train_with_bad_gamma(tmp_path, capsys):
    """Test an out-of-range recall target exits 2 naming gamma"""
    assert _gen(tmp_path / "data") == 0
    conf = tmp_path / "bad.conf"
    conf.write_text("K = 2\nD = 120\ngamma = 0.8, 1.5, 0.8\n")
    code = main(["train", "--config", str(conf), "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run")])
    assert code == 2
    error = _error(capsys)
    assert error["error"] == "ConfigError"
    assert "gamma" in error["message"]


def test_train_writes_run_manifest(desk_run):
    """Test the run manifest echoes the config and hashes every artifact"""
    manifest = artifacts.read_json(desk_run / "run" / "manifest.json")
    assert manifest["command"] == "train"
    assert manifest["config"]["K"] == 2
    assert manifest["data_seed"] == 4
    assert "EGFL-JS/metrics.json" in manifest["artifacts"]


def test_train_echoes_a_loadable_config(desk_run):
    """Test the run's config echo loads back as the config that was used"""
    echoed = load_config(desk_run / "run" / "config.conf")
    manifest = artifacts.read_json(desk_run / "run" / "manifest.json")
    assert echoed.to_dict() == manifest["config"]
    assert echoed.variants == ("EGFL-JS", "FL-vanilla")
    assert "config.conf" in manifest["artifacts"]


def test_train_with_malformed_manifest(tmp_path, capsys):
    """Test a dataset manifest without sizes exits 2 as a parse error"""
    data = tmp_path / "data"
    data.mkdir()
    (data / "manifest.json").write_text('{"kind": "dataset"}')
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "run")]) == 2
    error = _error(capsys)
    assert error["error"] == "DataParseError"
    assert "manifest lacks" in error["message"]


def test_unexpected_failure_exits_one(tmp_path, capsys, monkeypatch):
    """Test an exception outside the known families still exits 1 with a JSON error"""
    def explode(*args, **kwargs):
        raise RuntimeError("disk vanished")
    monkeypatch.setattr(cli.theory, "write_bound_report", explode)
    assert main(["bound", "--run", str(tmp_path)]) == 1
    error = _error(capsys)
    assert (error["error"], error["exit_code"]) == ("RuntimeError", 1)
    assert error["message"] == "disk vanished"


def test_gen_data_seed_from_environment(tmp_path, monkeypatch):
    """Test gen-data without --seed follows EGFL_SEED"""
    monkeypatch.setenv(SEED_ENV, "4")
    assert main(["gen-data", "--k", "2", "--n", "3", "--d", "120", "--out", str(tmp_path / "env")]) == 0
    assert _gen(tmp_path / "flag") == 0
    assert artifacts.hash_tree(tmp_path / "env") == artifacts.hash_tree(tmp_path / "flag")


def test_gen_data_rejects_bad_seed_environment(tmp_path, capsys, monkeypatch):
    """Test a non-integer EGFL_SEED is a config error"""
    monkeypatch.setenv(SEED_ENV, "seven")
    assert main(["gen-data", "--k", "2", "--out", str(tmp_path)]) == 2
    assert _error(capsys)["error"] == "ConfigError"


def test_gen_data_logs_slice_descriptions(tmp_path, caplog):
    """Test gen-data names each slice with its description and drop rate"""
    with caplog.at_level("INFO", logger="egfl_lab.cli"):
        assert _gen(tmp_path) == 0
    assert "uRLLC - Ultra-Reliable Low-Latency Communications: drop rate" in caplog.text


def test_report_loss_figure(desk_run):
    """Test the loss figure has one row per round, slice and variant"""
    assert main(["report", "--run", str(desk_run / "run"), "--figure", "loss"]) == 0
    rows = artifacts.read_csv_dicts(desk_run / "run" / "figures" / "loss.csv")
    assert len(rows) == 2 * 3 * 2
    assert (desk_run / "run" / "figures" / "manifest.json").is_file()


def test_report_rejects_unknown_figure(desk_run):
    """Test --figure only accepts known figures"""
    assert main(["report", "--run", str(desk_run / "run"), "--figure", "pie"]) == 2


def test_bound_report(desk_run):
    """Test the bound is zero at eps = 0 and non-decreasing along the grid"""
    code = main(["bound", "--run", str(desk_run / "run"), "--epsilon-grid", "0,0.05,0.5,1"])
    assert code == 0
    rows = artifacts.read_csv_dicts(desk_run / "run" / "bound" / "bound_report.csv")
    assert list(rows[0]) == list(BOUND_REPORT_HEADER)
    assert len(rows) == 2 * 3 * 4
    curves = {}
    for r in rows:
        curves.setdefault((r["variant"], r["slice"]), []).append(
            (float(r["epsilon"]), float(r["delta_printed"]), float(r["delta_alt_sign"])))
    for points in curves.values():
        assert points[0][1:] == (0.0, 0.0)
        for (_, a, b), (_, c, d) in zip(points, points[1:]):
            assert c >= a - 1e-15 and d >= b - 1e-15
        assert all(0.0 <= v <= 1.0 for p in points for v in p[1:])


def test_bound_without_run(tmp_path, capsys):
    """Test a missing run directory exits 2"""
    assert main(["bound", "--run", str(tmp_path / "missing")]) == 2
    assert _error(capsys)["error"] == "FileNotFoundError"


def test_version_flag(capsys):
    """Test --version prints the package version"""
    assert main(["--version"]) == 0
    assert "egfl_lab" in capsys.readouterr().out


def _pipeline(root, conf):
    assert _gen(root / "data", seed="12") == 0
    assert main(["train", "--config", str(conf), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    for figure in ("loss", "correlation"):
        assert main(["report", "--run", str(root / "run"), "--figure", figure]) == 0
    assert main(["bound", "--run", str(root / "run")]) == 0


def test_pipeline_is_byte_identical(tmp_path):
    """Test two full pipelines with one seed write identical files"""
    conf = tmp_path / "quick.conf"
    conf.write_text(DESK_CONFIG.replace("T = 2", "T = 1").replace("L = 2", "L = 1"))
    _pipeline(tmp_path / "a", conf)
    _pipeline(tmp_path / "b", conf)
    first = artifacts.hash_tree(tmp_path / "a", exclude=())
    assert first == artifacts.hash_tree(tmp_path / "b", exclude=())
    assert "run/bound/bound_report.csv" in first
