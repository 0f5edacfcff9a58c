import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from causalstabsel import config
from causalstabsel.bench import read_results_csv
from causalstabsel.cli import main
from causalstabsel.core import Dataset, write_csv

SVG = "{http://www.w3.org/2000/svg}"
SMALL_SIM = ["--n", "200", "--p", "10", "--trials", "2", "--alphas", "0.1", "0.3"]


@pytest.fixture(scope="module")
def planted_csv(tmp_path_factory):
    # outcomes carry tau(x) = 2 x1
    g = np.random.default_rng(0)
    n, p = 600, 8
    X = g.normal(size=(n, p))
    z = (g.random(n) < 0.5).astype(int)
    y = X[:, 3] + z * 2 * X[:, 1] + 0.5 * g.normal(size=n)
    path = tmp_path_factory.mktemp("data") / "planted.csv"
    write_csv(Dataset(X, y, z, tuple(f"x{j}" for j in range(p))), path)
    return path


def _select(path, out, *extra):
    return main(["-q", "select", str(path), "--B", "20", "--propensity", "0.5", "--out", str(out), *extra])


def test_select_finds_planted_modifier(planted_csv, tmp_path, capsys):
    assert _select(planted_csv, tmp_path, "--target-efp", "1") == 0
    with (tmp_path / "efp_report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    chosen = {r["name"] for r in rows if r["selected"] == "1"}
    assert "x1" in chosen
    assert rows[0]["name"] == "x1"
    assert "x1" in capsys.readouterr().out


def test_select_fdr_zero_is_empty(planted_csv, tmp_path):
    assert _select(planted_csv, tmp_path, "--fdr", "0") == 0
    with (tmp_path / "efp_report.csv").open() as fh:
        assert all(r["selected"] == "0" for r in csv.DictReader(fh))


def test_select_is_deterministic(planted_csv, tmp_path):
    _select(planted_csv, tmp_path / "a", "--fdr", "0.1", "--seed", "3")
    _select(planted_csv, tmp_path / "b", "--fdr", "0.1", "--seed", "3")
    assert (tmp_path / "a" / "efp_report.csv").read_bytes() == (tmp_path / "b" / "efp_report.csv").read_bytes()


@pytest.mark.parametrize("args", [
    ["--target-efp", "1", "--treatment", "w"],
    [],
    ["--target-efp", "1", "--fdr", "0.1"],
    ["--fdr", "0.9"],
    ["--target-efp", "1", "--propensity", "2"],
])
def test_select_usage_errors_exit_2(planted_csv, tmp_path, args):
    # argparse exits by itself; checks made after parsing return the code
    try:
        code = _select(planted_csv, tmp_path, *args)
    except SystemExit as exc:
        code = exc.code
    assert code == 2


def test_select_missing_file_exit_2(tmp_path):
    assert main(["-q", "select", str(tmp_path / "nope.csv"), "--fdr", "0.1"]) == 2


def test_select_runtime_error_exit_1(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("a,y,z\n1,1,1\n2,2,0\n3,3,1\n4,4,0\n")
    assert main(["-q", "select", str(path), "--fdr", "0.1", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("cmd", ["select", "simulate", "validate", "plot"])
def test_help_for_every_subcommand(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_simulate_byte_identical_and_svg_lossless(tmp_path):
    args = ["-q", "simulate", "--preset", "paper-linear-default", *SMALL_SIM, "--methods", "causalstabsel",
            "bh", "--svg", "--seed", "5"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    rows = read_results_csv(tmp_path / "a" / "results.csv")
    assert {(r.method, r.alpha) for r in rows} == {(m, al) for m in ("causalstabsel", "bh") for al in (0.1, 0.3)}

    # every plotted value is recoverable from the SVG exactly
    assert main(["-q", "plot", str(tmp_path / "a" / "results.csv"), "--out", str(tmp_path / "re.svg")]) == 0
    for svg in (tmp_path / "a" / "curves.svg", tmp_path / "re.svg"):
        panels = ET.parse(svg).getroot().findall(f"{SVG}g")
        tpr = {(c.get("data-method"), float(c.get("data-alpha"))): float(c.get("data-value"))
               for c in panels[0].iter(f"{SVG}circle")}
        fdr = {(c.get("data-method"), float(c.get("data-alpha"))): float(c.get("data-value"))
               for c in panels[1].iter(f"{SVG}circle")}
        for r in rows:
            assert tpr[(r.method, r.alpha)] == r.mean_tpr
            assert fdr[(r.method, r.alpha)] == r.mean_fdr
        assert any(line.get("stroke-dasharray") for line in panels[1].iter(f"{SVG}line"))


def test_validate_variance_bound_passes(tmp_path):
    code = main(["-q", "validate", "--check", "variance-bound", "--n", "200", "--replications", "50", "--B", "3",
                 "--m", "20", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "variance_bound.csv").exists()


def test_validate_bias_decay_true_cate(tmp_path):
    cfg = tmp_path / "v.toml"
    cfg.write_text('[validate]\ncheck = "bias-decay"\nns = [200, 400]\nB = 4\nm = 20\nreference_B = 50\n'
                   'replications = 20\ngrid_size = 6\ncate = "true"\n[sim]\np = 10\nn_modifiers = 2\n'
                   'n_prognostic = 2\n')
    assert main(["-q", "validate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    with (tmp_path / "bias_decay.csv").open() as fh:
        gaps = [float(r["gap_lambda_min"]) for r in csv.DictReader(fh)]
    assert max(gaps) < 0.15


def test_validate_efp_calibration_small(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[validate]\ncheck = "efp-calibration"\ntrials = 2\n[sim]\nn = 200\np = 10\n'
                   'n_modifiers = 2\nn_prognostic = 2\n')
    code = main(["-q", "validate", "--config", str(cfg), "--out", str(tmp_path)])
    assert code in (0, 1)
    assert (tmp_path / "efp_calibration.csv").read_text().startswith("t,mean_fp,se_fp,limit,passed,trials")


def test_config_round_trip_and_precedence(tmp_path, capsys):
    for preset in sorted(config.PRESETS):
        cfg = config.resolve(preset=preset)
        assert config.parse(config.dumps(cfg)) == cfg
    path = tmp_path / "c.toml"
    path.write_text("[select]\nB = 7\ndelta = 3\n")
    cfg = config.resolve(path, "application", {"select": {"B": 9}})
    assert cfg["select"]["B"] == 9 and cfg["select"]["delta"] == 3.0 and cfg["select"]["m_rule"] == "quarter"
    assert main(["select", "x.csv", "--preset", "application", "--config", str(path), "--dump-config"]) == 0
    dumped = config.parse(capsys.readouterr().out)
    assert dumped["select"]["B"] == 7 and dumped["select"]["fdr"] == 0.1


@pytest.mark.parametrize("text", ["[select]\nbogus = 1\n", "[nowhere]\nB = 1\n", "[select]\nB = \"many\"\n",
                                  "[select]\nwinsorize = 1\n", "[select\n"])
def test_config_rejects_bad_files(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(config.ConfigError):
        config.resolve(path)
    assert main(["-q", "simulate", "--config", str(path), "--dump-config"]) == 2
