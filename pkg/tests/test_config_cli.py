import csv
import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
import yaml

from logitn_gp.cli import build_design, cmd_summarize, load_data, main
from logitn_gp.config import ConfigError, RunConfig, dump_config, load_config, validate


def _write_cfg(path, d):
    path.write_text(yaml.safe_dump(d))
    return path


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = _write_cfg(root / "sim.yaml", {"seed": 5, "simulate": {"T": 80}})
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root / "data"


def _fit_cfg(tmp_path, data_path, **chain):
    ch = {"K": 3, "m": 3, "iters": 120, "burnin": 40, "thin": 4}
    ch.update(chain)
    return _write_cfg(tmp_path / "fit.yaml", {
        "seed": 9, "data": {"path": str(data_path)}, "chain": ch,
        "reports": {"r_points": 20, "theta_points": 36, "mc_draws": 10, "max_draws": 10, "lag_points": 5},
    })


# configuration ---------------------------------------------------------------

def test_default_config_round_trip(tmp_path):
    cfg = RunConfig()
    assert cfg.chain.iters == 1_000_000 and cfg.chain.burnin == 70_000 and cfg.chain.thin == 6
    assert cfg.priors.decay_lower == 0.3 and cfg.priors.decay_upper == 6.0
    p = tmp_path / "c.yaml"
    dump_config(cfg, p)
    assert load_config(p) == cfg
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert load_config(None) == cfg


def test_empty_file_is_default(tmp_path):
    p = tmp_path / "e.yaml"
    p.write_text("")
    assert load_config(p) == RunConfig()


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"chain": {"K": 3, "colour": "red"}},
    {"chain": [1, 2]},
    [1, 2],
])
def test_unknown_or_malformed_keys(tmp_path, bad):
    p = _write_cfg(tmp_path / "b.yaml", bad)
    with pytest.raises(ConfigError):
        load_config(p)


def test_malformed_yaml(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("chain: [1,\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


@pytest.mark.parametrize("patch,command", [
    ({"chain": {"K": 1}}, "simulate"),
    ({"chain": {"iters": 10, "burnin": 20}}, "fit"),
    ({"chain": {"thin": 0}}, "fit"),
    ({"seed": -1}, "fit"),
    ({"simulate": {"T": 0}}, "simulate"),
    ({"simulate": {"beta": [1.0]}}, "simulate"),
    ({"priors": {"decay_lower": 5.0, "decay_upper": 1.0}}, "fit"),
    ({"design": {"kind": "spline"}}, "fit"),
    ({"design": {"kind": "windows"}}, "fit"),
    ({"design": {"kind": "windows", "windows": [[3, 1]]}}, "fit"),
    ({"data": {"format": "parquet"}}, "fit"),
    ({"select": {"K_list": []}}, "select"),
    ({"select": {"K_list": [1, 3]}}, "select"),
    ({"reports": {"quantiles": [1.5]}}, "fit"),
])
def test_validation_rejects(tmp_path, sim_dir, patch, command):
    d = {"data": {"path": str(sim_dir / "data.csv")}}
    for k, v in patch.items():
        d[k] = {**d.get(k, {}), **v} if isinstance(v, dict) else v
    cfg = RunConfig.from_dict(d)
    with pytest.raises(ConfigError):
        validate(cfg, command)


def test_validation_missing_data(tmp_path):
    with pytest.raises(ConfigError, match="data.path"):
        validate(RunConfig(), "fit")
    with pytest.raises(ConfigError, match="not readable"):
        validate(RunConfig.from_dict({"data": {"path": str(tmp_path / "x.csv")}}), "fit")


# simulate --------------------------------------------------------------------

def test_simulate_outputs(sim_dir):
    names = sorted(p.name for p in sim_dir.iterdir())
    assert names == ["data.csv", "manifest.json", "truth.json"]
    with open(sim_dir / "data.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["grid_index", "time", "y1", "y2", "step_length", "turning_angle", "observed"]
    assert len(rows) == 81
    truth = json.loads((sim_dir / "truth.json").read_text())
    assert truth["K"] == 3 and len(truth["z"]) == 80
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["seed"] == 5 and set(man["files"]) == {"data.csv", "truth.json"}


def test_simulate_deterministic(tmp_path, sim_dir):
    cfg = _write_cfg(tmp_path / "sim.yaml", {"seed": 5, "simulate": {"T": 80}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "data.csv").read_bytes() == (sim_dir / "data.csv").read_bytes()


def test_out_dir_requires_force(tmp_path, sim_dir, capsys):
    cfg = _write_cfg(tmp_path / "sim.yaml", {"seed": 5, "simulate": {"T": 20}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    before = (out / "data.csv").read_bytes()
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "6"]) == 2
    assert "--force" in capsys.readouterr().err
    assert (out / "data.csv").read_bytes() == before
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "6", "--force"]) == 0
    assert (out / "data.csv").read_bytes() != before


def test_invalid_config_writes_nothing(tmp_path):
    cfg = _write_cfg(tmp_path / "bad.yaml", {"chain": {"K": 1}})
    out = tmp_path / "nothing"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_dump_config(capsys):
    assert main(["fit", "--dump-config", "--seed", "3"]) == 0
    d = yaml.safe_load(capsys.readouterr().out)
    assert d["seed"] == 3 and d["chain"]["K"] == 3


# fit / summarize ---------------------------------------------------------------

def test_fit_outputs_and_summarize(tmp_path, sim_dir, capsys):
    cfg = _fit_cfg(tmp_path, sim_dir / "data.csv")
    out = tmp_path / "run"
    assert main(["fit", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    names = {p.name for p in out.iterdir()}
    assert names == {"samples.csv", "samples_relabeled.csv", "prob_timeseries.csv", "angle_density.csv",
                     "step_density.csv", "logratio_curves.csv", "icl.json", "index.json", "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["n_retained"] == 20 and 0 <= man["acceptance_rate"] <= 1
    assert man["timing"]["ms_per_iteration"] > 0
    with open(out / "samples.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "xi.1.1" and header[-1] == "loglik"
    with open(out / "logratio_curves.csv") as fh:
        assert next(csv.reader(fh))[:4] == ["lag", "rho.22.11.mean", "rho.22.11.lower", "rho.22.11.upper"]
    capsys.readouterr()
    assert main(["summarize", str(out)]) == 0
    text = capsys.readouterr().out
    lines = text.strip().splitlines()
    assert lines[0].split() == ["parameter", "mean", "2.5%", "97.5%"]
    assert len(lines) == 1 + len(header) - 1
    assert any(l.startswith("Sigma.11") for l in lines)


def test_fit_progress_to_stderr(tmp_path, sim_dir, capsys):
    cfg = _fit_cfg(tmp_path, sim_dir / "data.csv", iters=100, burnin=50, thin=5)
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    err = capsys.readouterr().err
    assert err.count("iteration") == 100 and "100% iteration 100/100" in err


def test_fit_deterministic_samples(tmp_path, sim_dir):
    cfg = _fit_cfg(tmp_path, sim_dir / "data.csv")
    for name in ("a", "b"):
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("samples.csv", "prob_timeseries.csv", "angle_density.csv", "step_density.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_fit_bad_data_exit_2(tmp_path):
    bad = tmp_path / "data.csv"
    bad.write_text("a,b\n1,2\n")
    cfg = _fit_cfg(tmp_path, bad)
    out = tmp_path / "r"
    assert main(["fit", "--config", str(cfg), "--out", str(out), "--quiet"]) == 2
    assert not out.exists()


def test_summarize_missing_run(tmp_path):
    assert main(["summarize", str(tmp_path)]) == 2
    with pytest.raises(ValueError):
        cmd_summarize(tmp_path)


# select ------------------------------------------------------------------------

def test_select(tmp_path, sim_dir):
    cfg = _write_cfg(tmp_path / "sel.yaml", {
        "seed": 1, "data": {"path": str(sim_dir / "data.csv")},
        "chain": {"iters": 60, "burnin": 20, "thin": 4},
        "select": {"K_list": [2, 3], "m_list": [1, 3]},
    })
    out = tmp_path / "sel"
    assert main(["select", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "icl_table.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["K"], r["m"]) for r in rows] == [("2", "1"), ("2", "3"), ("3", "1"), ("3", "3")]
    assert sum(int(r["selected"]) for r in rows) == 1
    best = min(rows, key=lambda r: float(r["icl"]))
    assert best["selected"] == "1" and all(r["status"] == "ok" for r in rows)
    man = json.loads((out / "manifest.json").read_text())
    assert man["selected"]["K"] == int(best["K"])


# data loading and designs ------------------------------------------------------

def _track_file(tmp_path, n=60):
    t0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
    rng = np.random.default_rng(0)
    xy = np.cumsum(rng.normal(size=(n, 2)), axis=0)
    lines = ["timestamp,x,y"]
    for i in range(n):
        if i in (20, 21):
            continue
        ts = (t0 + timedelta(minutes=30 * i)).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"{ts},{xy[i, 0]:.6f},{xy[i, 1]:.6f}")
    p = tmp_path / "track.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_load_track_data(tmp_path):
    cfg = RunConfig.from_dict({"data": {"path": str(_track_file(tmp_path)), "format": "track"}})
    data, idx = load_data(cfg)
    assert data.n == 58 and data.has_missing_coords
    np.testing.assert_array_equal(idx[:2], [1, 2])
    np.testing.assert_allclose(np.diff(data.times), 1 / 48)


def test_fit_on_track(tmp_path):
    track = _track_file(tmp_path)
    cfg = _write_cfg(tmp_path / "t.yaml", {
        "data": {"path": str(track), "format": "track"}, "design": {"kind": "intercept"},
        "chain": {"K": 2, "m": 2, "iters": 40, "burnin": 20, "thin": 2},
        "reports": {"r_points": 10, "theta_points": 12, "mc_draws": 5, "max_draws": 5, "lag_points": 3},
    })
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "tr"), "--quiet"]) == 0


def test_designs(tmp_path, sim_dir):
    base = {"data": {"path": str(sim_dir / "data.csv")}}
    cfg = RunConfig.from_dict(base)
    data, idx = load_data(cfg)
    X = build_design(cfg, data, idx)
    np.testing.assert_allclose(X[:, 1], data.times / data.times.max())
    cfg = RunConfig.from_dict({**base, "design": {"kind": "windows", "windows": [[0, 5], [10, 15]]}})
    X = build_design(cfg, data, idx)
    assert X.shape == (80, 2) and X[:, 0].sum() == 20 and X[:, 1].sum() == 21  # windows are closed intervals
    cov = tmp_path / "cov.csv"
    cov.write_text("grid_index,a,b\n" + "".join(f"{i},{i},1\n" for i in range(1, 81)))
    cfg = RunConfig.from_dict({**base, "design": {"kind": "custom", "covariate_path": str(cov)}})
    X = build_design(cfg, data, idx)
    np.testing.assert_array_equal(X[:, 0], np.arange(1, 81))
    cov.write_text("grid_index,a\n1,0\n")
    with pytest.raises(ValueError, match="grid index 2"):
        build_design(cfg, data, idx)
