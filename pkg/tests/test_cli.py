import numpy as np
import pytest

from lipstab.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, OUTPUT_ENV, example_config_text, main
from lipstab.config import ConfigError, format_matrix, parse_config
from lipstab.policy import Mlp, lipschitz_upper_bound
from lipstab.sim import parse_stats_csv

SMALL = """
[params]
lower = [-0.05, -0.1]
upper = [0.05, 0.1]

[polytope]
vertices = [[0.3, 0.6], [0.1962, 0.8077], [-0.3375, 0.1406], [-0.3375, -0.8523], [0.3, -0.2727]]

[synthesis]
w = 0.3
n_steps = 3

[train]
n_trajectories = 3
n_steps = 40
advantage_horizon = 5

[evaluate]
n_runs = 4
n_steps = 40
"""

ARTIFACTS = ["actor.txt", "certificate.txt", "critic.txt", "initial_gain.csv", "iterations.csv", "lqr_gain.csv",
             "sector.csv", "statistics.csv", "summary.csv", "training_log.csv", "utilities.csv"]


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def _with_certify(text: str, K, P, L) -> str:
    return text + f"\n[certify]\nK = {format_matrix(K)}\nP = {format_matrix(P)}\nL = {L!r}\n"


# configuration ---------------------------------------------------------------------------


def test_shipped_config_round_trips():
    config = parse_config(example_config_text())
    assert parse_config(config.to_text()) == config


def test_shipped_config_uses_published_training_settings():
    cfg = parse_config(example_config_text())
    assert cfg.synthesis.w == 1.1 and cfg.synthesis.n_steps == 20
    assert cfg.train.n_trajectories == 600 and cfg.evaluate.n_runs == 40


def test_round_trip_keeps_certify_section(small_config):
    text = _with_certify(SMALL, -np.eye(2), np.eye(2), 0.5)
    config = parse_config(text)
    assert config.certify.L == 0.5
    assert parse_config(config.to_text()) == config


def test_config_errors_are_collected():
    bad = SMALL.replace("advantage_horizon = 5", "advantage_horizon = 40") + "\n[bogus]\nx = 1\n"
    with pytest.raises(ConfigError) as info:
        parse_config(bad.replace("n_runs = 4", "n_runs = -1"))
    text = " | ".join(info.value.errors)
    assert "n_a < n_s" in text and "[bogus]" in text and "n_runs" in text


def test_horizon_violation_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL.replace("advantage_horizon = 5", "advantage_horizon = 40"))
    code = main(["train", "-c", str(path), "-o", str(tmp_path / "out")])
    err = capsys.readouterr().err
    assert code == EXIT_CONFIG
    assert "status: config-error" in err and "n_a < n_s" in err


def test_unreadable_config_exits_with_config_code(tmp_path, capsys):
    assert main(["synthesize", "-c", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_dimension_mismatch_is_reported(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL.replace("lower = [-0.05, -0.1]", "lower = [-0.05]").replace(
        "upper = [0.05, 0.1]", "upper = [0.05]"))
    assert main(["synthesize", "-c", str(path)]) == EXIT_CONFIG
    assert "expected 2 bounds" in capsys.readouterr().err


def test_print_config_emits_parseable_text(capsys):
    assert main(["synthesize", "--print-config"]) == EXIT_OK
    assert parse_config(capsys.readouterr().out) == parse_config(example_config_text())


# commands --------------------------------------------------------------------------------


def test_certify_rejects_unstable_gain(tmp_path, capsys):
    path = tmp_path / "cert.ini"
    path.write_text(_with_certify(SMALL, 2.0 * np.eye(2), np.eye(2), 0.1))
    code = main(["certify", "-c", str(path), "-o", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert code == EXIT_INFEASIBLE
    assert "status: infeasible" in out and "reason: LMI infeasible" in out


def test_certify_rejects_indefinite_p(tmp_path, capsys):
    path = tmp_path / "cert.ini"
    path.write_text(_with_certify(SMALL, -np.eye(2), np.diag([1.0, -1.0]), 0.1))
    assert main(["certify", "-c", str(path), "-o", str(tmp_path / "out")]) == EXIT_INFEASIBLE
    assert "P not PD" in capsys.readouterr().out


def test_certify_without_gain_is_a_config_error(small_config, tmp_path):
    assert main(["certify", "-c", str(small_config), "-o", str(tmp_path / "out")]) == EXIT_CONFIG


def test_certify_accepts_synthesized_certificate(tmp_path, synthesis_result, capsys):
    res = synthesis_result
    path = tmp_path / "cert.ini"
    path.write_text(_with_certify(SMALL, res.K, res.P, res.L))
    code = main(["certify", "-c", str(path), "-o", str(tmp_path / "out")])
    assert code == EXIT_OK, capsys.readouterr().out
    assert (tmp_path / "out" / "certificate.txt").exists()


def test_bound_sector_writes_csv(small_config, tmp_path):
    assert main(["bound-sector", "-c", str(small_config), "-o", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "sector.csv").read_text().strip()


def test_environment_overrides_config_directory(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "from_env"))
    assert main(["bound-sector", "-c", str(small_config)]) == EXIT_OK
    assert (tmp_path / "from_env" / "sector.csv").exists()


def test_flag_overrides_environment(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "from_env"))
    assert main(["bound-sector", "-c", str(small_config), "-o", str(tmp_path / "from_flag")]) == EXIT_OK
    assert (tmp_path / "from_flag" / "sector.csv").exists()
    assert not (tmp_path / "from_env").exists()


def test_pipeline_is_byte_identical_across_runs(small_config, tmp_path):
    for name in ("one", "two"):
        assert main(["reproduce-example", "-c", str(small_config), "-o", str(tmp_path / name)]) == EXIT_OK
    for artifact in ARTIFACTS:
        assert (tmp_path / "one" / artifact).read_bytes() == (tmp_path / "two" / artifact).read_bytes(), artifact


def test_pipeline_artifacts_are_consistent(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["reproduce-example", "-c", str(small_config), "-o", str(out)]) == EXIT_OK
    summary = dict(line.split(",") for line in (out / "summary.csv").read_text().splitlines()[1:])
    assert float(summary["L_star"]) == 0.3
    actor = Mlp.from_text((out / "actor.txt").read_text())
    assert lipschitz_upper_bound(actor) <= 0.3
    stats = parse_stats_csv((out / "statistics.csv").read_text())
    assert set(stats) == {"lqr", "nominal", "trained"}
    assert float(summary["median_trained"]) == stats["trained"]["median"]


def test_evaluate_reuses_existing_artifacts(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["train", "-c", str(small_config), "-o", str(out)]) == EXIT_OK
    actor_text = (out / "actor.txt").read_text()
    assert main(["evaluate", "-c", str(small_config), "-o", str(out)]) == EXIT_OK
    assert (out / "actor.txt").read_text() == actor_text
    assert (out / "statistics.csv").exists()
