import csv
import io
import json

import numpy as np
import pytest

from hfac import harness
from hfac.cli import main
from hfac.optimizers import Algo
from hfac.problems import OBJECTIVE_KINDS

HEADER = "step,lr,loss,grad_norm,update_rms,hamiltonian,wallclock_ns"


def config_dict(**overrides):
    data = {
        "schema": 1,
        "objective": {"kind": "diag_quadratic", "shape": [8, 6], "seed": 0},
        "optimizer": {"algo": "adam"},
        "schedule": {"kind": "constant", "lr": 0.1},
        "steps": 50,
        "seed": 0,
    }
    data.update(overrides)
    return data


def write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_dict(**overrides)))
    return path


# config parsing

def test_parse_defaults():
    cfg = harness.parse_config(config_dict())
    assert cfg.optimizer.algo is Algo.ADAM
    assert cfg.optimizer.hyper.eps == 1e-8
    assert cfg.log_every == 1


@pytest.mark.parametrize(
    "patch",
    [
        {"learning_rate": 0.1},
        {"objective": {"kind": "diag_quadratic", "shap": [2, 2]}},
        {"optimizer": {"algo": "adam", "hyper": {"beta_1": 0.9}}},
        {"schedule": {"kind": "constant", "lr": 0.1, "decay": 1}},
        {"optimizer": {"algo": "hfac", "policy": {"full_head": True}}},
    ],
)
def test_unknown_keys_rejected(patch):
    with pytest.raises(harness.ConfigError, match="unknown key"):
        harness.parse_config(config_dict(**patch))


@pytest.mark.parametrize(
    "patch",
    [
        {"schema": 2},
        {"steps": 0},
        {"log_every": 0},
        {"schedule": {"kind": "constant", "lr": -1}},
        {"schedule": {"kind": "warmup_linear", "lr": 0.1, "warmup_steps": 50}},
        {"optimizer": {"algo": "rmsprop"}},
        {"optimizer": {"algo": "adam", "hyper": {"beta1": 1.5}}},
        {"objective": {"kind": "svm"}},
    ],
)
def test_invalid_values_rejected(patch):
    with pytest.raises(harness.ConfigError):
        harness.parse_config(config_dict(**patch))


def test_missing_schema_rejected():
    data = config_dict()
    del data["schema"]
    with pytest.raises(harness.ConfigError, match="schema"):
        harness.parse_config(data)


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(harness.ConfigError):
        harness.load_config(path)


# experiments

def test_adam_converges_on_quadratic():
    cfg = harness.parse_config(config_dict(steps=500))
    result = harness.run_experiment(cfg, write=False)
    assert result.summary["final_loss"] < 1e-6


def test_csv_schema_and_summary(tmp_path):
    cfg = harness.parse_config(config_dict(steps=20, log_every=5))
    result = harness.run_experiment(cfg, output_dir=tmp_path)
    text = (tmp_path / "trajectory.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == HEADER
    rows = list(csv.DictReader(io.StringIO(text)))
    assert [int(r["step"]) for r in rows] == [5, 10, 15, 20]
    assert all(r["hamiltonian"] == "" and r["wallclock_ns"] == "" for r in rows)
    summary = json.loads((tmp_path / "summary.json").read_text())
    for key in ("final_loss", "final_grad_norm", "state_elements", "steps", "seed", "algo"):
        assert key in summary
    assert summary["state_elements"] == 96
    assert summary["final_loss"] == float(rows[-1]["loss"])
    assert result.summary == summary
    assert not list(tmp_path.glob("*.tmp"))


def test_determinism(tmp_path):
    cfg = harness.parse_config(config_dict(optimizer={"algo": "hfac"}, objective={"kind": "mlp"}, steps=200))
    a = harness.run_experiment(cfg, output_dir=tmp_path / "a")
    b = harness.run_experiment(cfg, output_dir=tmp_path / "b")
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a.csv_text == b.csv_text


def test_seed_changes_trajectory():
    a = harness.run_experiment(harness.parse_config(config_dict(seed=1)), write=False)
    b = harness.run_experiment(harness.parse_config(config_dict(seed=2)), write=False)
    assert a.csv_text != b.csv_text


@pytest.mark.parametrize("algo", ["gdm", "adafactor_m", "signfsgd", "hfac"])
def test_hamiltonian_monitor(algo):
    lr = 0.01 if algo == "gdm" else 0.05
    cfg = harness.parse_config(
        config_dict(optimizer={"algo": algo}, schedule={"kind": "constant", "lr": lr}, monitor=True, steps=30)
    )
    rows = harness.run_experiment(cfg, write=False).rows
    assert all(np.isfinite(r["hamiltonian"]) and r["hamiltonian"] >= r["loss"] for r in rows)


def test_monitor_absent_for_adam():
    cfg = harness.parse_config(config_dict(monitor=True, steps=5))
    assert all(r["hamiltonian"] is None for r in harness.run_experiment(cfg, write=False).rows)


def test_wallclock_recorded_when_requested():
    cfg = harness.parse_config(config_dict(record_wallclock=True, steps=5))
    rows = harness.run_experiment(cfg, write=False).rows
    times = [r["wallclock_ns"] for r in rows]
    assert all(isinstance(t, int) for t in times) and times == sorted(times)


def test_blowup_reports_step():
    cfg = harness.parse_config(
        config_dict(optimizer={"algo": "gdm"}, objective={"kind": "rosenbrock"}, schedule={"kind": "constant", "lr": 1.0})
    )
    with pytest.raises(harness.NumericalBlowUp) as info:
        harness.run_experiment(cfg, write=False)
    assert info.value.step >= 1
    assert "step" in str(info.value)


def test_env_overrides_output(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_DIR_ENV, str(tmp_path / "env"))
    cfg = harness.parse_config(config_dict(steps=3, output=str(tmp_path / "cfg")))
    harness.run_experiment(cfg, output_dir=tmp_path / "arg")
    assert (tmp_path / "env" / "trajectory.csv").exists()
    assert not (tmp_path / "cfg").exists() and not (tmp_path / "arg").exists()


def test_schedule_logged():
    cfg = harness.parse_config(config_dict(schedule={"kind": "cosine", "lr": 0.1}, steps=10))
    rows = harness.run_experiment(cfg, write=False).rows
    assert rows[-1]["lr"] == pytest.approx(0.0, abs=1e-17)


def test_multi_param_policies():
    cfg = harness.parse_config(
        config_dict(
            objective={"kind": "mlp"},
            optimizer={"algo": "signfsgd", "policy": [{}, {"fullhead": True}]},
            schedule={"kind": "constant", "lr": 0.01},
            steps=5,
        )
    )
    summary = harness.run_experiment(cfg, write=False).summary
    assert summary["state_elements"] == (4 + 8) + 8 * 3


@pytest.mark.parametrize("kind", OBJECTIVE_KINDS)
@pytest.mark.parametrize("algo", [a.value for a in Algo])
def test_every_optimizer_on_every_objective(algo, kind):
    cfg = harness.parse_config(
        config_dict(
            objective={"kind": kind},
            optimizer={"algo": algo},
            schedule={"kind": "constant", "lr": 1e-3},
            steps=1000,
            log_every=100,
        )
    )
    result = harness.run_experiment(cfg, write=False)
    assert np.isfinite(result.summary["final_loss"])
    assert len(result.rows) == 10


# memory report

def test_memory_report_values():
    rows = harness.memory_report([(1024, 1024), (4, 3), (1, 1)])
    get = {(r["algo"], r["shape"]): r for r in rows}
    assert get[("adam", "1024x1024")]["states"] == 2_097_152
    assert get[("hfac", "1024x1024")]["states"] == 4_096
    assert get[("adafactor_m", "4x3")]["states"] == 19
    assert get[("signfsgd", "1x1")]["states"] == 2
    factored = ["signfsgd", "lionfactor", "adafactor_nom", "adafactor_m", "hfac"]
    assert all(get[(a, "1x1")]["states"] >= 2 for a in factored)
    total = get[("hfac", "TOTAL")]
    assert total["states"] == 4096 + 14 + 4
    assert total["weights"] == 1024 * 1024 + 12 + 1
    assert total["total"] == total["weights"] + total["gradient"] + total["states"]


def test_memory_report_rendering():
    rows = harness.memory_report([(4, 3)], algos=["adam", "hfac"])
    assert harness.render_memory_csv(rows).splitlines() == [
        "algo,shape,weights,gradient,states,total",
        "adam,4x3,12,12,24,48",
        "hfac,4x3,12,12,14,38",
    ]
    lines = harness.render_memory_text(rows).splitlines()
    assert len({len(line) for line in lines}) == 1


def test_parse_shapes():
    assert harness.parse_shapes("4x3, 128X64,2×2") == [(4, 3), (128, 64), (2, 2)]
    for bad in ("", "4", "0x3", "axb"):
        with pytest.raises(ValueError):
            harness.parse_shapes(bad)
    with pytest.raises(ValueError):
        harness.memory_report([])


# descent suite

def test_descent_suite_quadratic_only():
    # h=1e-2 is left out: the H-Fac flow chatters near the minimizer at that step size.
    problems = harness.standard_descent_problems()[:1]
    reports, ok = harness.run_descent_suite(hs=(1e-3, 1e-4), n_steps=2000, problems=problems)
    assert ok
    assert len(reports) == 4 * 2 + 1
    control = reports[-1]
    assert not control.required and not control.condition_holds


def test_max_increase_shrinks_tenfold():
    problems = harness.standard_descent_problems()[:1]
    reports, _ = harness.run_descent_suite(hs=(1e-2, 1e-4), n_steps=2000, problems=problems, include_negative_control=False)
    by_kind = {}
    for r in reports:
        by_kind.setdefault(r.system, {})[r.h] = r.max_increase
    for kind, inc in by_kind.items():
        assert inc[1e-4] * 10 <= inc[1e-2] or inc[1e-2] == 0.0, kind


# CLI

def test_cli_run(tmp_path, capsys):
    path = write_config(tmp_path, steps=10)
    assert main(["run", "--config", str(path), "--output", str(tmp_path / "out")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 10 and summary["seed"] == 0
    assert (tmp_path / "out" / "trajectory.csv").read_text().startswith(HEADER + "\n")


@pytest.mark.parametrize("argv", [["--seed", "7", "run"], ["run", "--seed", "7"]])
def test_cli_seed_override(tmp_path, capsys, argv):
    path = write_config(tmp_path, steps=3)
    args = argv + ["--config", str(path), "--output", str(tmp_path / "o")]
    assert main(args) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 7


def test_cli_bad_config(tmp_path, capsys):
    path = write_config(tmp_path, typo=1)
    assert main(["run", "--config", str(path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_memory_report(capsys):
    assert main(["memory-report", "--shapes", "4x3,1024x1024", "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "hfac,1024x1024,1048576,1048576,4096,2101248" in out
    assert main(["memory-report", "--shapes", "nope"]) == 2


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--objective", "logistic", "--points", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_descent_suite_exit_code(capsys):
    assert main(["descent-suite", "--h", "1e-2", "--steps", "200"]) == 1
    out = capsys.readouterr().out
    assert "negative_control" in out and "required checks" in out
