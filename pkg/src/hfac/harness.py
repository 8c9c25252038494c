"""Experiment runner: config parsing, trajectory logging, memory and descent reports."""

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hamiltonian as ham
from .matrix import rms
from .optimizers import Algo, HyperParams, Optimizer, ParamPolicy, default_hyper, state_element_count
from .problems import DiagQuadratic, MatrixRosenbrock, canonical_kind, make_objective
from .schedules import Schedule, lr_at

SCHEMA_VERSION = 1
CSV_HEADER = ("step", "lr", "loss", "grad_norm", "update_rms", "hamiltonian", "wallclock_ns")
OUTPUT_DIR_ENV = "HFAC_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


class NumericalBlowUp(RuntimeError):
    def __init__(self, step, row, what):
        super().__init__(f"non-finite {what} at step {step} (trajectory row {row})")
        self.step = step
        self.row = row


@dataclass
class ObjectiveSpec:
    kind: str
    shape: tuple = None
    seed: int = 0


@dataclass
class OptimizerSpec:
    algo: Algo
    hyper: HyperParams
    policies: list = None


@dataclass
class ExperimentConfig:
    objective: ObjectiveSpec
    optimizer: OptimizerSpec
    schedule: Schedule
    steps: int
    seed: int = 0
    log_every: int = 1
    output: str = None
    monitor: bool = False
    record_wallclock: bool = False


_TOP_KEYS = {"schema", "objective", "optimizer", "schedule", "steps", "seed", "log_every", "output", "monitor", "record_wallclock"}
_OBJECTIVE_KEYS = {"kind", "shape", "seed"}
_OPTIMIZER_KEYS = {"algo", "hyper", "policy"}
_HYPER_KEYS = set(HyperParams.__dataclass_fields__)
_POLICY_KEYS = {"fullhead", "ablation"}
_SCHEDULE_KEYS = {"kind", "lr", "warmup_steps", "final_fraction"}


def _check_keys(section, data, allowed, required=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"missing key(s) in {section}: {', '.join(missing)}")


def parse_config(data):
    """Validate a config mapping (as loaded from JSON) into an ExperimentConfig."""
    _check_keys("config", data, _TOP_KEYS, ("schema", "objective", "optimizer", "schedule", "steps"))
    if data["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {data['schema']!r}; expected {SCHEMA_VERSION}")
    try:
        obj = data["objective"]
        _check_keys("objective", obj, _OBJECTIVE_KEYS, ("kind",))
        shape = tuple(int(x) for x in obj["shape"]) if obj.get("shape") is not None else None
        objective = ObjectiveSpec(canonical_kind(obj["kind"]), shape, int(obj.get("seed", 0)))

        opt = data["optimizer"]
        _check_keys("optimizer", opt, _OPTIMIZER_KEYS, ("algo",))
        algo = Algo.parse(opt["algo"])
        hyper_overrides = opt.get("hyper", {})
        _check_keys("optimizer.hyper", hyper_overrides, _HYPER_KEYS)
        hyper = default_hyper(algo, **hyper_overrides)
        policy = opt.get("policy")
        if policy is None:
            policies = None
        else:
            items = policy if isinstance(policy, list) else [policy]
            for i, p in enumerate(items):
                _check_keys(f"optimizer.policy[{i}]", p, _POLICY_KEYS)
            parsed = [ParamPolicy(**p) for p in items]
            policies = parsed if isinstance(policy, list) else parsed[0]

        sched = data["schedule"]
        _check_keys("schedule", sched, _SCHEDULE_KEYS, ("kind", "lr"))
        schedule = Schedule(**sched)

        steps = int(data["steps"])
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        schedule.validate_horizon(steps)
        log_every = int(data.get("log_every", 1))
        if log_every < 1:
            raise ConfigError("log_every must be >= 1")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        objective=objective,
        optimizer=OptimizerSpec(algo, hyper, policies),
        schedule=schedule,
        steps=steps,
        seed=int(data.get("seed", 0)),
        log_every=log_every,
        output=data.get("output"),
        monitor=bool(data.get("monitor", False)),
        record_wallclock=bool(data.get("record_wallclock", False)),
    )


def load_config(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(data)


def _kinetic(algo, state, hyper):
    """Kinetic part of the Hamiltonian matching ``algo``'s state, or None."""
    if algo == Algo.GDM:
        return ham.kinetic_gdm(state.M)
    if algo == Algo.ADAFACTOR_M:
        return ham.kinetic_adafactor(state.M, state.r, state.s)
    if algo == Algo.SIGNFSGD and state.u is not None:
        return ham.kinetic_facfirst(state.u, state.v, hyper.beta1)
    if algo == Algo.HFAC:
        return ham.kinetic_hfac(state.u, state.v, state.r, state.s)
    return None


def _fmt(x):
    return "" if x is None else repr(float(x)) if not isinstance(x, int) else str(x)


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    csv_text: str = ""
    paths: dict = field(default_factory=dict)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _build_policies(config, n_params):
    policies = config.optimizer.policies
    if policies is None:
        return None
    if isinstance(policies, ParamPolicy):
        return [policies] * n_params
    if len(policies) != n_params:
        raise ConfigError(f"expected {n_params} policies, got {len(policies)}")
    return policies


def trajectory_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in CSV_HEADER])
    return buf.getvalue()


def run_experiment(config, output_dir=None, write=True):
    """Run one optimizer on one objective.

    Row ``t`` describes the iterate after step ``t``: its loss and gradient
    norm, the learning rate and RMS parameter change of step ``t`` (max over
    parameters), and the Hamiltonian of the post-step optimizer state when
    ``config.monitor`` is set and the algorithm has one. ``wallclock_ns`` is
    left empty unless ``record_wallclock`` is set, so that repeat runs give
    byte-identical CSV files.
    """
    obj = make_objective(config.objective.kind, config.objective.shape, config.objective.seed)
    spec = config.optimizer
    rng = np.random.default_rng(config.seed)
    params = obj.as_list(obj.init_params(rng))
    policies = _build_policies(config, len(params))
    opt = Optimizer(spec.algo, obj.shapes, spec.hyper, policies)

    T = config.steps
    rows = []
    start = time.perf_counter_ns()
    initial_loss = obj.loss(obj.from_list(params))
    grads = obj.as_list(obj.grad(obj.from_list(params)))
    loss = initial_loss
    grad_norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    # Overflow is caught by the finiteness check below, with the step index.
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            lr = lr_at(config.schedule, t, T)
            new_params = opt.step(params, grads, lr)
            update_rms = max(rms(np.atleast_2d(p1 - p0)) for p0, p1 in zip(params, new_params))
            params = new_params
            current = obj.from_list(params)
            loss = obj.loss(current)
            grads = obj.as_list(obj.grad(current))
            grad_norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
            logged = t % config.log_every == 0 or t == T
            if not (np.isfinite(loss) and np.isfinite(grad_norm) and np.isfinite(update_rms)):
                raise NumericalBlowUp(t, len(rows), "loss/gradient/update")
            if not logged:
                continue
            H = None
            if config.monitor:
                kin = [_kinetic(spec.algo, st, spec.hyper) for st in opt.states]
                if all(k is not None for k in kin):
                    H = loss + sum(kin)
                    if not np.isfinite(H):
                        raise NumericalBlowUp(t, len(rows), "hamiltonian")
            rows.append(
                {
                    "step": t,
                    "lr": lr,
                    "loss": loss,
                    "grad_norm": grad_norm,
                    "update_rms": update_rms,
                    "hamiltonian": H,
                    "wallclock_ns": (time.perf_counter_ns() - start) if config.record_wallclock else None,
                }
            )

    state_elements = sum(
        state_element_count(spec.algo, st.shape, st.policy) for st in opt.states
    )
    summary = {
        "algo": spec.algo.value,
        "objective": config.objective.kind,
        "steps": T,
        "seed": config.seed,
        "initial_loss": initial_loss,
        "final_loss": loss,
        "final_grad_norm": grad_norm,
        "state_elements": state_elements,
        "state_bytes": state_elements * 8,
    }
    result = ExperimentResult(rows=rows, summary=summary, csv_text=trajectory_csv(rows))

    out = os.environ.get(OUTPUT_DIR_ENV) or output_dir or config.output
    if write and out:
        out = Path(out)
        csv_path, summary_path = out / "trajectory.csv", out / "summary.json"
        _atomic_write(csv_path, result.csv_text)
        _atomic_write(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
        result.paths = {"csv": str(csv_path), "summary": str(summary_path)}
    return result


def memory_report(shapes, algos=None):
    """Element counts per optimizer and shape, plus per-optimizer totals.

    Returns a list of dict rows with keys ``algo, shape, weights, gradient,
    states, total``; totals use ``shape="TOTAL"``.
    """
    if not shapes:
        raise ValueError("need at least one shape")
    algos = [Algo.parse(a) for a in (algos or list(Algo))]
    rows = []
    for algo in algos:
        acc = {"weights": 0, "gradient": 0, "states": 0}
        for m, n in shapes:
            entry = {
                "weights": m * n,
                "gradient": m * n,
                "states": state_element_count(algo, (m, n)),
            }
            for k in acc:
                acc[k] += entry[k]
            rows.append({"algo": algo.value, "shape": f"{m}x{n}", **entry, "total": sum(entry.values())})
        if len(shapes) > 1:
            rows.append({"algo": algo.value, "shape": "TOTAL", **acc, "total": sum(acc.values())})
    return rows


_REPORT_COLS = ("algo", "shape", "weights", "gradient", "states", "total")


def render_memory_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_REPORT_COLS)
    for row in rows:
        writer.writerow([row[c] for c in _REPORT_COLS])
    return buf.getvalue()


def render_memory_text(rows):
    cells = [list(_REPORT_COLS)] + [[str(row[c]) for c in _REPORT_COLS] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(_REPORT_COLS))]
    lines = []
    for r in cells:
        lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def parse_shapes(text):
    """``"4x3,128x64"`` (``x``, ``X`` or ``×``) -> ``[(4, 3), (128, 64)]``."""
    shapes = []
    for part in text.split(","):
        part = part.strip().lower().replace("×", "x")
        if not part:
            continue
        try:
            m, n = (int(x) for x in part.split("x"))
        except ValueError:
            raise ValueError(f"bad shape {part!r}; expected MxN") from None
        if m < 1 or n < 1:
            raise ValueError(f"bad shape {part!r}; dimensions must be positive")
        shapes.append((m, n))
    if not shapes:
        raise ValueError("no shapes given")
    return shapes


def standard_flows():
    return [
        ham.OdeSystem("gdm", gamma=1.0),
        ham.OdeSystem("adafactor", alpha=1.0, beta=2.0),
        ham.OdeSystem("facfirst", alpha=1.0, beta_weight=0.9),
        ham.OdeSystem("hfac", alpha=1.0, beta=4.0),
    ]


def standard_descent_problems():
    """``(name, objective, W0)`` triples used by the descent suite."""
    return [
        ("diag_quadratic_8x6", DiagQuadratic.random((8, 6), seed=0), np.random.default_rng(1).standard_normal((8, 6))),
        ("matrix_rosenbrock_4x4", MatrixRosenbrock((4, 4)), np.zeros((4, 4))),
    ]


def negative_control(h=1e-3, n_steps=10_000):
    """Adafactor flow with beta = 10 alpha on an ill-conditioned quadratic.

    Its descent condition fails, so the result is reported but not required.
    """
    obj = DiagQuadratic.random((6, 4), seed=7, q_range=(0.05, 5.0))
    W0 = np.random.default_rng(8).standard_normal((6, 4))
    system = ham.OdeSystem("adafactor", alpha=0.2, beta=2.0)
    return ham.check_descent(system, obj, W0, h, n_steps, strict=False, label="negative_control/adafactor_b=10a")


def run_descent_suite(hs=(1e-2, 1e-3, 1e-4), n_steps=10_000, problems=None, include_negative_control=True):
    """Every standard flow on every problem at every step size.

    Returns ``(reports, ok)``; ``ok`` is False if any required check failed.
    """
    problems = problems if problems is not None else standard_descent_problems()
    reports = []
    for name, obj, W0 in problems:
        for system in standard_flows():
            for h in hs:
                reports.append(ham.check_descent(system, obj, W0, h, n_steps, label=f"{name}/{system.kind}"))
    if include_negative_control:
        reports.append(negative_control())
    ok = all(r.passed for r in reports if r.required)
    return reports, ok
