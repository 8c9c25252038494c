"""Continuous-time optimizer flows, their Hamiltonians, and a descent checker.

Four flows are supported, each integrated with explicit Euler under
full-batch gradients:

``gdm``
    ``dW = M``, ``dM = -gamma M - G``.
``adafactor``
    ``dW = -M / sqrt(r s^T / 1^T r)``, ``dM = G - alpha M``,
    ``dr = G^2 1 - beta r``, ``ds = (G^T)^2 1 - beta s``.
``facfirst``
    factored first moment with quadratic potentials:
    ``dW = -(b u_hat 1^T + G) - (b 1 v_hat^T + G)``, ``du = G 1/n - alpha u``.
``hfac``
    ``dW = -G / sqrt(V_hat) - (1/2)[(u 1^T - G 1 1^T/n) / sqrt(r 1^T)
    + (1 v^T - 1 1^T G/m) / sqrt(1 s^T)]`` with ``u, v`` decaying at
    ``alpha`` and ``r, s`` at ``beta``.

Each Hamiltonian is nonincreasing along its exact flow when the decay rates
satisfy the flow's condition (``beta <= 2 alpha`` for adafactor,
``beta <= 4 alpha`` for hfac). The Euler discretization adds ``O(h^2)`` per
step, which :func:`check_descent` absorbs with an explicit tolerance.
"""

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .matrix import as_matrix, broadcast_cols, broadcast_rows, col_mean, col_sum_sq, row_mean, row_sum_sq

FLOW_KINDS = ("gdm", "adafactor", "facfirst", "hfac")


class PositivityError(ValueError):
    """Raised when a second-moment factor that is divided by is not positive."""


@dataclass(frozen=True)
class OdeSystem:
    kind: str
    alpha: float = 1.0
    beta: float = None
    beta_weight: float = 0.9
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow {self.kind!r}; expected one of {FLOW_KINDS}")
        if self.beta is None:
            object.__setattr__(self, "beta", self.alpha)
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.kind == "facfirst" and not 0.0 < self.beta_weight < 1.0:
            raise ValueError("facfirst requires beta_weight in (0, 1)")

    def condition_holds(self):
        """Whether the decay rates satisfy the flow's sufficient descent condition."""
        if self.kind == "adafactor":
            return self.beta <= 2.0 * self.alpha
        if self.kind == "hfac":
            return self.beta <= 4.0 * self.alpha
        return True


@dataclass(frozen=True)
class OdeState:
    W: np.ndarray
    M: np.ndarray = None
    u: np.ndarray = None
    v: np.ndarray = None
    r: np.ndarray = None
    s: np.ndarray = None
    time: float = 0.0


def _positive(name, x):
    if np.any(~(x > 0)):
        raise PositivityError(f"{name} must be entrywise positive")


def kinetic_gdm(M):
    M = np.asarray(M, dtype=np.float64)
    return 0.5 * float(np.sum(M * M))


def kinetic_adafactor(M, r, s):
    M = np.asarray(M, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _positive("r", r)
    _positive("s", s)
    mass = np.sqrt(r.sum()) / np.sqrt(np.outer(r, s))
    return 0.5 * float(np.sum(M * M * mass))


def kinetic_facfirst(u, v, beta_weight):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m, n = u.shape[0], v.shape[0]
    return 0.5 * beta_weight * (n * float(u @ u) + m * float(v @ v))


def kinetic_hfac(u, v, r, s):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _positive("r", r)
    _positive("s", s)
    m, n = u.shape[0], v.shape[0]
    return 0.25 * n * float(np.sum(u * u / np.sqrt(r))) + 0.25 * m * float(np.sum(v * v / np.sqrt(s)))


def h_gdm(obj, W, M):
    """``f(W) + |M|_F^2 / 2``."""
    return obj.loss(W) + kinetic_gdm(M)


def h_adafactor(obj, W, M, r, s):
    """``f(W) + (1/2) sum_ij M_ij^2 sqrt(sum(r)) / sqrt(r_i s_j)``."""
    return obj.loss(W) + kinetic_adafactor(M, r, s)


def h_facfirst(obj, W, u, v, beta_weight):
    """``f(W) + (b n / 2)|u|^2 + (b m / 2)|v|^2``."""
    return obj.loss(W) + kinetic_facfirst(u, v, beta_weight)


def h_hfac(obj, W, u, v, r, s):
    """``f(W) + (n/4) sum_i u_i^2 / sqrt(r_i) + (m/4) sum_j v_j^2 / sqrt(s_j)``."""
    return obj.loss(W) + kinetic_hfac(u, v, r, s)


def hamiltonian(system, obj, state):
    if system.kind == "gdm":
        return h_gdm(obj, state.W, state.M)
    if system.kind == "adafactor":
        return h_adafactor(obj, state.W, state.M, state.r, state.s)
    if system.kind == "facfirst":
        return h_facfirst(obj, state.W, state.u, state.v, system.beta_weight)
    return h_hfac(obj, state.W, state.u, state.v, state.r, state.s)


def initial_state(system, obj, W0, warm_start="isotropic"):
    """Zero momenta; positive second-moment factors for adafactor/hfac.

    The Hamiltonians divide by ``sqrt(r)`` and ``sqrt(s)``, so these factors
    must start positive. ``warm_start`` selects how:

    ``"isotropic"``
        ``r = |G0|^2 / m`` and ``s = |G0|^2 / n`` in every entry, where ``G0``
        is the gradient at ``W0``. No entry is tiny and ``1^T r = 1^T s``.
    ``"gradient"``
        ``r = (G0^2) 1_n``, ``s = (G0^T)^2 1_m``, the first-step value of the
        discrete algorithms. Rows or columns with zero gradient get ``1e-8``,
        which makes the first Euler steps very large.
    float ``c``
        ``r = s = c``.

    A zero initial gradient falls back to ``1e-8``.
    """
    W0 = as_matrix(W0, "W0").copy()
    m, n = W0.shape
    state = OdeState(W=W0)
    if system.kind == "gdm":
        return replace(state, M=np.zeros((m, n)))
    if system.kind == "facfirst":
        return replace(state, u=np.zeros(m), v=np.zeros(n))
    if warm_start == "gradient":
        G0 = obj.grad(W0)
        r, s = row_sum_sq(G0), col_sum_sq(G0)
        r = np.where(r > 0, r, 1e-8)
        s = np.where(s > 0, s, 1e-8)
    elif warm_start == "isotropic":
        total = float(np.sum(obj.grad(W0) ** 2)) or 1e-8
        r, s = np.full(m, total / m), np.full(n, total / n)
    else:
        c = float(warm_start)
        if c <= 0:
            raise PositivityError("warm-start constant must be positive")
        r, s = np.full(m, c), np.full(n, c)
    if system.kind == "adafactor":
        return replace(state, M=np.zeros((m, n)), r=r, s=s)
    return replace(state, u=np.zeros(m), v=np.zeros(n), r=r, s=s)


def vector_field(system, state, G):
    """Time derivatives of every state variable, as a dict keyed by field name."""
    W = state.W
    m, n = W.shape
    if system.kind == "gdm":
        return {"W": state.M, "M": -system.gamma * state.M - G}
    g_row, g_col = row_mean(G), col_mean(G)
    if system.kind == "facfirst":
        b = system.beta_weight
        u_hat = state.u - g_row
        v_hat = state.v - g_col
        dW = -(b * broadcast_rows(u_hat, n) + G) - (b * broadcast_cols(v_hat, m) + G)
        return {
            "W": dW,
            "u": g_row - system.alpha * state.u,
            "v": g_col - system.alpha * state.v,
        }
    _positive("r", state.r)
    _positive("s", state.s)
    V_hat = np.outer(state.r, state.s) / state.r.sum()
    dr = row_sum_sq(G) - system.beta * state.r
    ds = col_sum_sq(G) - system.beta * state.s
    if system.kind == "adafactor":
        return {
            "W": -state.M / np.sqrt(V_hat),
            "M": G - system.alpha * state.M,
            "r": dr,
            "s": ds,
        }
    phi = (broadcast_rows(state.u - g_row, n)) / np.sqrt(broadcast_rows(state.r, n))
    psi = (broadcast_cols(state.v - g_col, m)) / np.sqrt(broadcast_cols(state.s, m))
    return {
        "W": -G / np.sqrt(V_hat) - 0.5 * (phi + psi),
        "u": g_row - system.alpha * state.u,
        "v": g_col - system.alpha * state.v,
        "r": dr,
        "s": ds,
    }


def euler_step(system, state, obj, h):
    """One explicit Euler step of size ``h``; returns a new state."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    G = obj.grad(state.W)
    field = vector_field(system, state, G)
    updates = {name: getattr(state, name) + h * d for name, d in field.items()}
    return replace(state, time=state.time + h, **updates)


def integrate(system, obj, state, h, n_steps, record_every=None):
    """Run ``n_steps`` Euler steps.

    Returns ``(states, H)`` where ``H`` holds the Hamiltonian after every step
    (index 0 is the initial state) and ``states`` the states at multiples of
    ``record_every`` plus the final one (only the final one if ``None``).
    """
    H = np.empty(n_steps + 1)
    H[0] = hamiltonian(system, obj, state)
    states = [state] if record_every else []
    for k in range(1, n_steps + 1):
        state = euler_step(system, state, obj, h)
        H[k] = hamiltonian(system, obj, state)
        if record_every and k % record_every == 0 and k != n_steps:
            states.append(state)
    states.append(state)
    return states, H


@dataclass
class DescentReport:
    system: str
    alpha: float
    beta: float
    beta_weight: float
    gamma: float
    condition_holds: bool
    h: float
    n_steps: int
    H_initial: float
    H_final: float
    total_decrease: float
    max_increase: float
    n_violations: int
    tolerance: float
    tolerance_rule: str
    final_grad_norm: float
    passed: bool
    required: bool = True
    label: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary_line(self):
        status = "PASS" if self.passed else "FAIL"
        if not self.required:
            status = f"{status} (soft)"
        return (
            f"{status:<11} {self.label or self.system:<28} h={self.h:<8g} steps={self.n_steps:<6d} "
            f"H0={self.H_initial:.6g} H_end={self.H_final:.6g} "
            f"max_inc={self.max_increase:.3g} tol={self.tolerance:.3g} violations={self.n_violations}"
        )


def default_tolerance(h, H0):
    return 10.0 * h * h * abs(H0)


def check_descent(system, obj, W0, h, n_steps, tolerance=None, strict=True, warm_start="isotropic", label=""):
    """Integrate and check that no single step raises the Hamiltonian by more
    than ``tolerance`` (default ``10 h^2 |H0|``) and that H decreases overall.

    With ``strict`` a system violating its descent condition is rejected;
    pass ``strict=False`` to run it anyway (negative controls).
    """
    if strict and not system.condition_holds():
        raise ValueError(f"{system.kind} flow violates its descent condition: {system}")
    state = initial_state(system, obj, W0, warm_start=warm_start)
    # A diverging run shows up as non-finite H and is reported, not warned about.
    with np.errstate(over="ignore", invalid="ignore"):
        states, H = integrate(system, obj, state, h, n_steps)
        grad_norm = stationarity_probe(system, obj, states)
        increases = np.diff(H)
    H0 = float(H[0])
    if tolerance is None:
        tolerance = default_tolerance(h, H0)
        rule = "10*h^2*|H0|"
    else:
        rule = "fixed"
    finite = bool(np.all(np.isfinite(H)))
    if not finite:
        max_increase = math.inf
    else:
        max_increase = float(max(0.0, increases.max())) if n_steps else 0.0
    n_violations = int(np.sum(~(increases <= tolerance)))
    total_decrease = H0 - float(H[-1])
    return DescentReport(
        system=system.kind,
        alpha=system.alpha,
        beta=system.beta,
        beta_weight=system.beta_weight,
        gamma=system.gamma,
        condition_holds=system.condition_holds(),
        h=h,
        n_steps=n_steps,
        H_initial=H0,
        H_final=float(H[-1]),
        total_decrease=total_decrease,
        max_increase=max_increase,
        n_violations=n_violations,
        tolerance=tolerance,
        tolerance_rule=rule,
        final_grad_norm=grad_norm,
        passed=finite and n_violations == 0 and total_decrease > 0,
        required=strict,
        label=label,
    )


def stationarity_probe(system, obj, trajectory):
    """Frobenius norm of the gradient at the last state of ``trajectory``."""
    final = trajectory[-1] if isinstance(trajectory, (list, tuple)) else trajectory
    return float(np.linalg.norm(obj.grad(final.W)))
