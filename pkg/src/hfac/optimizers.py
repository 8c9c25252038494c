"""Optimizer state machines on dense matrix parameters.

Every ``step_*`` function advances one parameter by one iteration: it updates
the accumulators held in an :class:`OptimizerState` in place, increments the
step counter and returns the new parameter matrix. Accumulators are updated
in the line order of each algorithm; Lion and LionFactor refresh their
moments after the parameter update.

1-D parameters are handled by the :class:`Optimizer` wrapper as ``(m, 1)``
matrices, so factored states degenerate to a length-m vector and a scalar.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .matrix import (
    as_matrix,
    broadcast_cols,
    broadcast_rows,
    check_same_shape,
    clip_update,
    col_mean,
    col_sum_sq,
    factored_second_moment,
    row_mean,
    row_sum_sq,
    sign,
)


class InvalidHyperParams(ValueError):
    pass


class Algo(str, enum.Enum):
    GDM = "gdm"
    SIGNSGD = "signsgd"
    SIGNFSGD = "signfsgd"
    LION = "lion"
    LIONFACTOR = "lionfactor"
    ADAM = "adam"
    ADAMW = "adamw"
    ADAFACTOR_M = "adafactor_m"
    ADAFACTOR_NOM = "adafactor_nom"
    HFAC = "hfac"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "_")
        aliases = {
            "h_fac": "hfac",
            "adafactor": "adafactor_nom",
            "adafactorm": "adafactor_m",
            "adafactornom": "adafactor_nom",
            "signum": "signsgd",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown optimizer {name!r}; expected one of: {choices}") from None


FACTORED_FIRST_MOMENT = (Algo.SIGNFSGD, Algo.LIONFACTOR, Algo.HFAC)
SIGN_METHODS = (Algo.SIGNSGD, Algo.SIGNFSGD, Algo.LION, Algo.LIONFACTOR)


@dataclass(frozen=True)
class HyperParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-30
    weight_decay: float = 0.0
    clip_threshold: float = 1.0
    gamma: float = 0.9

    def __post_init__(self):
        for name in ("beta1", "beta2", "gamma"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise InvalidHyperParams(f"{name} must lie in [0, 1), got {value}")
        if self.eps < 0:
            raise InvalidHyperParams(f"eps must be nonnegative, got {self.eps}")
        if self.weight_decay < 0:
            raise InvalidHyperParams(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.clip_threshold <= 0:
            raise InvalidHyperParams(f"clip_threshold must be positive, got {self.clip_threshold}")


def default_hyper(algo, **overrides):
    """Defaults used in the reference experiments for each optimizer family."""
    algo = Algo.parse(algo)
    base = {}
    if algo in (Algo.LION, Algo.LIONFACTOR):
        base["beta2"] = 0.99
    if algo in (Algo.ADAM, Algo.ADAMW):
        base["eps"] = 1e-8
    base.update(overrides)
    return HyperParams(**base)


@dataclass(frozen=True)
class ParamPolicy:
    """Per-parameter variant flags.

    ``fullhead`` swaps the factored first moment of signFSGD/LionFactor for a
    full momentum matrix (signSGD with momentum / Lion). ``ablation`` drops
    the corrected terms of the factored first moment.
    """

    fullhead: bool = False
    ablation: bool = False


@dataclass
class OptimizerState:
    algo: Algo
    shape: tuple
    t: int = 1
    M: np.ndarray = None
    V: np.ndarray = None
    u: np.ndarray = None
    v: np.ndarray = None
    r: np.ndarray = None
    s: np.ndarray = None
    policy: ParamPolicy = field(default_factory=ParamPolicy)

    def buffers(self):
        return {
            name: getattr(self, name)
            for name in ("M", "V", "u", "v", "r", "s")
            if getattr(self, name) is not None
        }

    def element_count(self):
        return sum(int(b.size) for b in self.buffers().values())

    def copy(self):
        return replace(self, **{k: b.copy() for k, b in self.buffers().items()})


def beta_hat(beta, t):
    """Bias-correction-equivalent decay ``beta (1 - beta^(t-1)) / (1 - beta^t)``."""
    if not 0.0 <= beta < 1.0:
        raise InvalidHyperParams(f"beta must lie in [0, 1), got {beta}")
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    if beta == 0.0:
        return 0.0
    return beta * (1.0 - beta ** (t - 1)) / (1.0 - beta**t)


def _check_policy(algo, policy):
    if policy.fullhead and algo not in (Algo.SIGNFSGD, Algo.LIONFACTOR):
        raise ValueError(f"fullhead is only defined for signfsgd and lionfactor, not {algo.value}")
    if policy.ablation and algo not in FACTORED_FIRST_MOMENT:
        raise ValueError(f"ablation is only defined for factored first moments, not {algo.value}")


def init_state(algo, shape, hyper=None, policy=None):
    """Zero-initialized accumulators for one ``(m, n)`` parameter."""
    algo = Algo.parse(algo)
    policy = policy or ParamPolicy()
    _check_policy(algo, policy)
    m, n = (int(x) for x in shape)
    if m < 1 or n < 1:
        raise ValueError(f"shape must be positive, got {shape}")
    z = np.zeros
    state = OptimizerState(algo=algo, shape=(m, n), policy=policy)
    if algo in (Algo.GDM, Algo.SIGNSGD, Algo.LION) or policy.fullhead:
        state.M = z((m, n))
    elif algo in (Algo.ADAM, Algo.ADAMW):
        state.M, state.V = z((m, n)), z((m, n))
    elif algo == Algo.ADAFACTOR_M:
        state.M, state.r, state.s = z((m, n)), z(m), z(n)
    elif algo == Algo.ADAFACTOR_NOM:
        state.r, state.s = z(m), z(n)
    elif algo in (Algo.SIGNFSGD, Algo.LIONFACTOR):
        state.u, state.v = z(m), z(n)
    elif algo == Algo.HFAC:
        state.u, state.v, state.r, state.s = z(m), z(n), z(m), z(n)
    return state


def state_element_count(algo, shape, policy=None):
    """Number of optimizer-state scalars for an ``(m, n)`` parameter."""
    algo = Algo.parse(algo)
    policy = policy or ParamPolicy()
    _check_policy(algo, policy)
    m, n = shape
    if policy.fullhead:
        return m * n
    return {
        Algo.GDM: m * n,
        Algo.SIGNSGD: m * n,
        Algo.LION: m * n,
        Algo.SIGNFSGD: m + n,
        Algo.LIONFACTOR: m + n,
        Algo.ADAM: 2 * m * n,
        Algo.ADAMW: 2 * m * n,
        Algo.ADAFACTOR_M: m * n + m + n,
        Algo.ADAFACTOR_NOM: m + n,
        Algo.HFAC: 2 * (m + n),
    }[algo]


def _prepare(state, W, G):
    W = as_matrix(W, "W")
    G = as_matrix(G, "G")
    check_same_shape(W, G)
    if W.shape != state.shape:
        raise ValueError(f"shape mismatch: state {state.shape} vs W {W.shape}")
    return W, G


def step_gdm(state, W, G, lr, hyper):
    """Heavy-ball momentum: ``M = gamma M + G``, ``W -= lr M``."""
    W, G = _prepare(state, W, G)
    state.M = hyper.gamma * state.M + G
    state.t += 1
    return W - lr * state.M


def step_signsgd(state, W, G, lr, hyper, momentum=True):
    """signSGD; with momentum this is Signum (EMA of gradients, then sign)."""
    W, G = _prepare(state, W, G)
    if momentum:
        b = hyper.beta1
        state.M = b * state.M + (1.0 - b) * G
        direction = sign(state.M)
    else:
        direction = sign(G)
    state.t += 1
    return W - lr * (direction + hyper.weight_decay * W)


def step_adamw(state, W, G, lr, hyper, decoupled=True):
    """Adam with time-varying decays; ``decoupled=False`` gives plain Adam,
    which ignores ``weight_decay``."""
    W, G = _prepare(state, W, G)
    b1 = beta_hat(hyper.beta1, state.t)
    b2 = beta_hat(hyper.beta2, state.t)
    state.M = b1 * state.M + (1.0 - b1) * G
    state.V = b2 * state.V + (1.0 - b2) * G * G
    state.t += 1
    update = state.M / (np.sqrt(state.V) + hyper.eps)
    if decoupled:
        update = update + hyper.weight_decay * W
    return W - lr * update


def step_adam(state, W, G, lr, hyper):
    return step_adamw(state, W, G, lr, hyper, decoupled=False)


def _update_second_moment(state, G, b2, eps):
    state.r = b2 * state.r + (1.0 - b2) * row_sum_sq(G, eps)
    state.s = b2 * state.s + (1.0 - b2) * col_sum_sq(G, eps)
    total = state.r.sum()
    if not total > 0:
        raise InvalidHyperParams(
            "second-moment factors are all zero (eps=0 with a zero gradient); use eps > 0"
        )
    V_hat = factored_second_moment(state.r, state.s)
    if np.any(V_hat <= 0):
        raise InvalidHyperParams(
            "factored second moment has zero entries (eps=0 with a zero gradient row "
            "or column); use eps > 0"
        )
    return V_hat


def step_adafactor(state, W, G, lr, hyper, with_momentum=True):
    """Adafactor with factored second moment and update clipping."""
    W, G = _prepare(state, W, G)
    b1 = beta_hat(hyper.beta1, state.t)
    b2 = beta_hat(hyper.beta2, state.t)
    if with_momentum:
        state.M = b1 * state.M + (1.0 - b1) * G
    V_hat = _update_second_moment(state, G, b2, hyper.eps)
    state.t += 1
    U = (state.M if with_momentum else G) / np.sqrt(V_hat)
    return W - lr * (clip_update(U, hyper.clip_threshold) + hyper.weight_decay * W)


def step_signfsgd(state, W, G, lr, hyper, policy=None):
    """signFSGD: sign updates driven by rank-one row/column momentum factors."""
    policy = policy or state.policy
    if policy.fullhead:
        return step_signsgd(state, W, G, lr, hyper, momentum=True)
    W, G = _prepare(state, W, G)
    m, n = W.shape
    b = hyper.beta1
    g_row, g_col = row_mean(G), col_mean(G)
    state.u = b * state.u + (1.0 - b) * g_row
    state.v = b * state.v + (1.0 - b) * g_col
    if policy.ablation:
        u_hat, v_hat = state.u, state.v
    else:
        u_hat, v_hat = state.u - g_row, state.v - g_col
    state.t += 1
    direction = sign(b * broadcast_rows(u_hat, n) + G) + sign(b * broadcast_cols(v_hat, m) + G)
    return W - lr * (direction + hyper.weight_decay * W)


def step_lion(state, W, G, lr, hyper):
    W, G = _prepare(state, W, G)
    C = hyper.beta1 * state.M + (1.0 - hyper.beta1) * G
    W_new = W - lr * (sign(C) + hyper.weight_decay * W)
    state.M = hyper.beta2 * state.M + (1.0 - hyper.beta2) * G
    state.t += 1
    return W_new


def step_lionfactor(state, W, G, lr, hyper, policy=None):
    """Factored Lion: blend with beta1 for the update, store the EMA with beta2."""
    policy = policy or state.policy
    if policy.fullhead:
        return step_lion(state, W, G, lr, hyper)
    W, G = _prepare(state, W, G)
    m, n = W.shape
    b1, b2 = hyper.beta1, hyper.beta2
    g_row, g_col = row_mean(G), col_mean(G)
    u_hat = b1 * state.u + (1.0 - b1) * g_row
    v_hat = b1 * state.v + (1.0 - b1) * g_col
    if not policy.ablation:
        u_hat = u_hat - g_row
        v_hat = v_hat - g_col
    direction = sign(broadcast_rows(u_hat, n) + G) + sign(broadcast_cols(v_hat, m) + G)
    W_new = W - lr * (direction + hyper.weight_decay * W)
    state.u = b2 * state.u + (1.0 - b2) * g_row
    state.v = b2 * state.v + (1.0 - b2) * g_col
    state.t += 1
    return W_new


def hfac_terms(u, v, r, s, G, beta1_hat, ablation=False):
    """Normalized factored-momentum terms ``(phi, psi)`` of the H-Fac update.

    ``phi = b (u 1^T - G 1 1^T / n) / sqrt(r 1^T / n)`` and ``psi`` is its
    column counterpart. ``ablation`` drops the mean-gradient corrections.
    """
    G = as_matrix(G, "G")
    m, n = G.shape
    row_part = broadcast_rows(u, n)
    col_part = broadcast_cols(v, m)
    if not ablation:
        row_part = row_part - broadcast_rows(row_mean(G), n)
        col_part = col_part - broadcast_cols(col_mean(G), m)
    phi = beta1_hat * row_part / np.sqrt(broadcast_rows(r, n) / n)
    psi = beta1_hat * col_part / np.sqrt(broadcast_cols(s, m) / m)
    return phi, psi


def step_hfac(state, W, G, lr, hyper, policy=None):
    """H-Fac: factored first and second moments, clipped normalized gradient."""
    policy = policy or state.policy
    if not hyper.eps > 0:
        raise InvalidHyperParams("H-Fac requires eps > 0")
    W, G = _prepare(state, W, G)
    b1 = beta_hat(hyper.beta1, state.t)
    b2 = beta_hat(hyper.beta2, state.t)
    state.u = b1 * state.u + (1.0 - b1) * row_mean(G)
    state.v = b1 * state.v + (1.0 - b1) * col_mean(G)
    V_hat = _update_second_moment(state, G, b2, hyper.eps)
    phi, psi = hfac_terms(state.u, state.v, state.r, state.s, G, b1, policy.ablation)
    state.t += 1
    update = 0.5 * (phi + psi) + clip_update(G / np.sqrt(V_hat), hyper.clip_threshold)
    return W - lr * (update + hyper.weight_decay * W)


def step(state, W, G, lr, hyper):
    """Dispatch to the step function for ``state.algo``."""
    algo = state.algo
    if algo == Algo.GDM:
        return step_gdm(state, W, G, lr, hyper)
    if algo == Algo.SIGNSGD:
        return step_signsgd(state, W, G, lr, hyper, momentum=hyper.beta1 > 0)
    if algo == Algo.SIGNFSGD:
        return step_signfsgd(state, W, G, lr, hyper)
    if algo == Algo.LION:
        return step_lion(state, W, G, lr, hyper)
    if algo == Algo.LIONFACTOR:
        return step_lionfactor(state, W, G, lr, hyper)
    if algo == Algo.ADAM:
        return step_adam(state, W, G, lr, hyper)
    if algo == Algo.ADAMW:
        return step_adamw(state, W, G, lr, hyper)
    if algo == Algo.ADAFACTOR_M:
        return step_adafactor(state, W, G, lr, hyper, with_momentum=True)
    if algo == Algo.ADAFACTOR_NOM:
        return step_adafactor(state, W, G, lr, hyper, with_momentum=False)
    return step_hfac(state, W, G, lr, hyper)


def _as_2d(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        return p.reshape(1, 1)
    if p.ndim == 1:
        return p.reshape(-1, 1)
    if p.ndim == 2:
        return p
    raise ValueError(f"parameters must be at most 2-D, got shape {p.shape}")


class Optimizer:
    """One optimizer over a list of parameters, one state per parameter.

    Scalars and vectors are stepped as ``(m, 1)`` matrices and returned in
    their original shape.

    >>> import numpy as np
    >>> opt = Optimizer("hfac", [(4, 3)])
    >>> [W] = opt.step([np.ones((4, 3))], [np.ones((4, 3))], lr=0.1)
    >>> opt.state_element_count
    14
    """

    def __init__(self, algo, shapes, hyper=None, policies=None):
        self.algo = Algo.parse(algo)
        self.hyper = hyper if hyper is not None else default_hyper(self.algo)
        shapes = [tuple(s) for s in shapes]
        if policies is None:
            policies = [ParamPolicy()] * len(shapes)
        if len(policies) != len(shapes):
            raise ValueError("need one policy per parameter")
        self.shapes = shapes
        self.states = [
            init_state(self.algo, _as_2d(np.zeros(s)).shape, self.hyper, pol)
            for s, pol in zip(shapes, policies)
        ]

    @property
    def state_element_count(self):
        return sum(st.element_count() for st in self.states)

    @property
    def t(self):
        return self.states[0].t if self.states else 1

    def step(self, params, grads, lr):
        if len(params) != len(self.states) or len(grads) != len(self.states):
            raise ValueError("params, grads and states must have the same length")
        out = []
        for st, p, g, shape in zip(self.states, params, grads, self.shapes):
            W_new = step(st, _as_2d(p), _as_2d(g), lr, self.hyper)
            out.append(W_new.reshape(shape))
        return out
