"""Benchmark objectives with analytic gradients and a stationary gradient oracle.

Single-matrix objectives take and return an ``(m, n)`` array. ``TwoLayerMLP``
has two weight matrices; its ``loss``/``grad`` take a list ``[W1, W2]`` and
``grad`` returns a list in the same order.
"""

import numpy as np

from .matrix import as_matrix


class Objective:
    """Base class. Subclasses set ``kind`` and ``shapes`` and implement
    ``loss`` and ``grad``."""

    kind = None
    shapes = ()

    @property
    def shape(self):
        if len(self.shapes) != 1:
            raise AttributeError(f"{self.kind} has {len(self.shapes)} parameters")
        return self.shapes[0]

    @property
    def multi_param(self):
        return len(self.shapes) > 1

    def as_list(self, W):
        if self.multi_param:
            params = [as_matrix(p) for p in W]
        else:
            params = [as_matrix(W)]
        if len(params) != len(self.shapes):
            raise ValueError(f"expected {len(self.shapes)} parameters, got {len(params)}")
        for p, shape in zip(params, self.shapes):
            if p.shape != tuple(shape):
                raise ValueError(f"shape mismatch: expected {tuple(shape)}, got {p.shape}")
        return params

    def from_list(self, params):
        return list(params) if self.multi_param else params[0]

    def init_params(self, rng):
        params = [rng.standard_normal(shape) for shape in self.shapes]
        return self.from_list(params)

    def loss(self, W):
        raise NotImplementedError

    def grad(self, W):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(shapes={list(self.shapes)})"


class DiagQuadratic(Objective):
    """``0.5 * sum(q * (W - target)**2)`` with positive curvatures ``q``."""

    kind = "diag_quadratic"

    def __init__(self, q, target):
        self.q = as_matrix(q, "q")
        self.target = as_matrix(target, "target")
        if self.q.shape != self.target.shape:
            raise ValueError("q and target must have the same shape")
        if np.any(self.q <= 0):
            raise ValueError("curvatures q must be positive")
        self.shapes = (self.q.shape,)

    @classmethod
    def random(cls, shape, seed=0, q_range=(0.5, 2.0)):
        rng = np.random.default_rng(seed)
        q = rng.uniform(*q_range, size=shape)
        target = rng.standard_normal(shape)
        return cls(q, target)

    @property
    def minimizer(self):
        return self.target.copy()

    def loss(self, W):
        (W,) = self.as_list(W)
        d = W - self.target
        return 0.5 * float(np.sum(self.q * d * d))

    def grad(self, W):
        (W,) = self.as_list(W)
        return self.q * (W - self.target)


class MatrixRosenbrock(Objective):
    """Row-wise chained Rosenbrock over adjacent column pairs; minimizer all ones."""

    kind = "matrix_rosenbrock"

    def __init__(self, shape, a=1.0, b=100.0):
        m, n = shape
        if n < 2:
            raise ValueError("MatrixRosenbrock needs at least two columns")
        self.shapes = ((m, n),)
        self.a = a
        self.b = b

    @property
    def minimizer(self):
        return np.full(self.shape, self.a)

    def init_params(self, rng):
        return rng.uniform(-0.5, 0.5, size=self.shape)

    def loss(self, W):
        (W,) = self.as_list(W)
        x, y = W[:, :-1], W[:, 1:]
        return float(np.sum(self.b * (y - x * x) ** 2 + (self.a - x) ** 2))

    def grad(self, W):
        (W,) = self.as_list(W)
        x, y = W[:, :-1], W[:, 1:]
        resid = y - x * x
        G = np.zeros_like(W)
        G[:, :-1] += -4.0 * self.b * x * resid - 2.0 * (self.a - x)
        G[:, 1:] += 2.0 * self.b * resid
        return G


class LogisticRegression(Objective):
    """Mean binary cross-entropy of ``sigmoid(X w)`` plus ``0.5 * l2 * |w|^2``.

    The weight is a ``(d, 1)`` matrix, so factored optimizers see a single
    column.
    """

    kind = "logistic_regression"

    def __init__(self, X, y, l2=0.0):
        self.X = as_matrix(X, "X")
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        self.l2 = float(l2)
        self.shapes = ((self.X.shape[1], 1),)

    @classmethod
    def synthetic(cls, n_samples=32, n_features=6, seed=0, l2=1e-2):
        """Noisy labels drawn from a logistic teacher, so the classes overlap."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n_samples, n_features))
        teacher = rng.standard_normal(n_features)
        p = 1.0 / (1.0 + np.exp(-X @ teacher))
        y = (rng.uniform(size=n_samples) < p).astype(np.float64)
        return cls(X, y, l2=l2)

    @classmethod
    def toy(cls):
        """Four linearly separable points in the plane."""
        X = np.array([[1.0, 2.0], [2.0, 1.0], [-1.0, -2.0], [-2.0, -1.0]])
        y = np.array([1.0, 1.0, 0.0, 0.0])
        return cls(X, y)

    def init_params(self, rng):
        return 0.1 * rng.standard_normal(self.shape)

    def loss(self, W):
        (W,) = self.as_list(W)
        z = self.X @ W[:, 0]
        nll = np.mean(np.logaddexp(0.0, z) - self.y * z)
        return float(nll + 0.5 * self.l2 * np.sum(W * W))

    def grad(self, W):
        (W,) = self.as_list(W)
        z = self.X @ W[:, 0]
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        g = self.X.T @ (p - self.y) / self.X.shape[0]
        return g[:, None] + self.l2 * W


class TwoLayerMLP(Objective):
    """``softmax(tanh(X W1) W2)`` cross-entropy, no biases.

    Parameters are ``[W1 (d_in, hidden), W2 (hidden, n_classes)]``.
    """

    kind = "two_layer_mlp"

    def __init__(self, X, labels, hidden=8, n_classes=3):
        self.X = as_matrix(X, "X")
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.X.shape[0]:
            raise ValueError("X and labels disagree on the number of samples")
        if self.labels.min() < 0 or self.labels.max() >= n_classes:
            raise ValueError("labels out of range")
        self.n_classes = n_classes
        self.shapes = ((self.X.shape[1], hidden), (hidden, n_classes))
        self._onehot = np.eye(n_classes)[self.labels]

    @classmethod
    def synthetic(cls, n_samples=64, d_in=4, hidden=8, n_classes=3, seed=0):
        """Labels are the argmax of a random teacher network of the same shape."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n_samples, d_in))
        T1 = rng.standard_normal((d_in, hidden))
        T2 = rng.standard_normal((hidden, n_classes))
        labels = np.argmax(np.tanh(X @ T1) @ T2, axis=1)
        return cls(X, labels, hidden=hidden, n_classes=n_classes)

    def init_params(self, rng):
        return [rng.standard_normal(shape) / np.sqrt(shape[0]) for shape in self.shapes]

    def _forward(self, W1, W2):
        H = np.tanh(self.X @ W1)
        Z = H @ W2
        Z = Z - Z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(Z).sum(axis=1, keepdims=True))
        return H, Z - log_norm

    def loss(self, W):
        W1, W2 = self.as_list(W)
        _, log_probs = self._forward(W1, W2)
        return float(-np.mean(np.sum(self._onehot * log_probs, axis=1)))

    def grad(self, W):
        W1, W2 = self.as_list(W)
        H, log_probs = self._forward(W1, W2)
        dZ = (np.exp(log_probs) - self._onehot) / self.X.shape[0]
        dW2 = H.T @ dZ
        dA = (dZ @ W2.T) * (1.0 - H * H)
        dW1 = self.X.T @ dA
        return [dW1, dW2]


class StochasticOracle:
    """Stationary gradient stream ``mean_grad + noise_scale * Z_t``.

    ``Z_t`` is drawn from a generator keyed on ``(seed, t)``, so a sample depends
    only on the seed and the step index, never on call order.
    """

    def __init__(self, mean_grad, noise_scale=1.0, seed=0):
        self.mean_grad = as_matrix(mean_grad, "mean_grad")
        if noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)

    @property
    def shape(self):
        return self.mean_grad.shape

    def sample_grad(self, t):
        if self.noise_scale == 0.0:
            return self.mean_grad.copy()
        rng = np.random.default_rng([self.seed, int(t)])
        return self.mean_grad + self.noise_scale * rng.standard_normal(self.shape)


def finite_diff_grad(obj, W, h=1e-5):
    """Central differences ``(f(W + h E_ij) - f(W - h E_ij)) / 2h`` per entry.

    ``obj`` may be an :class:`Objective` or any callable returning a scalar.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(obj, Objective):
        params = [p.copy() for p in obj.as_list(W)]
        f = lambda ps: obj.loss(obj.from_list(ps))
    else:
        params = [as_matrix(W).copy()]
        f = lambda ps: float(obj(ps[0]))
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            f_plus = f(params)
            p[idx] = orig - h
            f_minus = f(params)
            p[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    if isinstance(obj, Objective):
        return obj.from_list(grads)
    return grads[0]


def gradient_check(obj, n_points=20, h=1e-5, seed=0, floor=1e-6):
    """Worst entrywise relative error between ``obj.grad`` and central differences.

    The relative error of an entry is ``|a - b| / max(|a|, |b|, floor)``; random
    points are standard normal draws.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        W = obj.from_list([rng.standard_normal(shape) for shape in obj.shapes])
        analytic = obj.as_list(obj.grad(W))
        numeric = obj.as_list(finite_diff_grad(obj, W, h))
        for a, b in zip(analytic, numeric):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
            worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


OBJECTIVE_KINDS = ("diag_quadratic", "matrix_rosenbrock", "logistic_regression", "two_layer_mlp")

_ALIASES = {
    "diagquadratic": "diag_quadratic",
    "matrixrosenbrock": "matrix_rosenbrock",
    "rosenbrock": "matrix_rosenbrock",
    "logisticregression": "logistic_regression",
    "logistic": "logistic_regression",
    "twolayermlp": "two_layer_mlp",
    "mlp": "two_layer_mlp",
}


def canonical_kind(kind):
    key = str(kind).lower().replace("-", "_")
    if key in OBJECTIVE_KINDS:
        return key
    key = key.replace("_", "")
    if key in _ALIASES:
        return _ALIASES[key]
    raise ValueError(f"unknown objective kind {kind!r}; expected one of {OBJECTIVE_KINDS}")


def make_objective(kind, shape=None, seed=0):
    """Build a standard benchmark objective.

    ``shape`` applies to the single-matrix problems; the logistic regression
    and MLP problems have fixed shapes.
    """
    kind = canonical_kind(kind)
    if kind == "diag_quadratic":
        return DiagQuadratic.random(tuple(shape or (8, 6)), seed=seed)
    if kind == "matrix_rosenbrock":
        return MatrixRosenbrock(tuple(shape or (4, 4)))
    if kind == "logistic_regression":
        if shape is not None and tuple(shape) != (6, 1):
            raise ValueError("logistic_regression has fixed shape (6, 1)")
        return LogisticRegression.synthetic(seed=seed)
    if shape is not None:
        raise ValueError("two_layer_mlp has fixed shapes")
    return TwoLayerMLP.synthetic(seed=seed)
