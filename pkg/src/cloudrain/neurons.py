"""Conventional and quadratic neuron layers with hand-written backprop.

A conventional unit computes ``act(f @ w + b)``. A quadratic unit computes::

    act((f @ w1 + b1) * (f @ w2 + b2) + (f * f) @ w3 + b3)

Layers act on a batch of row vectors, shape (rows, fan_in). Each call to
``forward`` caches what ``backward`` needs; parameters are float64 arrays
that an optimizer updates in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError, UsageError

ACTIVATIONS = ("relu", "identity")


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise InvalidInputError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def _check_input(f, fan_in):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.ndim != 2 or f.shape[1] != fan_in:
        raise InvalidInputError(f"expected input width {fan_in}, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise NumericalError("non-finite layer input")
    return f


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activation_grad(z, upstream, activation):
    return upstream * (z > 0.0) if activation == "relu" else upstream


@dataclass
class GradientBundle:
    """Gradients of a scalar loss w.r.t. each parameter and the layer input."""

    params: dict[str, np.ndarray]
    input: np.ndarray


@dataclass(eq=False)
class ConventionalLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"
    _cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        _check_activation(self.activation)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise InvalidInputError("inconsistent conventional layer shapes")

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]

    param_names = ("W", "b")

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def n_params(self) -> int:
        return self.W.size + self.b.size

    def forward(self, f) -> np.ndarray:
        f = _check_input(f, self.fan_in)
        z = f @ self.W + self.b
        self._cache = (f, z)
        return _activate(z, self.activation)

    def backward(self, upstream) -> GradientBundle:
        if self._cache is None:
            raise UsageError("backward called before forward")
        f, z = self._cache
        dz = _activation_grad(z, np.asarray(upstream, dtype=np.float64), self.activation)
        return GradientBundle(
            params={"W": f.T @ dz, "b": dz.sum(axis=0)},
            input=dz @ self.W.T,
        )


@dataclass(eq=False)
class QuadraticLayer:
    """A layer of quadratic units.

    With ``strict_invariant`` set, ``W1`` and ``W2`` are held at zero and
    never updated, and the input enters only through ``f * f``. The output
    is then bitwise unchanged by any sign flip of input coordinates.
    """

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    activation: str = "relu"
    strict_invariant: bool = False
    _cache: tuple | None = field(default=None, repr=False)

    param_names = ("W1", "W2", "W3", "b1", "b2", "b3")

    def __post_init__(self):
        for name in ("W1", "W2", "W3"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        for name in ("b1", "b2", "b3"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64).reshape(-1))
        _check_activation(self.activation)
        shape = self.W1.shape
        if len(shape) != 2 or self.W2.shape != shape or self.W3.shape != shape:
            raise InvalidInputError("W1, W2, W3 must share one (fan_in, fan_out) shape")
        if any(getattr(self, n).shape != (shape[1],) for n in ("b1", "b2", "b3")):
            raise InvalidInputError("biases must have length fan_out")
        if self.strict_invariant and (np.any(self.W1) or np.any(self.W2)):
            raise InvalidInputError("strict-invariant layer requires W1 = W2 = 0")

    @property
    def fan_in(self) -> int:
        return self.W1.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.param_names}

    def n_params(self) -> int:
        return 3 * self.fan_in * self.fan_out + 3 * self.fan_out

    def forward(self, f) -> np.ndarray:
        f = _check_input(f, self.fan_in)
        sq = f * f
        if self.strict_invariant:
            # never touch f itself, only f * f
            a = np.broadcast_to(self.b1, (f.shape[0], self.fan_out))
            b = np.broadcast_to(self.b2, (f.shape[0], self.fan_out))
        else:
            a = f @ self.W1 + self.b1
            b = f @ self.W2 + self.b2
        z = a * b + sq @ self.W3 + self.b3
        self._cache = (f, sq, a, b, z)
        return _activate(z, self.activation)

    def backward(self, upstream) -> GradientBundle:
        if self._cache is None:
            raise UsageError("backward called before forward")
        f, sq, a, b, z = self._cache
        dz = _activation_grad(z, np.asarray(upstream, dtype=np.float64), self.activation)
        da = dz * b
        db = dz * a
        dW3 = sq.T @ dz
        dfsq = dz @ self.W3.T
        if self.strict_invariant:
            dW1 = np.zeros_like(self.W1)
            dW2 = np.zeros_like(self.W2)
            dinput = 2.0 * f * dfsq
        else:
            dW1 = f.T @ da
            dW2 = f.T @ db
            dinput = da @ self.W1.T + db @ self.W2.T + 2.0 * f * dfsq
        grads = {
            "W1": dW1,
            "W2": dW2,
            "W3": dW3,
            "b1": da.sum(axis=0),
            "b2": db.sum(axis=0),
            "b3": dz.sum(axis=0),
        }
        return GradientBundle(params=grads, input=dinput)


def _glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def _check_dims(fan_in, fan_out):
    if int(fan_in) < 1 or int(fan_out) < 1:
        raise InvalidInputError("layer dimensions must be positive")


def init_conventional(fan_in: int, fan_out: int, seed=None, activation="relu") -> ConventionalLayer:
    _check_dims(fan_in, fan_out)
    rng = np.random.default_rng(seed)
    bound = _glorot_bound(fan_in, fan_out)
    return ConventionalLayer(rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out), activation)


def init_quadratic(fan_in: int, fan_out: int, seed=None, strict: bool = False,
                   activation="relu") -> QuadraticLayer:
    """Initialise a quadratic layer.

    The default start point is a conventional layer in disguise: ``W1`` is
    Glorot-uniform, ``W2 = 0, b2 = 1`` and the power term is zero, so the
    layer initially computes ``act(f @ W1)``. A strict layer instead has
    ``W1 = W2 = 0``, ``b2 = 1`` and a small uniform ``W3``.
    """
    _check_dims(fan_in, fan_out)
    rng = np.random.default_rng(seed)
    bound = _glorot_bound(fan_in, fan_out)
    zeros = np.zeros((fan_in, fan_out))
    if strict:
        w1 = zeros.copy()
        w3 = rng.uniform(-bound, bound, (fan_in, fan_out)) * 0.25
    else:
        w1 = rng.uniform(-bound, bound, (fan_in, fan_out))
        w3 = zeros.copy()
    return QuadraticLayer(
        W1=w1, W2=zeros.copy(), W3=w3,
        b1=np.zeros(fan_out), b2=np.ones(fan_out), b3=np.zeros(fan_out),
        activation=activation, strict_invariant=strict,
    )


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_trials: int
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic, numeric) -> np.ndarray:
    """``|a - n| / max(1, |a|, |n|)``: relative for large entries, absolute below 1."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _randomize(layer, rng):
    for name, arr in layer.params().items():
        if getattr(layer, "strict_invariant", False) and name in ("W1", "W2"):
            continue
        arr[...] = rng.uniform(-1.0, 1.0, arr.shape)


def grad_check(layer, n_trials: int = 100, h: float = 1e-5, tolerance: float = 1e-6,
               seed=0, rows: int = 4, kink_margin: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    Each trial draws fresh parameters and inputs uniformly in [-1, 1] and a
    random upstream gradient ``R``; the checked scalar is ``sum(out * R)``.
    For ReLU layers, draws that put any pre-activation within
    ``kink_margin`` of zero are redrawn, since the derivative is undefined
    there. The layer's parameters are left randomised afterwards.
    """
    rng = np.random.default_rng(seed)
    worst, checked = 0.0, 0
    for _ in range(n_trials):
        for _attempt in range(1000):
            _randomize(layer, rng)
            f = rng.uniform(-1.0, 1.0, (rows, layer.fan_in))
            layer.forward(f)
            z = layer._cache[-1]
            if layer.activation != "relu" or np.min(np.abs(z)) > kink_margin:
                break
        upstream = rng.standard_normal((rows, layer.fan_out))

        def loss():
            return float(np.sum(layer.forward(f) * upstream))

        layer.forward(f)
        bundle = layer.backward(upstream)
        targets = [(arr, bundle.params[name]) for name, arr in layer.params().items()
                   if not (getattr(layer, "strict_invariant", False) and name in ("W1", "W2"))]
        targets.append((f, bundle.input))
        for arr, analytic in targets:
            numeric = np.empty_like(arr)
            flat, nflat = arr.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                plus = loss()
                flat[i] = old - h
                minus = loss()
                flat[i] = old
                nflat[i] = (plus - minus) / (2.0 * h)
            worst = max(worst, float(np.max(relative_error(analytic, numeric))))
            checked += arr.size
    return GradCheckReport(worst, n_trials, checked, tolerance)
