"""Constructive networks for products and reflection-invariant polynomials.

Three families of building blocks live here:

* ``quadratic_multiplier``: two quadratic ReLU units that compute ``x*y``
  exactly, as ``relu(x*y) - relu(-x*y)``.
* ``relu_square`` / ``relu_multiplier``: plain ReLU networks that
  approximate ``x**2`` and ``x*y`` on a box by composing the sawtooth
  ("tooth") map, with size logarithmic in the accuracy.
* ``compile_approximator``: chains either family into a circuit evaluating a
  sum of even-exponent monomials, and reports its size.

Parameter accounting: ``param_count`` tallies the non-zero weights and
biases of hidden units. The linear read-out that combines the last hidden
layer is wiring, not counted, for both backends alike.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .neurons import ConventionalLayer, QuadraticLayer

# --------------------------------------------------------------------------
# networks


def _count_nonzero(layer) -> int:
    return int(sum(np.count_nonzero(a) for a in layer.params().values()))


def _sparse_plan(layer: ConventionalLayer):
    plan = []
    for j in range(layer.fan_out):
        ks = np.flatnonzero(layer.W[:, j])
        plan.append((ks, layer.W[ks, j], layer.b[j]))
    return plan


def _apply_sparse(plan, h, relu=True):
    # Units sum their non-zero inputs in index order. Branches with the same
    # structure then round identically, which the exact-zero property of the
    # ReLU multiplier relies on.
    out = np.empty((h.shape[0], len(plan)))
    for j, (ks, ws, b) in enumerate(plan):
        acc = np.full(h.shape[0], b)
        for k, w in zip(ks, ws):
            acc = acc + w * h[:, k]
        out[:, j] = acc
    return np.maximum(out, 0.0) if relu else out


def _apply_quadratic(layer: QuadraticLayer, h):
    sq = h * h
    if layer.strict_invariant:
        z = layer.b1 * layer.b2 + sq @ layer.W3 + layer.b3
    else:
        z = (h @ layer.W1 + layer.b1) * (h @ layer.W2 + layer.b2) + sq @ layer.W3 + layer.b3
    return np.maximum(z, 0.0) if layer.activation == "relu" else z


@dataclass(frozen=True)
class GadgetNetwork:
    """Feed-forward hidden layers followed by a fixed linear read-out.

    ``eps`` is the guaranteed sup error on ``[-input_bound, input_bound]``
    (``None`` together with ``exact=True`` for exact gadgets).
    """

    layers: tuple
    readout: np.ndarray
    arity: int
    input_bound: float | None = None
    eps: float | None = None
    exact: bool = False
    name: str = ""

    def __post_init__(self):
        width = self.arity
        for layer in self.layers:
            if layer.fan_in != width:
                raise InvalidInputError(f"layer expects width {layer.fan_in}, previous gives {width}")
            width = layer.fan_out
        readout = np.asarray(self.readout, dtype=np.float64)
        if readout.shape != (width,):
            raise InvalidInputError("read-out length must match last hidden width")
        object.__setattr__(self, "readout", readout)
        plans = [_sparse_plan(l) if isinstance(l, ConventionalLayer) else None for l in self.layers]
        object.__setattr__(self, "_plans", plans)
        ks = np.flatnonzero(readout)
        object.__setattr__(self, "_readout_plan", [(ks, readout[ks], 0.0)])

    @property
    def units(self) -> int:
        """Number of hidden neurons."""
        return sum(l.fan_out for l in self.layers)

    @property
    def param_count(self) -> int:
        return sum(_count_nonzero(l) for l in self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __call__(self, *inputs) -> np.ndarray:
        if len(inputs) != self.arity:
            raise InvalidInputError(f"{self.name or 'gadget'} takes {self.arity} inputs")
        cols = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in inputs))
        shape = cols[0].shape
        h = np.stack([c.reshape(-1) for c in cols], axis=1)
        for layer, plan in zip(self.layers, self._plans):
            h = _apply_quadratic(layer, h) if plan is None else _apply_sparse(plan, h)
        out = _apply_sparse(self._readout_plan, h, relu=False)[:, 0]
        return out.reshape(shape) if shape else out[0]


def param_count(net) -> int:
    """Non-zero hidden-unit parameters of a gadget network or circuit."""
    return int(net.param_count)


# --------------------------------------------------------------------------
# exact quadratic gadgets


def quadratic_multiplier() -> GadgetNetwork:
    """Two quadratic ReLU units computing ``x*y`` exactly (4 parameters)."""
    w1 = np.array([[1.0, 1.0], [0.0, 0.0]])
    w2 = np.array([[0.0, 0.0], [1.0, -1.0]])
    zero_w, zero_b = np.zeros((2, 2)), np.zeros(2)
    hidden = QuadraticLayer(w1, w2, zero_w, zero_b, zero_b, zero_b, activation="relu")
    return GadgetNetwork((hidden,), np.array([1.0, -1.0]), arity=2, exact=True,
                         name="quadratic_multiplier")


def quadratic_square() -> GadgetNetwork:
    """One power-term unit computing ``x**2`` exactly (1 parameter)."""
    hidden = QuadraticLayer(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)),
                            np.zeros(1), np.zeros(1), np.zeros(1),
                            activation="relu", strict_invariant=True)
    return GadgetNetwork((hidden,), np.ones(1), arity=1, exact=True, name="quadratic_square")


# --------------------------------------------------------------------------
# ReLU sawtooth gadgets


def _check_bound_eps(M, eps):
    if not (np.isfinite(M) and M > 0):
        raise InvalidInputError("bound M must be positive and finite")
    if not (0.0 < eps < 1.0):
        raise InvalidInputError("eps must lie in (0, 1)")


def _tooth_levels(m: int, scale: float, n_branches: int = 1):
    """Hidden layers 1..m+1 of ``n_branches`` parallel square approximators.

    Each branch reads two units ``relu(t), relu(-t)`` from the layer below
    and forms ``x = (relu(t) + relu(-t)) * scale = |t| * scale``. Level j
    holds three tooth units on ``g_{j-1}`` (``g_0 = x``) plus an accumulator
    carrying ``x - sum_{s<j} g_s / 4**s``, which stays non-negative on [0, 1]
    and so passes through its ReLU untouched.
    """
    layers = []
    for j in range(1, m + 1):
        fan_in = (2 if j == 1 else 4) * n_branches
        W = np.zeros((fan_in, 4 * n_branches))
        b = np.zeros(4 * n_branches)
        for br in range(n_branches):
            o = 4 * br
            b[o + 1], b[o + 2] = -0.5, -1.0
            if j == 1:
                i = 2 * br
                for unit in range(4):
                    W[i, o + unit] = W[i + 1, o + unit] = scale
            else:
                # g_{j-1} = 2 u0 - 4 u1 + 2 u2 from the previous tooth units
                g = (2.0, -4.0, 2.0)
                for unit in range(3):
                    for k in range(3):
                        W[o + k, o + unit] = g[k]
                W[o + 3, o + 3] = 1.0
                for k in range(3):
                    W[o + k, o + 3] = -g[k] / 4.0 ** (j - 1)
        layers.append(ConventionalLayer(W, b, "relu"))
    # one output unit per branch: acc_m - g_m / 4**m >= x**2 >= 0, so the
    # ReLU is exact and branches combine in a single rounding step each
    r = np.array([-2.0, 4.0, -2.0, 0.0]) / 4.0 ** m
    r[3] = 1.0
    W = np.zeros((4 * n_branches, n_branches))
    for br in range(n_branches):
        W[4 * br:4 * br + 4, br] = r
    layers.append(ConventionalLayer(W, np.zeros(n_branches), "relu"))
    return layers


def _square_network(M: float, m: int, eps=None) -> GadgetNetwork:
    first = ConventionalLayer(np.array([[1.0, -1.0]]), np.zeros(2), "relu")
    levels = _tooth_levels(m, 1.0 / M)
    return GadgetNetwork((first, *levels), np.array([M * M]), arity=1, input_bound=M, eps=eps,
                         name="relu_square")


def square_error_bound(M: float, m: int) -> float:
    """Sup error of the m-level square approximator on [-M, M]."""
    return M * M * 4.0 ** (-m - 1)


def relu_square(M: float, eps: float) -> GadgetNetwork:
    """ReLU network approximating ``x**2`` on ``[-M, M]`` within ``eps * M**2 / 4``.

    Uses ``m = ceil(log2(1/eps))`` tooth compositions on ``|x| / M``. The
    result is the piecewise-linear interpolant of ``x**2`` at the knots
    ``k * M / 2**m`` and is exact there.
    """
    _check_bound_eps(M, eps)
    m = max(1, math.ceil(math.log2(1.0 / eps)))
    return _square_network(M, m, eps=eps * M * M / 4.0)


def _levels_for(abs_err: float, M: float, per_square_scale: float = 1.0) -> int:
    m = 1
    while per_square_scale * square_error_bound(M, m) > abs_err:
        m += 1
    return m


def _multiplier_network(M: float, m: int, eps=None) -> GadgetNetwork:
    # branches: (x + y) / 2M, x / 2M, y / 2M, each squared on [-1, 1]
    c = 1.0 / (2.0 * M)
    W0 = np.array([
        [c, -c, c, -c, 0.0, 0.0],
        [c, -c, 0.0, 0.0, c, -c],
    ])
    first = ConventionalLayer(W0, np.zeros(6), "relu")
    levels = _tooth_levels(m, 1.0, n_branches=3)
    readout = 2.0 * M * M * np.array([1.0, -1.0, -1.0])
    return GadgetNetwork((first, *levels), readout, arity=2, input_bound=M, eps=eps,
                         name="relu_multiplier")


def multiplier_error_bound(M: float, m: int) -> float:
    return 2.0 * M * M * 3.0 * square_error_bound(1.0, m)


def relu_multiplier(M: float, eps: float) -> GadgetNetwork:
    """ReLU network with ``|out - x*y| <= eps`` whenever ``|x|, |y| <= M``.

    Uses ``x*y = 2 M**2 (s((x+y)/2M) - s(x/2M) - s(y/2M))`` with three
    square approximators ``s``. Exactly zero when either input is zero.
    """
    _check_bound_eps(M, eps)
    m = 1
    while multiplier_error_bound(M, m) > eps:
        m += 1
    return _multiplier_network(M, m, eps=eps)


# --------------------------------------------------------------------------
# reflection-invariant polynomials


def elementary_symmetric_even(x, k: int) -> float:
    """Sum over k-subsets of coordinates of the product of their squares."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.size
    if not 1 <= k <= d:
        raise InvalidInputError(f"k must lie in [1, {d}]")
    sq = x * x
    return float(sum(math.prod(sq[list(idx)]) for idx in itertools.combinations(range(d), k)))


@dataclass(frozen=True)
class SymmetricMonomial:
    """``coeff * prod_{i,a} X[i, a] ** exponents[i, a]`` with even exponents."""

    exponents: np.ndarray
    coeff: float = 1.0

    def __post_init__(self):
        exps = np.asarray(self.exponents)
        if exps.ndim != 2:
            raise InvalidInputError("exponent table must be N x d")
        if not np.all(exps == np.round(exps)) or np.any(exps < 0):
            raise InvalidInputError("exponents must be non-negative integers")
        exps = exps.astype(np.int64)
        if np.any(exps % 2):
            raise InvalidInputError("odd exponent breaks reflectional invariance")
        exps.setflags(write=False)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeff", float(self.coeff))

    @property
    def shape(self):
        return self.exponents.shape


def eval_monomial(X, m: SymmetricMonomial) -> np.ndarray:
    """Value of the monomial (coefficient excluded); ``X`` is N x d or batched."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2:] != m.shape:
        raise InvalidInputError(f"X must end in shape {m.shape}")
    return np.prod(X ** m.exponents, axis=(-2, -1))


def eval_polynomial(X, terms) -> np.ndarray:
    """Direct evaluation of ``sum_l c_l * monomial_l(X)``."""
    total = 0.0
    for t in terms:
        total = total + t.coeff * eval_monomial(X, t)
    return total


@dataclass(frozen=True)
class GadgetCircuit:
    """Gadgets wired through registers.

    Registers ``0 .. n_inputs-1`` hold the flattened input entries; step k
    writes register ``n_inputs + k``. The output is
    ``sum_l coefficients[l] * register[outputs[l]]`` (``None`` means 1).
    """

    n_inputs: int
    steps: tuple
    outputs: tuple
    coefficients: np.ndarray

    @property
    def units(self) -> int:
        return sum(g.units for g, _ in self.steps)

    @property
    def param_count(self) -> int:
        return sum(g.param_count for g, _ in self.steps)

    def __call__(self, flat_inputs) -> np.ndarray:
        flat_inputs = np.asarray(flat_inputs, dtype=np.float64)
        regs = [flat_inputs[..., i] for i in range(self.n_inputs)]
        for gadget, args in self.steps:
            regs.append(gadget(*(regs[a] for a in args)))
        out = np.zeros(flat_inputs.shape[:-1])
        for c, r in zip(self.coefficients, self.outputs):
            out = out + c * (1.0 if r is None else regs[r])
        return out


@dataclass(frozen=True)
class SymmetricApproximator:
    terms: tuple
    backend: str
    circuit: GadgetCircuit
    delta: float
    bound: float

    @property
    def param_count(self) -> int:
        return self.circuit.param_count

    @property
    def units(self) -> int:
        return self.circuit.units

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        shape = self.terms[0].shape
        if X.shape[-2:] != shape:
            raise InvalidInputError(f"X must end in shape {shape}")
        return self.circuit(X.reshape(*X.shape[:-2], shape[0] * shape[1]))


def _term_factors(term: SymmetricMonomial):
    """Register indices of the half-power factors: entry e repeated phi_e/2 times."""
    flat = term.exponents.reshape(-1)
    return [e for e in range(flat.size) for _ in range(flat[e] // 2)]


def conventional_chain_bound(K: int, M: float, eta: float):
    """Worst-case error of a K-factor product of approximate squares.

    Every square and every multiplication is allowed error ``eta``. Returns
    the final error bound and the input bound each multiplier must accept.
    """
    sq_bound = M * M + eta
    err, mag = eta, sq_bound
    mult_bounds = []
    for j in range(2, K + 1):
        mult_bounds.append(max(mag, sq_bound))
        err = eta + mag * eta + M * M * err
        mag = M ** (2 * j) + err
    return err, mult_bounds


def compile_approximator(terms, backend: str = "quadratic", M: float = 1.0,
                         delta: float = 1e-2) -> SymmetricApproximator:
    """Build a gadget circuit for ``sum_l c_l * prod X ** phi_l``.

    quadratic
        Each monomial is ``u**2`` with ``u = prod X ** (phi/2)``. ``u`` is
        formed by exact quadratic multipliers and squared by one power-term
        unit, so the output matches direct evaluation up to rounding.
    conventional
        Each entry is squared by a ReLU square approximator, then the
        squares are multiplied by ReLU multipliers. Every gadget gets the
        same error allowance, shrunk until the propagated error, weighted by
        ``|c_l|``, is at most ``delta / 2`` on ``[-M, M]^(N x d)``.
        Multiplier input bounds grow stage by stage to cover intermediate
        magnitudes.
    """
    terms = tuple(terms)
    if not terms:
        raise InvalidInputError("need at least one monomial term")
    for t in terms:
        if not isinstance(t, SymmetricMonomial):
            raise InvalidInputError("terms must be SymmetricMonomial instances")
    shape = terms[0].shape
    if any(t.shape != shape for t in terms):
        raise InvalidInputError("all terms must share one N x d shape")
    if not (np.isfinite(M) and M > 0):
        raise InvalidInputError("bound M must be positive")
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    n_inputs = shape[0] * shape[1]
    steps, outputs = [], []

    def emit(gadget, *args):
        steps.append((gadget, args))
        return n_inputs + len(steps) - 1

    if backend == "quadratic":
        mult, square = quadratic_multiplier(), quadratic_square()
        for t in terms:
            factors = _term_factors(t)
            if not factors:
                outputs.append(None)
                continue
            u = factors[0]
            for f in factors[1:]:
                u = emit(mult, u, f)
            outputs.append(emit(square, u))
    elif backend == "conventional":
        total_c = sum(abs(t.coeff) for t in terms) or 1.0
        k_max = max(len(_term_factors(t)) for t in terms)
        budget = delta / 2.0
        eta = budget
        while total_c * conventional_chain_bound(max(k_max, 1), M, eta)[0] > budget:
            eta /= 2.0
        sq_net = _square_network(M, _levels_for(eta, M), eps=eta)
        mult_cache = {}
        for t in terms:
            factors = _term_factors(t)
            if not factors:
                outputs.append(None)
                continue
            _, mult_bounds = conventional_chain_bound(len(factors), M, eta)
            squares = {}
            r = None
            for j, e in enumerate(factors):
                if e not in squares:
                    squares[e] = emit(sq_net, e)
                if r is None:
                    r = squares[e]
                    continue
                Mj = mult_bounds[j - 1]
                if Mj not in mult_cache:
                    mult_cache[Mj] = relu_multiplier(Mj, eta)
                r = emit(mult_cache[Mj], r, squares[e])
            outputs.append(r)
    else:
        raise InvalidInputError(f"unknown backend {backend!r}")
    circuit = GadgetCircuit(n_inputs, tuple(steps), tuple(outputs),
                            np.array([t.coeff for t in terms]))
    return SymmetricApproximator(terms, backend, circuit, float(delta), float(M))


# --------------------------------------------------------------------------
# benchmark sweep


def reference_basis():
    """A fixed four-term basis on 2 x 3 inputs with exponents in {0, 2}."""
    tables = [
        ([[2, 0, 0], [0, 0, 0]], 1.0),
        ([[2, 2, 0], [0, 0, 2]], -0.5),
        ([[0, 2, 2], [2, 0, 0]], 0.75),
        ([[2, 2, 2], [2, 2, 2]], 0.25),
    ]
    return [SymmetricMonomial(np.array(e), c) for e, c in tables]


def sup_error_multiplier(net, M, n_samples, rng) -> float:
    xy = rng.uniform(-M, M, (n_samples, 2))
    return float(np.max(np.abs(net(xy[:, 0], xy[:, 1]) - xy[:, 0] * xy[:, 1])))


def sup_error_approximator(approx, n_samples, rng) -> float:
    N, d = approx.terms[0].shape
    X = rng.uniform(-approx.bound, approx.bound, (n_samples, N, d))
    return float(np.max(np.abs(approx(X) - eval_polynomial(X, approx.terms))))


def gadget_bench(eps_values=(1e-1, 1e-2, 1e-3, 1e-4), delta_values=(1e-1, 1e-2, 1e-3),
                 n_samples: int = 100_000, M: float = 1.0, seed: int = 0,
                 terms=None) -> list[dict]:
    """Rows of (eps_or_delta, backend, units, params, sup_error) for every gadget family."""
    rng = np.random.default_rng(seed)
    rows = []
    qm = quadratic_multiplier()
    rows.append(dict(eps_or_delta=0.0, backend="quadratic-multiplier", units=qm.units,
                     params=qm.param_count, sup_error=sup_error_multiplier(qm, 10.0, n_samples, rng)))
    for eps in eps_values:
        net = relu_multiplier(M, eps)
        rows.append(dict(eps_or_delta=eps, backend="relu-multiplier", units=net.units,
                         params=net.param_count, sup_error=sup_error_multiplier(net, M, n_samples, rng)))
    terms = reference_basis() if terms is None else terms
    n_poly = max(1, n_samples // 10)
    for delta in delta_values:
        for backend in ("quadratic", "conventional"):
            approx = compile_approximator(terms, backend, M, delta)
            rows.append(dict(eps_or_delta=delta, backend=f"poly-{backend}", units=approx.units,
                             params=approx.param_count,
                             sup_error=sup_error_approximator(approx, n_poly, rng)))
    return rows
