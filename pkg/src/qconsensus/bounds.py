"""Closed-form performance bounds for dithered quantized consensus and the
quantizer step-size design problem.

Notation used throughout: N nodes, M realizable edges, step ``delta``,
``lambda2``/``lambdaN`` the extreme nontrivial eigenvalues of the mean
Laplacian, ``b`` the bound on initial states, ``p`` the number of positive
quantizer levels, ``epsilon`` the consensus tolerance.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .graph import LinkFailureModel, expected_active_edges_sq, mean_laplacian, spectral
from .weights import WeightSequence, alpha, persistence_check

EULER_MACLAURIN_CUTOFF = 1000
LOG_PRODUCT_CUTOFF = 10_000


class DivergentSeriesError(ValueError):
    """A series the bound depends on does not converge for these weights."""


@dataclass(frozen=True)
class BoundInputs:
    n_nodes: int
    m_edges: int
    delta: float
    lambda2: float
    lambdaN: float
    weights: WeightSequence
    b: Optional[float] = None
    p: Optional[int] = None
    epsilon: Optional[float] = None
    x0_avg: Optional[float] = None
    x0_energy: Optional[float] = None      # x0^T Lbar x0
    expected_active_sq: Optional[float] = None   # E|M(i)|^2

    def __post_init__(self):
        if self.n_nodes < 1 or self.m_edges < 0:
            raise ValueError("need N >= 1 and M >= 0")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.lambda2 < 0 or self.lambdaN < self.lambda2:
            raise ValueError("need 0 <= lambda2 <= lambdaN")
        if self.b is not None and not self.b > 0:
            raise ValueError("b must be positive")
        if self.p is not None and self.p < 1:
            raise ValueError("p must be at least 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_model(
        cls,
        model: LinkFailureModel,
        delta: float,
        weights: WeightSequence,
        b: Optional[float] = None,
        p: Optional[int] = None,
        epsilon: Optional[float] = None,
        x0=None,
    ) -> "BoundInputs":
        Lbar = mean_laplacian(model)
        spec = spectral(Lbar)
        x0_avg = x0_energy = None
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float)
            x0_avg = float(x0.mean())
            x0_energy = float(x0 @ Lbar @ x0)
        try:
            ems = expected_active_edges_sq(model)
        except ValueError:
            ems = None
        return cls(
            n_nodes=model.n_nodes,
            m_edges=model.n_edges,
            delta=float(delta),
            lambda2=spec.lambda2,
            lambdaN=spec.lambdaN,
            weights=weights,
            b=b,
            p=p,
            epsilon=epsilon,
            x0_avg=x0_avg,
            x0_energy=x0_energy,
            expected_active_sq=ems,
        )

    def replace(self, **changes) -> "BoundInputs":
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        out = {k: v for k, v in dataclasses.asdict(self).items() if k != "weights"}
        out["weights"] = dataclasses.asdict(self.weights)
        return out


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: float
    probability: bool = False
    terms: tuple = ()
    inputs: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def clamped(self) -> float:
        if not self.probability:
            return self.value
        return min(max(self.value, 0.0), 1.0)


def _need(inputs: BoundInputs, *names):
    missing = [n for n in names if getattr(inputs, n) is None]
    if missing:
        raise ValueError(f"bound needs {', '.join(missing)}")


# ---------------------------------------------------------------------------
# series

def _power_tail(q: float, start: int) -> float:
    """sum_{k >= start} k**-q by Euler-Maclaurin (start large)."""
    J = float(start)
    return (
        J ** (1.0 - q) / (q - 1.0)
        + 0.5 * J**-q
        + q * J ** (-q - 1.0) / 12.0
        - q * (q + 1.0) * (q + 2.0) * J ** (-q - 3.0) / 720.0
    )


def power_sum(q: float) -> float:
    """sum_{k >= 1} k**-q for q > 1."""
    if not q > 1.0:
        raise DivergentSeriesError(f"sum of k^-{q} diverges")
    if q == 2.0:
        return math.pi**2 / 6.0
    k = np.arange(EULER_MACLAURIN_CUTOFF - 1, 0, -1, dtype=float)
    return float(np.sum(k**-q)) + _power_tail(q, EULER_MACLAURIN_CUTOFF)


def sum_alpha_sq(weights: WeightSequence) -> float:
    """sum_{j >= 0} alpha(j)^2."""
    if weights.tau <= 0.5:
        raise DivergentSeriesError(f"sum of alpha^2 diverges for tau = {weights.tau}")
    return weights.gain**2 * power_sum(2.0 * weights.tau)


def partial_sum_alpha_sq(weights: WeightSequence, i: int) -> float:
    """sum_{j < i} alpha(j)^2."""
    if i <= 0:
        return 0.0
    return float(np.sum(alpha(weights, np.arange(i)) ** 2))


def sum_alpha_sq_delta_sq(weights: WeightSequence, base_step: float) -> float:
    """sum_{j >= 0} alpha(j)^2 delta(j)^2 for a (possibly) time-varying step."""
    if not weights.tau_d:
        step = base_step if weights.tau_d is None else weights.d0
        return step**2 * sum_alpha_sq(weights)
    if not persistence_check(weights).generalized_persistent:
        raise DivergentSeriesError(
            f"sum of alpha^2 delta^2 diverges (tau = {weights.tau}, tau_d = {weights.tau_d})"
        )
    return (weights.gain * weights.d0) ** 2 * power_sum(2.0 * weights.tau - 2.0 * weights.tau_d)


# ---------------------------------------------------------------------------
# the Lyapunov growth factor g(i) and its infinite product

def g_constant(inputs: BoundInputs) -> float:
    """c such that g(i) = alpha(i)^2 * c."""
    if not inputs.lambda2 > 0:
        raise ValueError("lambda2 of the mean Laplacian must be positive")
    lam2, lamN, N = inputs.lambda2, inputs.lambdaN, inputs.n_nodes
    return max(
        lamN**3 / lam2 + 4.0 * N**2 * lamN / lam2,
        2.0 * inputs.m_edges * inputs.delta**2 * lamN / 3.0,
    )


def g_factor(i, inputs: BoundInputs):
    return alpha(inputs.weights, i) ** 2 * g_constant(inputs)


def _log_sinhc(y: float) -> float:
    """log(sinh(y) / y) for y >= 0."""
    if y < 1e-8:
        return y * y / 6.0
    if y > 20.0:
        return y + math.log1p(-math.exp(-2.0 * y)) - math.log(2.0) - math.log(y)
    return math.log(math.sinh(y) / y)


def _log1p_power_tail(c: float, q: float, start: int) -> float:
    """sum_{k >= start} log(1 + c k**-q) by Euler-Maclaurin."""
    J = float(start)
    uJ = c * J**-q
    # integral over [J, inf) after substituting u = c x^-q
    integral, _ = integrate.quad(
        lambda u: math.log1p(u) / u if u > 0 else 1.0,
        0.0,
        uJ,
        weight="alg",
        wvar=(-1.0 / q, 0.0),
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    integral *= c ** (1.0 / q) / q
    f = math.log1p(uJ)
    fprime = -q * uJ / (J * (1.0 + uJ))
    return integral + 0.5 * f - fprime / 12.0


def log_prod_one_plus_g(inputs: BoundInputs, start: int = 0) -> float:
    """log prod_{j >= start} (1 + g(j))."""
    w = inputs.weights
    if w.tau <= 0.5:
        raise DivergentSeriesError(f"product of (1 + g) diverges for tau = {w.tau}")
    c = w.gain**2 * g_constant(inputs)
    q = 2.0 * w.tau
    if c == 0.0:
        return 0.0
    if w.tau == 1.0:
        # prod_{k >= 1} (1 + x^2 / k^2) = sinh(pi x) / (pi x)
        total = _log_sinhc(math.pi * math.sqrt(c))
    else:
        k = np.arange(LOG_PRODUCT_CUTOFF - 1, 0, -1, dtype=float)
        total = float(np.sum(np.log1p(c * k**-q))) + _log1p_power_tail(c, q, LOG_PRODUCT_CUTOFF)
    if start > 0:
        head = np.log1p(c * np.arange(1, start + 1, dtype=float) ** -q)
        total -= float(np.sum(head[::-1]))
    return total


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def prod_one_plus_g(inputs: BoundInputs, start: int = 0) -> float:
    return _exp(log_prod_one_plus_g(inputs, start))


@dataclass(frozen=True)
class LyapunovConstants:
    c_g: float
    sum_alpha_sq: float
    log_prod_one_plus_g: float

    @property
    def prod_one_plus_g(self) -> float:
        return _exp(self.log_prod_one_plus_g)


def lyapunov_constants(inputs: BoundInputs) -> LyapunovConstants:
    return LyapunovConstants(
        g_constant(inputs), sum_alpha_sq(inputs.weights), log_prod_one_plus_g(inputs)
    )


def potential_w(inputs: BoundInputs, i: int, v: float) -> float:
    """W(i, x) = (1 + x^T Lbar x) prod_{j >= i} (1 + g(j)), given v = x^T Lbar x."""
    return (1.0 + v) * prod_one_plus_g(inputs, start=i)


# ---------------------------------------------------------------------------
# mean-squared error of the consensus value

MSE_VARIANTS = ("general", "gossip", "refined", "time_varying")


def mse_bound(inputs: BoundInputs, variant: str = "general") -> BoundReport:
    """Upper bound on E[(theta - r)^2].

    ``general`` counts every realizable edge, ``gossip`` one active edge per
    iteration, ``refined`` uses E|M(i)|^2 and ``time_varying`` the step
    schedule carried by the weights.
    """
    N, M, d = inputs.n_nodes, inputs.m_edges, inputs.delta
    w = inputs.weights
    if variant == "time_varying":
        value = 2.0 * M * sum_alpha_sq_delta_sq(w, d) / (3.0 * N**2)
    elif variant == "general":
        value = 2.0 * M * (d**2 * sum_alpha_sq(w)) / (3.0 * N**2)
    elif variant == "gossip":
        value = 2.0 * (d**2 * sum_alpha_sq(w)) / (3.0 * N**2)
    elif variant == "refined":
        _need(inputs, "expected_active_sq")
        value = 2.0 * inputs.expected_active_sq * (d**2 * sum_alpha_sq(w)) / (3.0 * N**2)
    else:
        raise ValueError(f"unknown mse variant {variant!r}; choose from {MSE_VARIANTS}")
    return BoundReport(f"mse_bound[{variant}]", value, False, inputs=inputs.echo())


# ---------------------------------------------------------------------------
# excursions of the QC sample paths

def _ratio(log_num: float, den: float) -> float:
    return _exp(log_num - math.log(den))


def state_sup_bound(a: float, inputs: BoundInputs, form: str = "b_ball") -> BoundReport:
    """Bound on P[sup_j ||x(j)|| > a] (``concrete``, needs x0 statistics) or
    on P[sup_{n,j} |x_n(j)| > a] for any x0 in the b-ball (``b_ball``)."""
    if not a > 0:
        raise ValueError(f"excursion level must be positive, got {a}")
    N, M, d = inputs.n_nodes, inputs.m_edges, inputs.delta
    if form == "concrete":
        _need(inputs, "x0_avg", "x0_energy")
        avg_sq, energy = inputs.x0_avg**2, inputs.x0_energy
    elif form == "b_ball":
        _need(inputs, "b")
        avg_sq, energy = inputs.b**2, N * inputs.lambdaN * inputs.b**2
    else:
        raise ValueError(f"unknown form {form!r}")
    S = sum_alpha_sq(inputs.weights)
    t1 = math.sqrt(2.0 * N * avg_sq + 4.0 * M * d**2 * S / (3.0 * N)) / a
    t2 = _ratio(math.log1p(energy) + log_prod_one_plus_g(inputs), 1.0 + 0.5 * a * a * inputs.lambda2)
    return BoundReport(f"state_sup_bound[{form}]", t1 + t2, True, (t1, t2), inputs.echo())


# ---------------------------------------------------------------------------
# epsilon-consensus for the finite quantizer

def eps_consensus_terms(inputs: BoundInputs) -> tuple[float, float, float]:
    """The three failure terms: estimation error, average excursion, and
    disagreement excursion."""
    _need(inputs, "b", "p", "epsilon")
    N, M, d = inputs.n_nodes, inputs.m_edges, inputs.delta
    b, p, eps = inputs.b, inputs.p, inputs.epsilon
    S = sum_alpha_sq(inputs.weights)
    t1 = 2.0 * M * d**2 * S / (3.0 * N**2 * eps**2)
    t2 = math.sqrt(2.0 * N * b**2 + 4.0 * M * d**2 * S / (3.0 * N)) / (p * d)
    t3 = _ratio(
        math.log1p(N * inputs.lambdaN * b**2) + log_prod_one_plus_g(inputs),
        1.0 + 0.5 * (p * d) ** 2 * inputs.lambda2,
    )
    return t1, t2, t3


def eps_consensus_lb(inputs: BoundInputs) -> BoundReport:
    """Lower bound on the probability that every QCF state ends within epsilon of r."""
    terms = eps_consensus_terms(inputs)
    return BoundReport("eps_consensus_lb", 1.0 - sum(terms), True, terms, inputs.echo())


def theta_deviation_bound(inputs: BoundInputs) -> BoundReport:
    """Upper bound on P[|theta_tilde - r| >= epsilon]."""
    terms = eps_consensus_terms(inputs)
    return BoundReport("theta_deviation_bound", sum(terms), True, terms, inputs.echo())


def zero_rate_terms(inputs: BoundInputs) -> tuple[float, float]:
    _need(inputs, "b", "p")
    N, b, pd = inputs.n_nodes, inputs.b, inputs.p * inputs.delta
    t2 = math.sqrt(2.0 * N * b**2) / pd
    t3 = (1.0 + N * inputs.lambdaN * b**2) / (1.0 + 0.5 * pd**2 * inputs.lambda2)
    return t2, t3


def zero_rate_lb(inputs: BoundInputs) -> BoundReport:
    """Limit of :func:`eps_consensus_lb` as the weight scaling goes to zero."""
    terms = zero_rate_terms(inputs)
    return BoundReport("zero_rate_lb", 1.0 - sum(terms), True, terms, inputs.echo())


def ratio_approx(inputs: BoundInputs) -> float:
    """Large-argument approximation of the topology term of :func:`zero_rate_lb`."""
    _need(inputs, "b", "p")
    if not inputs.lambda2 > 0:
        raise ValueError("lambda2 must be positive")
    pd = inputs.p * inputs.delta
    return (2.0 * inputs.n_nodes * inputs.b**2 / pd**2) * (inputs.lambdaN / inputs.lambda2)


# ---------------------------------------------------------------------------
# optimal quantizer step

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DeltaDesign:
    delta_star: float
    objective_at_star: float
    grid: np.ndarray = field(repr=False)
    grid_objective: np.ndarray = field(repr=False)

    @property
    def t_star(self) -> float:
        """Optimized lower bound on the epsilon-consensus probability, clamped."""
        return min(max(1.0 - self.objective_at_star, 0.0), 1.0)

    @property
    def degenerate(self) -> bool:
        return not self.objective_at_star < 1.0

    @property
    def certificate(self) -> bool:
        return self.objective_at_star <= float(np.min(self.grid_objective)) + 1e-9


def design_objective(delta: float, inputs: BoundInputs) -> float:
    return sum(eps_consensus_terms(inputs.replace(delta=float(delta))))


def optimize_delta(
    inputs: BoundInputs,
    grid_size: int = 200,
    lo_factor: float = 1e-6,
    hi_factor: float = 1e4,
    rtol: float = 1e-6,
) -> DeltaDesign:
    """Minimize the three-term failure bound over the quantizer step.

    Log-spaced grid on ``[lo_factor * b, hi_factor * b]``, then golden-section
    search in log(delta) between the neighbours of the best grid point.
    """
    _need(inputs, "b", "p", "epsilon")
    grid = np.geomspace(lo_factor * inputs.b, hi_factor * inputs.b, grid_size)
    values = np.array([design_objective(d, inputs) for d in grid])
    k = int(np.argmin(values))
    best_x, best_f = math.log(grid[k]), float(values[k])

    def f(logd):
        return design_objective(math.exp(logd), inputs)

    lo = math.log(grid[max(k - 1, 0)])
    hi = math.log(grid[min(k + 1, grid_size - 1)])
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    tol = math.log1p(rtol)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
        for x, fx in ((c, fc), (d, fd)):
            if fx < best_f:
                best_x, best_f = x, fx
    return DeltaDesign(math.exp(best_x), best_f, grid, values)


# ---------------------------------------------------------------------------
# convergence rates

def mean_step_limit(lambda2: float, lambdaN: float) -> float:
    return 2.0 / (lambda2 + lambdaN)


def mean_propagate(mean_l, weights: WeightSequence, m0, horizon: int) -> np.ndarray:
    """Mean-state recursion m(i+1) = (I - alpha(i) Lbar) m(i), rows i = 0..horizon."""
    mean_l = np.asarray(mean_l, dtype=float)
    spec = spectral(mean_l)
    limit = mean_step_limit(spec.lambda2, spec.lambdaN)
    gains = alpha(weights, np.arange(horizon))
    bad = np.nonzero(gains > limit)[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"alpha({i}) = {gains[i]:.6g} exceeds 2/(lambda2 + lambdaN) = {limit:.6g}")
    m = np.empty((horizon + 1, mean_l.shape[0]))
    m[0] = np.asarray(m0, dtype=float)
    for i in range(horizon):
        m[i + 1] = m[i] - gains[i] * (mean_l @ m[i])
    return m


def mean_contraction_bound(lambda2: float, weights: WeightSequence, m0, i):
    """exp(-lambda2 * sum_{j < i} alpha(j)) * ||m0 - r 1|| for scalar or array ``i``."""
    m0 = np.asarray(m0, dtype=float)
    dist0 = float(np.linalg.norm(m0 - m0.mean()))
    i_arr = np.asarray(i, dtype=int)
    top = int(i_arr.max(initial=0))
    cum = np.concatenate([[0.0], np.cumsum(alpha(weights, np.arange(top)))])
    out = np.exp(-lambda2 * cum[i_arr]) * dist0
    return float(out) if out.ndim == 0 else out


def _check_varepsilon(inputs: BoundInputs, varepsilon: float) -> None:
    if not inputs.lambda2 > 0:
        raise ValueError("lambda2 must be positive")
    top = 2.0 * inputs.lambda2**2 / inputs.lambdaN
    if not 0.0 < varepsilon < top:
        raise ValueError(f"varepsilon must lie in (0, {top:.6g}), got {varepsilon}")


def i_epsilon(inputs: BoundInputs, varepsilon: float) -> int:
    """First iteration from which varepsilon * alpha(j) >= g(j) for all later j.

    For the parametric gains this is alpha(i) <= varepsilon / c, i.e.
    (i + 1) >= (s a c / varepsilon)**(1 / tau).
    """
    _check_varepsilon(inputs, varepsilon)
    w = inputs.weights
    t = (w.gain * g_constant(inputs) / varepsilon) ** (1.0 / w.tau)
    k = round(t)
    if abs(t - k) <= 1e-9 * max(t, 1.0):
        first = k - 1
    else:
        first = math.ceil(t) - 1
    return max(first, 0)


def mss_bound(inputs: BoundInputs, i: int, varepsilon: float, residual_at_i_eps: float) -> BoundReport:
    """Bound on E||x(i) - r 1||^2 for i >= i_epsilon.

    ``residual_at_i_eps`` is E||x_perp(i_epsilon)||^2, supplied by the
    caller (an ensemble estimate, or the pessimistic N (2b)^2).
    """
    ie = i_epsilon(inputs, varepsilon)
    if i < ie:
        raise ValueError(f"i = {i} precedes i_epsilon = {ie}")
    if residual_at_i_eps < 0:
        raise ValueError("residual second moment must be non-negative")
    lam2, lamN = inputs.lambda2, inputs.lambdaN
    rate = 2.0 * lam2**2 / lamN - varepsilon
    gains = alpha(inputs.weights, np.arange(i)) if i > 0 else np.zeros(0)
    window = gains[ie:i]
    # after[k] = sum of alpha(l) for l in (ie + k, i)
    after = np.concatenate([np.cumsum(window[::-1])[::-1][1:], [0.0]]) if window.size else window
    t1 = math.exp(-rate * float(window.sum())) * lamN * residual_at_i_eps / lam2
    t2 = float(np.sum(np.exp(-rate * after) * window**2 * g_constant(inputs))) / lam2
    t3 = 2.0 * inputs.m_edges * inputs.delta**2 * float(np.sum(gains**2)) / 3.0
    return BoundReport("mss_bound", t1 + t2 + t3, False, (t1, t2, t3), inputs.echo())
