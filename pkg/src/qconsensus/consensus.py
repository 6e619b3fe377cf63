"""QC and QCF iterations, single runs and seeded Monte Carlo ensembles.

Every trial owns two random streams derived from ``(master_seed, trial)``:
one drives the link failures, the other the per-directed-link dither. Both
are consumed as plain uniform doubles in iteration order, so a trial's
trajectory is identical whether it runs alone, inside a batch, or step by
step through :func:`qc_step`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import (
    FIXED,
    LinkFailureModel,
    laplacian,
    mean_laplacian,
    sample_edges_block,
    spectral,
)
from .quantize import MAX_LEVEL, DitherSource, QuantizerSpec, to_dither
from .weights import WeightSequence, alpha, persistence_check  # noqa: F401  (re-export)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
SATURATED = "saturated"

# floats drawn per refill of the per-trial random blocks
BLOCK_FLOATS = 1 << 21
EARLY_STOP_WINDOW = 100


@dataclass
class ConsensusConfig:
    x0: np.ndarray
    model: LinkFailureModel
    weights: WeightSequence
    quantizer: QuantizerSpec
    max_iter: int
    record_every: Optional[int] = None
    b: Optional[float] = None
    early_stop_tol: Optional[float] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.size != self.model.n_nodes:
            raise ValueError(f"x0 has {self.x0.size} entries for {self.model.n_nodes} nodes")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be finite")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be at least 1")

    @property
    def n_nodes(self) -> int:
        return self.model.n_nodes

    @property
    def initial_average(self) -> float:
        return float(np.mean(self.x0))

    def stride(self) -> int:
        if self.record_every is not None:
            return self.record_every
        return 1 if self.n_nodes <= 32 else 100


def trial_streams(master_seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(link_rng, dither_rng) for one trial."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    link_ss, dither_ss = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(link_ss)), np.random.Generator(np.random.PCG64(dither_ss))


# ---------------------------------------------------------------------------
# the per-iteration kernel, vectorized over trials

class _Network:
    def __init__(self, model: LinkFailureModel):
        edges = model.base.edge_array()
        m = edges.shape[0]
        # directed link k < M: receiver u, sender v; link k + M the reverse
        self.receivers = np.concatenate([edges[:, 0], edges[:, 1]])
        self.senders = np.concatenate([edges[:, 1], edges[:, 0]])
        self.incidence = np.zeros((2 * m, model.n_nodes))
        self.incidence[np.arange(2 * m), self.receivers] = 1.0
        self.n_edges = m
        self.all_active = model.variant == FIXED and model.sampler is None
        self.full_degree = self.incidence.sum(axis=0)


def _advance(net: _Network, x, active_dir, nu, a_i, d_i, limit):
    """One synchronous update for a batch of states ``x`` (T, N).

    Returns ``(x_next, q, y, saturated)`` where ``y = x_sender + nu`` is the
    quantizer input and ``q`` its output on every directed link.
    """
    y = x[:, net.senders] + nu
    if not np.abs(y).max(initial=0.0) < MAX_LEVEL * d_i:
        raise ValueError("quantizer input too large relative to the step (states diverged?)")
    q = np.floor(y / d_i + 0.5) * d_i
    if limit is not None:
        over = np.abs(y) >= limit
        if active_dir is not None:
            over &= active_dir
        saturated = over.any(axis=1)
    else:
        saturated = None
    if active_dir is None:
        received = q @ net.incidence
        degree = net.full_degree
    else:
        received = np.where(active_dir, q, 0.0) @ net.incidence
        degree = active_dir @ net.incidence
    x_next = (1.0 - a_i * degree) * x + a_i * received
    return x_next, q, y, saturated


# ---------------------------------------------------------------------------
# single step

@dataclass
class StepRecord:
    iteration: int
    active_edges: np.ndarray
    sampled_laplacian: np.ndarray
    upsilon: np.ndarray
    psi: np.ndarray
    next_state: Optional[np.ndarray]
    saturated: bool = False


def qc_step(
    state,
    model: LinkFailureModel,
    weights: WeightSequence,
    i: int,
    dither: DitherSource,
    spec: QuantizerSpec,
    link_rng: np.random.Generator,
) -> StepRecord:
    """Advance one iteration of QC (or QCF when ``spec`` is finite).

    Draws the topology from ``link_rng`` and one dither per directed
    realizable link from ``dither``. With a finite quantizer, an overload on
    any active link returns a record with ``saturated=True`` and no next
    state.
    """
    x = np.asarray(state, dtype=float).reshape(1, -1)
    if x.shape[1] != model.n_nodes:
        raise ValueError("state length does not match the network")
    if spec.step != dither.step:
        raise ValueError("dither step does not match the quantizer step")
    net = _Network(model)
    d_i = float(weights.delta(i, spec.step))
    a_i = alpha(weights, i)
    active = sample_edges_block(model, link_rng, 1)[0]
    active_dir = np.concatenate([active, active])
    nu = to_dither(dither.unit(2 * net.n_edges), d_i)
    limit = None if spec.levels is None else (spec.levels + 0.5) * d_i
    x_next, q, y, sat = _advance(net, x, active_dir[None, :], nu[None, :], a_i, d_i, limit)
    eps = q[0] - y[0]
    upsilon = -(np.where(active_dir, nu, 0.0) @ net.incidence)
    psi = -(np.where(active_dir, eps, 0.0) @ net.incidence)
    saturated = bool(sat[0]) if sat is not None else False
    return StepRecord(
        iteration=i,
        active_edges=active,
        sampled_laplacian=laplacian(model.base, active),
        upsilon=upsilon,
        psi=psi,
        next_state=None if saturated else x_next[0],
        saturated=saturated,
    )


# ---------------------------------------------------------------------------
# batched engine

@dataclass
class BatchResult:
    final_states: np.ndarray            # (T, N)
    saturated: np.ndarray               # (T,) bool
    stop_iterations: np.ndarray         # (T,) int, -1 when never saturated
    iterations_run: int
    checkpoints: np.ndarray             # (K,)
    checkpoint_states: np.ndarray       # (K, T, N)
    sup_norm: Optional[np.ndarray] = None   # (T,) sup_j ||x(j)||
    sup_abs: Optional[np.ndarray] = None    # (T,) sup_j max_n |x_n(j)|
    record_iterations: Optional[np.ndarray] = None
    record_states: Optional[np.ndarray] = None  # (R, N), single-trial only
    early_stopped: bool = False


def simulate(
    config: ConsensusConfig,
    streams: Sequence[tuple[np.random.Generator, np.random.Generator]],
    checkpoints: Sequence[int] = (),
    track_sup: bool = False,
    record: bool = False,
) -> BatchResult:
    """Run ``len(streams)`` independent trials of the same configuration.

    ``checkpoints`` lists iterations ``i`` (0..max_iter) at which x(i) is
    stored for every trial. ``record`` keeps a strided trajectory and is only
    allowed for a single trial.
    """
    n_trials = len(streams)
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if record and n_trials != 1:
        raise ValueError("trajectories are recorded for single runs only")
    model, weights, spec = config.model, config.weights, config.quantizer
    net = _Network(model)
    n, m = model.n_nodes, net.n_edges
    max_iter = int(config.max_iter)

    checkpoints = np.array(sorted(set(int(c) for c in checkpoints)), dtype=int)
    if checkpoints.size and (checkpoints[0] < 0 or checkpoints[-1] > max_iter):
        raise ValueError("checkpoints must lie in [0, max_iter]")
    ck_states = np.zeros((checkpoints.size, n_trials, n))
    ck_pos = 0

    x = np.tile(config.x0, (n_trials, 1))
    alive = np.ones(n_trials, dtype=bool)
    stop_iter = np.full(n_trials, -1, dtype=int)
    sup_norm = np.linalg.norm(x, axis=1) if track_sup else None
    sup_abs = np.abs(x).max(axis=1) if track_sup else None

    stride = config.stride()
    rec_iters, rec_states = [], []
    early_tol = config.early_stop_tol if record else None
    calm = 0
    early_stopped = False

    def store(i):
        nonlocal ck_pos
        while ck_pos < checkpoints.size and checkpoints[ck_pos] == i:
            ck_states[ck_pos] = x
            ck_pos += 1

    def keep_record(i):
        nonlocal calm
        rec_iters.append(i)
        rec_states.append(x[0].copy())
        if early_tol is not None:
            spread = x[0].max() - x[0].min()
            calm = calm + 1 if spread < early_tol else 0

    store(0)
    if record:
        keep_record(0)

    bounded = spec.levels is not None
    block = max(1, BLOCK_FLOATS // max(1, n_trials * 2 * max(m, 1)))
    i = 0
    while i < max_iter and not early_stopped:
        size = min(block, max_iter - i)
        iters = np.arange(i, i + size)
        a_blk = alpha(weights, iters)
        d_blk = np.asarray(weights.delta(iters, spec.step), dtype=float)
        units = np.stack([d_rng.random((size, 2 * m)) for _, d_rng in streams])
        if net.all_active:
            act_blk = None
        else:
            masks = np.stack([sample_edges_block(model, l_rng, size) for l_rng, _ in streams])
            act_blk = np.concatenate([masks, masks], axis=2)
        for j in range(size):
            d_i = d_blk[j]
            a_i = a_blk[j]
            nu = to_dither(units[:, j, :], d_i)
            act = None if act_blk is None else act_blk[:, j, :]
            limit = (spec.levels + 0.5) * d_i if bounded else None
            x_next, _, _, sat = _advance(net, x, act, nu, a_i, d_i, limit)
            if sat is not None:
                newly = sat & alive
                if newly.any():
                    stop_iter[newly] = i
                    alive &= ~newly
                x_next[~alive] = 0.0
            x = x_next
            i += 1
            if track_sup:
                np.maximum(sup_norm, np.linalg.norm(x, axis=1), out=sup_norm)
                np.maximum(sup_abs, np.abs(x).max(axis=1), out=sup_abs)
            store(i)
            if record:
                if not alive[0]:
                    # the reset state replaces x(i*) in the record
                    if rec_iters[-1] == stop_iter[0]:
                        rec_iters.pop()
                        rec_states.pop()
                    keep_record(stop_iter[0])
                    break
                if i % stride == 0 or i == max_iter:
                    keep_record(i)
                    if early_tol is not None and calm >= EARLY_STOP_WINDOW:
                        early_stopped = True
                        break
        if record and not alive[0]:
            break

    if record:
        # iterations after a single-trial stop never ran; fill their checkpoints
        while ck_pos < checkpoints.size:
            ck_states[ck_pos] = x
            ck_pos += 1

    return BatchResult(
        final_states=x,
        saturated=~alive,
        stop_iterations=stop_iter,
        iterations_run=i,
        checkpoints=checkpoints,
        checkpoint_states=ck_states,
        sup_norm=sup_norm,
        sup_abs=sup_abs,
        record_iterations=np.array(rec_iters, dtype=int) if record else None,
        record_states=np.array(rec_states) if record else None,
        early_stopped=early_stopped,
    )


# ---------------------------------------------------------------------------
# single runs

@dataclass
class Trajectory:
    iterations: np.ndarray
    states: np.ndarray

    @property
    def averages(self) -> np.ndarray:
        return self.states.mean(axis=1)

    @property
    def residuals(self) -> np.ndarray:
        return self.states - self.averages[:, None]

    @property
    def residual_norms(self) -> np.ndarray:
        return np.linalg.norm(self.residuals, axis=1)

    @property
    def spreads(self) -> np.ndarray:
        return self.states.max(axis=1) - self.states.min(axis=1)


@dataclass
class RunOutcome:
    status: str
    theta_hat: float
    final_state: np.ndarray
    iterations: int
    stop_iteration: Optional[int] = None
    trajectory: Optional[Trajectory] = None

    @property
    def saturated(self) -> bool:
        return self.status == SATURATED

    @property
    def spread(self) -> float:
        return float(self.final_state.max() - self.final_state.min())


def check_network(model: LinkFailureModel, weights: WeightSequence) -> None:
    """Warn about configurations the analysis does not cover well."""
    spec = spectral(mean_laplacian(model))
    if not spec.connected_on_average:
        warnings.warn(
            "mean Laplacian has lambda2 <= 1e-9: the network is not connected on average",
            RuntimeWarning,
            stacklevel=3,
        )
    max_deg = int(model.base.degrees().max(initial=0))
    if alpha(weights, 0) * max_deg >= 1.0:
        warnings.warn(
            f"alpha(0) * max degree = {alpha(weights, 0) * max_deg:.3g} >= 1; early iterations may overshoot",
            RuntimeWarning,
            stacklevel=3,
        )


def _outcome(config: ConsensusConfig, res: BatchResult) -> RunOutcome:
    final = res.final_states[0]
    traj = None
    if res.record_iterations is not None:
        traj = Trajectory(res.record_iterations, res.record_states)
    if res.saturated[0]:
        return RunOutcome(SATURATED, 0.0, final, res.iterations_run, int(res.stop_iterations[0]), traj)
    status = CONVERGED if res.early_stopped else MAX_ITERATIONS
    stop = res.iterations_run if res.early_stopped else None
    return RunOutcome(status, float(final.mean()), final, res.iterations_run, stop, traj)


def _run(config: ConsensusConfig, seed, record: bool) -> RunOutcome:
    check_network(config.model, config.weights)
    if isinstance(seed, tuple):
        streams = [seed]
    else:
        streams = [trial_streams(seed, 0)]
    return _outcome(config, simulate(config, streams, record=record))


def run_qc(config: ConsensusConfig, seed=0, record: bool = True) -> RunOutcome:
    """Single QC run with an unbounded quantizer.

    ``seed`` is a master seed (the run is trial 0 of that seed) or an
    explicit ``(link_rng, dither_rng)`` pair.
    """
    if config.quantizer.levels is not None:
        raise ValueError("run_qc needs an unbounded quantizer; use run_qcf")
    return _run(config, seed, record)


def check_initial_bound(x0, b: Optional[float]) -> None:
    if b is None:
        raise ValueError("QCF needs the initial-state bound b")
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    worst = float(np.max(np.abs(x0), initial=0.0))
    if worst > b:
        raise ValueError(f"initial state violates |x0_n| <= b ({worst} > {b})")


def run_qcf(config: ConsensusConfig, seed=0, record: bool = True) -> RunOutcome:
    """Single QCF run: QC with a (2p+1)-level quantizer that stops and
    resets every state to zero on the first overload."""
    if config.quantizer.levels is None:
        raise ValueError("run_qcf needs a finite quantizer (levels=p)")
    check_initial_bound(config.x0, config.b)
    return _run(config, seed, record)


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleStats:
    r: float
    thetas: np.ndarray
    final_states: np.ndarray
    saturated: np.ndarray
    stop_iterations: np.ndarray
    checkpoints: np.ndarray
    checkpoint_states: np.ndarray
    epsilon: Optional[float] = None
    sup_norm: Optional[np.ndarray] = None
    sup_abs: Optional[np.ndarray] = None
    mean_l: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def trials(self) -> int:
        return self.thetas.size

    @property
    def mean_theta(self) -> float:
        return float(self.thetas.mean())

    @property
    def theta_std(self) -> float:
        return float(self.thetas.std(ddof=1)) if self.trials > 1 else 0.0

    @property
    def theta_se(self) -> float:
        return self.theta_std / np.sqrt(self.trials)

    @property
    def empirical_mse(self) -> float:
        return float(np.mean((self.thetas - self.r) ** 2))

    @property
    def saturation_frequency(self) -> float:
        return float(self.saturated.mean())

    def eps_consensus_frequency(self, epsilon: Optional[float] = None) -> float:
        eps = self.epsilon if epsilon is None else epsilon
        if eps is None or not eps > 0:
            raise ValueError("epsilon must be positive")
        ok = np.all(np.abs(self.final_states - self.r) < eps, axis=1)
        return float(ok.mean())

    @property
    def spreads(self) -> np.ndarray:
        return self.final_states.max(axis=1) - self.final_states.min(axis=1)

    def spread_quantiles(self, qs=(0.5, 0.9, 0.99, 1.0)) -> dict:
        return {float(q): float(np.quantile(self.spreads, q)) for q in qs}

    # checkpoint statistics, arrays of shape (K,)
    def mean_residual_norm(self) -> np.ndarray:
        res = self.checkpoint_states - self.checkpoint_states.mean(axis=2, keepdims=True)
        return np.linalg.norm(res, axis=2).mean(axis=1)

    def mean_sq_error(self) -> np.ndarray:
        """Trial average of ||x(i) - r 1||^2 at each checkpoint."""
        return np.sum((self.checkpoint_states - self.r) ** 2, axis=2).mean(axis=1)

    def mean_sq_residual(self) -> np.ndarray:
        res = self.checkpoint_states - self.checkpoint_states.mean(axis=2, keepdims=True)
        return np.sum(res**2, axis=2).mean(axis=1)

    def potential(self) -> np.ndarray:
        """V(i, x(i)) = x^T Lbar x per checkpoint and trial, shape (K, T)."""
        return np.einsum("ktn,nm,ktm->kt", self.checkpoint_states, self.mean_l, self.checkpoint_states)

    def w_values(self, inputs) -> np.ndarray:
        """W(i, x(i)) = (1 + V) * prod_{j >= i} (1 + g(j)), shape (K, T)."""
        from .bounds import log_prod_one_plus_g

        tail = np.array([np.exp(log_prod_one_plus_g(inputs, start=int(i))) for i in self.checkpoints])
        return (1.0 + self.potential()) * tail[:, None]

    def mean_w(self, inputs) -> np.ndarray:
        return self.w_values(inputs).mean(axis=1)


def monte_carlo(
    config: ConsensusConfig,
    trials: int,
    master_seed: int = 0,
    epsilon: Optional[float] = None,
    checkpoints: Sequence[int] = (),
    track_sup: bool = False,
    batch_size: int = 1000,
) -> EnsembleStats:
    """Run ``trials`` independent seeded trials of ``config``.

    Trial ``t`` draws from :func:`trial_streams` ``(master_seed, t)``, so
    results do not depend on ``batch_size``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if config.quantizer.levels is not None:
        check_initial_bound(config.x0, config.b)
    check_network(config.model, config.weights)
    parts = []
    for start in range(0, trials, batch_size):
        stop = min(trials, start + batch_size)
        streams = [trial_streams(master_seed, t) for t in range(start, stop)]
        parts.append(simulate(config, streams, checkpoints=checkpoints, track_sup=track_sup))

    def cat(name, axis=0):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals, axis=axis)

    finals = cat("final_states")
    return EnsembleStats(
        r=config.initial_average,
        thetas=finals.mean(axis=1),
        final_states=finals,
        saturated=cat("saturated"),
        stop_iterations=cat("stop_iterations"),
        checkpoints=parts[0].checkpoints,
        checkpoint_states=cat("checkpoint_states", axis=1),
        epsilon=epsilon,
        sup_norm=cat("sup_norm"),
        sup_abs=cat("sup_abs"),
        mean_l=mean_laplacian(config.model),
    )
