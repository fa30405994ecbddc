"""Finite-chain numerics: kernels, stationary laws, mixing, hitting times.

Transition kernels are scipy CSR matrices throughout. Dense linear algebra
is used below ``DIRECT_SOLVE_LIMIT`` states and sparse iteration above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .dfa import Dfa

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10
POWER_ITERATION_TOL = 1e-13
DIRECT_SOLVE_LIMIT = 5000
MIXING_THRESHOLD = 1.0 / (2.0 * math.e)


class MultipleRecurrentClassesError(Exception):
    """The chain has more than one recurrent class, so pi is not unique."""

    def __init__(self, classes):
        self.classes = classes
        sizes = [len(c) for c in classes]
        super().__init__(f"chain has {len(classes)} recurrent classes (sizes {sizes})")


class UnreachableTargetError(Exception):
    """The target set cannot be reached from the support of the start law."""


@dataclass(eq=False)
class ChainSpec:
    """A finite row-stochastic kernel with its recurrent-class structure.

    ``recurrent_classes`` lists the closed strongly connected components of
    the support digraph; ``stationary`` caches the stationary law once it
    has been computed (it exists and is unique iff there is exactly one
    recurrent class).
    """

    kernel: sp.csr_array
    recurrent_classes: list[np.ndarray] = field(repr=False)
    stationary: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    def validate(self, tol: float = ROW_SUM_TOL) -> None:
        """Check row-stochasticity within ``tol``; raise on violation."""
        sums = np.asarray(self.kernel.sum(axis=1)).ravel()
        worst = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        if worst > tol:
            raise ValueError(f"row sums deviate from 1 by {worst:.3e} > {tol:.0e}")
        if self.kernel.nnz and self.kernel.data.min() < 0:
            raise ValueError("kernel has negative entries")


def make_chain(kernel: sp.spmatrix) -> ChainSpec:
    """Wrap a row-stochastic matrix, computing its recurrent classes."""
    kernel = sp.csr_array(kernel)
    chain = ChainSpec(kernel=kernel, recurrent_classes=_recurrent_classes(kernel))
    chain.validate()
    return chain


def _recurrent_classes(kernel: sp.csr_array) -> list[np.ndarray]:
    n_comp, labels = connected_components(kernel, directed=True, connection="strong")
    # A class is recurrent iff no edge leaves it.
    coo = kernel.tocoo()
    edge_mask = coo.data > 0
    open_comp = np.zeros(n_comp, dtype=bool)
    src = labels[coo.row[edge_mask]]
    dst = labels[coo.col[edge_mask]]
    open_comp[src[src != dst]] = True
    return [np.flatnonzero(labels == c) for c in range(n_comp) if not open_comp[c]]


def walk_matrix(d: Dfa) -> ChainSpec:
    """Kernel of the single walk: each step picks a uniform color.

    With the one-to-one out-map every nonzero entry is exactly ``1/r`` and
    every row has exactly ``r`` nonzeros.
    """
    rows = np.repeat(np.arange(d.n), d.r)
    cols = d.out.ravel()
    data = np.full(d.n * d.r, 1.0 / d.r)
    kernel = sp.csr_array((data, (rows, cols)), shape=(d.n, d.n))
    return make_chain(kernel)


def product_matrix(c: ChainSpec, max_states: int = 4_000_000) -> ChainSpec:
    """Kernel of two independent copies, ``P (x) P`` on pair states.

    Pair ``(x, x')`` is indexed row-major as ``x * n + x'``. Refuses to
    build more than ``max_states`` states.
    """
    n = c.size
    if n * n > max_states:
        raise ValueError(f"product chain would have {n * n} states > cap {max_states}")
    kernel = sp.kron(c.kernel, c.kernel, format="csr")
    return make_chain(kernel)


def stationary_distribution(
    c: ChainSpec,
    method: str = "auto",
    tol: float = POWER_ITERATION_TOL,
    max_iter: int = 10**6,
) -> np.ndarray:
    """Solve ``pi P = pi`` for the unique stationary law.

    Requires exactly one recurrent class and raises
    :class:`MultipleRecurrentClassesError` otherwise; callers sampling
    random DFAs typically resample on that error. ``method`` is ``"direct"``
    (dense solve on the recurrent class), ``"power"`` (L1 residual below
    ``tol``), or ``"auto"`` which solves directly up to
    ``DIRECT_SOLVE_LIMIT`` states.

    The result is cached on ``c.stationary``.
    """
    if c.stationary is not None:
        return c.stationary
    if len(c.recurrent_classes) != 1:
        raise MultipleRecurrentClassesError(c.recurrent_classes)
    support = c.recurrent_classes[0]
    if method == "auto":
        method = "direct" if len(support) <= DIRECT_SOLVE_LIMIT else "power"
    if method == "direct":
        pi_supp = _stationary_direct(c.kernel, support)
    elif method == "power":
        pi_supp = _stationary_power(c.kernel, support, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.zeros(c.size)
    pi[support] = pi_supp
    residual = float(np.abs(pi @ c.kernel - pi).sum())
    if residual > STATIONARY_RESIDUAL_TOL:
        raise RuntimeError(f"stationary residual {residual:.3e} above tolerance")
    c.stationary = pi
    return pi


def _stationary_direct(kernel: sp.csr_array, support: np.ndarray) -> np.ndarray:
    sub = kernel[np.ix_(support, support)].toarray()
    m = len(support)
    a = sub.T - np.eye(m)
    a[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def _stationary_power(kernel, support, tol, max_iter):
    sub = kernel[np.ix_(support, support)].tocsr()
    x = np.full(len(support), 1.0 / len(support))
    # Half-lazy iteration keeps periodic classes convergent; the residual is
    # still measured against the original kernel.
    for _ in range(max_iter):
        x_next = 0.5 * (x + x @ sub)
        x_next /= x_next.sum()
        if np.abs(x_next @ sub - x_next).sum() <= tol:
            return x_next
        x = x_next
    raise RuntimeError(f"power iteration did not reach {tol:.0e} in {max_iter} iterations")


def ergodic_walk_chain(n: int, r: int, seed: int, max_resamples: int = 64):
    """Generate a DFA whose walk chain has a unique recurrent class.

    Uniqueness of the stationary law only holds with high probability, so
    the draw is retried with seeds derived from ``(seed, k, "resample")``
    until it does; the retry count is returned for reporting.

    Returns ``(dfa, chain, resample_count)``.
    """
    from .dfa import generate_dfa
    from .seeds import seed_split

    current = seed
    for k in range(max_resamples + 1):
        d = generate_dfa(n, r, current)
        chain = walk_matrix(d)
        if len(chain.recurrent_classes) == 1:
            return d, chain, k
        current = seed_split(seed, k + 1, "resample")
    raise RuntimeError(f"no ergodic draw within {max_resamples} resamples of seed {seed}")


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance ``0.5 * sum |p_i - q_i|``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class MixingProfile:
    """Worst-start TV distance to stationarity per step, up to a cap."""

    d_tv: np.ndarray
    t_mix: int | None
    threshold: float = MIXING_THRESHOLD

    @property
    def mixed(self) -> bool:
        return self.t_mix is not None


def mixing_profile(c: ChainSpec, t_cap: int, batch_size: int = 2000) -> MixingProfile:
    """Compute ``d_tv(t) = max_x TV(P^t(x, .), pi)`` for ``t = 0..t_cap``.

    ``t_mix`` is the first ``t`` with ``d_tv(t) <= 1/(2e)``, or ``None``
    when the cap is exhausted first (flagged, not fatal). Start states are
    processed in row batches so memory stays at ``batch_size * N`` floats.
    """
    pi = stationary_distribution(c)
    n = c.size
    d_tv = np.zeros(t_cap + 1)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        block = np.zeros((stop - start, n))
        block[np.arange(stop - start), np.arange(start, stop)] = 1.0
        d_tv[0] = max(d_tv[0], 0.5 * float(np.abs(block - pi).sum(axis=1).max()))
        for t in range(1, t_cap + 1):
            block = block @ c.kernel
            d_tv[t] = max(d_tv[t], 0.5 * float(np.abs(block - pi).sum(axis=1).max()))
    below = np.flatnonzero(d_tv <= MIXING_THRESHOLD)
    t_mix = int(below[0]) if below.size else None
    return MixingProfile(d_tv=d_tv, t_mix=t_mix)


@dataclass
class PiExtremes:
    """Extremes of pi with the finite-n comparison thresholds."""

    min_over_support: float
    max_value: float
    min_threshold: float
    max_threshold: float
    log_base: float


def measure_pi_extremes(c: ChainSpec, log_base: float = math.e) -> PiExtremes:
    """Report ``min_supp pi`` and ``max pi`` next to ``n^-1.8`` and ``log^8(n)/n``.

    The log base only affects the reported thresholds, never the measured
    values; natural log is the default.
    """
    pi = stationary_distribution(c)
    support = pi > 0
    n = c.size
    log_n = math.log(n) / math.log(log_base)
    return PiExtremes(
        min_over_support=float(pi[support].min()),
        max_value=float(pi.max()),
        min_threshold=n**-1.8,
        max_threshold=log_n**8 / n,
        log_base=log_base,
    )


def hitting_time_expectation(c: ChainSpec, start: np.ndarray, target_set) -> float:
    """Exact ``E[tau_target]`` by first-step analysis.

    Solves ``(I - P_restricted) h = 1`` on the set of non-target states that
    can reach the target; states that cannot reach it have infinite hitting
    time, and any start mass there raises :class:`UnreachableTargetError`.
    Start mass already inside the target contributes 0.
    """
    n = c.size
    start = np.asarray(start, dtype=float)
    if start.shape != (n,):
        raise ValueError(f"start distribution must have length {n}")
    targets = np.zeros(n, dtype=bool)
    targets[np.asarray(list(target_set), dtype=int)] = True
    if not targets.any():
        raise ValueError("target set is empty")

    reach = _backward_reachable(c.kernel, targets)
    solvable = reach & ~targets
    bad_mass = float(start[~reach & ~targets].sum())
    if bad_mass > 0:
        raise UnreachableTargetError(
            f"start mass {bad_mass:.3g} on states that cannot reach the target"
        )
    if not solvable.any():
        return 0.0
    idx = np.flatnonzero(solvable)
    sub = c.kernel[np.ix_(idx, idx)]
    if len(idx) <= DIRECT_SOLVE_LIMIT:
        h = np.linalg.solve(np.eye(len(idx)) - sub.toarray(), np.ones(len(idx)))
    else:
        h = sp.linalg.spsolve(
            (sp.eye_array(len(idx), format="csr") - sub).tocsc(), np.ones(len(idx))
        )
    return float(start[idx] @ h)


def _backward_reachable(kernel: sp.csr_array, targets: np.ndarray) -> np.ndarray:
    """States from which the target set is reachable (targets included)."""
    rt = kernel.T.tocsr()
    reach = targets.copy()
    frontier = np.flatnonzero(targets)
    while frontier.size:
        neighbors = np.unique(rt[frontier].indices)
        new = neighbors[~reach[neighbors]]
        reach[new] = True
        frontier = new
    return reach


def hitting_time_tail_sum(
    c: ChainSpec, start: np.ndarray, target_set, tail_tol: float = 1e-9, max_steps: int = 10**6
) -> float:
    """Oracle for :func:`hitting_time_expectation`: ``sum_t P(tau > t)``.

    Dynamic-programming survival iteration, truncated once a windowed
    geometric bound puts the remaining tail below ``tail_tol``. Intended
    for small chains.
    """
    n = c.size
    targets = np.zeros(n, dtype=bool)
    targets[np.asarray(list(target_set), dtype=int)] = True
    survival = np.asarray(start, dtype=float).copy()
    survival[targets] = 0.0
    kernel = c.kernel.toarray()
    kernel[:, targets] = 0.0
    total = 0.0
    alive = survival.sum()
    ratios: list[float] = []
    for _ in range(max_steps):
        if alive <= 0:
            return total
        total += alive
        survival = survival @ kernel
        new_alive = float(survival.sum())
        ratios.append(new_alive / alive if alive > 0 else 1.0)
        alive = new_alive
        # Survival probabilities are non-increasing; bound the tail by the
        # worst contraction ratio seen over the last 50 steps.
        if len(ratios) >= 50:
            rho = max(ratios[-50:])
            if rho < 1 and alive / (1 - rho) < tail_tol:
                return total + alive / (1 - rho)
    raise RuntimeError(f"tail sum did not converge within {max_steps} steps")
