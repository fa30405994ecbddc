"""First-visit-time numerics on finite ergodic chains.

For a chain ``Q`` with stationary law ``mu`` and a target state, the
hitting time from stationarity is approximately geometric with rate
``mu(target) / R``, where ``R`` counts expected returns to the target
within a short horizon. The exact finite-chain identities behind this are

* ``E_mu[tau] = Z(target, target) / mu(target)`` with the fundamental
  matrix ``Z = sum_t (Q^t - mu)``,
* a quasi-stationary pair ``(mu_star, lambda_star)`` with exactly
  geometric tails ``(1 - lambda_star)^t`` and mean ``1 / lambda_star``.

These identities are what the test suite verifies to near machine
precision; the geometric rate prediction itself is asymptotic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .chains import ChainSpec, hitting_time_expectation, make_chain, stationary_distribution

Z_TERM_TOL = 1e-14
Z_CONSECUTIVE_SMALL = 50
PERRON_TOL = 1e-13


class PerronConvergenceError(Exception):
    """Power iteration for the quasi-stationary pair failed to converge."""

    def __init__(self, iterations: int, last_delta: float):
        self.iterations = iterations
        self.last_delta = last_delta
        super().__init__(
            f"no convergence after {iterations} iterations (last delta {last_delta:.3e})"
        )


@dataclass
class QuasiStationaryPair:
    """Dominant left eigenpair of the target-deleted sub-kernel.

    ``lambda_star`` is one minus the Perron root; ``mu_star`` is the
    normalized left Perron vector embedded in full-chain indexing (zero at
    the target). ``tied_closed_classes`` flags a non-unique pair: several
    closed communicating classes of the sub-kernel share the dominant
    root.
    """

    lambda_star: float
    mu_star: np.ndarray = field(repr=False)
    iterations: int
    tied_closed_classes: bool = False


@dataclass
class FvtlReport:
    """Exact finite-chain quantities behind the geometric rate prediction."""

    target: int
    mu_target: float
    t_horizon: int
    return_mass: float
    z_dd: float
    predicted_lambda: float
    expected_hitting_from_mu: float
    lambda_star: float | None = None
    mu_star: np.ndarray | None = field(default=None, repr=False)
    qs_tied: bool = False


def target_return_series(c: ChainSpec, target: int, t_max: int) -> np.ndarray:
    """``Q^t(target, target)`` for ``t = 0..t_max`` by row iteration."""
    row = np.zeros(c.size)
    row[target] = 1.0
    series = np.empty(t_max + 1)
    series[0] = 1.0
    for t in range(1, t_max + 1):
        row = row @ c.kernel
        series[t] = row[target]
    return series


def auto_horizon(c: ChainSpec, target: int, relax_factor: float = 1.5) -> int:
    """Smallest ``t >= 1`` with ``Q^t(target, target)`` within ``relax_factor``
    of ``mu(target)``, capped at ``ceil(log(N)**5)``."""
    mu = stationary_distribution(c)
    cap = max(1, math.ceil(math.log(max(c.size, 2)) ** 5))
    level = relax_factor * mu[target]
    row = np.zeros(c.size)
    row[target] = 1.0
    for t in range(1, cap + 1):
        row = row @ c.kernel
        if row[target] <= level:
            return t
    return cap


def fundamental_matrix_entry(
    c: ChainSpec,
    target: int,
    term_tol: float = Z_TERM_TOL,
    consecutive: int = Z_CONSECUTIVE_SMALL,
    max_steps: int = 10**6,
) -> float:
    """``Z(target, target) = sum_t (Q^t(target, target) - mu(target))``.

    The series is summed until ``consecutive`` successive terms fall below
    ``term_tol`` in magnitude; after mixing the terms decay geometrically,
    so the truncated tail is negligible at that point.
    """
    mu = stationary_distribution(c)
    row = np.zeros(c.size)
    row[target] = 1.0
    total = 1.0 - mu[target]
    small = 0
    for _ in range(max_steps):
        row = row @ c.kernel
        term = row[target] - mu[target]
        total += term
        small = small + 1 if abs(term) < term_tol else 0
        if small >= consecutive:
            return float(total)
    raise RuntimeError(f"fundamental matrix series did not settle in {max_steps} steps")


def quasi_stationary_pair(
    c: ChainSpec,
    target: int,
    tol: float = PERRON_TOL,
    max_iter: int = 10**6,
) -> QuasiStationaryPair:
    """Power iteration for the dominant left eigenpair of ``[Q]_target``.

    The sub-kernel is not assumed irreducible; iteration starts from a
    strictly positive vector and converges to the dominant closed class.
    A tie in the Perron root across several closed classes is reported via
    ``tied_closed_classes``.
    """
    keep = np.arange(c.size) != target
    sub = c.kernel[np.ix_(keep, keep)].tocsr()
    m = sub.shape[0]
    v = np.full(m, 1.0 / m)
    delta = math.inf
    for it in range(1, max_iter + 1):
        # Half-lazy update: shifts the spectrum so the Perron root is the
        # unique dominant eigenvalue in modulus even for periodic classes.
        w = 0.5 * (v + v @ sub)
        w /= w.sum()
        delta = float(np.abs(w - v).sum())
        v = w
        if delta <= tol:
            break
    else:
        raise PerronConvergenceError(max_iter, delta)

    root = float((v @ sub).sum())
    mu_star = np.zeros(c.size)
    mu_star[keep] = v
    tied = _closed_class_root_tie(sub, root)
    return QuasiStationaryPair(
        lambda_star=float(1.0 - root), mu_star=mu_star, iterations=it, tied_closed_classes=tied
    )


def _closed_class_root_tie(sub: sp.csr_array, root: float, rel_tol: float = 1e-9) -> bool:
    """True when several closed classes of the sub-kernel tie for the root."""
    n_comp, labels = connected_components(sub, directed=True, connection="strong")
    if n_comp <= 1:
        return False
    coo = sub.tocoo()
    open_comp = np.zeros(n_comp, dtype=bool)
    src, dst = labels[coo.row], labels[coo.col]
    open_comp[src[src != dst]] = True
    closed = [np.flatnonzero(labels == k) for k in range(n_comp) if not open_comp[k]]
    if len(closed) <= 1:
        return False
    at_root = 0
    for cls in closed:
        block = sub[np.ix_(cls, cls)].toarray()
        cls_root = float(np.max(np.abs(np.linalg.eigvals(block))))
        if abs(cls_root - root) <= rel_tol * max(root, 1e-300):
            at_root += 1
    return at_root > 1


def fvtl_quantities(
    c: ChainSpec,
    target: int,
    t_horizon: int | None = None,
    compute_quasi_stationary: bool = True,
) -> FvtlReport:
    """Assemble the first-visit-time report for one target state.

    ``t_horizon`` defaults to the adaptive relaxation horizon of
    :func:`auto_horizon`. Requires the target to carry stationary mass.
    """
    mu = stationary_distribution(c)
    if mu[target] <= 0:
        raise ValueError(f"target {target} is outside the support of the stationary law")
    if t_horizon is None:
        t_horizon = auto_horizon(c, target)
    series = target_return_series(c, target, t_horizon)
    r_mass = float(series.sum())
    z_dd = fundamental_matrix_entry(c, target)
    expected = hitting_time_expectation(c, mu, [target])
    report = FvtlReport(
        target=target,
        mu_target=float(mu[target]),
        t_horizon=t_horizon,
        return_mass=r_mass,
        z_dd=z_dd,
        predicted_lambda=float(mu[target] / r_mass),
        expected_hitting_from_mu=float(expected),
    )
    if compute_quasi_stationary:
        pair = quasi_stationary_pair(c, target)
        report.lambda_star = pair.lambda_star
        report.mu_star = pair.mu_star
        report.qs_tied = pair.tied_closed_classes
    return report


def quasi_stationary_tail_check(
    c: ChainSpec,
    target: int,
    t_max: int | None = None,
    pair: QuasiStationaryPair | None = None,
) -> float:
    """``max_t |P_{mu_star}(tau > t) / (1 - lambda_star)^t - 1|`` up to ``t_max``.

    The survival probabilities are iterated in normalized form, dividing by
    ``1 - lambda_star`` each step, so no underflow occurs even for long
    horizons. ``t_max`` defaults to ``ceil(10 / lambda_star)``.
    """
    if pair is None:
        pair = quasi_stationary_pair(c, target)
    if pair.lambda_star == 1.0:
        # degenerate absorption in one step: both tails are exactly zero
        return 0.0
    if t_max is None:
        t_max = math.ceil(10.0 / pair.lambda_star)
    keep = np.arange(c.size) != target
    sub = c.kernel[np.ix_(keep, keep)].tocsr()
    v = pair.mu_star[keep]
    scale = 1.0 - pair.lambda_star
    worst = abs(float(v.sum()) - 1.0)
    for _ in range(t_max):
        v = (v @ sub) / scale
        worst = max(worst, abs(float(v.sum()) - 1.0))
    return worst


def uniform_start_ratio(c: ChainSpec, target: int, horizons) -> float:
    """``sup_t max_x P_x(tau > t) / P_mu(tau > t)`` over a horizon grid.

    Exact survival vectors from every start are compared against the
    stationary-start tail at each requested horizon.
    """
    horizons = sorted(set(int(t) for t in horizons))
    if not horizons or horizons[0] < 0:
        raise ValueError("horizons must be nonnegative integers")
    mu = stationary_distribution(c)
    survival = np.ones(c.size)
    survival[target] = 0.0
    worst = 0.0
    t = 0
    for horizon in horizons:
        while t < horizon:
            survival = c.kernel @ survival
            survival[target] = 0.0
            t += 1
        from_mu = float(mu @ survival)
        if from_mu <= 0:
            raise ValueError(f"stationary-start tail vanished at t={t}")
        worst = max(worst, float(survival.max()) / from_mu)
    return worst


def two_state_chain(p: float, q: float) -> ChainSpec:
    """Rows ``(1-p, p)`` and ``(q, 1-q)``; closed forms are documented in tests."""
    kernel = sp.csr_array(np.array([[1.0 - p, p], [q, 1.0 - q]]))
    return make_chain(kernel)


def random_ergodic_chain(rng: np.random.Generator, max_states: int = 40) -> ChainSpec:
    """Random irreducible aperiodic chain with at most ``max_states`` states.

    Rows are Dirichlet-like draws, randomly sparsified; a small uniform
    self-loop keeps the chain aperiodic and draws are retried until the
    support digraph is strongly connected.
    """
    while True:
        m = int(rng.integers(3, max_states + 1))
        alpha = rng.uniform(0.3, 2.0)
        rows = rng.gamma(alpha, size=(m, m))
        if rng.random() < 0.5:
            mask = rng.random((m, m)) < rng.uniform(0.2, 0.5)
            rows[mask] = 0.0
        rows += 0.05 * np.eye(m)  # aperiodicity
        rows /= rows.sum(axis=1, keepdims=True)
        kernel = sp.csr_array(rows)
        n_comp, _ = connected_components(kernel, directed=True, connection="strong")
        if n_comp == 1:
            return make_chain(kernel)
