"""Bayesian adaptive measurement loop.

A posterior over a single-parameter grid is updated after every measurement,
and a tunable offset u is chosen per episode: FOP shifts the posterior mean
onto a fixed optimal operating point (the grid argmax of the scheme's CFI);
MI picks the offset maximizing the expected mutual information between the
next outcome and the parameter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import ValidationError, trapezoid_weights
from .io import write_csv
from .metrology import _cfim_matrix, _final_state

__all__ = [
    "AdaptiveStrategy",
    "SimulatedOutcomes",
    "ReplayOutcomes",
    "EpisodeRecord",
    "AdaptationLog",
    "adapt",
    "write_episode_csv",
]

_MASS_TOL = 1e-10


class AdaptiveStrategy:
    """Parameter grid, prior, offset grid, and the mutable posterior."""

    def __init__(self, x, p, dp=None, offsets=None):
        if isinstance(x, (tuple, list)) and len(x) and np.ndim(x[0]) == 1:
            if len(x) != 1:
                raise ValidationError("adaptive loops are single-parameter only")
            x = x[0]
        self.x = np.asarray(x, dtype=float).reshape(-1)
        if self.x.size < 2 or np.any(np.diff(self.x) <= 0):
            raise ValidationError("x must be a strictly increasing grid")
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape != self.x.shape:
            raise ValidationError(f"p shape {p.shape} != x shape {self.x.shape}")
        if np.any(p < 0):
            raise ValidationError("prior must be nonnegative")
        norm = float(np.trapezoid(p, self.x))
        if norm <= 0:
            raise ValidationError("prior has zero mass")
        if abs(norm - 1.0) > 1e-3:
            warnings.warn(f"prior renormalized by factor {1.0 / norm:.6g}")
        self.p = p / norm
        if dp is not None:
            if isinstance(dp, (tuple, list)) and len(dp) and np.ndim(dp[0]) == 1:
                dp = dp[0]
            self.dp = np.asarray(dp, dtype=float).reshape(-1) / norm
        else:
            self.dp = np.gradient(self.p, self.x)
        self.offsets = (
            np.asarray(offsets, dtype=float).reshape(-1)
            if offsets is not None
            else self.x.copy()
        )
        self.posterior = self.p.copy()

    def mean(self) -> float:
        return float(np.trapezoid(self.x * self.posterior, self.x))

    def sd(self) -> float:
        m = self.mean()
        var = float(np.trapezoid((self.x - m) ** 2 * self.posterior, self.x))
        return float(np.sqrt(max(var, 0.0)))


class SimulatedOutcomes:
    """Samples outcomes from the model at a fixed true parameter value."""

    def __init__(self, x_true: float, seed: int = 1234):
        self.x_true = float(x_true)
        self.rng = np.random.default_rng(seed)

    def draw(self, u, dist):
        probs = np.clip(dist(self.x_true + u), 0.0, None)
        total = probs.sum()
        if total <= 0:
            raise ValidationError("outcome distribution has zero mass")
        return int(self.rng.choice(probs.size, p=probs / total))


class ReplayOutcomes:
    """Feeds recorded outcomes (a newline-delimited integer file, or any
    iterable of ints) back into the loop."""

    def __init__(self, source):
        if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
            with open(source) as fh:
                items = [line.strip() for line in fh]
            outcomes = [int(s) for s in items if s]
        else:
            outcomes = [int(v) for v in source]
        self._it = iter(outcomes)

    def draw(self, u, dist):
        try:
            return next(self._it)
        except StopIteration:
            raise ValidationError("outcome record exhausted before max_episode")


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    offset: float
    outcome: int
    mean: float
    sd: float


@dataclass
class AdaptationLog:
    episodes: list
    strategy: AdaptiveStrategy
    x_star: float | None = None


def write_episode_csv(path, log: AdaptationLog):
    rows = [
        (e.episode, e.offset, e.outcome, e.mean, e.sd) for e in log.episodes
    ]
    write_csv(
        path,
        ("episode", "offset", "outcome", "posterior_mean", "posterior_sd"),
        rows,
    )


class _Likelihood:
    """Outcome probabilities of the scheme evaluated at parameter value y,
    cached on y rounded to 1e-9 (offset scans over a lattice of grid sums
    revisit the same values constantly)."""

    def __init__(self, scheme):
        self.scheme = scheme
        self.povm = scheme.measurement.povm
        self._cache = {}

    def __call__(self, y):
        key = round(float(y), 9)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        rho, _ = _final_state(self.scheme, np.array([float(y)]))
        probs = np.array(
            [float(np.real(np.trace(rho @ m))) for m in self.povm]
        )
        self._cache[key] = probs
        return probs

    def table(self, ys):
        return np.stack([self(y) for y in ys])


def _fop_operating_point(scheme, grid) -> float:
    """Grid point maximizing the scheme's CFI (computed once, up front)."""
    best_x, best_f = float(grid[0]), -np.inf
    povm = scheme.measurement.povm
    for xv in grid:
        rho, drho = _final_state(scheme, np.array([float(xv)]))
        f = float(_cfim_matrix(rho, drho, povm)[0, 0])
        if np.isfinite(f) and f > best_f:
            best_f, best_x = f, float(xv)
    return best_x


def _mutual_information(post, weights, like_table):
    """I(outcome; parameter) for one offset.

    like_table[i, m] = p(m | x_i + u); post is the current posterior on x.
    """
    joint = post[:, None] * like_table  # density over x, per outcome
    marg = weights @ joint
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(marg[None, :] > 0, like_table / marg[None, :], 1.0)
        logterm = np.where(like_table > 0, np.log(ratio), 0.0)
    return float(weights @ np.sum(joint * logterm, axis=1))


def adapt(
    scheme,
    strategy: AdaptiveStrategy | None = None,
    method: str = "FOP",
    max_episode: int = 1000,
    result_source=None,
) -> AdaptationLog:
    """Run the adaptive loop; the strategy's posterior is updated in place."""
    if method not in ("FOP", "MI"):
        raise ValidationError(f"method must be FOP or MI, got {method!r}")
    if max_episode < 0:
        raise ValidationError("max_episode must be nonnegative")
    if strategy is None:
        if scheme.prior is None:
            raise ValidationError(
                "adapt needs a strategy or a scheme with a prior"
            )
        if scheme.prior.n_params != 1:
            raise ValidationError("adaptive loops are single-parameter only")
        strategy = AdaptiveStrategy(
            scheme.prior.x[0], scheme.prior.p, scheme.prior.dp[0]
        )
    if result_source is None:
        raise ValidationError(
            "result_source is required (SimulatedOutcomes or ReplayOutcomes)"
        )
    if scheme.measurement is None:
        raise ValidationError("adapt needs a scheme with a measurement")

    x = strategy.x
    weights = trapezoid_weights(x)
    like = _Likelihood(scheme)
    x_star = _fop_operating_point(scheme, x) if method == "FOP" else None

    episodes = []
    for episode in range(max_episode):
        if method == "FOP":
            u = x_star - strategy.mean()
        else:
            best_u, best_i = float(strategy.offsets[0]), -np.inf
            for u_cand in strategy.offsets:
                table = like.table(x + u_cand)
                i_val = _mutual_information(strategy.posterior, weights, table)
                if i_val > best_i:
                    best_i, best_u = i_val, float(u_cand)
            u = best_u

        outcome = result_source.draw(u, like)
        table = like.table(x + u)
        if not 0 <= outcome < table.shape[1]:
            raise ValidationError(
                f"outcome {outcome} outside range of the {table.shape[1]}-element POVM"
            )
        post = strategy.posterior * table[:, outcome]
        norm = float(np.trapezoid(post, x))
        if norm <= 0:
            warnings.warn(
                f"episode {episode}: outcome {outcome} has zero likelihood "
                "everywhere; posterior left unchanged"
            )
        else:
            strategy.posterior = post / norm
        mass = weights * strategy.posterior
        if np.max(mass) >= (1.0 - _MASS_TOL) * mass.sum():
            warnings.warn(
                f"episode {episode}: posterior mass collapsed to a single "
                "grid cell; results are resolution-limited"
            )
        episodes.append(
            EpisodeRecord(
                episode=episode,
                offset=float(u),
                outcome=int(outcome),
                mean=strategy.mean(),
                sd=strategy.sd(),
            )
        )
    return AdaptationLog(episodes=episodes, strategy=strategy, x_star=x_star)
