"""Sampling designs, Horvitz-Thompson estimation and weighted empirical distributions.

Also hosts the simulation machinery: the two logistic generative models and
a two-stage cluster sampler (states, then one city per retained state, then
every unit of that city).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import InvalidInputError

# Relative slack for "cumulative mass >= level" so that masses such as nine
# atoms of 1/10 still reach level 0.9 despite rounding in the running sum.
MASS_RTOL = 1e-12

N_FEATURES = 10


@dataclass(frozen=True)
class SurveyDesign:
    """A sampling mechanism with closed-form first-order inclusion probabilities.

    kind
        ``"iid"`` (every population unit observed, pi = 1),
        ``"bernoulli"`` (independent inclusion with probability ``pi0``) or
        ``"two_stage"`` (states kept with ``state_prob``, one city per kept state).
    """

    kind: str = "two_stage"
    pi0: float = 1.0
    state_prob: float = 0.8
    n_states: int = 40
    min_cities: int = 3
    max_cities: int = 8

    def __post_init__(self):
        if self.kind not in ("iid", "bernoulli", "two_stage"):
            raise InvalidInputError(f"unknown design kind {self.kind!r}")
        if not 0 < self.pi0 <= 1 or not 0 < self.state_prob <= 1:
            raise InvalidInputError("inclusion probabilities must lie in (0, 1]")
        if self.n_states < 1 or not 1 <= self.min_cities <= self.max_cities:
            raise InvalidInputError("need at least one state and 1 <= min_cities <= max_cities")


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Sampled rows with their inclusion probabilities; ``rows.weights`` is ``1/pi``."""

    rows: Dataset
    inclusion_prob: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.inclusion_prob, dtype=np.float64)
        if pi.shape != (len(self.rows),) or not ((pi > 0) & (pi <= 1)).all():
            raise InvalidInputError("inclusion probabilities must lie in (0, 1], one per row")
        object.__setattr__(self, "inclusion_prob", pi)

    @property
    def weights(self) -> np.ndarray:
        return self.rows.weights

    def __len__(self):
        return len(self.rows)


# ---------------------------------------------------------------------------
# estimators


def _check_probs(pi):
    pi = np.asarray(pi, dtype=np.float64)
    if not ((pi > 0) & (pi <= 1)).all():
        raise InvalidInputError("inclusion probabilities must lie in (0, 1]")
    return pi


def ht_total(values, inclusion_probs) -> float:
    values = np.asarray(values, dtype=np.float64)
    pi = _check_probs(inclusion_probs)
    if values.shape != pi.shape:
        raise InvalidInputError("values and inclusion probabilities must align")
    return float(np.sum(values / pi))


def ht_mean(values, inclusion_probs, N) -> float:
    """Horvitz-Thompson mean ``(1/N) sum_i y_i / pi_i`` over the observed units."""
    if N < 1 or len(np.atleast_1d(values)) > N:
        raise InvalidInputError("population size must be positive and at least the sample size")
    return ht_total(values, inclusion_probs) / N


def ht_cdf(values, inclusion_probs, N, grid) -> np.ndarray:
    """HT estimate of the population CDF ``F(t) = (1/N) sum 1{y <= t}`` on ``grid``."""
    values = np.asarray(values, dtype=np.float64)
    pi = _check_probs(inclusion_probs)
    order = np.argsort(values, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(1.0 / pi[order])])
    return cum[np.searchsorted(values[order], grid, side="right")] / N


# ---------------------------------------------------------------------------
# weighted empirical distributions


class WeightedEmpirical:
    """Discrete distribution on sorted atoms, optionally with an atom at +inf.

    Built from nonnegative raw weights; masses are the weights divided by
    their total (including the infinity weight), so they sum to one.
    """

    def __init__(self, values, weights=None, infinity_weight=0.0):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size == 0:
            raise InvalidInputError("empirical distribution needs at least one atom")
        if np.isnan(values).any():
            raise InvalidInputError("atom values must not be NaN")
        weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape != values.shape or (weights < 0).any() or infinity_weight < 0:
            raise InvalidInputError("weights must be nonnegative, one per atom")
        order = np.argsort(values, kind="stable")
        self.values = values[order]
        self.raw_weights = weights[order]
        self.infinity_weight = float(infinity_weight)
        self.total = float(self.raw_weights.sum()) + self.infinity_weight
        if not self.total > 0:
            raise InvalidInputError("total mass must be positive")
        self._cum = np.cumsum(self.raw_weights)

    @property
    def masses(self) -> np.ndarray:
        return self.raw_weights / self.total

    @property
    def mass_at_infinity(self) -> float:
        return self.infinity_weight / self.total

    def __len__(self):
        return self.values.size

    def quantile(self, level) -> float:
        return weighted_quantile(self, level)


def _first_reaching(cum, target):
    """Index of the first running sum that reaches ``target`` (len(cum) if none)."""
    return int(np.searchsorted(cum, target * (1 - MASS_RTOL), side="left"))


def weighted_quantile(d: WeightedEmpirical, level) -> float:
    """Left-continuous inverse CDF: smallest atom whose cumulative mass reaches ``level``.

    Returns ``inf`` when the finite atoms never reach ``level``.
    """
    if not level > 0:
        raise InvalidInputError(f"quantile level must be positive, got {level}")
    if len(d) == 0:
        raise InvalidInputError("empty distribution")
    j = _first_reaching(d._cum, level * d.total)
    return math.inf if j >= len(d) else float(d.values[j])


def covariate_shift_weights(train_w, test_w) -> np.ndarray:
    """Masses ``w_i / (sum_j w_j + w_test)`` for the n training points, then the test point's."""
    train_w = np.asarray(train_w, dtype=np.float64).ravel()
    if not (train_w > 0).all() or not test_w > 0:
        raise InvalidInputError("likelihood-ratio weights must be positive")
    total = train_w.sum() + test_w
    return np.append(train_w, test_w) / total


# ---------------------------------------------------------------------------
# simulation


def scenario_probability(X, scenario) -> np.ndarray:
    """P(Y = 1 | X) for generative model ``"a"`` or ``"b"``."""
    X = np.asarray(X, dtype=np.float64)
    if scenario == "a":
        eta = -3.0 + X[..., :10].sum(axis=-1)
    elif scenario == "b":
        eta = -2.0 + X[..., :3].sum(axis=-1) + X[..., 6:10].prod(axis=-1)
    else:
        raise InvalidInputError(f"unknown scenario {scenario!r}")
    return 1.0 / (1.0 + np.exp(eta))


def _cluster_layout(N, design: SurveyDesign, rng):
    cities = rng.integers(design.min_cities, design.max_cities + 1, size=design.n_states)
    # drop trailing states until every city can hold at least one unit
    while cities.size > 1 and cities.sum() > N:
        cities = cities[:-1]
    cities[0] = min(cities[0], N)
    city_state = np.repeat(np.arange(cities.size), cities)
    n_cities = city_state.size
    # balanced sizes: unit u goes to city u mod C
    city = np.arange(N) % n_cities
    return city_state[city], city, cities


def generate_population(scenario, N, rng, design: SurveyDesign | None = None) -> Dataset:
    """N rows with X ~ N(0, I_10), Y ~ Bernoulli(pi(X)), and state/city labels.

    Each state has a uniform random 3-8 cities (per ``design``); units are
    dealt to cities round-robin so city sizes differ by at most one.
    """
    if N < 1:
        raise InvalidInputError("population size must be at least 1")
    design = design or SurveyDesign()
    X = rng.standard_normal((N, N_FEATURES))
    p = scenario_probability(X, scenario)
    y = (rng.random(N) < p).astype(np.int64)
    state, city, cities = _cluster_layout(N, design, rng)
    return Dataset(
        X=X,
        columns=tuple(f"x{i + 1}" for i in range(N_FEATURES)),
        weights=np.ones(N),
        ids=np.arange(N),
        y=y,
        state=state,
        city=city,
        meta={"scenario": scenario, "cities_per_state": cities.tolist()},
    )


def draw_two_stage_sample(design: SurveyDesign, population: Dataset, rng) -> WeightedSample:
    """Keep each state with ``state_prob``; in each kept state take one city uniformly.

    Every unit of a chosen city is included, so ``pi_i = state_prob / n_i``
    where ``n_i`` is the number of cities in the unit's state.
    """
    if design.kind != "two_stage":
        raise InvalidInputError("design is not a two-stage cluster design")
    if population.state is None or population.city is None:
        raise InvalidInputError("population rows need state and city labels")
    states = np.unique(population.state)
    chosen = []
    pis = []
    for s in states:
        # one uniform draw per state regardless of retention keeps streams aligned
        keep = rng.random() < design.state_prob
        in_state = population.state == s
        cities = np.unique(population.city[in_state])
        pick = cities[rng.integers(cities.size)]
        if not keep:
            continue
        rows = np.flatnonzero(in_state & (population.city == pick))
        if rows.size == 0:
            raise InvalidInputError(f"city {pick} in state {s} has no units")
        chosen.append(rows)
        pis.append(np.full(rows.size, design.state_prob / cities.size))
    if not chosen:
        raise InvalidInputError("no state was retained; sample is empty")
    idx = np.concatenate(chosen)
    pi = np.concatenate(pis)
    rows = population.subset(idx).with_weights(1.0 / pi)
    return WeightedSample(rows, pi)


def draw_sample(design: SurveyDesign, population: Dataset, rng) -> WeightedSample:
    if design.kind == "two_stage":
        return draw_two_stage_sample(design, population, rng)
    if design.kind == "iid":
        pi = np.ones(len(population))
        return WeightedSample(population.with_weights(pi), pi)
    keep = np.flatnonzero(rng.random(len(population)) < design.pi0)
    if keep.size == 0:
        raise InvalidInputError("Bernoulli draw selected no units")
    pi = np.full(keep.size, design.pi0)
    return WeightedSample(population.subset(keep).with_weights(1.0 / pi), pi)
