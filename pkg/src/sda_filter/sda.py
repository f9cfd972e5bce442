"""The symmetrized data aggregation filter.

One run of the filter:

1. split the rows into a screening half and a refit half,
2. whiten both halves' means with ``X = omega^{1/2}`` (estimating omega
   from the screening half when it is not given),
3. LASSO-screen on the first half, keep the support ``S``,
4. refit by least squares on ``S`` with the second half,
5. rank by ``W_j = T1_j * T2_j`` and threshold with the mirror-count rule.

Features outside ``S`` carry no statistic and are never rejected.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .estimation import (
    GLASSO,
    IDENTITY,
    KNOWN,
    PrecisionSpec,
    estimate_precision,
    refit_lse,
    whiten,
)
from .linalg import inv_psd, sqrt_psd
from .screening import cap_selection, default_grid, default_tol, lambda_max, lasso_path_aic

SCALED = "scaled"
RAW = "raw"


@dataclass(frozen=True)
class SDAOptions:
    plus: bool = False
    t1_mode: str = SCALED
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3
    # penalties as fractions of lambda_max; overrides n_lambda/lambda_min_ratio
    lambda_ratios: tuple = None
    cap: int = None  # default p // 3
    n1_frac: float = None  # default ceil(2n/3)
    tol: float = None
    max_sweeps: int = 10000

    def __post_init__(self):
        if self.t1_mode not in (SCALED, RAW):
            raise InvalidInput(f"t1_mode must be {SCALED!r} or {RAW!r}")


@dataclass(frozen=True)
class SplitPlan:
    n1: int
    n2: int
    assignment: np.ndarray

    @property
    def first(self):
        return self.assignment[: self.n1]

    @property
    def second(self):
        return self.assignment[self.n1 :]


@dataclass(frozen=True)
class RankingResult:
    t1: np.ndarray
    t2: np.ndarray
    w: np.ndarray
    subset: np.ndarray
    t1_mode: str = SCALED


@dataclass(frozen=True)
class SelectionResult:
    threshold: float
    rejected: np.ndarray
    fdp_hat_at_L: float
    n_candidates: int
    flags: tuple = ()
    # per-feature statistic, NaN for screened-out features; empty when not from a pipeline run
    w: np.ndarray = field(default=None, repr=False)
    subset: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class AggregationResult:
    runs: list
    majority_set: np.ndarray
    chosen_run: int
    final: SelectionResult


@dataclass(frozen=True)
class SymmetryCurve:
    t: np.ndarray
    n_upper: np.ndarray
    n_lower: np.ndarray
    ratio: np.ndarray  # NaN where n_lower == 0
    undefined: np.ndarray


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def n1_default(n):
    return math.ceil(2 * n / 3)


def split(n, rng=None, frac_override=None):
    if n < 3:
        raise InvalidInput("need at least three samples to split")
    if frac_override is None:
        n1 = n1_default(n)
    else:
        if not 0 < frac_override < 1:
            raise InvalidInput("split fraction must lie in (0, 1)")
        n1 = min(max(math.ceil(frac_override * n), 1), n - 1)
    return SplitPlan(n1, n - n1, as_rng(rng).permutation(n))


def ranking_stats(screen, refit, n1, n2, mode=SCALED):
    subset = screen.selected
    if not np.array_equal(subset, refit.subset):
        raise InvalidInput("screening and refit disagree on the selected set")
    sigma = refit.sigma
    assert np.all(sigma > 0), "refit produced a non-positive standard error"
    mu1 = screen.coefficients[subset]
    if mode == SCALED:
        t1 = math.sqrt(n1) * mu1 / sigma
    elif mode == RAW:
        t1 = mu1.copy()
    else:
        raise InvalidInput(f"unknown T1 mode {mode!r}")
    t2 = math.sqrt(n2) * refit.mu2[subset] / sigma
    return RankingResult(t1, t2, t1 * t2, subset, mode)


def mirror_ratio(w, t, plus=False):
    neg = np.count_nonzero(w <= -t)
    pos = np.count_nonzero(w >= t)
    return (neg + (1 if plus else 0)) / max(pos, 1)


def sda_threshold(w, alpha, plus=False):
    """Smallest ``t`` among the nonzero ``|w_j|`` whose mirror ratio is at most ``alpha``.

    ``rejected`` holds positions into ``w``.  With no qualifying
    candidate the threshold is ``inf`` and nothing is rejected.
    """
    w = np.asarray(w, dtype=float)
    if not 0 < alpha < 1:
        raise InvalidInput("alpha must lie in (0, 1)")
    if not np.all(np.isfinite(w)):
        raise InvalidInput("ranking statistics must be finite")
    nz = w[w != 0]
    cands = np.unique(np.abs(nz))
    pos = np.sort(nz[nz > 0])
    neg = np.sort(-nz[nz < 0])
    n_pos = pos.size - np.searchsorted(pos, cands, side="left")
    n_neg = neg.size - np.searchsorted(neg, cands, side="left")
    ratio = (n_neg + (1 if plus else 0)) / np.maximum(n_pos, 1)
    ok = np.flatnonzero(ratio <= alpha)
    if ok.size == 0:
        return SelectionResult(math.inf, np.array([], dtype=np.intp), mirror_ratio(w, math.inf, plus), cands.size)
    k = ok[0]
    L = float(cands[k])
    return SelectionResult(L, np.flatnonzero(w >= L), float(ratio[k]), cands.size)


@dataclass(frozen=True)
class _Stage:
    """Everything a single split produces before thresholding."""

    plan: object
    whitened: object
    screen: object
    refit: object
    ranking: object
    flags: tuple
    p: int


def _check_data(data):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise InvalidInput("data must be an n x p matrix")
    n, p = data.shape
    if n < 3 or p < 2:
        raise InvalidInput(f"need n >= 3 and p >= 2, got n={n}, p={p}")
    if not np.all(np.isfinite(data)):
        raise InvalidInput("data contain non-finite values")
    return data


def _whitening(spec, d1):
    if spec.mode == KNOWN:
        return spec.root, spec.gram
    omega = estimate_precision(d1, spec)
    if spec.mode == IDENTITY:
        return omega, omega
    root = sqrt_psd(omega)
    return root, root.T @ root


def _screen_refit_rank(whitened, options, p, flags):
    x, y1 = whitened.x, whitened.y1
    if options.lambda_ratios is not None:
        top = lambda_max(x, y1)
        grid = top * np.asarray(options.lambda_ratios, dtype=float) if top > 0 else np.array([1.0])
    else:
        grid = default_grid(x, y1, options.n_lambda, options.lambda_min_ratio)
    tol = options.tol if options.tol is not None else default_tol(p)
    screen = lasso_path_aic(x, y1, grid, whitened.n1, tol=tol, max_sweeps=options.max_sweeps, gram=whitened.gram)
    cap = options.cap if options.cap is not None else max(p // 3, 1)
    screen = cap_selection(screen, cap)
    flags = flags + screen.flags
    if screen.selected.size == 0:
        return screen, None, None, flags + ("empty_selection",)
    refit = refit_lse(whitened, screen.selected)
    if refit.ridge_fallback:
        flags = flags + ("ridge_fallback",)
    ranking = ranking_stats(screen, refit, whitened.n1, whitened.n2, options.t1_mode)
    return screen, refit, ranking, flags


def prepare(data, spec, options=None, rng=None):
    """Run split, whitening, screening, refit and ranking for one split."""
    options = options or SDAOptions()
    data = _check_data(data)
    n, p = data.shape
    if spec.mode == KNOWN and spec.matrix.shape[0] != p:
        raise InvalidInput("precision matrix size does not match the data")
    plan = split(n, rng, options.n1_frac)
    d1, d2 = data[plan.first], data[plan.second]
    root, gram = _whitening(spec, d1)
    whitened = whiten(None, d1.mean(axis=0), d2.mean(axis=0), plan.n1, plan.n2, root=root, gram=gram)
    screen, refit, ranking, flags = _screen_refit_rank(whitened, options, p, ())
    return _Stage(plan, whitened, screen, refit, ranking, flags, p)


def select(stage, alpha, plus=False):
    """Threshold a prepared stage; rejected indices are feature indices."""
    w_full = np.full(stage.p, np.nan)
    if stage.ranking is None:
        sel = sda_threshold(np.array([]), alpha, plus)
        return SelectionResult(sel.threshold, sel.rejected, sel.fdp_hat_at_L, 0, stage.flags, w_full, np.array([], dtype=np.intp))
    r = stage.ranking
    w_full[r.subset] = r.w
    sel = sda_threshold(r.w, alpha, plus)
    return SelectionResult(
        sel.threshold, r.subset[sel.rejected], sel.fdp_hat_at_L, sel.n_candidates, stage.flags, w_full, r.subset
    )


def run_sda(data, spec, alpha, options=None, rng=None):
    """Single-split SDA (or SDA+ with ``options.plus``) on an n x p sample."""
    options = options or SDAOptions()
    stage = prepare(data, spec, options, rng)
    return select(stage, alpha, options.plus)


def _master_seed(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return 0 if rng is None else int(rng)
    return int(as_rng(rng).integers(2**63))


def aggregate(runs, p):
    """Majority vote over runs, then pick the run that agrees with it on the most features."""
    B = len(runs)
    if B < 1:
        raise InvalidInput("need at least one run")
    member = np.zeros((B, p), dtype=bool)
    for k, run in enumerate(runs):
        member[k, run.rejected] = True
    counts = member.sum(axis=0)
    majority = counts > math.ceil(B / 2)
    scores = (member == majority).sum(axis=1)
    k_star = int(np.argmax(scores))  # first maximum = smallest run index
    return AggregationResult(list(runs), np.flatnonzero(majority), k_star, runs[k_star])


def run_rsda(data, spec, alpha, B=11, options=None, rng=None):
    """Stability-refined SDA over ``B`` random splits.

    Run ``k`` draws its split from ``default_rng([seed, k])`` so each run
    is reproducible on its own.
    """
    if B < 1:
        raise InvalidInput("B must be at least 1")
    data = _check_data(data)
    seed = _master_seed(rng)
    runs = [run_sda(data, spec, alpha, options, np.random.default_rng([seed, k])) for k in range(B)]
    return aggregate(runs, data.shape[1])


def _group_covariance(spec, d1):
    if spec.mode == KNOWN:
        return inv_psd(spec.matrix)
    if spec.mode == IDENTITY:
        return np.eye(d1.shape[1])
    if spec.mode == GLASSO:
        return inv_psd(estimate_precision(d1, spec))
    raise InvalidInput(f"unknown precision mode {spec.mode!r}")


def prepare_two_sample(data_a, data_b, specs, options=None, rng=None):
    options = options or SDAOptions()
    data_a = _check_data(data_a)
    data_b = _check_data(data_b)
    if data_a.shape[1] != data_b.shape[1]:
        raise InvalidInput("both groups must have the same number of features")
    p = data_a.shape[1]
    if isinstance(specs, PrecisionSpec):
        specs = (specs, specs)
    seed = _master_seed(rng)
    # keying each group's split on its size makes the result symmetric under swapping groups
    plan_a = split(data_a.shape[0], np.random.default_rng([seed, data_a.shape[0]]), options.n1_frac)
    plan_b = split(data_b.shape[0], np.random.default_rng([seed, data_b.shape[0]]), options.n1_frac)
    a1, a2 = data_a[plan_a.first], data_a[plan_a.second]
    b1, b2 = data_b[plan_b.first], data_b[plan_b.second]
    n1 = plan_a.n1 + plan_b.n1
    n2 = plan_a.n2 + plan_b.n2
    cov = n1 / plan_a.n1 * _group_covariance(specs[0], a1) + n1 / plan_b.n1 * _group_covariance(specs[1], b1)
    omega = inv_psd(cov)
    root = sqrt_psd(omega)
    whitened = whiten(
        None, a1.mean(axis=0) - b1.mean(axis=0), a2.mean(axis=0) - b2.mean(axis=0), n1, n2, root=root
    )
    screen, refit, ranking, flags = _screen_refit_rank(whitened, options, p, ())
    return _Stage((plan_a, plan_b), whitened, screen, refit, ranking, flags, p)


def run_two_sample(data_a, data_b, specs, alpha, options=None, rng=None):
    """Two-sample SDA testing ``mu_a == mu_b`` feature by feature.

    ``specs`` is one :class:`PrecisionSpec` shared by both groups or a
    pair, one per group.
    """
    options = options or SDAOptions()
    stage = prepare_two_sample(data_a, data_b, specs, options, rng)
    return select(stage, alpha, options.plus)


def run_two_sample_rsda(data_a, data_b, specs, alpha, B=11, options=None, rng=None):
    if B < 1:
        raise InvalidInput("B must be at least 1")
    seed = _master_seed(rng)
    runs = [
        run_two_sample(data_a, data_b, specs, alpha, options, int(np.random.default_rng([seed, k]).integers(2**63)))
        for k in range(B)
    ]
    return aggregate(runs, np.asarray(data_a).shape[1])


def symmetry_diagnostic(w, t_grid):
    """Counts of ``w >= t`` and ``w <= -t`` and their ratio along ``t_grid``."""
    w = np.asarray(w, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise InvalidInput("t_grid must be non-negative and ascending")
    upper = np.array([np.count_nonzero(w >= s) for s in t])
    lower = np.array([np.count_nonzero(w <= -s) for s in t])
    undefined = lower == 0
    ratio = np.where(undefined, np.nan, upper / np.maximum(lower, 1))
    return SymmetryCurve(t, upper, lower, ratio, undefined)
