"""Synthetic designs and the replicated-experiment harness.

Replication ``r`` of grid cell ``c`` draws everything from
``SeedSequence([seed, c, r])``, so results do not depend on worker
count or scheduling order.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import bh_marginal, ss_from_stage
from .errors import InvalidInput, SDAError
from .estimation import PrecisionSpec
from .linalg import inv_psd, sqrt_psd
from .sda import SDAOptions, prepare, run_rsda, select

log = logging.getLogger(__name__)

STRUCTURES = ("AR", "CS", "SF")
LAWS = ("normal", "t", "exp")
PROCEDURES = ("SDA", "SDA+", "R-SDA", "BH", "SS")
PRECISIONS = ("known", "identity", "glasso")

# a cell with more dropped replications than this is flagged unreliable
DROP_LIMIT = 0.05


def build_covariance(kind, p, rho=0.0, rng=None):
    """Unit-diagonal covariance for structure ``AR``, ``CS`` or ``SF`` (sparse factor)."""
    if p < 2:
        raise InvalidInput("p must be at least 2")
    if kind == "AR":
        if not abs(rho) < 1:
            raise InvalidInput("AR correlation must satisfy |rho| < 1")
        idx = np.arange(p)
        return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    if kind == "CS":
        if not -1.0 / (p - 1) < rho < 1:
            raise InvalidInput(f"compound symmetry needs -1/(p-1) < rho < 1, got {rho}")
        sigma = np.full((p, p), float(rho))
        np.fill_diagonal(sigma, 1.0)
        return sigma
    if kind == "SF":
        rng = np.random.default_rng(rng)
        gamma = np.zeros((p, p))
        gamma[np.arange(p), rng.integers(0, p, size=p)] = rng.uniform(1.0, 2.0, size=p)
        sigma = gamma @ gamma.T + np.eye(p)
        d = 1.0 / np.sqrt(np.diag(sigma))
        sigma = sigma * d[:, None] * d[None, :]
        np.fill_diagonal(sigma, 1.0)
        return (sigma + sigma.T) / 2.0
    raise InvalidInput(f"unknown covariance structure {kind!r}")


@dataclass(frozen=True)
class SignalSpec:
    pi1: float
    mu0: float
    band: float = 0.1
    flip_sign: bool = True

    def __post_init__(self):
        if not 0 <= self.pi1 <= 1:
            raise InvalidInput("pi1 must lie in [0, 1]")
        if self.mu0 <= 0 or self.band < 0 or self.band > self.mu0:
            raise InvalidInput("need mu0 > 0 and 0 <= band <= mu0")


@dataclass(frozen=True)
class TruthVector:
    theta: np.ndarray
    mu: np.ndarray


def gen_signal(p, spec, rng):
    rng = np.random.default_rng(rng)
    theta = (rng.random(p) < spec.pi1).astype(int)
    mags = rng.uniform(spec.mu0 - spec.band, spec.mu0 + spec.band, size=p)
    signs = np.where(rng.random(p) < 0.5, -1.0, 1.0) if spec.flip_sign else np.ones(p)
    mu = np.where(theta == 1, mags * signs, 0.0)
    return TruthVector(theta, mu)


def standardized_noise(law, size, rng):
    """I.i.d. draws with mean 0 and variance 1 from the named law."""
    if law == "normal":
        return rng.standard_normal(size)
    if law == "t":
        return rng.standard_t(3, size) / math.sqrt(3.0)
    if law == "exp":
        return (rng.exponential(2.0, size) - 2.0) / 2.0
    raise InvalidInput(f"unknown error law {law!r}")


def gen_sample(truth, sigma, law, n, rng, root=None):
    """``n`` rows of ``mu + Sigma^{1/2} eps`` with standardized i.i.d. ``eps``."""
    rng = np.random.default_rng(rng)
    if root is None:
        root = sqrt_psd(sigma)
    eps = standardized_noise(law, (n, truth.mu.size), rng)
    return truth.mu + eps @ root.T


def fdp_tdp(rejected, truth):
    delta = np.zeros(truth.theta.size, dtype=int)
    delta[np.asarray(rejected, dtype=np.intp)] = 1
    theta = truth.theta
    fdp = np.sum((1 - theta) * delta) / max(delta.sum(), 1)
    tdp = np.sum(theta * delta) / max(theta.sum(), 1)
    return float(fdp), float(tdp)


@dataclass(frozen=True)
class Cell:
    structure: str = "AR"
    rho: float = 0.8
    dist: str = "normal"
    n: int = 90
    p: int = 500
    pi1: float = 0.1
    mu0: float = 0.2
    alpha: float = 0.2
    precision: str = "known"

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise InvalidInput(f"structure must be one of {STRUCTURES}")
        if self.dist not in LAWS:
            raise InvalidInput(f"dist must be one of {LAWS}")
        if self.precision not in PRECISIONS:
            raise InvalidInput(f"precision must be one of {PRECISIONS}")
        if self.n < 3 or self.p < 2:
            raise InvalidInput("need n >= 3 and p >= 2")
        if not 0 < self.alpha < 1:
            raise InvalidInput("alpha must lie in (0, 1)")
        if self.structure == "AR" and not abs(self.rho) < 1:
            raise InvalidInput("AR correlation must satisfy |rho| < 1")
        if self.structure == "CS" and not -1.0 / (self.p - 1) < self.rho < 1:
            raise InvalidInput(f"compound symmetry needs -1/(p-1) < rho < 1, got {self.rho}")
        SignalSpec(self.pi1, self.mu0)


@dataclass(frozen=True)
class SimulationConfig:
    cells: tuple
    reps: int = 200
    procedures: tuple = PROCEDURES
    seed: int = 0
    rsda_b: int = 11
    options: SDAOptions = field(default_factory=SDAOptions)

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidInput("reps must be at least 1")
        bad = set(self.procedures) - set(PROCEDURES)
        if bad:
            raise InvalidInput(f"unknown procedures: {sorted(bad)}")
        if self.rsda_b < 1:
            raise InvalidInput("rsda_b must be at least 1")


@dataclass
class MetricsRecord:
    procedure: str
    cell: Cell
    fdr: float
    fdr_se: float
    ap: float
    ap_se: float
    fdp_sd: float
    reps: int
    dropped: int
    unreliable: bool

    def row(self):
        out = {"procedure": self.procedure}
        out.update({k: v for k, v in asdict(self.cell).items() if k != "precision"})
        out["precision"] = self.cell.precision
        out.update(
            reps=self.reps, fdr=self.fdr, fdr_se=self.fdr_se, ap=self.ap, ap_se=self.ap_se,
            dropped=self.dropped, unreliable=int(self.unreliable),
        )
        return out


@dataclass
class _CellContext:
    cell: Cell
    sigma: np.ndarray
    root: np.ndarray
    spec: PrecisionSpec


def cell_context(cell, seed, cell_id):
    cov_rng = np.random.default_rng([seed, cell_id, 2**31 - 1])
    sigma = build_covariance(cell.structure, cell.p, cell.rho, cov_rng)
    root = sqrt_psd(sigma)
    if cell.precision == "known":
        spec = PrecisionSpec.known(inv_psd(sigma))
        spec.root  # warm the cache before the context is shipped to workers
    elif cell.precision == "identity":
        spec = PrecisionSpec.identity()
    else:
        spec = PrecisionSpec.glasso()
    return _CellContext(cell, sigma, root, spec)


def replicate(ctx, config, cell_id, r):
    """One replication: every procedure sees the same data.  Returns {procedure: (fdp, tdp) or None}."""
    cell = ctx.cell
    data_ss, proc_ss = np.random.SeedSequence([config.seed, cell_id, r]).spawn(2)
    data_rng = np.random.default_rng(data_ss)
    truth = gen_signal(cell.p, SignalSpec(cell.pi1, cell.mu0), data_rng)
    data = gen_sample(truth, ctx.sigma, cell.dist, cell.n, data_rng, root=ctx.root)
    split_seed, rsda_seed = (int(s.generate_state(1, np.uint64)[0]) for s in proc_ss.spawn(2))

    out = {}
    wanted = set(config.procedures)
    if wanted & {"SDA", "SDA+", "SS"}:
        try:
            stage = prepare(data, ctx.spec, config.options, split_seed)
        except (SDAError, np.linalg.LinAlgError) as exc:
            log.warning("cell %d rep %d: pipeline failed: %s", cell_id, r, exc)
            stage = None
        for name, fn in (
            ("SDA", lambda s: select(s, cell.alpha, plus=False).rejected),
            ("SDA+", lambda s: select(s, cell.alpha, plus=True).rejected),
            ("SS", lambda s: ss_from_stage(s, cell.alpha)),
        ):
            if name in wanted:
                out[name] = None if stage is None else fdp_tdp(fn(stage), truth)
    if "BH" in wanted:
        diag = np.diag(ctx.sigma) if cell.precision == "known" else None
        out["BH"] = fdp_tdp(bh_marginal(data, cell.alpha, diag), truth)
    if "R-SDA" in wanted:
        try:
            agg = run_rsda(data, ctx.spec, cell.alpha, config.rsda_b, config.options, rsda_seed)
            out["R-SDA"] = fdp_tdp(agg.final.rejected, truth)
        except (SDAError, np.linalg.LinAlgError) as exc:
            log.warning("cell %d rep %d: R-SDA failed: %s", cell_id, r, exc)
            out["R-SDA"] = None
    return out


def _run_block(args):
    ctx, config, cell_id, reps = args
    return [replicate(ctx, config, cell_id, r) for r in reps]


def summarize(procedure, cell, values, reps):
    kept = [v for v in values if v is not None]
    dropped = reps - len(kept)
    if kept:
        arr = np.array(kept)
        fdp, tdp = arr[:, 0], arr[:, 1]
        k = len(kept)
        fdp_sd = float(fdp.std(ddof=1)) if k > 1 else 0.0
        tdp_sd = float(tdp.std(ddof=1)) if k > 1 else 0.0
        fdr, ap = float(fdp.mean()), float(tdp.mean())
        fdr_se, ap_se = fdp_sd / math.sqrt(k), tdp_sd / math.sqrt(k)
    else:
        fdr = ap = fdr_se = ap_se = fdp_sd = float("nan")
    return MetricsRecord(
        procedure, cell, fdr, fdr_se, ap, ap_se, fdp_sd, len(kept), dropped, dropped > DROP_LIMIT * reps
    )


def run_experiment(config, workers=1):
    """Run every cell of ``config``; one MetricsRecord per (cell, procedure), in config order."""
    records = []
    for cell_id, cell in enumerate(config.cells):
        ctx = cell_context(cell, config.seed, cell_id)
        reps = list(range(config.reps))
        if workers > 1:
            blocks = [reps[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_run_block, [(ctx, config, cell_id, b) for b in blocks]))
            by_rep = {}
            for block, part in zip(blocks, parts):
                by_rep.update(zip(block, part))
            results = [by_rep[r] for r in reps]
        else:
            results = _run_block((ctx, config, cell_id, reps))
        for proc in config.procedures:
            records.append(summarize(proc, cell, [res[proc] for res in results], config.reps))
    return records
