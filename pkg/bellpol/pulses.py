"""
Pulse-by-pulse Monte Carlo of the Stokes measurement.

Photon numbers are drawn exactly from the rotated state's (N_A, N_B)
distribution, one draw per mode quadruple, then thinned binomially for the
detection efficiency and blurred by Gaussian electronic noise. Estimators
give central moments with batch-means standard errors; noise subtraction
works on cumulants.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from cachetools import LRUCache
from scipy import stats

from .config import settings
from .cumulants import central_from_cumulants, cumulants_from_central
from .exceptions import InsufficientPulsesError, InvalidArgumentError, UndefinedDPError
from .fock import apply_waveplates_fock, build_state_fock, default_cutoff, joint_pn_distribution
from .gaussian import BellStateSpec
from .geometry import WaveplateSetting
from .metrics import dp2_eigen
from .sampling import AliasTable, chunk_sizes, spawn_generators

logger = logging.getLogger("pulses")

# Outcome tables keyed by (label, gain, chi_H, chi_Q, cutoff)
_table_cache = LRUCache(maxsize=settings.TABLE_CACHE_MAXSIZE)

# Plate settings for the Monte Carlo DP: S1, S2, S3 then (S1+S2), (S1+S3), (S2+S3) over sqrt 2
MC_AXIS_SETTINGS = (
    WaveplateSetting.from_degrees(0.0, 0.0),
    WaveplateSetting.from_degrees(22.5, 0.0),
    WaveplateSetting.from_degrees(0.0, 45.0),
)
MC_DIAGONAL_SETTINGS = (
    WaveplateSetting.from_degrees(11.25, 0.0),
    WaveplateSetting.from_degrees(11.25, 22.5),
    WaveplateSetting.from_degrees(33.75, 22.5),
)
_DIAGONAL_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class DetectorConfig:
    """Detection efficiency, electronic noise per channel (photons), pulse count and RNG layout."""

    eta: float
    electronic_noise_sigma: float = 0.0
    pulses: int = settings.DEFAULT_PULSES
    seed: int = 0
    chunk_size: int = settings.DEFAULT_CHUNK_SIZE
    workers: int = settings.DEFAULT_WORKERS

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidArgumentError("Efficiency eta must lie in [0, 1]", {"eta": self.eta})
        if self.electronic_noise_sigma < 0:
            raise InvalidArgumentError("Electronic noise sigma must be >= 0", {"sigma": self.electronic_noise_sigma})
        if self.pulses < 1:
            raise InvalidArgumentError("Pulse count must be >= 1", {"pulses": self.pulses})
        if self.chunk_size < 1 or self.workers < 1:
            raise InvalidArgumentError(
                "Chunk size and worker count must be positive",
                {"chunk_size": self.chunk_size, "workers": self.workers},
            )

    @classmethod
    def for_state(cls, spec: BellStateSpec, eta: float, sigma: Optional[float] = None, **kwargs) -> "DetectorConfig":
        """Config whose default noise variance per S_n is 10% of the singlet signal variance."""
        if sigma is None:
            sigma = default_noise_sigma(spec, eta)
        return cls(eta=eta, electronic_noise_sigma=sigma, **kwargs)


def default_noise_sigma(spec: BellStateSpec, eta: float) -> float:
    """sigma with 2 sigma^2 = 0.1 (1 - eta) 4 M eta N."""
    return float(np.sqrt(0.2 * (1.0 - eta) * spec.quadruples * eta * spec.nbar))


@dataclass(frozen=True)
class OutcomeTable:
    """P(N_A, N_B) for one quadruple behind the Glan prism at a fixed plate setting."""

    label: str
    gain: float
    setting: WaveplateSetting
    cutoff: int
    probabilities: np.ndarray
    alias: AliasTable = field(repr=False, compare=False, default=None)

    @property
    def n_columns(self) -> int:
        return self.probabilities.shape[1]

    def mean_counts(self) -> Tuple[float, float]:
        n_a = np.arange(self.probabilities.shape[0])
        n_b = np.arange(self.probabilities.shape[1])
        return float(self.probabilities.sum(axis=1) @ n_a), float(self.probabilities.sum(axis=0) @ n_b)


@dataclass(frozen=True)
class PulseBatch:
    """Per-pulse channel intensities (photons) for one plate setting."""

    I_A: np.ndarray
    I_B: np.ndarray
    setting: WaveplateSetting = None
    quadruples: int = 1

    @property
    def pulses(self) -> int:
        return len(self.I_A)

    @property
    def S_n(self) -> np.ndarray:
        return self.I_A - self.I_B

    @property
    def S0(self) -> np.ndarray:
        return self.I_A + self.I_B

    def rows(self) -> np.ndarray:
        """(pulses, 5) array: pulse_index, I_A, I_B, S_n, S0."""
        return np.column_stack([np.arange(self.pulses), self.I_A, self.I_B, self.S_n, self.S0])

    def split(self, n_batches: int) -> List["PulseBatch"]:
        """Contiguous sub-batches of near-equal size."""
        return [
            PulseBatch(a, b, self.setting, self.quadruples)
            for a, b in zip(np.array_split(self.I_A, n_batches), np.array_split(self.I_B, n_batches))
        ]


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    standard_error: float
    order: int
    pulses: int


@dataclass
class MomentEstimates:
    """
    Sample statistics of one batch.

    ``s_n[1]`` is the mean of S_n and ``s_n[k]`` for k >= 2 the k-th central
    moment. ``nrf`` is None when the mean of S0 is not positive.
    """

    pulses: int
    s_n: Dict[int, MomentEstimate]
    s0_mean: MomentEstimate
    channel_means: Tuple[MomentEstimate, MomentEstimate]
    nrf: Optional[MomentEstimate] = None
    over_subtracted: bool = False

    @property
    def k_max(self) -> int:
        return max(self.s_n)

    def central(self) -> np.ndarray:
        """Central moments indexed by order, with 1 at order 0 and 0 at order 1."""
        out = np.zeros(self.k_max + 1)
        out[0] = 1.0
        for k in range(2, self.k_max + 1):
            out[k] = self.s_n[k].value
        return out


@dataclass(frozen=True)
class Histogram:
    """Counts of S_n in bins symmetric about the sample mean."""

    edges: np.ndarray
    counts: np.ndarray
    mean: float
    skewness: float
    normality_pvalue: Optional[float]

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True)
class DPEstimate:
    order: int
    value: Optional[float]
    standard_error: Optional[float]


@dataclass
class MonteCarloDP:
    """DP estimates from six plate settings, with batch-means uncertainties."""

    p1: DPEstimate
    p2: DPEstimate
    higher: Dict[int, DPEstimate]
    covariance: np.ndarray
    mean_S0: float
    estimates: List[MomentEstimates]


def outcome_table(spec: BellStateSpec, setting: WaveplateSetting, cutoff: Optional[int] = None) -> OutcomeTable:
    """
    Distribution of (N_A, N_B) = (n_a1 + n_a2, n_b1 + n_b2) after the plates.

    Tables are per quadruple and cached; the detectors sum both wavelengths.

    Raises:
        TruncationError: if the cutoff cannot meet the Fock norm bound
    """
    if cutoff is None:
        cutoff = default_cutoff(spec.gain)
    key = (spec.label, round(spec.gain, 15), round(setting.chi_H, 15), round(setting.chi_Q, 15), cutoff)
    if key in _table_cache:
        logger.debug(f"Outcome table cache hit for {key}")
        return _table_cache[key]

    state = apply_waveplates_fock(build_state_fock(spec, cutoff), setting)
    probs = joint_pn_distribution(state)
    d = probs.shape[0]
    idx = np.indices(probs.shape)
    n_a = (idx[0] + idx[2]).ravel()
    n_b = (idx[1] + idx[3]).ravel()
    size = 2 * d - 1
    table = np.bincount(n_a * size + n_b, weights=probs.ravel(), minlength=size * size).reshape(size, size)
    table = np.clip(table, 0.0, None)
    table /= table.sum()

    result = OutcomeTable(spec.label, spec.gain, setting, cutoff, table, AliasTable(table))
    _table_cache[key] = result
    logger.info(f"Built outcome table for {spec.label} at chi_H={setting.chi_H_deg:.4g}, "
                f"chi_Q={setting.chi_Q_deg:.4g} ({size}x{size}, cutoff {cutoff})")
    return result


def vacuum_table() -> OutcomeTable:
    """Unit mass at (0, 0): the no-light reference for electronic noise."""
    return outcome_table(BellStateSpec("psi", 1, gain=0.0), WaveplateSetting(0.0, 0.0), cutoff=1)


def _sample_chunk(table: OutcomeTable, quadruples: int, config: DetectorConfig, n: int, rng: np.random.Generator):
    draws = table.alias.sample(rng, (n, quadruples))
    counts_a = (draws // table.n_columns).sum(axis=1)
    counts_b = (draws % table.n_columns).sum(axis=1)
    detected_a = rng.binomial(counts_a, config.eta).astype(float)
    detected_b = rng.binomial(counts_b, config.eta).astype(float)
    if config.electronic_noise_sigma > 0:
        detected_a += rng.normal(0.0, config.electronic_noise_sigma, n)
        detected_b += rng.normal(0.0, config.electronic_noise_sigma, n)
    return detected_a, detected_b


def sample_pulses(table: OutcomeTable, quadruples: int, config: DetectorConfig) -> PulseBatch:
    """
    Simulate ``config.pulses`` pulses of M = ``quadruples`` independent quadruples.

    Chunks get their own RNG streams spawned from ``config.seed`` and are
    concatenated in order, so a fixed seed and chunk size give identical
    batches for any worker count.
    """
    if quadruples < 1:
        raise InvalidArgumentError("Quadruple count must be >= 1", {"quadruples": quadruples})
    sizes = chunk_sizes(config.pulses, config.chunk_size)
    generators = spawn_generators(config.seed, len(sizes))

    def run(job):
        n, rng = job
        return _sample_chunk(table, quadruples, config, n, rng)

    jobs = list(zip(sizes, generators))
    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    I_A = np.concatenate([r[0] for r in results])
    I_B = np.concatenate([r[1] for r in results])
    logger.debug(f"Sampled {config.pulses} pulses in {len(sizes)} chunks (M={quadruples}, seed={config.seed})")
    return PulseBatch(I_A, I_B, table.setting, quadruples)


def required_pulses(k_max: int) -> int:
    """Smallest batch that still yields two batch-means groups."""
    return max(2, 2 * k_max)


def _central_sample(x: np.ndarray, k_max: int) -> np.ndarray:
    """[1, mean, mu_2, ..., mu_k]: k-statistics up to order 4, plain moments above."""
    out = np.zeros(k_max + 1)
    out[0] = 1.0
    out[1] = float(np.mean(x))
    if k_max >= 2:
        k2 = float(stats.kstat(x, 2)) if len(x) > 1 else 0.0
        out[2] = k2
    if k_max >= 3:
        out[3] = float(stats.kstat(x, 3)) if len(x) > 2 else 0.0
    if k_max >= 4:
        k4 = float(stats.kstat(x, 4)) if len(x) > 3 else 0.0
        out[4] = k4 + 3.0 * out[2] ** 2
    for k in range(5, k_max + 1):
        out[k] = float(stats.moment(x, k))
    return out


def _batch_count(pulses: int, k_max: int, n_batches: int) -> int:
    return max(1, min(n_batches, pulses // max(1, k_max)))


def _standard_error(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def estimate_moments(batch: PulseBatch, k_max: int, n_batches: int = None) -> MomentEstimates:
    """
    Central moments of S_n up to k_max, plus the S0 and channel means.

    Args:
        batch: Pulse records
        k_max: Highest moment order
        n_batches: Batch-means groups (default DEFAULT_BATCHES), capped so each
            group holds at least k_max pulses

    Returns:
        MomentEstimates with batch-means standard errors

    Raises:
        InsufficientPulsesError: if the batch is smaller than max(2, 2 k_max)
    """
    if k_max < 1:
        raise InvalidArgumentError("k_max must be >= 1", {"k_max": k_max})
    required = required_pulses(k_max)
    if batch.pulses < required:
        raise InsufficientPulsesError(batch.pulses, required, k_max)
    n_batches = settings.DEFAULT_BATCHES if n_batches is None else n_batches
    groups = _batch_count(batch.pulses, k_max, n_batches)

    s_n, s0, i_a, i_b = batch.S_n, batch.S0, batch.I_A, batch.I_B
    full = _central_sample(s_n, k_max)
    parts = [
        (_central_sample(a - b, k_max), np.mean(a + b), np.mean(a), np.mean(b))
        for a, b in zip(np.array_split(i_a, groups), np.array_split(i_b, groups))
    ]
    per_batch = np.array([p[0] for p in parts])

    n = batch.pulses
    moments = {
        k: MomentEstimate(float(full[k]), _standard_error(per_batch[:, k]), k, n)
        for k in range(1, k_max + 1)
    }
    s0_mean = MomentEstimate(float(np.mean(s0)), _standard_error([p[1] for p in parts]), 1, n)
    channels = (
        MomentEstimate(float(np.mean(i_a)), _standard_error([p[2] for p in parts]), 1, n),
        MomentEstimate(float(np.mean(i_b)), _standard_error([p[3] for p in parts]), 1, n),
    )

    nrf = None
    if k_max >= 2 and s0_mean.value > 0:
        ratios = [p[0][2] / p[1] for p in parts if p[1] > 0]
        nrf = MomentEstimate(moments[2].value / s0_mean.value, _standard_error(ratios), 2, n)

    return MomentEstimates(n, moments, s0_mean, channels, nrf)


def _subtract_central(signal: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Central moments of X given those of X + E and of independent E."""
    k_max = len(signal) - 1
    kappa = cumulants_from_central(signal) - cumulants_from_central(noise[: k_max + 1])
    return central_from_cumulants(kappa)


def subtract_electronic_noise(signal: MomentEstimates, noise_reference: PulseBatch) -> MomentEstimates:
    """
    Remove independently measured electronic noise from signal estimates.

    Cumulants of independent summands add, so noise cumulants are subtracted
    order by order; standard errors of the two estimates add in quadrature.
    A negative corrected variance is flagged (and logged), not clamped.
    """
    k_max = signal.k_max
    noise = estimate_moments(noise_reference, k_max)
    corrected = _subtract_central(signal.central(), noise.central())

    def quad(a: MomentEstimate, b: MomentEstimate) -> float:
        return float(np.hypot(a.standard_error, b.standard_error))

    n = signal.pulses
    mean_value = signal.s_n[1].value - noise.s_n[1].value
    moments = {1: MomentEstimate(mean_value, quad(signal.s_n[1], noise.s_n[1]), 1, n)}
    for k in range(2, k_max + 1):
        moments[k] = MomentEstimate(float(corrected[k]), quad(signal.s_n[k], noise.s_n[k]), k, n)

    s0 = MomentEstimate(signal.s0_mean.value - noise.s0_mean.value, quad(signal.s0_mean, noise.s0_mean), 1, n)
    channels = tuple(
        MomentEstimate(s.value - r.value, quad(s, r), 1, n)
        for s, r in zip(signal.channel_means, noise.channel_means)
    )

    over = k_max >= 2 and moments[2].value < 0
    if over:
        logger.warning(f"Noise over-subtraction: corrected variance {moments[2].value:.6g} < 0")

    nrf = None
    if k_max >= 2 and s0.value > 0:
        value = moments[2].value / s0.value
        rel = np.hypot(
            moments[2].standard_error / moments[2].value if moments[2].value else 0.0,
            s0.standard_error / s0.value,
        )
        nrf = MomentEstimate(value, float(abs(value) * rel), 2, n)

    return MomentEstimates(n, moments, s0, channels, nrf, over_subtracted=over)


def histogram(batch: PulseBatch, bins: int) -> Histogram:
    """
    Histogram of S_n with bins symmetric about the sample mean.

    The normality p-value (D'Agostino-Pearson) needs at least 20 pulses and
    a non-degenerate sample; it is None otherwise.
    """
    if bins < 2:
        raise InvalidArgumentError("Histogram needs at least 2 bins", {"bins": bins})
    x = batch.S_n
    mean = float(np.mean(x))
    # Widened by a hair so the extreme pulse stays inside the outer edge
    half_width = float(np.max(np.abs(x - mean))) * (1.0 + 1e-9) if len(x) else 0.0
    if half_width == 0.0:
        half_width = 0.5
    edges = np.linspace(mean - half_width, mean + half_width, bins + 1)
    counts, _ = np.histogram(x, bins=edges)

    degenerate = len(x) < 3 or np.ptp(x) == 0
    skewness = 0.0 if degenerate else float(stats.skew(x))
    pvalue = None if degenerate or len(x) < 20 else float(stats.normaltest(x).pvalue)
    return Histogram(edges, counts, mean, skewness, pvalue)


def derived_seed(seed: int, index: int) -> int:
    """Independent per-setting seed drawn from (seed, index)."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def _visibility(values: Sequence[float]) -> Optional[float]:
    top, bottom = max(values), min(values)
    if top + bottom <= 0 or bottom < 0:
        return None
    return float((top - bottom) / (top + bottom))


def _dp_from_central(
    axis: Sequence[np.ndarray], diagonal: Sequence[np.ndarray], s0: float, orders: Sequence[int]
) -> Tuple[Optional[float], Optional[float], Dict[int, Optional[float]], np.ndarray]:
    """P1, P2 and higher-order visibilities from per-setting [1, mean, mu_2, ...] arrays."""
    means = np.array([a[1] for a in axis])
    p1 = float(np.linalg.norm(means) / s0) if s0 > 0 else None

    cov = np.diag([a[2] for a in axis])
    for (i, j), d in zip(_DIAGONAL_PAIRS, diagonal):
        cov[i, j] = cov[j, i] = d[2] - 0.5 * (axis[i][2] + axis[j][2])
    try:
        p2 = dp2_eigen(cov, s0).dp
    except UndefinedDPError:
        p2 = None

    everything = list(axis) + list(diagonal)
    higher = {k: _visibility([c[k] for c in everything]) for k in orders if k >= 3}
    return p1, p2, higher, cov


def monte_carlo_dp(
    spec: BellStateSpec,
    config: DetectorConfig,
    orders: Sequence[int] = (4,),
    n_batches: int = None,
    subtract_noise: bool = True,
) -> MonteCarloDP:
    """
    Estimate P1, P2 and higher-order DPs from simulated pulses at six settings.

    P1 uses the three axis means; P2 eigen-decomposes the covariance rebuilt
    from axis and diagonal variances; order k >= 3 is the visibility of the
    k-th central moment over the six measured directions. Each setting gets
    its own seed derived from ``config.seed``; a vacuum batch with the same
    electronic noise is subtracted when ``subtract_noise`` is set.
    Uncertainties repeat the whole computation per contiguous batch.
    """
    orders = sorted(set(int(k) for k in orders))
    k_max = max([2] + orders)
    n_batches = settings.DEFAULT_BATCHES if n_batches is None else n_batches
    settings_all = MC_AXIS_SETTINGS + MC_DIAGONAL_SETTINGS

    batches = []
    for i, setting in enumerate(settings_all):
        table = outcome_table(spec, setting)
        batches.append(sample_pulses(table, spec.quadruples, replace(config, seed=derived_seed(config.seed, i))))

    noise_central = np.zeros(k_max + 1)
    noise_central[0] = 1.0
    noise_s0 = 0.0
    if subtract_noise and config.electronic_noise_sigma > 0:
        reference = sample_pulses(
            vacuum_table(), spec.quadruples, replace(config, seed=derived_seed(config.seed, len(settings_all)))
        )
        noise_central = estimate_moments(reference, k_max).central()
        noise_s0 = float(np.mean(reference.S0))

    def corrected(x: np.ndarray) -> np.ndarray:
        raw = _central_sample(x, k_max)
        out = _subtract_central(raw, noise_central)
        out[1] = raw[1] - noise_central[1]
        return out

    def evaluate(group: Sequence[PulseBatch]):
        central = [corrected(b.S_n) for b in group]
        s0 = float(np.mean([np.mean(b.S0) for b in group])) - noise_s0
        return _dp_from_central(central[:3], central[3:], s0, orders) + (s0,)

    p1, p2, higher, cov, s0 = evaluate(batches)

    groups = _batch_count(config.pulses, k_max, n_batches)
    split = [b.split(groups) for b in batches]
    per_group = [evaluate([s[g] for s in split]) for g in range(groups)]

    def se(values) -> Optional[float]:
        values = [v for v in values if v is not None]
        out = _standard_error(values)
        return None if np.isnan(out) else out

    p1_est = DPEstimate(1, p1, se([g[0] for g in per_group]))
    p2_est = DPEstimate(2, p2, se([g[1] for g in per_group]))
    higher_est = {k: DPEstimate(k, v, se([g[2][k] for g in per_group])) for k, v in higher.items()}
    for k, est in higher_est.items():
        if est.value is None:
            logger.warning(f"Monte Carlo P{k} undefined: moment field changes sign or sums to zero")

    estimates = [estimate_moments(b, k_max, n_batches) for b in batches]
    logger.info(f"Monte Carlo DP for {spec.label}: P1={p1}, P2={p2}")
    return MonteCarloDP(p1_est, p2_est, higher_est, cov, s0, estimates)


def clear_table_cache() -> None:
    """
    Clear the outcome-table cache.

    Useful for testing or after changing Fock bounds.
    """
    _table_cache.clear()
    logger.info("Outcome table cache cleared")


def get_cache_info() -> Dict[str, Any]:
    """
    Get outcome-table cache statistics.

    Returns:
        Dict with cache size and cached keys
    """
    return {
        "maxsize": _table_cache.maxsize,
        "current_size": len(_table_cache),
        "keys": list(_table_cache.keys()),
    }
