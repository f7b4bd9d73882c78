"""Multi-decomposed Gaussian sampling.

Fits an n-component Gaussian mixture to a target distribution by
iterative refinement, gated on a two-sample Kolmogorov-Smirnov test, with
rejection sampling against fixed lower/upper duration bounds.  This is
the block-duration model used for the arm-connection, arm-disconnection,
sampling, inspection and ullage blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import quad

from .core import BerthstayError, BlockKind

SampleSource = Union[np.ndarray, "list[float]", Callable[[int, np.random.Generator], np.ndarray]]


class DegenerateTruncation(BerthstayError):
    """The mixture has essentially no probability mass inside [lb, ub]."""


class FitNotConverged(BerthstayError):
    """The iteration budget ran out before the KS gate was satisfied."""

    def __init__(self, message: str, best_mixture: "TruncatedMixture", best_ks: "KsResult"):
        super().__init__(message)
        self.best_mixture = best_mixture
        self.best_ks = best_ks


@dataclass(frozen=True)
class TruncatedMixture:
    """Gaussian mixture restricted to the duration window [lb, ub] hours.

    ``components`` holds (mu, sigma) pairs; sigma 0 denotes a point mass.
    """

    components: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]
    lb: float
    ub: float

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        if len(self.weights) != len(self.components):
            raise ValueError("weights and components must align")
        if not self.lb < self.ub:
            raise ValueError(f"bounds must satisfy lb < ub, got [{self.lb}, {self.ub}]")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")
        if any(sigma < 0 for _, sigma in self.components):
            raise ValueError("component sigmas must be non-negative")

    @classmethod
    def equal_weights(
        cls, components: list[tuple[float, float]], lb: float, ub: float
    ) -> "TruncatedMixture":
        n = len(components)
        weights = [1.0 / n] * n
        weights[-1] = 1.0 - sum(weights[:-1])  # close the float gap exactly
        return cls(tuple((float(m), float(s)) for m, s in components), tuple(weights), lb, ub)

    def to_json_dict(self) -> dict:
        return {
            "components": [{"mu": mu, "sigma": sigma} for mu, sigma in self.components],
            "weights": list(self.weights),
            "lb": self.lb,
            "ub": self.ub,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TruncatedMixture":
        return cls(
            components=tuple((float(c["mu"]), float(c["sigma"])) for c in data["components"]),
            weights=tuple(float(w) for w in data["weights"]),
            lb=float(data["lb"]),
            ub=float(data["ub"]),
        )


@dataclass(frozen=True)
class KsResult:
    """Two-sample KS outcome: statistic, critical value and p-value.

    All three lie in [0, 1]; the critical value is capped at 1 since the
    statistic itself cannot exceed 1.
    """

    d: float
    d_crit: float
    p: float

    def accepts(self, alpha: float = 0.05) -> bool:
        return self.d_crit >= self.d and self.p >= alpha


@dataclass(frozen=True)
class FitConfig:
    """Knobs for one mixture fit.

    ``accept_margin`` tightens the stopping rule to ``margin * D <= D_c``:
    at 1.0 the loop stops at the first plain KS pass; production fits use
    a higher margin so the accepted mixture sits well inside the
    acceptance region and survives fresh re-tests instead of scraping by.
    """

    n: int
    lb: float
    ub: float
    s: int = 500
    alpha: float = 0.05
    max_iter: int = 500
    rng_seed: int = 0
    accept_margin: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one component")
        if self.s < 10:
            raise ValueError("need at least 10 samples per iteration")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not self.lb < self.ub:
            raise ValueError("bounds must satisfy lb < ub")
        if self.accept_margin < 1.0:
            raise ValueError("accept_margin must be at least 1")


def ks_two_sample(s1, s2, alpha: float = 0.05) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    D is the supremum over all sample points of the ECDF gap.  The
    critical value is c(alpha)*sqrt((n+m)/(n*m)) with c(0.05) = 1.358,
    and the p-value comes from the asymptotic Kolmogorov series
    Q(lam) = 2*sum_k (-1)^(k-1) exp(-2 k^2 lam^2), truncated once terms
    drop below 1e-8.
    """
    a = np.asarray(s1, dtype=float)
    b = np.asarray(s2, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n, m = a.size, b.size
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    points = np.concatenate([a_sorted, b_sorted])
    counts1 = np.searchsorted(a_sorted, points, side="right").astype(np.int64)
    counts2 = np.searchsorted(b_sorted, points, side="right").astype(np.int64)
    # Integer numerator with a single division: D is the correctly-rounded
    # float of the exact rational sup |F1 - F2|.
    d = float(int(np.max(np.abs(counts1 * m - counts2 * n))) / (n * m))

    c_alpha = math.sqrt(-math.log(alpha / 2.0) / 2.0)
    d_crit = min(1.0, c_alpha * math.sqrt((n + m) / (n * m)))
    return KsResult(d=d, d_crit=d_crit, p=_kolmogorov_p(d, n, m))


def _kolmogorov_p(d: float, n: int, m: int) -> float:
    if d <= 0.0:
        return 1.0
    ne = n * m / (n + m)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    if lam < 1e-3:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 100001):
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < 1e-8:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def _draw_raw(mix: TruncatedMixture, count: int, rng: np.random.Generator) -> np.ndarray:
    mus = np.array([mu for mu, _ in mix.components])
    sigmas = np.array([sigma for _, sigma in mix.components])
    idx = rng.choice(len(mix.components), size=count, p=np.asarray(mix.weights))
    return rng.normal(mus[idx], sigmas[idx])


def sample_mixture(mix: TruncatedMixture, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw exactly ``count`` samples, all inside [lb, ub].

    Out-of-bounds draws are rejected and redrawn.  The in-bounds mass is
    first estimated with 10^4 probe draws; a mixture with no probe hit is
    rejected outright rather than looping forever.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    probe = _draw_raw(mix, 10_000, rng)
    mass = float(np.mean((probe >= mix.lb) & (probe <= mix.ub)))
    if mass < 1e-6:
        raise DegenerateTruncation(
            f"mixture mass inside [{mix.lb}, {mix.ub}] is below 1e-6 (probe estimate {mass})"
        )
    out = np.empty(count, dtype=float)
    filled = 0
    while filled < count:
        want = count - filled
        batch = int(min(1_000_000, math.ceil(want / max(mass, 1e-4)) + 16))
        draws = _draw_raw(mix, batch, rng)
        keep = draws[(draws >= mix.lb) & (draws <= mix.ub)]
        take = min(want, keep.size)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


@lru_cache(maxsize=512)
def truncated_mean(mix: TruncatedMixture) -> float:
    """E[X | lb <= X <= ub] by adaptive numeric integration.

    Each component is integrated only over the part of [lb, ub] within
    40 sigma of its mean, so the quadrature cannot step over a narrow
    peak; the mass outside that window is below 1e-300.  Point-mass
    components (sigma 0) contribute their location directly when it lies
    inside the bounds.
    """
    mass = 0.0
    first = 0.0
    for (mu, sigma), w in zip(mix.components, mix.weights):
        if w == 0.0:
            continue
        if sigma == 0.0:
            if mix.lb <= mu <= mix.ub:
                mass += w
                first += w * mu
            continue

        lo = max(mix.lb, mu - 40.0 * sigma)
        hi = min(mix.ub, mu + 40.0 * sigma)
        if lo >= hi:
            continue

        def pdf(x: float, mu=mu, sigma=sigma) -> float:
            z = (x - mu) / sigma
            return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))

        interior = [mu] if lo < mu < hi else []
        comp_mass, _ = quad(
            pdf, lo, hi, points=interior, epsabs=1e-10, epsrel=1e-10, limit=200
        )
        comp_first, _ = quad(
            lambda x: x * pdf(x), lo, hi, points=interior, epsabs=1e-10, epsrel=1e-10, limit=200
        )
        mass += w * comp_mass
        first += w * comp_first
    if mass < 1e-6:
        raise DegenerateTruncation(
            f"mixture mass inside [{mix.lb}, {mix.ub}] is below 1e-6 ({mass})"
        )
    return min(mix.ub, max(mix.lb, first / mass))


def _as_sampler(target: SampleSource) -> Callable[[int, np.random.Generator], np.ndarray]:
    if callable(target):
        return target
    values = np.asarray(target, dtype=float)
    if values.size == 0:
        raise ValueError("target sample array is empty")

    def bootstrap(count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(values, size=count, replace=True)

    return bootstrap


def _trimmed_target(
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    count: int,
    lb: float,
    ub: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rejection-resample the target source to ``count`` in-bounds values."""
    out = np.empty(count, dtype=float)
    filled = 0
    misses = 0
    while filled < count:
        draws = np.asarray(sampler(count, rng), dtype=float)
        keep = draws[(draws >= lb) & (draws <= ub)]
        if keep.size == 0:
            misses += 1
            if misses > 50:
                raise DegenerateTruncation(
                    f"target source yields no samples inside [{lb}, {ub}]"
                )
            continue
        take = min(count - filled, keep.size)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def _initial_mixture(batch: np.ndarray, n: int, lb: float, ub: float) -> TruncatedMixture:
    # Spread component means across the support; start with a shared
    # narrow scale and equal weights.
    quantiles = [(i + 1) / (n + 1) for i in range(n)]
    mus = np.quantile(batch, quantiles)
    sigma = float(np.std(batch, ddof=1)) / n if batch.size > 1 else 0.0
    return TruncatedMixture.equal_weights([(float(mu), sigma) for mu in mus], lb, ub)


def _refine(mix: TruncatedMixture, batch: np.ndarray) -> TruncatedMixture:
    """One EM refinement pass, blended 50/50 with the old fit.

    Responsibilities are soft: with overlapping components a hard
    max-responsibility assignment systematically understates component
    spread and the resulting fits keep failing fresh KS re-tests.  Each
    component is reset to its responsibility-weighted mean/std, weights to
    the responsibility mass; starved components keep their parameters.
    """
    mus = np.array([mu for mu, _ in mix.components])
    sigmas = np.maximum(np.array([sigma for _, sigma in mix.components]), 1e-12)
    log_w = np.log(np.maximum(np.asarray(mix.weights), 1e-300))
    z = (batch[:, None] - mus[None, :]) / sigmas[None, :]
    log_resp = log_w[None, :] - 0.5 * z * z - np.log(sigmas)[None, :]
    log_resp -= log_resp.max(axis=1, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)
    mass = resp.sum(axis=0)

    new_components = []
    new_weights = []
    for i, (mu, sigma) in enumerate(mix.components):
        if mass[i] > 1e-9:
            new_mu = float(np.sum(resp[:, i] * batch) / mass[i])
            variance = float(np.sum(resp[:, i] * (batch - new_mu) ** 2) / mass[i])
            new_sigma = math.sqrt(max(variance, 0.0))
        else:
            new_mu, new_sigma = mu, sigma
        new_components.append(
            (0.5 * new_mu + 0.5 * mu, 0.5 * new_sigma + 0.5 * sigma)
        )
        new_weights.append(0.5 * (mass[i] / batch.size) + 0.5 * mix.weights[i])
    total = sum(new_weights)
    return TruncatedMixture(
        components=tuple(new_components),
        weights=tuple(w / total for w in new_weights),
        lb=mix.lb,
        ub=mix.ub,
    )


@dataclass(frozen=True)
class MdgsFit:
    mixture: TruncatedMixture
    ks: KsResult
    iterations: int


def fit_mdgs(target: SampleSource, cfg: FitConfig) -> MdgsFit:
    """Fit a truncated mixture to a target sample source.

    Per iteration: draw ``s`` target samples and ``s`` mixture samples,
    trim both to [lb, ub], KS-test them, and stop once the critical value
    covers the statistic and the p-value clears ``alpha``; otherwise
    refine the components and repeat.  ``target`` is either an array of
    historical durations (bootstrap-resampled) or a sampler callable
    ``(count, rng) -> samples``.

    Raises FitNotConverged (carrying the best mixture seen) when the
    iteration budget runs out.
    """
    sampler = _as_sampler(target)
    rng = np.random.default_rng(cfg.rng_seed)
    first_batch = _trimmed_target(sampler, cfg.s, cfg.lb, cfg.ub, rng)
    mix = _initial_mixture(first_batch, cfg.n, cfg.lb, cfg.ub)

    best: Optional[tuple[TruncatedMixture, KsResult]] = None
    for iteration in range(1, cfg.max_iter + 1):
        target_batch = _trimmed_target(sampler, cfg.s, cfg.lb, cfg.ub, rng)
        mix_batch = sample_mixture(mix, cfg.s, rng)
        ks = ks_two_sample(target_batch, mix_batch, cfg.alpha)
        if best is None or ks.d < best[1].d:
            best = (mix, ks)
        if cfg.accept_margin * ks.d <= ks.d_crit and ks.p >= cfg.alpha:
            return MdgsFit(mixture=mix, ks=ks, iterations=iteration)
        mix = _refine(mix, target_batch)

    assert best is not None
    raise FitNotConverged(
        f"no acceptable fit within {cfg.max_iter} iterations (best D={best[1].d:.4f}, "
        f"D_crit={best[1].d_crit:.4f})",
        best_mixture=best[0],
        best_ks=best[1],
    )


#: Blocks whose durations are modelled as truncated mixtures.
MIXTURE_BLOCKS = (
    BlockKind.SAMPLING,
    BlockKind.TANK_INSPECTION,
    BlockKind.UBO,
    BlockKind.CARGO_ARM_CONNECTION,
    BlockKind.CARGO_ARM_DISCONNECTION,
    BlockKind.PREWASH_ARM_CONNECTION,
    BlockKind.PREWASH_ARM_DISCONNECTION,
)

_BLOCK_FILES = {
    BlockKind.SAMPLING: "sampling.json",
    BlockKind.TANK_INSPECTION: "tank_inspection.json",
    BlockKind.UBO: "ubo.json",
    BlockKind.CARGO_ARM_CONNECTION: "cargo_arm_connection.json",
    BlockKind.CARGO_ARM_DISCONNECTION: "cargo_arm_disconnection.json",
    BlockKind.PREWASH_ARM_CONNECTION: "prewash_arm_connection.json",
    BlockKind.PREWASH_ARM_DISCONNECTION: "prewash_arm_disconnection.json",
}


def reference_block_mixtures() -> dict[BlockKind, TruncatedMixture]:
    """Per-block mixtures calibrated on historical terminal data.

    Shipped as one JSON file per block; used as the default ground truth
    of the synthetic generator and as sensible priors for component
    counts when fitting real logs.
    """
    out: dict[BlockKind, TruncatedMixture] = {}
    root = resources.files("berthstay")
    for kind, filename in _BLOCK_FILES.items():
        payload = root.joinpath("data", "blocks", filename).read_text()
        out[kind] = TruncatedMixture.from_json_dict(json.loads(payload))
    return out
