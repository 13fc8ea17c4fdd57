"""Hypothesis tests and confidence intervals on groupwise effect estimates.

Pointwise t-tests, simultaneous intervals from the max of independent
normals (Sidak/maxT), pairwise two-group contrasts, a chi-square general
linear hypothesis test, and the standardized-effect sample-size rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import GroupEffects
from .dists import chisq_cdf, chisq_quantile, normal_cdf, normal_quantile
from .errors import DomainError, ZeroVarianceContrast


def maxt_critical(alpha: float, n_comparisons: int) -> float:
    """Two-sided critical value for the max of independent standard normals.

    q = z at level 1 - (1 - (1-alpha)^(1/G)) / 2; reduces to z_{1-alpha/2}
    at G = 1 and grows slowly with the number of comparisons.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if n_comparisons < 1:
        raise DomainError(f"need at least one comparison, got {n_comparisons}")
    per_test = 1.0 - (1.0 - alpha) ** (1.0 / n_comparisons)
    return normal_quantile(1.0 - per_test / 2.0)


@dataclass(frozen=True)
class InferenceReport:
    """Per-group test results; simultaneous intervals always contain the
    pointwise ones because q_crit >= z_crit."""

    tau_hat: np.ndarray
    se: np.ndarray
    tau0: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    ci_simul_lo: np.ndarray
    ci_simul_hi: np.ndarray
    reject_pointwise: np.ndarray
    reject_simul: np.ndarray
    n_g: np.ndarray
    n_effective: int
    alpha: float
    z_crit: float
    q_crit: float

    @property
    def n_groups(self) -> int:
        return self.tau_hat.shape[0]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "z_crit": self.z_crit,
            "q_crit": self.q_crit,
            "n_effective": int(self.n_effective),
            "groups": [
                {
                    "g": g + 1,
                    "n_g": int(self.n_g[g]),
                    "estimate": float(self.tau_hat[g]),
                    "se": float(self.se[g]),
                    "tau0": float(self.tau0[g]),
                    "t_stat": float(self.t_stat[g]),
                    "p_value": float(self.p_value[g]),
                    "ci_lo": float(self.ci_lo[g]),
                    "ci_hi": float(self.ci_hi[g]),
                    "ci_simul_lo": float(self.ci_simul_lo[g]),
                    "ci_simul_hi": float(self.ci_simul_hi[g]),
                    "reject_pointwise": bool(self.reject_pointwise[g]),
                    "reject_simultaneous": bool(self.reject_simul[g]),
                }
                for g in range(self.n_groups)
            ],
        }

    def csv_rows(self) -> list[dict]:
        return [
            {
                "group": g + 1,
                "n_g": int(self.n_g[g]),
                "estimate": float(self.tau_hat[g]),
                "se": float(self.se[g]),
                "t_stat": float(self.t_stat[g]),
                "p_value": float(self.p_value[g]),
                "ci_lo": float(self.ci_lo[g]),
                "ci_hi": float(self.ci_hi[g]),
                "ci_simul_lo": float(self.ci_simul_lo[g]),
                "ci_simul_hi": float(self.ci_simul_hi[g]),
                "reject_pointwise": int(self.reject_pointwise[g]),
                "reject_simultaneous": int(self.reject_simul[g]),
            }
            for g in range(self.n_groups)
        ]


def _build_report(ge: GroupEffects, tau0: np.ndarray, alpha: float) -> InferenceReport:
    se = ge.se()
    t_stat = (ge.tau_hat - tau0) / se
    p_value = np.array([2.0 * normal_cdf(-abs(t)) for t in t_stat])
    z = normal_quantile(1.0 - alpha / 2.0)
    q = maxt_critical(alpha, ge.n_groups)
    return InferenceReport(
        tau_hat=ge.tau_hat.copy(),
        se=se,
        tau0=tau0,
        t_stat=t_stat,
        p_value=p_value,
        ci_lo=ge.tau_hat - z * se,
        ci_hi=ge.tau_hat + z * se,
        ci_simul_lo=ge.tau_hat - q * se,
        ci_simul_hi=ge.tau_hat + q * se,
        reject_pointwise=np.abs(t_stat) > z,
        reject_simul=np.abs(t_stat) > q,
        n_g=ge.n_g.copy(),
        n_effective=ge.n_effective,
        alpha=alpha,
        z_crit=z,
        q_crit=q,
    )


def _coerce_tau0(ge: GroupEffects, tau0) -> np.ndarray:
    if tau0 is None:
        return np.zeros(ge.n_groups)
    out = np.asarray(tau0, dtype=np.float64)
    if out.shape != (ge.n_groups,):
        raise ValueError(f"tau0 must have length {ge.n_groups}")
    return out


def pointwise_tests(ge: GroupEffects, tau0=None, alpha: float = 0.05) -> InferenceReport:
    """Per-group t-tests of tau_g = tau0_g with two-sided normal p-values."""
    return _build_report(ge, _coerce_tau0(ge, tau0), alpha)


def simultaneous_cis(ge: GroupEffects, alpha: float = 0.05, tau0=None) -> InferenceReport:
    """Simultaneous intervals: the pointwise recipe with q_crit in place of
    z_crit, controlling the familywise error rate at alpha."""
    return _build_report(ge, _coerce_tau0(ge, tau0), alpha)


@dataclass(frozen=True)
class PairwiseResult:
    g1: int
    g2: int
    diff: float
    se: float
    z_stat: float
    p_value: float
    q_crit: float
    reject_pointwise: bool
    reject_simultaneous: bool


def pairwise_test(
    ge: GroupEffects,
    g1: int,
    g2: int,
    alpha: float = 0.05,
    n_pairs: Optional[int] = None,
) -> PairwiseResult:
    """Two-sample z-test of tau_g1 = tau_g2 with unequal variances.

    The simultaneous flag uses the maxT critical value for n_pairs
    comparisons, defaulting to all C(G, 2) pairs.
    """
    if g1 == g2:
        raise ValueError("pairwise test needs two distinct groups")
    n_groups = ge.n_groups
    if not (1 <= g1 <= n_groups and 1 <= g2 <= n_groups):
        raise ValueError(f"groups must lie in 1..{n_groups}")
    if n_pairs is None:
        n_pairs = n_groups * (n_groups - 1) // 2
    var = ge.sigma_gg_hat / ge.n_effective
    diff = float(ge.tau_hat[g1 - 1] - ge.tau_hat[g2 - 1])
    se = math.sqrt(var[g1 - 1] + var[g2 - 1])
    z_stat = diff / se
    z = normal_quantile(1.0 - alpha / 2.0)
    q = maxt_critical(alpha, n_pairs)
    return PairwiseResult(
        g1=g1,
        g2=g2,
        diff=diff,
        se=se,
        z_stat=z_stat,
        p_value=2.0 * normal_cdf(-abs(z_stat)),
        q_crit=q,
        reject_pointwise=abs(z_stat) > z,
        reject_simultaneous=abs(z_stat) > q,
    )


def all_pairwise(ge: GroupEffects, alpha: float = 0.05) -> list[PairwiseResult]:
    n_groups = ge.n_groups
    n_pairs = n_groups * (n_groups - 1) // 2
    return [
        pairwise_test(ge, g1, g2, alpha=alpha, n_pairs=n_pairs)
        for g1 in range(1, n_groups + 1)
        for g2 in range(g1 + 1, n_groups + 1)
    ]


@dataclass(frozen=True)
class Contrast:
    """General linear hypothesis K tau = m0."""

    K: np.ndarray
    m0: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=np.float64))
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=np.float64))
        if K.shape[0] != m0.shape[0]:
            raise ValueError("K and m0 must have the same number of rows")
        if K.shape[0] < 1:
            raise ValueError("contrast needs at least one row")
        if np.any(np.all(K == 0.0, axis=1)):
            raise ValueError("contrast rows must be non-zero")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "m0", m0)

    @staticmethod
    def pairwise_differences(n_groups: int) -> "Contrast":
        rows = []
        for g1 in range(n_groups):
            for g2 in range(g1 + 1, n_groups):
                row = np.zeros(n_groups)
                row[g1] = 1.0
                row[g2] = -1.0
                rows.append(row)
        return Contrast(np.asarray(rows), np.zeros(len(rows)))


@dataclass(frozen=True)
class GlhResult:
    statistic: float
    rank: int
    p_value: float
    critical_value: float
    reject: bool


def glh_test(ge: GroupEffects, contrast: Contrast, alpha: float = 0.05) -> GlhResult:
    """Chi-square test of K tau = m0 on the standardized contrast scale.

    The contrast covariance is diagonally standardized; a rank-deficient
    standardized covariance is inverted by eigendecomposition pseudo-inverse
    with rank counted as eigenvalues above 1e-10 of the largest.
    """
    if contrast.K.shape[1] != ge.n_groups:
        raise ValueError(
            f"contrast has {contrast.K.shape[1]} columns for {ge.n_groups} groups"
        )
    sigma = np.diag(ge.sigma_gg_hat)
    ksk = contrast.K @ sigma @ contrast.K.T
    diag = np.diag(ksk).copy()
    if np.any(diag <= 0.0):
        raise ZeroVarianceContrast(
            "a contrast row has zero estimated variance; it cannot be standardized"
        )
    d_inv_half = 1.0 / np.sqrt(diag)
    q_vec = math.sqrt(ge.n_effective) * d_inv_half * (
        contrast.K @ ge.tau_hat - contrast.m0
    )
    corr = d_inv_half[:, None] * ksk * d_inv_half[None, :]
    eigvals, eigvecs = np.linalg.eigh(0.5 * (corr + corr.T))
    keep = eigvals > 1e-10 * eigvals.max()
    rank = int(keep.sum())
    if rank == 0:
        raise ZeroVarianceContrast("standardized contrast covariance has rank zero")
    inv_vals = np.where(keep, 1.0 / np.where(keep, eigvals, 1.0), 0.0)
    stat = float(q_vec @ (eigvecs @ (inv_vals * (eigvecs.T @ q_vec))))
    # n_effective already entered through q_vec; sigma_gg_hat is pre-division
    # by n, so the scaling is sqrt(n) * (K tau - m0) / sd-scale as displayed.
    p_value = 1.0 - chisq_cdf(stat, rank)
    critical = chisq_quantile(1.0 - alpha, rank)
    return GlhResult(
        statistic=stat,
        rank=rank,
        p_value=p_value,
        critical_value=critical,
        reject=stat > critical,
    )


def power_min_n(z_tilde: float, alpha: float = 0.05, power: float = 0.8) -> int:
    """Smallest group size giving the target power for a standardized effect.

    n = ceil((z_power + z_{1-alpha/2})^2 / z_tilde^2); for example
    z_tilde = 1 needs 8 observations and z_tilde = 0.1 needs 785.
    """
    if not z_tilde > 0:
        raise DomainError(f"z_tilde must be positive, got {z_tilde}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < power < 1.0:
        raise DomainError(f"power must lie in (0, 1), got {power}")
    z_sum = normal_quantile(power) + normal_quantile(1.0 - alpha / 2.0)
    return math.ceil((z_sum / z_tilde) ** 2)
