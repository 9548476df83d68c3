"""Channel parameter estimation from disclosed package data.

Per package, k = r*n modulated/measured pairs (M_j, B_j) are disclosed.
The square-root transmittance estimator is the normalized covariance

    sqrtT_hat = (1/(V*k)) sum_j M_j B_j,

unbiased for sqrt(T) with variance (2T + V_N/V)/k.  Aggregating over
packages yields bias-corrected estimates of the fluctuation statistics
X1 = <T> - <sqrt T>^2 and X2 = <T> + <sqrt T>^2 whose joint confidence
bounds determine the worst-case effective channel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Package, ProtocolParams, Run
from .errors import InsufficientDataError, ParameterError

__all__ = [
    "PackageEstimate",
    "AggregateStats",
    "WorstCaseChannel",
    "estimate_sqrtT",
    "estimate_T",
    "estimate_noise",
    "estimate_package",
    "estimate_run",
    "aggregate",
    "worst_case",
    "worst_case_rectangular",
]

_VAR_FLOOR = 1e-30


@dataclass(frozen=True)
class PackageEstimate:
    """Point estimates and model standard deviations for one package.

    sign_anomaly marks a negative sqrt-T estimate (anti-correlated
    disclosed data); the value is kept unclamped so averages stay
    unbiased, but downstream consumers may want to know.
    """

    sqrtT_hat: float
    T_hat: float
    sigma_sqrtT: float
    sigma_T: float
    vN_hat: float
    k: int
    sign_anomaly: bool = False


@dataclass(frozen=True)
class AggregateStats:
    """Across-package statistics feeding the worst-case channel bounds.

    X1_hat and X2_hat are bias-corrected: both the average of squared
    per-package estimates and the squared average inflate by estimator
    sampling variance, so the model-predicted variance is subtracted
    before combining.  Standard errors come from the per-package
    influence columns of each statistic.
    """

    mean_sqrtT_hat: float
    mean_T_hat: float
    X1_hat: float
    X2_hat: float
    se_X1: float
    se_X2: float
    m_used: int
    se_mean_sqrtT: float = 0.0
    se_mean_T: float = 0.0
    eps_hat: float = 0.0
    vN_pooled: float = 1.0
    k_total: float = 0.0


@dataclass(frozen=True)
class WorstCaseChannel:
    """Confidence-bounded effective channel pessimistic for the key rate.

    unusable is set when the bounds crossed (X2_low <= X1_up) and the
    transmittance bound was clamped to 0.
    """

    T_eff_low: float
    eps_eff_up: float
    X1_up: float
    X2_low: float
    eps_up: float
    unusable: bool = False


def _check_pairs(M, B) -> tuple[np.ndarray, np.ndarray, int]:
    M = np.asarray(M, dtype=float)
    B = np.asarray(B, dtype=float)
    if M.shape != B.shape or M.ndim != 1:
        raise ParameterError("M and B must be 1-d arrays of equal length")
    if M.size < 2:
        raise InsufficientDataError("need at least 2 disclosed pairs")
    return M, B, M.size


def _core(M, B, V: float) -> tuple[float, float, float, float, int]:
    """Shared plumbing: (sqrtT_hat, T_hat, vN_hat, v_u, k)."""
    M, B, k = _check_pairs(M, B)
    if not (V > 0.0):
        raise ParameterError(f"modulation variance must be positive, got {V}")
    sqrtT_hat = float(np.sum(M * B) / (V * k))
    T_hat = sqrtT_hat**2
    resid = B - sqrtT_hat * M
    vN_hat = float(np.sum(resid**2) / (k - 1))
    # model variance of the sqrt estimator with plug-in (T, V_N)
    v_u = max((2.0 * T_hat + max(vN_hat, 0.0) / V) / k, _VAR_FLOOR)
    return sqrtT_hat, T_hat, vN_hat, v_u, k


def estimate_sqrtT(M, B, V: float) -> tuple[float, float]:
    """Estimate sqrt(T) from disclosed pairs via the scaled M-B covariance.

    Returns (sqrtT_hat, sigma_sqrtT) where the predicted standard
    deviation sqrt((2T + V_N/V)/k) is evaluated at plug-in estimates.
    """
    sqrtT_hat, _, _, v_u, _ = _core(M, B, V)
    return sqrtT_hat, math.sqrt(v_u)


def estimate_T(M, B, V: float) -> tuple[float, float]:
    """Estimate T as the square of the sqrt-T estimator.

    Returns (T_hat, sigma_T).  The leading-order predicted variance
    4*T*Var(sqrtT_hat) is kept strictly positive by the exact Gaussian
    second-order term 2*Var(sqrtT_hat)^2, which matters only near T=0.
    """
    _, T_hat, _, v_u, _ = _core(M, B, V)
    sigma_T = math.sqrt(4.0 * T_hat * v_u + 2.0 * v_u**2)
    return T_hat, sigma_T


def estimate_noise(M, B, V: float, V_S: float) -> tuple[float, float]:
    """Residual noise variance and the excess noise it implies.

    vN_hat = (1/(k-1)) sum (B - sqrtT_hat*M)^2 and
    eps_hat = vN_hat - 1 + T_hat*(1 - V_S).  A strongly negative
    eps_hat (beyond 4 residual-variance standard errors) signals model
    mismatch and triggers a warning; callers clamp at 0 for key-rate
    use.
    """
    sqrtT_hat, T_hat, vN_hat, _, k = _core(M, B, V)
    eps_hat = vN_hat - 1.0 + T_hat * (1.0 - V_S)
    tol = max(4.0 * math.sqrt(2.0 / k) * max(vN_hat, 0.0), 1e-9)
    if eps_hat < -tol:
        warnings.warn(f"excess noise estimate {eps_hat:.4g} is negative beyond "
                      f"sampling tolerance {tol:.4g}; model mismatch?",
                      RuntimeWarning, stacklevel=2)
    return vN_hat, eps_hat


def _disclosed_count(n: int, r: float) -> int:
    k = int(round(r * n))
    return min(n, max(k, 0))


def estimate_package(pkg: Package, protocol: ProtocolParams) -> PackageEstimate:
    """Estimate one package from its first k = r*n disclosed states."""
    k = _disclosed_count(pkg.n, protocol.r)
    if k < 2:
        raise InsufficientDataError(
            f"r*n = {protocol.r * pkg.n:.2f} leaves fewer than 2 disclosed states")
    M, B = pkg.M[:k], pkg.B[:k]
    sqrtT_hat, T_hat, vN_hat, v_u, _ = _core(M, B, protocol.V)
    return PackageEstimate(
        sqrtT_hat=sqrtT_hat, T_hat=T_hat,
        sigma_sqrtT=math.sqrt(v_u),
        sigma_T=math.sqrt(4.0 * T_hat * v_u + 2.0 * v_u**2),
        vN_hat=vN_hat, k=k, sign_anomaly=sqrtT_hat < 0.0)


def estimate_run(run: Run) -> list[PackageEstimate]:
    return [estimate_package(p, run.protocol) for p in run.packages]


def aggregate(estimates: Sequence[PackageEstimate],
              protocol: ProtocolParams) -> AggregateStats:
    """Combine per-package estimates into bias-corrected fluctuation stats.

    With u_i = sqrtT_hat_i and w_i = T_hat_i - sigma_sqrtT_i^2 (w is
    unbiased for T_i because squaring adds the estimator variance), the
    corrected square of the mean is mean(u)^2 - Var(u)/m, and

        X1_hat = mean(w) - (mean(u)^2 - Var(u)/m)
        X2_hat = mean(w) + (mean(u)^2 - Var(u)/m).

    Standard errors use the influence columns w_i -/+ 2*mean(u)*u_i.
    The pooled residual variance is likewise corrected for the
    2*T*V/(k-1) inflation of the fixed-denominator slope estimator.
    """
    m = len(estimates)
    if m < 2:
        raise InsufficientDataError("need at least 2 packages to aggregate")
    u = np.array([e.sqrtT_hat for e in estimates])
    w = np.array([e.T_hat - e.sigma_sqrtT**2 for e in estimates])
    mean_u = float(np.mean(u))
    mean_w = float(np.mean(w))
    s2_u = float(np.var(u, ddof=1))
    mean_sq = mean_u**2 - s2_u / m
    X1_hat = mean_w - mean_sq
    X2_hat = mean_w + mean_sq
    psi1 = w - 2.0 * mean_u * u
    psi2 = w + 2.0 * mean_u * u
    se_X1 = float(np.std(psi1, ddof=1)) / math.sqrt(m)
    se_X2 = float(np.std(psi2, ddof=1)) / math.sqrt(m)
    se_mean_sqrtT = math.sqrt(s2_u / m)
    se_mean_T = float(np.std(w, ddof=1)) / math.sqrt(m)
    vN = np.array([e.vN_hat for e in estimates])
    k_arr = np.array([e.k for e in estimates], dtype=float)
    k_total = float(np.sum(k_arr))
    w_plus = np.maximum(w, 0.0)
    # the residual variance of the fixed-denominator slope estimator sits
    # 2*T*V/(k-1) above V_N; subtract that before pooling by disclosed count
    vN_corr = vN - 2.0 * protocol.V * w_plus / (k_arr - 1.0)
    vN_pooled = float(np.sum(vN_corr * k_arr) / k_total)
    eps_hat = float(np.sum((vN_corr - 1.0 + w_plus * (1.0 - protocol.V_S)) * k_arr)
                    / k_total)
    return AggregateStats(
        mean_sqrtT_hat=mean_u, mean_T_hat=mean_w,
        X1_hat=X1_hat, X2_hat=X2_hat, se_X1=se_X1, se_X2=se_X2, m_used=m,
        se_mean_sqrtT=se_mean_sqrtT, se_mean_T=se_mean_T,
        eps_hat=eps_hat, vN_pooled=vN_pooled, k_total=k_total)


def _eps_upper(stats: AggregateStats, z: float) -> float:
    if stats.k_total < 2:
        raise InsufficientDataError("noise bound needs pooled disclosed data")
    bound = stats.eps_hat \
        + z * math.sqrt(2.0 / stats.k_total) * max(0.0, stats.vN_pooled)
    return max(0.0, bound)


def _finish(X1_up: float, X2_low: float, eps_up: float,
            V_prime: float) -> WorstCaseChannel:
    X1_up = max(0.0, X1_up)
    X2_low = max(0.0, X2_low)
    raw_T_low = 0.5 * (X2_low - X1_up)
    unusable = raw_T_low <= 0.0
    return WorstCaseChannel(T_eff_low=max(0.0, raw_T_low),
                            eps_eff_up=eps_up + X1_up * V_prime,
                            X1_up=X1_up, X2_low=X2_low, eps_up=eps_up,
                            unusable=unusable)


def _resolve_z(protocol: ProtocolParams, z: float | None) -> float:
    z = protocol.z_conf if z is None else float(z)
    if z <= 0.0:
        raise ParameterError(f"confidence multiplier must be positive, got {z}")
    return z


def worst_case(stats: AggregateStats, protocol: ProtocolParams,
               z: float | None = None, eps_up: float | None = None) -> WorstCaseChannel:
    """Worst-case effective channel from joint bounds on X1 and X2.

    The key rate falls with X1 (it feeds the effective excess noise)
    and rises with X2, so the pessimistic corner is (X1 up, X2 down):
    T_eff_low = (X2_low - X1_up)/2, eps_eff_up = eps_up + X1_up * V'.
    eps_up defaults to the pooled residual-variance bound from stats.
    """
    z = _resolve_z(protocol, z)
    if eps_up is None:
        eps_up = _eps_upper(stats, z)
    X1_up = stats.X1_hat + z * stats.se_X1
    X2_low = stats.X2_hat - z * stats.se_X2
    return _finish(X1_up, X2_low, eps_up, protocol.V_prime)


def worst_case_rectangular(stats: AggregateStats, protocol: ProtocolParams,
                           z: float | None = None,
                           eps_up: float | None = None) -> WorstCaseChannel:
    """Worst case from separate (rectangular) bounds on <sqrt T> and <T>.

    Kept as the naive baseline: it ignores the strong positive coupling
    between the two means, so its Var(sqrt T) bound
    <T>_up - (<sqrt T>_low)^2 sits far above the joint construction.
    """
    z = _resolve_z(protocol, z)
    if eps_up is None:
        eps_up = _eps_upper(stats, z)
    mean_sqrt_low = max(0.0, stats.mean_sqrtT_hat - z * stats.se_mean_sqrtT)
    mean_T_up = stats.mean_T_hat + z * stats.se_mean_T
    mean_T_low = stats.mean_T_hat - z * stats.se_mean_T
    X1_up = mean_T_up - mean_sqrt_low**2
    X2_low = mean_T_low + mean_sqrt_low**2
    return _finish(X1_up, X2_low, eps_up, protocol.V_prime)
