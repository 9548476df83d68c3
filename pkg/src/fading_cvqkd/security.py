"""Secret key rate of the Gaussian protocol against collective attacks.

All variances are in shot-noise units.  The channel is summarized by a
transmittance T and excess noise eps (for fading channels: the
worst-case effective pair).  The asymptotic rate is

    K_inf = beta * I_AB - S_BE

and the finite-size rate subtracts the security-parameter correction
delta on the key-generation states and scales by the fraction kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import ProtocolParams
from .distributions import Moments
from .errors import ParameterError, UnphysicalStateError
from .estimation import WorstCaseChannel

__all__ = [
    "EffectiveChannel",
    "KeyRateReport",
    "gaussian_entropy",
    "mutual_information",
    "holevo_bound",
    "delta_fs",
    "key_rate",
    "effective_channel",
]

_EIG_TOL = 1e-9


@dataclass(frozen=True)
class EffectiveChannel:
    """A fading channel folded into a single (T, eps) pair."""

    T: float
    eps: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.T <= 1.0):
            raise ParameterError(f"effective transmittance outside [0, 1]: {self.T}")
        if self.eps < 0.0:
            raise ParameterError(f"effective excess noise negative: {self.eps}")


@dataclass(frozen=True)
class KeyRateReport:
    """Per-state rates in bits, plus the finite-size pieces that built K.

    N_used counts the states entering key generation, i.e. (1-r)*N.
    squeezed_surrogate marks rates computed for V_S < 1, where the
    Holevo bound uses the symmetric purification stand-in.
    """

    I_AB: float
    S_BE: float
    K_inf: float
    delta: float
    K: float
    N_used: int | None
    K_raw: float = 0.0
    squeezed_surrogate: bool = False


def effective_channel(moments: Moments, protocol: ProtocolParams) -> EffectiveChannel:
    """Average a fading channel: T_eff = <sqrt T>^2 and the fading
    excess noise contribution Var(sqrt T) * V'."""
    _require_feasible(protocol)
    return EffectiveChannel(T=moments.mean_sqrtT**2,
                            eps=protocol.epsilon + moments.var_sqrtT * protocol.V_prime)


def _require_feasible(protocol: ProtocolParams) -> None:
    if protocol.V_prime <= 0.0:
        raise ParameterError(
            f"V + V_S - 1 = {protocol.V_prime:.4g} <= 0: no modulated signal "
            "survives; increase V or V_S")


def _as_channel(ch) -> EffectiveChannel:
    if isinstance(ch, EffectiveChannel):
        return ch
    if isinstance(ch, WorstCaseChannel):
        return EffectiveChannel(T=ch.T_eff_low, eps=ch.eps_eff_up)
    raise ParameterError(f"expected an effective or worst-case channel, got {type(ch).__name__}")


def gaussian_entropy(v: float) -> float:
    """Entropy G of a thermal mode with symplectic eigenvalue v, in bits."""
    if v < 1.0 - _EIG_TOL:
        raise UnphysicalStateError(f"symplectic eigenvalue {v} below vacuum")
    if v <= 1.0:
        return 0.0
    a = 0.5 * (v + 1.0)
    b = 0.5 * (v - 1.0)
    return a * math.log2(a) - b * math.log2(b)


def mutual_information(ch: EffectiveChannel, protocol: ProtocolParams) -> float:
    """Alice-Bob mutual information of homodyne detection, in bits/state.

    I = (1/2) log2(V_B / V_{B|M}) with V_B = T*V' + 1 + eps and the
    conditional variance V_{B|M} = T*(V_S - 1) + 1 + eps.
    """
    ch = _as_channel(ch)
    _require_feasible(protocol)
    V_B = ch.T * protocol.V_prime + 1.0 + ch.eps
    V_B_given_M = ch.T * (protocol.V_S - 1.0) + 1.0 + ch.eps
    return 0.5 * math.log2(V_B / V_B_given_M)


def _symplectic_pair(V_A: float, V_B: float, c: float) -> tuple[float, float]:
    """Symplectic eigenvalues of a two-mode state with x/p-symmetric
    blocks diag(V_A), diag(V_B) and correlation diag(c, -c)."""
    det_gamma = (V_A * V_B - c**2) ** 2
    delta = V_A**2 + V_B**2 - 2.0 * c**2
    disc = (V_A - V_B) ** 2 * ((V_A + V_B) ** 2 - 4.0 * c**2)
    if disc < -1e-9:
        raise UnphysicalStateError("negative discriminant in symplectic spectrum")
    root = math.sqrt(max(0.0, disc))
    nu_plus_sq = 0.5 * (delta + root)
    if nu_plus_sq <= 0.0:
        raise UnphysicalStateError("degenerate covariance in symplectic spectrum")
    # nu-^2 via the determinant product avoids cancellation in delta - root
    nu_minus_sq = det_gamma / nu_plus_sq
    return math.sqrt(nu_plus_sq), math.sqrt(nu_minus_sq)


def holevo_bound(ch: EffectiveChannel, protocol: ProtocolParams) -> float:
    """Eve's Holevo information on Bob's homodyne outcome, in bits/state.

    Uses the entanglement-based model of the modulated ensemble: a
    two-mode squeezed vacuum of variance V_A = V' + 1 with one arm sent
    through the (T, eps) channel.  For squeezed signal states
    (V_S < 1) this symmetric purification is a stand-in with the same
    modulated variance; it is exact for coherent states.
    """
    ch = _as_channel(ch)
    _require_feasible(protocol)
    V_A = protocol.V_prime + 1.0
    V_B = ch.T * (V_A - 1.0) + 1.0 + ch.eps
    c = math.sqrt(ch.T * (V_A**2 - 1.0))
    nu_plus, nu_minus = _symplectic_pair(V_A, V_B, c)
    # Bob's homodyne projects A onto a state with nu~^2 = V_A*(V_A - c^2/V_B)
    nu_cond_sq = V_A * (V_A - c**2 / V_B)
    if nu_cond_sq < 0.0:
        raise UnphysicalStateError("negative conditional eigenvalue")
    nu_cond = math.sqrt(nu_cond_sq)
    val = gaussian_entropy(nu_plus) + gaussian_entropy(nu_minus) \
        - gaussian_entropy(nu_cond)
    if val < -1e-6:
        raise UnphysicalStateError(f"Holevo bound came out negative: {val}")
    return max(0.0, val)


def delta_fs(n_key: int, protocol: ProtocolParams) -> float:
    """Finite-size penalty per state against collective attacks:
    7*sqrt(log2(2/eps_bar)/n) for n key-generation states."""
    n_key = int(n_key)
    if n_key < 1:
        raise ParameterError(f"key-generation block must hold >= 1 state, got {n_key}")
    eps_bar = protocol.eps_bar
    return 7.0 * math.sqrt(math.log2(2.0 / eps_bar) / n_key)


def key_rate(wc: WorstCaseChannel | EffectiveChannel, N_total: int | None,
             protocol: ProtocolParams) -> KeyRateReport:
    """Secret key rate per transmitted state for a bounded channel.

    Accepts a worst-case channel (uses T_eff_low, eps_eff_up) or a plain
    effective channel.  With N_total states, r*N_total are disclosed for
    estimation; the remaining n_key = (1-r)*N_total generate key at
    K_inf - delta(n_key), so

        K = (1 - r) * (K_inf - delta(n_key)),

    clamped at zero (K_raw keeps the unclamped value).  N_total=None
    gives the asymptotic limit where only K_inf matters.
    """
    ch = _as_channel(wc)
    I_AB = mutual_information(ch, protocol)
    S_BE = holevo_bound(ch, protocol)
    K_inf = protocol.beta * I_AB - S_BE
    surrogate = protocol.V_S < 1.0
    if N_total is None:
        return KeyRateReport(I_AB=I_AB, S_BE=S_BE, K_inf=K_inf, delta=0.0,
                             K=max(0.0, K_inf), N_used=None, K_raw=K_inf,
                             squeezed_surrogate=surrogate)
    N_total = int(N_total)
    if N_total < 2:
        raise ParameterError(f"total states must be >= 2, got {N_total}")
    n_key = int(math.floor((1.0 - protocol.r) * N_total))
    if n_key < 1:
        raise ParameterError("disclosure fraction leaves no key-generation states")
    delta = delta_fs(n_key, protocol)
    K_raw = (1.0 - protocol.r) * (K_inf - delta)
    return KeyRateReport(I_AB=I_AB, S_BE=S_BE, K_inf=K_inf, delta=delta,
                         K=max(0.0, K_raw), N_used=n_key, K_raw=K_raw,
                         squeezed_surrogate=surrogate)
