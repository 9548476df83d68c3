"""Monte Carlo model of a Gaussian-modulated coherent-state protocol
over a fading channel.

The transmittance stays constant within a package of n states and
changes between packages following a given transmittance distribution.
Within a package the measured quadratures obey

    x_B = sqrt(T) * x_M + x_N,   Var(x_N) = V_N := 1 + epsilon - T*(1 - V_S)

in shot-noise units, where x_M is the modulated value (variance V) and
V_S is the variance of the signal state quadrature before modulation
(V_S = 1 for coherent states, V_S < 1 for squeezed signal states).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import TransmittanceDistribution
from .errors import ParameterError

__all__ = ["ProtocolParams", "Package", "Run", "noise_variance",
           "simulate_package", "simulate_run"]


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol-level knobs shared by simulation, estimation and security.

    V is the modulation variance, V_S the signal state quadrature
    variance, epsilon the excess noise at the channel output, beta the
    reconciliation efficiency, r the fraction of each package disclosed
    for parameter estimation, and the epsilons/z_conf fix the
    finite-size confidence levels.
    """

    V: float = 10.0
    V_S: float = 1.0
    epsilon: float = 0.01
    beta: float = 0.95
    r: float = 0.1
    eps_PE: float = 1e-10
    eps_bar: float = 1e-10
    z_conf: float = 2.0

    def __post_init__(self) -> None:
        if not (self.V > 0.0):
            raise ParameterError(f"modulation variance must be positive, got {self.V}")
        if not (0.0 < self.V_S <= 1.0):
            raise ParameterError(f"signal state variance must lie in (0, 1], got {self.V_S}")
        if self.epsilon < 0.0:
            raise ParameterError(f"excess noise must be non-negative, got {self.epsilon}")
        if not (0.0 < self.beta <= 1.0):
            raise ParameterError(f"reconciliation efficiency must lie in (0, 1], got {self.beta}")
        if not (0.0 < self.r < 1.0):
            raise ParameterError(f"estimation fraction must lie in (0, 1), got {self.r}")
        for name in ("eps_PE", "eps_bar"):
            val = getattr(self, name)
            if not (0.0 < val < 1.0):
                raise ParameterError(f"{name} must lie in (0, 1), got {val}")
        if not (self.z_conf > 0.0):
            raise ParameterError(f"z_conf must be positive, got {self.z_conf}")

    @property
    def V_prime(self) -> float:
        """Effective modulated variance V + V_S - 1 entering the channel."""
        return self.V + self.V_S - 1.0


def noise_variance(T: float, protocol: ProtocolParams) -> float:
    """Total non-signal variance V_N = 1 + epsilon - T*(1 - V_S) at output."""
    return 1.0 + protocol.epsilon - T * (1.0 - protocol.V_S)


@dataclass(frozen=True)
class Package(object):
    """One package: n states sent through a constant-transmittance slice."""

    true_T: float
    M: np.ndarray  # modulated quadrature values, shape (n,)
    B: np.ndarray  # Bob's measured quadrature values, shape (n,)

    def __post_init__(self) -> None:
        if self.M.shape != self.B.shape or self.M.ndim != 1:
            raise ParameterError("package arrays M and B must be 1-d and equally long")
        if self.M.size < 2:
            raise ParameterError("a package needs at least 2 states")
        if not (0.0 <= self.true_T <= 1.0):
            raise ParameterError(f"package transmittance outside [0, 1]: {self.true_T}")

    @property
    def n(self) -> int:
        return self.M.size


@dataclass(frozen=True)
class Run(object):
    """A full protocol run: m packages plus the generating configuration."""

    packages: tuple[Package, ...]
    dist: TransmittanceDistribution
    protocol: ProtocolParams
    seed: int

    @property
    def m(self) -> int:
        return len(self.packages)

    @property
    def n(self) -> int:
        return self.packages[0].n if self.packages else 0

    @property
    def N(self) -> int:
        return sum(p.n for p in self.packages)

    def true_transmittances(self) -> np.ndarray:
        return np.array([p.true_T for p in self.packages])


def _package_from_rng(rng: np.random.Generator, T: float, n: int,
                      protocol: ProtocolParams) -> Package:
    vN = noise_variance(T, protocol)
    M = rng.normal(0.0, np.sqrt(protocol.V), n)
    B = np.sqrt(T) * M + rng.normal(0.0, np.sqrt(vN), n)
    M.flags.writeable = False
    B.flags.writeable = False
    return Package(true_T=T, M=M, B=B)


def simulate_package(T: float, n: int, protocol: ProtocolParams, seed) -> Package:
    """Simulate one package of n states at fixed transmittance T."""
    if not (0.0 <= T <= 1.0):
        raise ParameterError(f"transmittance must lie in [0, 1], got {T}")
    if int(n) < 2:
        raise ParameterError(f"package size must be >= 2, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _package_from_rng(rng, float(T), int(n), protocol)


def simulate_run(dist: TransmittanceDistribution, n: int, m: int,
                 protocol: ProtocolParams, seed: int) -> Run:
    """Simulate m packages of n states with i.i.d. transmittance draws.

    Each package consumes an independent child stream of the master
    seed, so a run is reproducible as a whole and package-by-package.
    """
    if int(m) < 1:
        raise ParameterError(f"package count must be >= 1, got {m}")
    if int(n) < 2:
        raise ParameterError(f"package size must be >= 2, got {n}")
    n, m = int(n), int(m)
    root = np.random.SeedSequence(seed)
    t_stream, noise_stream = root.spawn(2)
    T_values = dist.sample(np.random.default_rng(t_stream), m)
    packages = []
    for i, (T, child) in enumerate(zip(T_values, noise_stream.spawn(m))):
        packages.append(_package_from_rng(np.random.default_rng(child),
                                          float(T), n, protocol))
    return Run(packages=tuple(packages), dist=dist, protocol=protocol, seed=int(seed))
