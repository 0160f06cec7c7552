"""Halton low-discrepancy draws for simulated likelihood.

A single Halton stream per prime base is cut into contiguous per-observation
blocks, so every observation owns a disjoint slice of the sequence and the
draws stay fixed across optimizer iterations.  Uniforms are mapped to
standard-normal deviates through a high-accuracy inverse normal CDF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .errors import FuelGapError

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Acklam's rational approximation to the inverse normal CDF
# (relative error < 1.15e-9 before refinement).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def first_primes(count: int) -> tuple[int, ...]:
    """Return the first `count` primes (2, 3, 5, ...)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    primes: list[int] = []
    candidate = 2
    while len(primes) < count:
        if all(candidate % p for p in primes):
            primes.append(candidate)
        candidate += 1
    return tuple(primes)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in range(2, int(n ** 0.5) + 1):
        if n % p == 0:
            return False
    return True


@dataclass(frozen=True)
class HaltonConfig:
    """Configuration of the per-observation Halton draw blocks.

    bases
        Distinct primes, one per random-coefficient dimension, assigned in
        declaration order.
    draws_per_obs
        Number of draws R integrating the likelihood for each observation.
    burn
        Leading sequence points discarded once, before any block is cut.
        The first points of a low-base Halton sequence are highly structured.
    """

    bases: tuple[int, ...]
    draws_per_obs: int = 400
    burn: int = 50

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(int(b) for b in self.bases))
        if len(self.bases) < 1:
            raise ValueError("at least one base is required")
        if len(set(self.bases)) != len(self.bases):
            raise ValueError(f"bases must be distinct, got {self.bases}")
        for b in self.bases:
            if not _is_prime(b):
                raise ValueError(f"base {b} is not prime")
        if self.draws_per_obs < 1:
            raise ValueError("draws_per_obs must be >= 1")
        if self.burn < 0:
            raise ValueError("burn must be >= 0")

    @property
    def n_dims(self) -> int:
        return len(self.bases)


def radical_inverse(index: int, base: int) -> float:
    """Digit-reversal radical inverse of `index` in a prime `base`.

    Writing index = d0 + d1*base + d2*base^2 + ..., the value is
    d0/base + d1/base^2 + ... which lies strictly inside (0, 1) for
    every index >= 1.
    """
    if index < 1:
        raise ValueError(f"index must be >= 1, got {index}")
    if base < 2 or not _is_prime(base):
        raise ValueError(f"base must be a prime >= 2, got {base}")
    value = 0.0
    scale = 1.0
    n = int(index)
    while n > 0:
        scale /= base
        value += scale * (n % base)
        n //= base
    return value


def _radical_inverse_block(start: int, count: int, base: int) -> np.ndarray:
    """Radical inverses of the `count` consecutive indices start..start+count-1."""
    idx = np.arange(start, start + count, dtype=np.int64)
    value = np.zeros(count)
    scale = 1.0
    while idx.any():
        scale /= base
        value += scale * (idx % base)
        idx //= base
    return value


def halton_block(config: HaltonConfig, obs_index: int) -> np.ndarray:
    """Uniform draws for one observation, shape (draws_per_obs, n_dims).

    Observation i receives sequence indices
    burn + i*R + 1 ... burn + (i+1)*R, so blocks for distinct observations
    are disjoint and concatenating blocks 0..N-1 reproduces the plain
    sequence after the burn.
    """
    if obs_index < 0:
        raise ValueError("obs_index must be >= 0")
    r = config.draws_per_obs
    start = config.burn + obs_index * r + 1
    cols = [_radical_inverse_block(start, r, base) for base in config.bases]
    return np.column_stack(cols)


def _ndtr(x: np.ndarray) -> np.ndarray:
    """Standard normal CDF, accurate in both tails."""
    return 0.5 * erfc(-x / _SQRT2)


def _inverse_normal_cdf_raw(p: np.ndarray) -> np.ndarray:
    """Acklam's piecewise rational approximation for p in (0, 0.5]."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    mid = ~tail
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num * q / den
    if tail.any():
        q = np.sqrt(-2.0 * np.log(p[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    return x


def _inverse_normal_cdf_array(u: np.ndarray) -> np.ndarray:
    # Work on the lower half only: 1 - u is exact for u >= 0.5, and the
    # Newton residual ndtr(x) - p is then free of cancellation near 1.
    flip = u > 0.5
    p = np.where(flip, 1.0 - u, u)
    x = _inverse_normal_cdf_raw(p)
    # One Newton step on the normal CDF pushes the absolute error from
    # ~1e-9 down to machine precision over u in [1e-12, 1-1e-12].
    pdf = np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
    x -= (_ndtr(x) - p) / pdf
    return np.where(flip, -x, x)


def inverse_normal_cdf(u: float) -> float:
    """Quantile function of the standard normal, absolute error <= 1e-9.

    Raises ValueError outside the open interval (0, 1).
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly in (0, 1), got {u}")
    return float(_inverse_normal_cdf_array(np.array([u]))[0])


@dataclass(frozen=True)
class DrawStore:
    """Immutable standard-normal Halton draws, z[obs, draw, dim].

    Rebuilding with the same (n_obs, config) yields bit-identical values.
    """

    z: np.ndarray = field(repr=False)
    config: HaltonConfig

    def __post_init__(self):
        self.z.flags.writeable = False

    @property
    def n_obs(self) -> int:
        return self.z.shape[0]

    @property
    def draws_per_obs(self) -> int:
        return self.z.shape[1]

    @property
    def n_dims(self) -> int:
        return self.z.shape[2]


def build_draw_store(n_obs: int, config: HaltonConfig,
                     memory_cap_bytes: int = 2 ** 30) -> DrawStore:
    """Build the full draw store for `n_obs` observations.

    The allocation is n_obs * draws_per_obs * n_dims doubles; an allocation
    above `memory_cap_bytes` is refused with the size in the message.
    """
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    r = config.draws_per_obs
    d = config.n_dims
    nbytes = n_obs * r * d * 8
    if nbytes > memory_cap_bytes:
        raise FuelGapError(
            f"draw store of {n_obs} x {r} x {d} doubles needs {nbytes} bytes, "
            f"above the cap of {memory_cap_bytes}")
    z = np.empty((n_obs, r, d))
    for dim, base in enumerate(config.bases):
        u = _radical_inverse_block(config.burn + 1, n_obs * r, base)
        z[:, :, dim] = _inverse_normal_cdf_array(u).reshape(n_obs, r)
    return DrawStore(z=z, config=config)
