"""Finite-blocklength channel math for AWGN sensor uplinks.

Error rates follow the normal approximation

    eps(n) = Q( sqrt(n / V) * (C - d / n) * ln 2 )

with capacity ``C = log2(1 + snr)`` in bits per channel use and the
dimensionless dispersion ``V = 1 - (1 + snr)**-2``. The ``ln 2`` factor
converts the bit-valued rate gap to nats so it matches ``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

LN2 = math.log(2.0)
SQRT2 = math.sqrt(2.0)

#: Hard cap on the blocklength search (10 x the default budget of 500).
DEFAULT_MAX_BLOCKLENGTH = 5000


class InfeasibleError(ValueError):
    """A reliability target cannot be met within the available blocklength."""


@dataclass(frozen=True)
class ChannelSpec:
    """Uplink of one sensor: linear SNR and message size in bits."""

    snr_linear: float
    payload_bits: int = 16

    def __post_init__(self):
        if not (self.snr_linear > 0 and math.isfinite(self.snr_linear)):
            raise ValueError(f"snr_linear must be positive and finite, got {self.snr_linear!r}")
        if int(self.payload_bits) != self.payload_bits or self.payload_bits < 1:
            raise ValueError(f"payload_bits must be a positive integer, got {self.payload_bits!r}")

    @classmethod
    def from_db(cls, snr_db: float, payload_bits: int = 16) -> "ChannelSpec":
        return cls(10.0 ** (snr_db / 10.0), payload_bits)

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr_linear)


def gaussian_q(x):
    """Upper tail probability of the standard normal distribution."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / SQRT2)


def shannon_capacity(spec: ChannelSpec) -> float:
    return math.log2(1.0 + spec.snr_linear)


def channel_dispersion(spec: ChannelSpec) -> float:
    return 1.0 - (1.0 + spec.snr_linear) ** -2


def packet_error_rate(spec: ChannelSpec, n):
    """Packet error rate at blocklength ``n`` (scalar or array of positive ints).

    Values above 0.5 are returned as-is for ``n <= d / C``.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("blocklength must be a positive integer")
    n_arr = n_arr.astype(float)
    cap = shannon_capacity(spec)
    disp = channel_dispersion(spec)
    arg = np.sqrt(n_arr / disp) * (cap - spec.payload_bits / n_arr) * LN2
    eps = gaussian_q(arg)
    return float(eps) if eps.ndim == 0 else eps


def min_blocklength(spec: ChannelSpec, eps_max: float, max_blocklength: int = DEFAULT_MAX_BLOCKLENGTH) -> int:
    """Smallest blocklength whose error rate does not exceed ``eps_max``.

    Below ``d / C`` the error rate is at least 0.5, so the search starts at
    ``floor(d / C)`` and brackets by doubling, then bisects on the decreasing
    branch.
    """
    if not 0.0 < eps_max < 0.5:
        raise ValueError(f"eps_max must lie in (0, 0.5), got {eps_max!r}")
    lo = max(1, int(math.floor(spec.payload_bits / shannon_capacity(spec))))
    if lo > max_blocklength:
        raise InfeasibleError(f"no blocklength <= {max_blocklength} reaches eps <= {eps_max} (capacity too low)")
    # invariant: eps(lo) > eps_max unless lo == 1
    if packet_error_rate(spec, lo) <= eps_max:
        return lo
    hi = lo
    while True:
        hi = min(2 * hi, max_blocklength)
        if packet_error_rate(spec, hi) <= eps_max:
            break
        if hi == max_blocklength:
            raise InfeasibleError(f"no blocklength <= {max_blocklength} reaches eps <= {eps_max}")
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if packet_error_rate(spec, mid) <= eps_max:
            hi = mid
        else:
            lo = mid
    return hi
