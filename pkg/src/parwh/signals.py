"""Excitation design: random-phase multisines, filtered noise, growing-envelope signals.

Generators are pure functions of their seed, so identical seeds give
bit-identical records.  Ensembles are stored as ``realizations x periods x
samples`` arrays with the frequency-grid metadata needed downstream.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import cheby1, lfilter

from parwh.lti import RationalTF

__all__ = ["MultisineSpec", "SignalEnsemble", "gen_multisine",
           "gen_growing_envelope", "add_output_noise"]


@dataclass
class MultisineSpec:
    """Random-phase multisine design: flat (optionally colored) amplitude on a DFT grid.

    ``amplitude`` is the target rms of the zero-mean part; ``dc_offset`` is added
    afterwards.  ``coloring`` optionally shapes the per-bin amplitude by the
    magnitude response of a rational filter.
    """

    N: int
    f_s: float
    excited_bins: np.ndarray
    amplitude: float
    dc_offset: float = 0.0
    seed: int = 0
    coloring: RationalTF | None = None

    def __post_init__(self):
        self.excited_bins = np.unique(np.asarray(self.excited_bins, dtype=int))
        if self.excited_bins.size == 0:
            raise ValueError("excited_bins must be nonempty")
        if self.excited_bins.min() < 1 or self.excited_bins.max() > self.N // 2 - 1:
            raise ValueError(f"excited_bins must lie in [1, {self.N // 2 - 1}]")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.N < 4:
            raise ValueError("N too small")


@dataclass
class SignalEnsemble:
    """Periodic records organized as realizations (M) x periods (P) x samples (N)."""

    data: np.ndarray
    f_s: float
    excited_bins: np.ndarray
    setpoint_id: str = "sp0"
    scale_factors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ValueError("data must be (realizations, periods, samples)")
        self.excited_bins = np.asarray(self.excited_bins, dtype=int)

    @property
    def M(self):
        return self.data.shape[0]

    @property
    def P(self):
        return self.data.shape[1]

    @property
    def N(self):
        return self.data.shape[2]

    def realization_mean(self):
        """Period-averaged records, shape (M, N)."""
        return self.data.mean(axis=1)

    def rms(self):
        return float(np.sqrt(np.mean(self.data ** 2)))

    def with_data(self, data):
        return SignalEnsemble(data, self.f_s, self.excited_bins, self.setpoint_id)

    # -- CSV interchange ----------------------------------------------------
    # Line 1 carries the metadata, line 2 the (realization, period) column
    # labels, then one row per sample.  Excited bins travel in the JSON config.

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"f_s,{self.f_s!r},setpoint_id,{self.setpoint_id},"
                     f"M,{self.M},P,{self.P},N,{self.N}\n")
            fh.write(",".join(f"r{m}p{p}" for m in range(self.M)
                              for p in range(self.P)) + "\n")
            flat = self.data.reshape(self.M * self.P, self.N).T
            np.savetxt(fh, flat, delimiter=",", fmt="%.17g")

    @classmethod
    def load_csv(cls, path, excited_bins=()):
        with open(path) as fh:
            meta = fh.readline().strip().split(",")
            fh.readline()
            body = fh.read()
        kv = dict(zip(meta[0::2], meta[1::2]))
        M, P, N = int(kv["M"]), int(kv["P"]), int(kv["N"])
        flat = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        data = flat.T.reshape(M, P, N)
        return cls(data, float(kv["f_s"]), np.asarray(excited_bins, dtype=int),
                   kv["setpoint_id"])


def gen_multisine(spec: MultisineSpec, M: int, P: int = 1, setpoint_id: str = "sp0"):
    """Generate ``M`` independent random-phase multisine realizations.

    Each realization is synthesized in the frequency domain with independent
    phases uniform on [0, 2pi), inverse transformed, and rescaled so the
    realized rms of the zero-mean part equals ``spec.amplitude`` exactly
    (the per-realization rescale factor is recorded on the ensemble).
    """
    rng = np.random.default_rng(spec.seed)
    bins = spec.excited_bins
    amp = np.ones(bins.size)
    if spec.coloring is not None:
        amp = np.abs(spec.coloring.freq_response(bins, spec.N))
        if np.max(amp) == 0:
            raise ValueError("coloring filter vanishes on all excited bins")
        amp = amp / np.max(amp)
    data = np.empty((M, P, spec.N))
    scale_factors = np.empty(M)
    for m in range(M):
        phases = rng.uniform(0.0, 2.0 * np.pi, size=bins.size)
        X = np.zeros(spec.N // 2 + 1, dtype=complex)
        X[bins] = 0.5 * spec.N * amp * np.exp(1j * phases)
        u = np.fft.irfft(X, n=spec.N)
        s = spec.amplitude / np.sqrt(np.mean(u ** 2))
        scale_factors[m] = s
        data[m, :, :] = s * u + spec.dc_offset
    ens = SignalEnsemble(data, spec.f_s, bins, setpoint_id)
    ens.scale_factors = scale_factors
    return ens


def gen_growing_envelope(N: int, f_s: float, cutoff: float, seed: int = 0):
    """Filtered Gaussian noise with a linearly growing envelope, u(k) = (2k/N) * [H(q) r(k)].

    r is zero-mean unit-variance white Gaussian noise and H a 6th-order
    low-pass Chebyshev type-I filter (0.5 dB passband ripple) with the given
    cutoff.  Spans small to large amplitudes within a single record.
    """
    if not 0 < cutoff < f_s / 2:
        raise ValueError("cutoff must lie in (0, f_s/2)")
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(N)
    b, a = cheby1(6, 0.5, cutoff / (f_s / 2))
    return (2.0 * np.arange(N) / N) * lfilter(b, a, r)


def add_output_noise(y: SignalEnsemble, noise_tf: RationalTF, sigma: float,
                     seed: int = 0):
    """Add colored zero-mean Gaussian noise, independent per realization and period.

    ``sigma`` is the standard deviation of the white source driving
    ``noise_tf``; the added noise has spectrum ``sigma^2 |noise_tf|^2``.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return y.with_data(y.data.copy())
    rng = np.random.default_rng(seed)
    e = sigma * rng.standard_normal(y.data.shape)
    v = e if noise_tf.is_identity else noise_tf.filt(e)
    return y.with_data(y.data + v)
