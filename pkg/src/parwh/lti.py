"""Discrete-time rational LTI blocks in the backward-shift operator.

A block is ``H(q) = B(q^-1)/A(q^-1)`` with real coefficient vectors ordered
by ascending power of ``q^-1`` and a monic denominator (``a_0 = 1``).  All
denominators must be stable (roots strictly inside the unit circle); this is
checked at construction so downstream filtering never sees an unstable block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

# |Im| below this (relative) tolerance counts as a real root
CONJ_TOL = 1e-9

__all__ = ["RationalTF", "RootSet", "den_is_stable", "poly_from_roots"]


def _trim_trailing(c, name):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1 or c.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d coefficient vector")
    if not np.all(np.isfinite(c)):
        raise ValueError(f"{name} coefficients must be finite")
    n = c.size
    while n > 1 and c[n - 1] == 0.0:
        n -= 1
    if n < c.size:
        warnings.warn(f"{name}: trailing zero coefficients trimmed, degree reduced "
                      f"from {c.size - 1} to {n - 1}")
        c = c[:n]
    return c


def den_is_stable(den, margin=0.0):
    """True if all roots of the denominator (ascending q^-1 coeffs) have |z| < 1 - margin."""
    den = np.atleast_1d(np.asarray(den, dtype=float))
    if den[0] == 0.0 or not np.all(np.isfinite(den)):
        return False
    if den.size == 1:
        return True
    roots = np.roots(den)
    return bool(np.all(np.abs(roots) < 1.0 - margin))


def poly_from_roots(roots):
    """Real ascending-q^-1 coefficients of ``prod_i (1 - r_i q^-1)``.

    The roots must be closed under conjugation; the tiny imaginary residue
    from the complex product is dropped.
    """
    c = np.array([1.0 + 0.0j])
    for r in np.atleast_1d(roots):
        c = np.convolve(c, np.array([1.0, -r]))
    if c.size > 1 and np.max(np.abs(c.imag)) > 1e-8 * max(1.0, np.max(np.abs(c))):
        raise ValueError("roots are not closed under conjugation")
    return c.real


def _group_conjugates(roots, tol=CONJ_TOL):
    """Split roots into real singletons and exact conjugate pairs.

    Returns a list of groups, each a complex ndarray of length 1 (real root,
    imaginary part zeroed) or 2 (conjugate pair, symmetrized).  Raises if a
    complex root cannot be matched with a conjugate partner.
    """
    roots = np.atleast_1d(np.asarray(roots, dtype=complex))
    groups = []
    is_real = np.abs(roots.imag) <= tol * (1.0 + np.abs(roots))
    for r in sorted(roots[is_real].real):
        groups.append(np.array([r + 0.0j]))
    upper = sorted(roots[~is_real & (roots.imag > 0)], key=lambda z: (z.real, z.imag))
    lower = list(roots[~is_real & (roots.imag < 0)])
    if len(upper) != len(lower):
        raise ValueError("unpaired complex roots: conjugate counts do not match")
    for u in upper:
        dists = [abs(np.conj(u) - v) for v in lower]
        j = int(np.argmin(dists))
        v = lower.pop(j)
        if dists[j] > 1e-6 * (1.0 + abs(u)):
            raise ValueError(f"complex root {u} has no conjugate partner (closest {v})")
        m = 0.5 * (u + np.conj(v))
        groups.append(np.array([m, np.conj(m)]))
    groups.sort(key=lambda g: (len(g), g[0].real, abs(g[0].imag)))
    return groups


@dataclass
class RootSet:
    """Roots of one polynomial in ``q^-1`` factored as ``gain * q^-n_delay * prod(1 - r_i q^-1)``.

    ``n_delay`` counts the leading zero coefficients (pure q^-1 factors), which
    behave like assignable roots at the origin during pole/zero partitioning.
    """

    roots: np.ndarray
    gain: float
    n_delay: int = 0
    groups: list = field(init=False, repr=False)

    def __post_init__(self):
        self.roots = np.atleast_1d(np.asarray(self.roots, dtype=complex))
        self.gain = float(self.gain)
        self.groups = _group_conjugates(self.roots) if self.roots.size else []

    def poly(self):
        """Ascending q^-1 coefficient vector of this factorization."""
        core = self.gain * poly_from_roots(np.concatenate(self.groups) if self.groups
                                           else np.array([]))
        return np.concatenate([np.zeros(self.n_delay), core])


class RationalTF:
    """One rational transfer function in q^-1 with a monic, stable denominator."""

    def __init__(self, num, den, check_stability=True):
        num = np.atleast_1d(np.asarray(num, dtype=float))
        if num.ndim != 1 or num.size == 0:
            raise ValueError("num must be a non-empty 1-d coefficient vector")
        if not np.all(np.isfinite(num)):
            raise ValueError("num coefficients must be finite")
        den = _trim_trailing(den, "den")
        if den[0] == 0.0:
            raise ValueError("denominator leading coefficient a_0 must be nonzero")
        # monic normalization removes the per-TF scale degeneracy
        self.num = num / den[0]
        self.den = den / den[0]
        if np.any(self.num != 0.0):
            n = self.num.size
            while n > 1 and self.num[n - 1] == 0.0:
                n -= 1
            if n < self.num.size:
                warnings.warn(f"num: trailing zero coefficients trimmed, degree reduced "
                              f"from {self.num.size - 1} to {n - 1}")
                self.num = self.num[:n]
        if check_stability and not den_is_stable(self.den):
            raise ValueError(f"unstable denominator: {self.den}")

    # -- basic algebra ----------------------------------------------------

    def __mul__(self, other):
        """Cascade of two blocks (polynomial products)."""
        return RationalTF(np.convolve(self.num, other.num),
                          np.convolve(self.den, other.den))

    def __eq__(self, other):
        return (isinstance(other, RationalTF)
                and self.num.size == other.num.size and self.den.size == other.den.size
                and np.array_equal(self.num, other.num)
                and np.array_equal(self.den, other.den))

    def __repr__(self):
        return f"RationalTF(num={self.num.tolist()}, den={self.den.tolist()})"

    @property
    def is_identity(self):
        return self.num.size == 1 and self.den.size == 1 and self.num[0] == 1.0

    # -- simulation -------------------------------------------------------

    def filt(self, u, initial_state="zero"):
        """Filter ``u`` along its last axis: y solves A(q) y = B(q) u.

        initial_state:
            "zero"            start from zero filter state;
            "steady_periodic" treat each row of ``u`` as one period of a
                              periodic signal and return the steady-state
                              response period (the filter is warmed by cycling
                              the period until the transient falls below 1e-12
                              relative).
        """
        u = np.asarray(u, dtype=float)
        if initial_state == "zero":
            return lfilter(self.num, self.den, u, axis=-1)
        if initial_state != "steady_periodic":
            raise ValueError(f"unknown initial_state {initial_state!r}")

        n_state = max(self.num.size, self.den.size) - 1
        if n_state == 0:
            return lfilter(self.num, self.den, u, axis=-1)
        # periods needed for the slowest mode to decay below 1e-13
        rho = np.max(np.abs(np.roots(self.den))) if self.den.size > 1 else 0.0
        if rho > 0.0:
            max_cycles = min(100_000, int(np.ceil(-13.0 / (u.shape[-1] * np.log10(rho)))) + 2)
        else:
            max_cycles = 2
        zi = np.zeros(u.shape[:-1] + (n_state,))
        y_prev = None
        for _ in range(max(2, max_cycles)):
            y, zi = lfilter(self.num, self.den, u, axis=-1, zi=zi)
            if y_prev is not None:
                scale = max(1e-300, float(np.max(np.abs(y))))
                if np.max(np.abs(y - y_prev)) <= 1e-12 * scale:
                    break
            y_prev = y
        return y

    def impulse_response(self, n):
        """First ``n`` samples of the impulse response."""
        d = np.zeros(n)
        d[0] = 1.0
        return lfilter(self.num, self.den, d)

    # -- frequency domain -------------------------------------------------

    def eval_zinv(self, zinv):
        """Evaluate B(z^-1)/A(z^-1) at arbitrary complex z^-1 points."""
        zinv = np.asarray(zinv, dtype=complex)
        return (np.polynomial.polynomial.polyval(zinv, self.num)
                / np.polynomial.polynomial.polyval(zinv, self.den))

    def freq_response(self, bins, N):
        """Response on the DFT grid: z = exp(2j pi k / N) for each bin k in (0, N/2)."""
        bins = np.atleast_1d(np.asarray(bins))
        if np.any(bins <= 0) or np.any(bins >= N / 2):
            raise ValueError(f"bins must lie strictly inside (0, {N // 2})")
        return self.eval_zinv(np.exp(-2j * np.pi * bins / N))

    # -- roots ------------------------------------------------------------

    def roots_of(self):
        """Factor numerator and denominator into (zeros, poles) RootSets."""
        num = self.num
        n_delay = 0
        while n_delay < num.size - 1 and num[0] == 0.0:
            num = num[1:]
            n_delay += 1
        if np.all(num == 0.0):
            zeros = RootSet(np.array([]), 0.0, 0)
        else:
            zroots = np.roots(num) if num.size > 1 else np.array([])
            zeros = RootSet(_polish(zroots, num), num[0], n_delay)
        proots = np.roots(self.den) if self.den.size > 1 else np.array([])
        poles = RootSet(_polish(proots, self.den), self.den[0], 0)
        return zeros, poles

    @classmethod
    def from_roots(cls, zeros, poles):
        """Rebuild a TF from (zeros, poles) RootSets; gain folds into the numerator."""
        if poles.n_delay:
            raise ValueError("denominator cannot carry delay factors (a_0 = 1)")
        num = zeros.poly()
        den = poles.poly() / poles.gain
        return cls(num, den)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {"num": self.num.tolist(), "den": self.den.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["num"], d["den"])


def _polish(roots, coeffs):
    """One Newton step on each companion-matrix root (no further polishing)."""
    if roots.size == 0:
        return roots
    roots = roots.astype(complex)
    # roots are of the descending-power polynomial; p(z) = sum c_i z^(n-i)
    p = np.asarray(coeffs, dtype=complex)
    dp = np.polyder(p)
    val = np.polyval(p, roots)
    dval = np.polyval(dp, roots)
    ok = np.abs(dval) > 1e-300
    step = np.zeros_like(roots)
    step[ok] = val[ok] / dval[ok]
    # guard against near-multiple roots where the step explodes
    step[np.abs(step) > 1e-3 * (1.0 + np.abs(roots))] = 0.0
    return roots - step
