"""Parallel Wiener-Hammerstein model: structure, simulation, parameter vector.

A model holds one front and one back LTI block per branch and a single MIMO
static map between them: every branch nonlinearity input is the vector of all
branch intermediate signals, which absorbs the unidentifiable linear mixing
between branches.  The nonlinearity is a weighted sum of basis functions
(multivariate monomials, or a tanh layer) evaluated on rms-normalized inputs;
the normalization scales are part of the basis descriptor so that gain can be
exchanged between the front blocks and the static map without changing the
output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from parwh.lti import RationalTF
from parwh.signals import SignalEnsemble

__all__ = ["BasisDescriptor", "ParallelWHModel", "simulate_model",
           "model_from_true_system"]


def monomial_exponents(n_inputs, degree):
    """Exponent tuples of all monomials in n_inputs variables up to total degree."""
    exps = [(0,) * n_inputs]
    for d in range(1, degree + 1):
        for c in combinations_with_replacement(range(n_inputs), d):
            e = [0] * n_inputs
            for i in c:
                e[i] += 1
            exps.append(tuple(e))
    return exps


@dataclass
class BasisDescriptor:
    """Fixed set of nonlinear basis functions on rms-normalized branch signals.

    kind "poly": all multivariate monomials up to the given total degree
    (constant included).  kind "tanh": a constant plus ``n_neurons`` units
    tanh(w . x + b) with fixed hidden parameters (fitted separately); the
    output layer lives in the model's weight matrix.
    """

    kind: str
    n_inputs: int
    degree: int = 3
    n_neurons: int = 0
    scales: np.ndarray = None
    hidden_w: np.ndarray = None
    hidden_b: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("poly", "tanh"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.scales is None:
            self.scales = np.ones(self.n_inputs)
        self.scales = np.asarray(self.scales, dtype=float)
        if self.kind == "tanh":
            if self.hidden_w is None:
                raise ValueError("tanh basis needs hidden_w / hidden_b")
            self.hidden_w = np.asarray(self.hidden_w, dtype=float)
            self.hidden_b = np.asarray(self.hidden_b, dtype=float)
            self.n_neurons = self.hidden_w.shape[0]
        else:
            self._exps = np.array(monomial_exponents(self.n_inputs, self.degree))

    @property
    def n_w(self):
        if self.kind == "poly":
            return comb(self.n_inputs + self.degree, self.degree)
        return self.n_neurons + 1

    def evaluate(self, x):
        """Basis outputs for raw branch signals x of shape (n_inputs, ...).

        Inputs are divided by the stored scales first; returns (n_w, ...).
        """
        x = np.asarray(x, dtype=float)
        xn = x / self.scales.reshape((-1,) + (1,) * (x.ndim - 1))
        if self.kind == "poly":
            out = np.empty((self.n_w,) + x.shape[1:])
            for j, e in enumerate(self._exps):
                g = np.ones(x.shape[1:])
                for i, p in enumerate(e):
                    if p:
                        g = g * xn[i] ** p
                out[j] = g
            return out
        z = np.tensordot(self.hidden_w, xn, axes=(1, 0)) \
            + self.hidden_b.reshape((-1,) + (1,) * (x.ndim - 1))
        out = np.empty((self.n_w,) + x.shape[1:])
        out[0] = 1.0
        out[1:] = np.tanh(z)
        return out

    def with_scales(self, scales):
        return BasisDescriptor(kind=self.kind, n_inputs=self.n_inputs,
                               degree=self.degree, n_neurons=self.n_neurons,
                               scales=np.asarray(scales, dtype=float),
                               hidden_w=self.hidden_w, hidden_b=self.hidden_b)

    def to_dict(self):
        d = {"kind": self.kind, "n_inputs": self.n_inputs,
             "scales": self.scales.tolist()}
        if self.kind == "poly":
            d["degree"] = self.degree
        else:
            d["hidden_w"] = self.hidden_w.tolist()
            d["hidden_b"] = self.hidden_b.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], n_inputs=d["n_inputs"],
                   degree=d.get("degree", 3), scales=np.asarray(d["scales"]),
                   hidden_w=np.asarray(d["hidden_w"]) if "hidden_w" in d else None,
                   hidden_b=np.asarray(d["hidden_b"]) if "hidden_b" in d else None)


class ParallelWHModel:
    """n_br front blocks, n_br back blocks, and one MIMO static map between them."""

    def __init__(self, fronts, backs, basis: BasisDescriptor, weights):
        self.fronts = list(fronts)
        self.backs = list(backs)
        self.basis = basis
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (basis.n_w, self.n_br):
            raise ValueError(f"weights must be (n_w, n_br) = "
                             f"({basis.n_w}, {self.n_br}), got {self.weights.shape}")

    @property
    def n_br(self):
        return len(self.fronts)

    # -- parameter vector ---------------------------------------------------
    # layout: per branch front num, front den tail, back num, back den tail;
    # then tanh hidden parameters when present; then the weight matrix

    def _slices(self):
        sl, k = [], 0
        for tf in [t for pair in zip(self.fronts, self.backs) for t in pair]:
            n_b, n_a = tf.num.size, tf.den.size - 1
            sl.append((slice(k, k + n_b), slice(k + n_b, k + n_b + n_a)))
            k += n_b + n_a
        hidden = None
        if self.basis.kind == "tanh":
            nh = self.basis.hidden_w.size + self.basis.hidden_b.size
            hidden = slice(k, k + nh)
            k += nh
        wsl = slice(k, k + self.weights.size)
        return sl, hidden, wsl, k + self.weights.size

    def flatten(self):
        """Full parameter vector theta (denominators carry only a_1.. since a_0 = 1)."""
        parts = []
        for tf in [t for pair in zip(self.fronts, self.backs) for t in pair]:
            parts += [tf.num, tf.den[1:]]
        if self.basis.kind == "tanh":
            parts += [self.basis.hidden_w.ravel(), self.basis.hidden_b]
        parts.append(self.weights.ravel())
        return np.concatenate(parts)

    def unflatten(self, theta, check_stability=True):
        """Rebuild a model of identical structure from a parameter vector."""
        theta = np.asarray(theta, dtype=float)
        sl, hidden, wsl, n = self._slices()
        if theta.size != n:
            raise ValueError(f"theta has size {theta.size}, expected {n}")
        tfs = []
        for (snum, sden), ref in zip(
                sl, [t for pair in zip(self.fronts, self.backs) for t in pair]):
            num = theta[snum]
            den = np.concatenate([[1.0], theta[sden]])
            tfs.append(RationalTF(num, den, check_stability=check_stability))
        fronts = tfs[0::2]
        backs = tfs[1::2]
        basis = self.basis
        if basis.kind == "tanh":
            h = theta[hidden]
            nw = basis.hidden_w.size
            basis = BasisDescriptor(kind="tanh", n_inputs=basis.n_inputs,
                                    scales=basis.scales,
                                    hidden_w=h[:nw].reshape(basis.hidden_w.shape),
                                    hidden_b=h[nw:])
        weights = theta[wsl].reshape(self.weights.shape)
        return ParallelWHModel(fronts, backs, basis, weights)

    def theta_is_stable(self, theta):
        """Check all candidate denominators without building the model."""
        from parwh.lti import den_is_stable
        sl, _, _, _ = self._slices()
        for _, sden in sl:
            if not den_is_stable(np.concatenate([[1.0], theta[sden]])):
                return False
        return True

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        return {"fronts": [t.to_dict() for t in self.fronts],
                "backs": [t.to_dict() for t in self.backs],
                "basis": self.basis.to_dict(),
                "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls([RationalTF.from_dict(t) for t in d["fronts"]],
                   [RationalTF.from_dict(t) for t in d["backs"]],
                   BasisDescriptor.from_dict(d["basis"]),
                   np.asarray(d["weights"]))

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _filt_records(tf, u, periodic):
    if periodic:
        N = u.shape[-1]
        resp = tf.eval_zinv(np.exp(-2j * np.pi * np.arange(N // 2 + 1) / N))
        return np.fft.irfft(resp * np.fft.rfft(u, axis=-1), n=N, axis=-1)
    return tf.filt(u)


def simulate_model(model: ParallelWHModel, u, periodic=True, intermediates=False):
    """Model response to input records.

    u: SignalEnsemble or array with samples along the last axis.  With
    ``periodic`` each record is one period and the exact steady-state response
    is returned; otherwise filtering starts from rest (transient included).
    """
    data = u.data if isinstance(u, SignalEnsemble) else np.asarray(u, dtype=float)
    x = np.stack([_filt_records(tf, data, periodic) for tf in model.fronts])
    g = model.basis.evaluate(x)
    if not np.all(np.isfinite(g)):
        raise ValueError("static nonlinearity produced non-finite values")
    r = np.tensordot(model.weights.T, g, axes=(1, 0))
    y = sum(_filt_records(tf, r[i], periodic) for i, tf in enumerate(model.backs))
    if isinstance(u, SignalEnsemble):
        y = u.with_data(y)
    if intermediates:
        return y, x, r
    return y


def model_from_true_system(sys, degree=3, scales=None):
    """Common-denominator model equivalent of a polynomial TrueSystem.

    All front blocks share the product of the true front denominators (each
    front numerator is multiplied by the other branches' front denominators),
    and likewise for the back blocks; the per-branch polynomial nonlinearities
    become rows of the monomial weight matrix.  Exact when every branch
    nonlinearity is a polynomial of total degree <= degree.
    """
    n_br = sys.n_br
    fden = np.array([1.0])
    bden = np.array([1.0])
    for br in sys.branches:
        fden = np.convolve(fden, br.front.den)
        bden = np.convolve(bden, br.back.den)
    fronts, backs = [], []
    for i, br in enumerate(sys.branches):
        fnum, bnum = br.front.num, br.back.num
        for j, other in enumerate(sys.branches):
            if j != i:
                fnum = np.convolve(fnum, other.front.den)
                bnum = np.convolve(bnum, other.back.den)
        fronts.append(RationalTF(fnum, fden))
        backs.append(RationalTF(bnum, bden))
    scales = np.ones(n_br) if scales is None else np.asarray(scales, dtype=float)
    basis = BasisDescriptor(kind="poly", n_inputs=n_br, degree=degree,
                            scales=scales)
    weights = np.zeros((basis.n_w, n_br))
    exps = monomial_exponents(n_br, degree)
    for i, br in enumerate(sys.branches):
        if br.nl.kind != "poly":
            raise ValueError("model_from_true_system needs polynomial nonlinearities")
        coeffs = np.asarray(br.nl.params, dtype=float)
        if coeffs.size > degree + 1:
            raise ValueError(f"branch {i} polynomial degree exceeds basis degree")
        for p, c in enumerate(coeffs):
            if c == 0.0:
                continue
            e = tuple(p if k == i else 0 for k in range(n_br))
            weights[exps.index(e), i] = c * scales[i] ** p
    return ParallelWHModel(fronts, backs, basis, weights)
