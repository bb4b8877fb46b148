"""Branch decomposition of the fitted BLA numerators.

The stacked numerator matrix (one row per operating condition) has rank equal
to the number of parallel branches; its SVD provides an orthonormal basis for
the branch dynamics.  The rank is read off a whitened copy of the matrix:
after normalizing by the coefficient covariance and by the expected largest
singular value of a pure-noise matrix of the same shape, singular values above
one indicate branches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from parwh.bla import CommonDenModel

__all__ = ["NumeratorMatrix", "BranchDecomposition", "build_D",
           "estimate_rank", "decompose"]


@dataclass
class NumeratorMatrix:
    """Stacked fitted numerators (R x (n_d+1)) and the covariance of their entries."""

    D: np.ndarray
    cov: np.ndarray

    @property
    def R(self):
        return self.D.shape[0]

    @property
    def n_cols(self):
        return self.D.shape[1]


def build_D(model: CommonDenModel):
    """Numerator matrix of a fitted common-denominator model, rows in setpoint order."""
    return NumeratorMatrix(D=np.array(model.nums, dtype=float, copy=True),
                           cov=np.array(model.num_cov, dtype=float, copy=True))


def _column_covariance(num: NumeratorMatrix):
    """Average the per-row covariance blocks into one column covariance, symmetrized."""
    n = num.n_cols
    C = np.zeros((n, n))
    for r in range(num.R):
        blk = num.cov[r * n:(r + 1) * n, r * n:(r + 1) * n]
        C += blk
    C /= num.R
    return 0.5 * (C + C.T)


def _inv_sqrt_psd(C, clip_rel=1e-12):
    """Pseudo-inverse principal square root with small-eigenvalue clipping."""
    w, V = np.linalg.eigh(C)
    w = np.maximum(w, 0.0)
    top = w.max() if w.size else 0.0
    if top <= 0.0:
        raise ValueError("covariance is zero; cannot whiten")
    keep = w > clip_rel * top
    inv_sqrt = np.zeros_like(w)
    inv_sqrt[keep] = 1.0 / np.sqrt(w[keep])
    return (V * inv_sqrt) @ V.T


def whitened_singular_values(num: NumeratorMatrix):
    """Singular values of the covariance-whitened, noise-floor-normalized matrix.

    Whitening by the column covariance makes pure estimation noise an iid
    standard normal matrix; dividing by its expected largest singular value,
    sqrt(R) + sqrt(n_cols), puts the noise floor at one so the paper's
    "greater than one" rule counts branches.
    """
    W = _inv_sqrt_psd(_column_covariance(num))
    scale = np.sqrt(num.R) + np.sqrt(num.n_cols)
    return np.linalg.svd(num.D @ W / scale, compute_uv=False)


def estimate_rank(num: NumeratorMatrix, margin=0.0):
    """Branch count estimate: number of whitened singular values above 1 (+margin).

    Raises if none exceeds the threshold (no significant dynamics); downstream
    stages need at least one branch.
    """
    wsv = whitened_singular_values(num)
    n_br = int(np.sum(wsv > 1.0 + margin))
    if n_br == 0:
        raise ValueError("no significant dynamics: all whitened singular values "
                         f"<= {1.0 + margin} (max {wsv.max():.3g})")
    return n_br, wsv


@dataclass
class BranchDecomposition:
    """Per-branch dynamics: orthonormal numerator basis over the shared denominator."""

    n_br: int
    branch_numerators: np.ndarray
    shared_den: np.ndarray
    singular_values: np.ndarray
    whitened_singular_values: np.ndarray
    N: int = 0
    f_s: float = 1.0

    def branch_tf(self, i):
        from parwh.lti import RationalTF
        return RationalTF(self.branch_numerators[i], self.shared_den,
                          check_stability=False)

    def to_dict(self):
        return {"n_br": self.n_br,
                "branch_numerators": self.branch_numerators.tolist(),
                "shared_den": self.shared_den.tolist(),
                "singular_values": self.singular_values.tolist(),
                "whitened_singular_values": self.whitened_singular_values.tolist(),
                "N": self.N, "f_s": self.f_s}

    @classmethod
    def from_dict(cls, d):
        return cls(n_br=d["n_br"],
                   branch_numerators=np.asarray(d["branch_numerators"]),
                   shared_den=np.asarray(d["shared_den"]),
                   singular_values=np.asarray(d["singular_values"]),
                   whitened_singular_values=np.asarray(d["whitened_singular_values"]),
                   N=d.get("N", 0), f_s=d.get("f_s", 1.0))

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def decompose(num: NumeratorMatrix, model: CommonDenModel, n_br="auto"):
    """SVD branch decomposition of the numerator matrix.

    The branch numerators are the first n_br right singular vectors of the raw
    (unwhitened) matrix; the whitened copy is used only for the rank decision.
    Individual vectors are defined up to an arbitrary full-rank mixing, so
    only their span is meaningful.
    """
    wsv = whitened_singular_values(num)
    if n_br == "auto":
        n_br, _ = estimate_rank(num)
    n_br = int(n_br)
    if not 1 <= n_br <= min(num.R, num.n_cols):
        raise ValueError(f"n_br = {n_br} must lie in [1, min(R, n_d+1) = "
                         f"{min(num.R, num.n_cols)}]")
    _, sv, Vt = np.linalg.svd(num.D, full_matrices=False)
    return BranchDecomposition(n_br=n_br, branch_numerators=Vt[:n_br].copy(),
                               shared_den=np.array(model.den, copy=True),
                               singular_values=sv,
                               whitened_singular_values=wsv,
                               N=model.N, f_s=model.f_s)
