"""Best linear approximation: robust nonparametric estimate and rational parametrization.

Stage 1 averages DFT spectra over periods and realizations to get the BLA with
two variance levels per excited bin: the noise variance (period-to-period
scatter) and the total variance (realization-to-realization scatter, which
additionally contains the stochastic nonlinear distortion).  Stage 2 fits all
operating conditions simultaneously with one shared denominator and one
numerator per condition, using an iteratively reweighted linearized least
squares (Sanathanan-Koerner) scheme weighted by the inverse sample variances.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from parwh.lti import den_is_stable
from parwh.signals import MultisineSpec, SignalEnsemble, gen_multisine

__all__ = ["NonparametricBla", "CommonDenModel", "estimate_bla",
           "bussgang_gain_oracle", "fit_common_den", "order_scan"]


@dataclass
class NonparametricBla:
    """Nonparametric FRF of the BLA at one operating condition, with variances."""

    G: np.ndarray
    var_noise: np.ndarray
    var_total: np.ndarray
    M: int
    P: int
    excited_bins: np.ndarray
    N: int
    f_s: float
    setpoint_id: str = "sp0"

    def __post_init__(self):
        if not np.all(np.isfinite(self.G)):
            raise ValueError("BLA contains non-finite values on excited bins")
        bad = self.var_total + 1e-300 < 0.5 * self.var_noise
        # isolated violations are statistical jitter; flag only systematic ones
        if np.mean(bad) > 0.05:
            warnings.warn(f"{self.setpoint_id}: var_total < 0.5 var_noise on "
                          f"{np.sum(bad)} bins, variance split looks inconsistent")

    def save_csv(self, path):
        header = (f"bin,re_G,im_G,var_noise,var_total "
                  f"(M={self.M},P={self.P},N={self.N},f_s={self.f_s!r},"
                  f"setpoint={self.setpoint_id})")
        cols = np.column_stack([self.excited_bins, self.G.real, self.G.imag,
                                self.var_noise, self.var_total])
        np.savetxt(path, cols, delimiter=",", header=header, fmt="%.17g")

    @classmethod
    def load_csv(cls, path):
        with open(path) as fh:
            header = fh.readline()
        meta = dict(kv.split("=") for kv in
                    header[header.index("(") + 1:header.index(")")].split(","))
        cols = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(G=cols[:, 1] + 1j * cols[:, 2], var_noise=cols[:, 3],
                   var_total=cols[:, 4], M=int(meta["M"]), P=int(meta["P"]),
                   excited_bins=cols[:, 0].astype(int), N=int(meta["N"]),
                   f_s=float(meta["f_s"]), setpoint_id=meta["setpoint"])


def estimate_bla(u: SignalEnsemble, y: SignalEnsemble, setpoint_id=None):
    """Robust BLA estimate from aligned periodic input/output ensembles.

    Per realization the period-averaged spectra are divided bin-wise,
    G_m = Y_m / U_m; the estimate is the mean over realizations.  var_total is
    the realization-to-realization sample variance of that mean; var_noise
    propagates the period-to-period output variance through the division
    (requires P >= 2, else it is reported as zero).
    """
    if u.data.shape != y.data.shape:
        raise ValueError("input and output ensembles are not aligned")
    M, P, N = u.data.shape
    if M < 2:
        raise ValueError("need at least 2 realizations for variance estimates")
    bins = u.excited_bins
    U = np.fft.rfft(u.data, axis=-1)[..., bins]
    Y = np.fft.rfft(y.data, axis=-1)[..., bins]
    Um = U.mean(axis=1)
    Ym = Y.mean(axis=1)
    if np.min(2.0 * np.abs(Um) / N) < 1e-12:
        k = bins[np.argmin(np.abs(Um))]
        raise ValueError(f"excitation hole: |U| ~ 0 at excited bin {k}")
    Gm = Ym / Um
    G = Gm.mean(axis=0)
    var_total = np.sum(np.abs(Gm - G) ** 2, axis=0) / ((M - 1) * M)
    if P >= 2:
        varY = np.sum(np.abs(Y - Ym[:, None, :]) ** 2, axis=1) / (P - 1)
        var_noise = np.mean(varY / (P * np.abs(Um) ** 2), axis=0) / M
    else:
        var_noise = np.zeros_like(var_total)
    return NonparametricBla(G=G, var_noise=var_noise, var_total=var_total,
                            M=M, P=P, excited_bins=bins, N=N, f_s=u.f_s,
                            setpoint_id=setpoint_id or u.setpoint_id)


def bussgang_gain_oracle(branch, spec: MultisineSpec, n_samples=1 << 20,
                         return_stats=False):
    """Monte-Carlo equivalent gain cov(f(x), x) / var(x) with x the filtered excitation.

    ``branch`` is (front_tf, nonlinearity).  Inputs are drawn per ``spec`` so
    the gain refers to the same excitation class as the BLA measurement.  The
    gain is averaged over independent realizations; with ``return_stats`` the
    per-realization scatter provides a standard error.  This is a test oracle,
    not part of the identification path.
    """
    front, nl = branch if isinstance(branch, tuple) else (branch.front, branch.nl)
    M = max(8, int(np.ceil(n_samples / spec.N)))
    u = gen_multisine(spec, M=M)
    x = front.filt(u.data[:, 0, :], initial_state="steady_periodic")
    r = np.asarray(nl(x), dtype=float)
    xc = x - x.mean(axis=-1, keepdims=True)
    var_m = np.mean(xc ** 2, axis=-1)
    if np.any(var_m == 0.0):
        raise ValueError("var(x) = 0: branch input carries no excitation")
    alpha_m = np.mean((r - r.mean(axis=-1, keepdims=True)) * xc, axis=-1) / var_m
    alpha = float(alpha_m.mean())
    if return_stats:
        stats = {"se": float(alpha_m.std(ddof=1) / np.sqrt(M)),
                 "x_rms": float(np.sqrt(var_m.mean())),
                 "r_rms": float(np.std(r))}
        return alpha, stats
    return alpha


@dataclass
class CommonDenModel:
    """Shared-denominator rational fit of R BLAs: G_r ~ D_r(z^-1) / C(z^-1), c_0 = 1."""

    den: np.ndarray
    nums: np.ndarray
    num_cov: np.ndarray
    n_c: int
    n_d: int
    N: int
    f_s: float
    setpoint_ids: list
    cost_trace: list = field(default_factory=list)

    @property
    def R(self):
        return self.nums.shape[0]

    def poles(self):
        return np.roots(self.den)

    def eval(self, bins, setpoint=None):
        """Fitted response(s) on the DFT grid; all setpoints if none given."""
        zinv = np.exp(-2j * np.pi * np.asarray(bins) / self.N)
        C = np.polynomial.polynomial.polyval(zinv, self.den)
        rows = self.nums if setpoint is None else self.nums[setpoint:setpoint + 1]
        D = np.vstack([np.polynomial.polynomial.polyval(zinv, row) for row in rows])
        out = D / C
        return out[0] if setpoint is not None else out

    def to_dict(self):
        return {"den": self.den.tolist(), "nums": self.nums.tolist(),
                "num_cov": self.num_cov.tolist(), "n_c": self.n_c,
                "n_d": self.n_d, "N": self.N, "f_s": self.f_s,
                "setpoint_ids": list(self.setpoint_ids),
                "cost_trace": list(self.cost_trace)}

    @classmethod
    def from_dict(cls, d):
        return cls(den=np.asarray(d["den"]), nums=np.asarray(d["nums"]),
                   num_cov=np.asarray(d["num_cov"]), n_c=d["n_c"], n_d=d["n_d"],
                   N=d["N"], f_s=d["f_s"], setpoint_ids=d["setpoint_ids"],
                   cost_trace=d.get("cost_trace", []))

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _weighted_cost(blas, weights, den, nums):
    cost = 0.0
    for ir, b in enumerate(blas):
        zinv = np.exp(-2j * np.pi * b.excited_bins / b.N)
        C = np.polynomial.polynomial.polyval(zinv, den)
        D = np.polynomial.polynomial.polyval(zinv, nums[ir])
        cost += float(np.sum(weights[ir] * np.abs(b.G - D / C) ** 2))
    return cost


def fit_common_den(blas, n_c, n_d, n_iter=20, rtol=1e-10, weighting="total"):
    """Simultaneous common-denominator fit of several BLAs.

    Minimizes sum_{r,k} w_rk |G_r(k) - D_r(w_k)/C(w_k)|^2 with w = 1/var by
    iteratively reweighted linearized least squares: each pass solves the
    linearization ``G C - D ~ 0`` with the extra weight 1/|C_prev|^2, and an
    iterate is accepted only if the true weighted cost does not increase.
    Unstable denominator roots are reflected inside the unit circle afterwards
    (magnitude response preserved by rescaling the numerators).

    Returns a CommonDenModel whose ``num_cov`` is the covariance of the stacked
    numerator coefficients from the final linearized normal equations, scaled
    by the empirical residual variance.
    """
    blas = list(blas)
    R = len(blas)
    if R < 1:
        raise ValueError("need at least one BLA")
    n_bins_total = sum(b.excited_bins.size for b in blas)
    if R * (n_d + 1) + n_c > 2 * n_bins_total:
        raise ValueError("not enough excited bins for the requested orders")

    weights = []
    for b in blas:
        var = b.var_total if weighting == "total" else b.var_noise
        floor = 1e-15 * float(np.mean(np.abs(b.G) ** 2)) + 1e-300
        weights.append(1.0 / np.maximum(var, floor))

    n_par = n_c + R * (n_d + 1)
    den = np.concatenate([[1.0], np.zeros(n_c)])
    nums = np.zeros((R, n_d + 1))
    best = None
    cost_trace = []
    prev_theta = None
    last_sys = None
    for _ in range(n_iter):
        rows_list, rhs_list = [], []
        for ir, b in enumerate(blas):
            zinv = np.exp(-2j * np.pi * b.excited_bins / b.N)
            Cprev = np.polynomial.polynomial.polyval(zinv, den)
            sw = np.sqrt(weights[ir]) / np.abs(Cprev)
            Zc = zinv[:, None] ** np.arange(1, n_c + 1)[None, :]
            Zd = zinv[:, None] ** np.arange(0, n_d + 1)[None, :]
            A = np.zeros((zinv.size, n_par), dtype=complex)
            A[:, :n_c] = b.G[:, None] * Zc
            A[:, n_c + ir * (n_d + 1):n_c + (ir + 1) * (n_d + 1)] = -Zd
            rows_list.append(sw[:, None] * A)
            rhs_list.append(sw * (-b.G))
        A = np.vstack(rows_list)
        rhs = np.concatenate(rhs_list)
        Ar = np.vstack([A.real, A.imag])
        br = np.concatenate([rhs.real, rhs.imag])
        col = np.linalg.norm(Ar, axis=0)
        if np.any(col == 0):
            raise ValueError("over-parametrization: structurally zero columns "
                             f"{np.nonzero(col == 0)[0].tolist()}")
        theta_s, _, rank, _ = np.linalg.lstsq(Ar / col, br, rcond=3e-15)
        if rank < n_par:
            _, _, Vt = np.linalg.svd(Ar / col, full_matrices=False)
            bad = Vt[rank:]
            worst = np.argmax(np.abs(bad), axis=1).tolist()
            raise ValueError("rank-deficient normal equations, deficient "
                             f"directions involve parameters {worst} "
                             "(over-parametrization)")
        theta = theta_s / col
        cand_den = np.concatenate([[1.0], theta[:n_c]])
        cand_nums = theta[n_c:].reshape(R, n_d + 1)
        cost = _weighted_cost(blas, weights, cand_den, cand_nums)
        # the reweighting always relinearizes at the latest iterate, but only
        # cost-improving iterates are accepted as the reported solution
        if best is None or cost <= best[0]:
            best = (cost, cand_den, cand_nums, (Ar / col, col, br))
            cost_trace.append(cost)
        den, nums = cand_den, cand_nums
        if prev_theta is not None:
            dd = np.linalg.norm(theta - prev_theta)
            if dd <= rtol * max(np.linalg.norm(theta), 1e-300):
                break
        prev_theta = theta

    cost, den, nums, last_sys = best

    # parameter covariance from the final accepted linearized system
    Ars, col, brv = last_sys
    resid = brv - Ars @ (np.concatenate([den[1:], nums.ravel()]) * col)
    dof = max(Ars.shape[0] - n_par, 1)
    s2 = float(resid @ resid) / dof
    JtJ = Ars.T @ Ars
    cov_s = np.linalg.pinv(JtJ, rcond=1e-14) * s2
    cov = cov_s / np.outer(col, col)
    num_cov = cov[n_c:, n_c:]

    den, nums = _stabilize(den, nums)
    return CommonDenModel(den=den, nums=nums, num_cov=num_cov, n_c=n_c, n_d=n_d,
                          N=blas[0].N, f_s=blas[0].f_s,
                          setpoint_ids=[b.setpoint_id for b in blas],
                          cost_trace=cost_trace)


def _stabilize(den, nums):
    """Reflect unstable denominator roots inside the unit circle.

    Reflection p -> 1/conj(p) divides the factor magnitude by |p| on the unit
    circle, so the numerators are rescaled to preserve the magnitude response.
    """
    if den_is_stable(den):
        return den, nums
    from parwh.lti import poly_from_roots
    roots = np.roots(den).astype(complex)
    outside = np.abs(roots) > 1.0
    scale = np.prod(np.abs(roots[outside]))
    roots[outside] = 1.0 / np.conj(roots[outside])
    warnings.warn(f"common denominator had {int(np.sum(outside))} unstable roots; "
                  "reflected inside the unit circle")
    return poly_from_roots(roots), nums / scale


def order_scan(blas, nc_values, nd_values, **kw):
    """Weighted residual cost for a grid of candidate orders (model selection aid)."""
    out = []
    for n_c in nc_values:
        for n_d in nd_values:
            try:
                m = fit_common_den(blas, n_c, n_d, **kw)
                out.append((n_c, n_d, m.cost_trace[-1]))
            except ValueError:
                out.append((n_c, n_d, float("inf")))
    return out
