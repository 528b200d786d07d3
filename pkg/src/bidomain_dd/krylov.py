"""Preconditioned CG with Lanczos condition estimates, and restarted GMRES."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal


class KrylovError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class KrylovConfig:
    method: str = "cg"
    rtol: float = 1e-8
    atol: float = 1e-10
    dtol: float = 1e4
    max_it: int = 1000
    restart: int = 30
    raise_on_failure: bool = True

    def __post_init__(self):
        if self.method not in ("cg", "gmres"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        if min(self.rtol, self.atol) <= 0 or self.dtol <= 1:
            raise ValueError("need rtol, atol > 0 and dtol > 1")
        if self.max_it < 1 or self.restart < 1:
            raise ValueError("max_it and restart must be positive")


@dataclass
class SolveReport:
    iterations: int
    residual_norm: float
    converged: bool
    reason: str
    cond_est: float = float("nan")
    eig_min: float = float("nan")
    eig_max: float = float("nan")
    residual_history: list = field(default_factory=list)

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual_norm"])
            for k, r in enumerate(self.residual_history):
                w.writerow([k, repr(float(r))])


def lanczos_extremes(alphas, betas):
    """Extreme eigenvalues of the Lanczos tridiagonal implied by CG coefficients.

    ``alphas[k]`` is the step length and ``betas[k]`` the direction-update ratio
    of iteration k.
    """
    k = len(alphas)
    if k == 0:
        return float("nan"), float("nan")
    a = np.asarray(alphas, float)
    b = np.asarray(betas[: k - 1], float)
    d = 1.0 / a
    d[1:] += b / a[:-1]
    e = np.sqrt(np.maximum(b, 0.0)) / a[:-1]
    ev = eigh_tridiagonal(d, e, eigvals_only=True) if k > 1 else d
    return float(ev[0]), float(ev[-1])


def _identity(x):
    return x


def pcg(apply_A, b, apply_M=None, cfg: KrylovConfig | None = None, x0=None, project=None,
        callback=None):
    """Preconditioned CG, stopping on the preconditioned residual norm.

    ``project`` (optional) removes a known kernel component from residuals and
    preconditioned residuals so the iteration stays on the range.
    """
    cfg = cfg or KrylovConfig()
    M = apply_M or _identity
    P = project or _identity
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = P(b - apply_A(x)) if x0 is not None else P(b.copy())
    z = P(M(r))
    rz = float(r @ z)
    if rz < 0:
        raise KrylovError("preconditioner is not positive definite")
    rnorm = float(np.linalg.norm(z))
    hist = [rnorm]
    r0 = rnorm
    tol = max(cfg.atol, cfg.rtol * r0)
    alphas, betas = [], []
    report = SolveReport(0, rnorm, rnorm < tol, "atol" if rnorm < tol else "", residual_history=hist)
    if report.converged:
        report.cond_est = 1.0
        return x, report
    p = z.copy()
    it = 0
    reason = "max_it"
    while it < cfg.max_it:
        q = apply_A(p)
        pq = float(p @ q)
        if pq <= 0:
            if cfg.raise_on_failure:
                raise KrylovError(f"indefinite operator: p'Ap = {pq:.3e} at iteration {it}", report)
            reason = "indefinite"
            break
        alpha = rz / pq
        x += alpha * p
        r = P(r - alpha * q)
        z = P(M(r))
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        it += 1
        rnorm = float(np.linalg.norm(z))
        hist.append(rnorm)
        if callback is not None:
            callback(it, x, rnorm)
        if rnorm < tol:
            reason = "rtol" if rnorm >= cfg.atol else "atol"
            break
        if rnorm > cfg.dtol * r0:
            reason = "dtol"
            break
        if rz_new <= 0:
            reason = "breakdown"
            break
        rz = rz_new
        p = z + beta * p
    lo, hi = lanczos_extremes(alphas, betas)
    report = SolveReport(it, rnorm, reason in ("rtol", "atol"), reason, hi / lo if lo > 0 else float("inf"),
                         lo, hi, hist)
    if not report.converged and cfg.raise_on_failure:
        raise KrylovError(f"PCG failed ({reason}) after {it} iterations, residual {rnorm:.3e}", report)
    return x, report


def gmres(apply_A, b, apply_M=None, cfg: KrylovConfig | None = None, x0=None, project=None):
    """Restarted left-preconditioned GMRES with Givens rotations."""
    cfg = cfg or KrylovConfig(method="gmres")
    M = apply_M or _identity
    P = project or _identity
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    m = cfg.restart
    r = P(M(P(b - apply_A(x))))
    beta0 = float(np.linalg.norm(r))
    r0 = beta0
    hist = [beta0]
    tol = max(cfg.atol, cfg.rtol * r0)
    if beta0 < tol:
        return x, SolveReport(0, beta0, True, "atol", residual_history=hist)
    it = 0
    reason = "max_it"
    rnorm = beta0
    while it < cfg.max_it:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[0] = r / rnorm
        start_norm = rnorm
        k_done = 0
        for k in range(m):
            w = np.array(P(M(P(apply_A(V[k])))), dtype=float)  # operators may return their input
            for i in range(k + 1):  # modified Gram-Schmidt
                H[i, k] = w @ V[i]
                w -= H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 0:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            den = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = (1.0, 0.0) if den == 0 else (H[k, k] / den, H[k + 1, k] / den)
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            rnorm = abs(g[k + 1])
            hist.append(rnorm)
            it += 1
            k_done = k + 1
            if rnorm < tol or it >= cfg.max_it or H[k, k] == 0:
                break
        y = np.linalg.solve(np.triu(H[:k_done, :k_done]), g[:k_done]) if k_done else np.zeros(0)
        x += V[:k_done].T @ y
        if rnorm < tol:
            reason = "rtol" if rnorm >= cfg.atol else "atol"
            break
        if rnorm > cfg.dtol * r0:
            reason = "dtol"
            break
        if rnorm >= start_norm * (1 - 1e-14):
            reason = "stagnation"
            break
        r = P(M(P(b - apply_A(x))))
        rnorm = float(np.linalg.norm(r))
    report = SolveReport(it, rnorm, reason in ("rtol", "atol"), reason, residual_history=hist)
    if not report.converged and cfg.raise_on_failure:
        raise KrylovError(f"GMRES failed ({reason}) after {it} iterations, residual {rnorm:.3e}", report)
    return x, report
