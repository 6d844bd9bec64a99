"""Variational reconstruction: Tikhonov, TV + positivity (ADMM), Bregman iteration.

The TV model is split as ``min D(c) + Psi(v)  s.t.  E c - v = 0`` with

    D(c)   = 1/2 ||K c - g||^2
    Psi(v) = alpha ||v_hat||_1 + chi_{>=0}(v_plus),   v = (v_hat, v_plus)
    E      = [grad; I]

so every ADMM step is a linear solve with ``K^T K + rho E^T E``, a shrinkage
and a projection. The Tikhonov model with positivity uses the same loop with
``E = I`` and ``D(c) = 1/2 ||K c - g||^2 + alpha ||c||^2``.

``E^T E = grad^T grad + I`` is diagonalized by the orthonormal DCT-II
(forward differences with a zero last difference are the Neumann
Laplacian), so the linear solves reduce to a DCT pair plus a low-rank
correction built once from an eigendecomposition of the data Gram matrix.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.fft import dctn, idctn
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, cg

CG_THRESHOLD = 20_000
RANK_TOL = 1e-15


class GradientOperator:
    """Forward differences along every array axis, last difference zero."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in np.atleast_1d(shape))
        if min(self.shape) < 1:
            raise ValueError("grid dimensions must be >= 1")
        self.n = int(np.prod(self.shape))
        self.ndim = len(self.shape)

    @property
    def n_out(self) -> int:
        return self.ndim * self.n

    def __call__(self, c) -> np.ndarray:
        x = np.asarray(c, dtype=float).reshape(self.shape)
        out = np.zeros((self.ndim,) + self.shape)
        for k in range(self.ndim):
            d = np.diff(x, axis=k)
            idx = [slice(None)] * self.ndim
            idx[k] = slice(0, self.shape[k] - 1)
            out[k][tuple(idx)] = d
        return out.ravel()

    def adjoint(self, v) -> np.ndarray:
        p = np.asarray(v, dtype=float).reshape((self.ndim,) + self.shape)
        out = np.zeros(self.shape)
        for k in range(self.ndim):
            if self.shape[k] == 1:
                continue  # the forward difference along a singleton axis is identically zero
            pk = np.moveaxis(p[k], k, 0)
            acc = np.zeros_like(pk)
            acc[0] = -pk[0]
            acc[1:-1] = pk[:-2] - pk[1:-1]
            acc[-1] = pk[-2]
            out += np.moveaxis(acc, 0, k)
        return out.ravel()

    def matrix(self, with_identity=False) -> sp.csr_matrix:
        """Sparse incidence matrix; ``[grad; I]`` if ``with_identity``."""
        blocks = []
        for k in range(self.ndim):
            n = self.shape[k]
            d1 = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
            d1[n - 1, n - 1] = 0.0
            factors = [sp.identity(s, format="csr") for s in self.shape]
            factors[k] = d1.tocsr()
            m = factors[0]
            for f in factors[1:]:
                m = sp.kron(m, f, format="csr")
            blocks.append(m)
        if with_identity:
            blocks.append(sp.identity(self.n, format="csr"))
        return sp.vstack(blocks, format="csr")

    def laplacian_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of grad^T grad in the orthonormal DCT-II basis."""
        lam = np.zeros(self.shape)
        for k, n in enumerate(self.shape):
            shape = [1] * self.ndim
            shape[k] = n
            lam = lam + (4.0 * np.sin(np.pi * np.arange(n) / (2.0 * n)) ** 2).reshape(shape)
        return lam


def gradient(c, shape=None) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return GradientOperator(shape or c.shape)(c)


def soft_threshold(z, t):
    """Prox of t * ||.||_1; exact ties go to zero."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def group_soft_threshold(z, t, ndim):
    """Prox of t * sum_i ||z_i||_2, grouping the ``ndim`` difference components per cell."""
    p = np.asarray(z, dtype=float).reshape(ndim, -1)
    mag = np.sqrt(np.sum(p * p, axis=0))
    scale = np.where(mag > t, 1.0 - t / np.where(mag > 0, mag, 1.0), 0.0)
    return (p * scale).ravel()


def tv_value(c, shape, flavor="anisotropic") -> float:
    d = GradientOperator(shape)(c)
    if flavor == "anisotropic":
        return float(np.sum(np.abs(d)))
    p = d.reshape(len(shape), -1)
    return float(np.sum(np.sqrt(np.sum(p * p, axis=0))))


class NormalSystem:
    """Solves ``(K^T K + A) x = b`` for ``A = s * Q diag(d) Q^T`` (Q = DCT-II).

    ``diag=None`` means ``A = s I``; the decomposition does not depend on
    ``s``, so one instance serves a whole sweep over Tikhonov weights.
    """

    def __init__(self, K, shape=None, diag=None):
        K = np.asarray(K, dtype=float)
        self.m, self.n = K.shape
        self.shape = tuple(shape) if shape is not None else (self.n,)
        if int(np.prod(self.shape)) != self.n:
            raise ValueError(f"shape {self.shape} does not match {self.n} columns")
        self.diag = None if diag is None else np.asarray(diag, dtype=float).reshape(self.shape)
        if self.diag is not None and np.min(self.diag) <= 0:
            raise ValueError("spectral weights must be positive")
        self.K = K
        self._axes = tuple(range(1, len(self.shape) + 1))
        if self.n > CG_THRESHOLD:
            self.mode = "cg"
            return
        kh = self._whiten_rows(K)
        if self.m < self.n:
            self.mode = "dual"
            mu, u = eigh(kh @ kh.T)
            order = np.argsort(mu)[::-1]
            mu = np.clip(mu[order], 0.0, None)
            keep = mu > RANK_TOL * max(mu[0], 1e-300) if mu.size else mu > 0
            self.mu = mu[keep]
            self.z = u[:, order][:, keep].T @ kh
        else:
            self.mode = "primal"
            lam, v = eigh(kh.T @ kh)
            self.lam = np.clip(lam, 0.0, None)
            self.v = v

    def _whiten_rows(self, K):
        if self.diag is None:
            return K
        rows = K.reshape((self.m,) + self.shape)
        t = dctn(rows, type=2, norm="ortho", axes=self._axes) / np.sqrt(self.diag)
        return idctn(t, type=2, norm="ortho", axes=self._axes).reshape(self.m, self.n)

    def _half_inv(self, x):
        if self.diag is None:
            return x
        t = dctn(x.reshape(self.shape), type=2, norm="ortho") / np.sqrt(self.diag)
        return idctn(t, type=2, norm="ortho").ravel()

    def rank(self, s=1.0) -> int:
        if self.mode != "dual":
            return self.n
        return int(np.sum(self.mu / (self.mu + s) > 1e-16))

    def solve(self, b, s=1.0):
        b = np.asarray(b, dtype=float)
        if self.mode == "cg":
            return self._solve_cg(b, s)
        y = self._half_inv(b)
        if self.mode == "dual":
            r = self.rank(s)
            z = self.z[:r]
            y = (y - z.T @ ((z @ y) / (self.mu[:r] + s))) / s
        else:
            y = self.v @ ((self.v.T @ y) / (self.lam + s))
        return self._half_inv(y)

    def _solve_cg(self, b, s):
        K = self.K

        def mv(x):
            if self.diag is None:
                ax = s * x
            else:
                t = dctn(x.reshape(self.shape), type=2, norm="ortho") * self.diag
                ax = s * idctn(t, type=2, norm="ortho").ravel()
            return K.T @ (K @ x) + ax

        op = LinearOperator((self.n, self.n), matvec=mv, dtype=float)
        x, info = cg(op, b, rtol=1e-10, atol=0.0, maxiter=10 * self.n)
        if info != 0:
            raise RuntimeError(f"CG did not converge (info={info})")
        return x


def prepare_tv_system(K, shape, rho) -> NormalSystem:
    """Factorization for ``K^T K + rho (grad^T grad + I)``; reusable across alpha."""
    grad = GradientOperator(shape)
    return NormalSystem(K, shape, rho * (grad.laplacian_eigenvalues() + 1.0))


def prepare_tikhonov_system(K) -> NormalSystem:
    return NormalSystem(K)


@dataclass(frozen=True)
class AdmmParams:
    alpha: float
    rho: float = 1.0
    max_iter: int = 2000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    tol_abs: float = 1e-12
    flavor: str = "anisotropic"
    monitor_every: int = 1

    def __post_init__(self):
        if not self.alpha >= 0 or not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite and >= 0")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0 and self.tol_abs >= 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.monitor_every < 1:
            raise ValueError("max_iter and monitor_every must be >= 1")
        if self.flavor not in ("anisotropic", "isotropic"):
            raise ValueError("flavor must be 'anisotropic' or 'isotropic'")


@dataclass
class SolverReport:
    method: str
    c: np.ndarray
    params: dict
    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    misfit: list = field(default_factory=list)
    monitor_iters: list = field(default_factory=list)
    iterations: int = 0
    termination: str = ""
    wall_time: float = 0.0
    outer: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination in ("converged", "direct", "discrepancy")

    def to_dict(self, include_timing=True, include_iterate=False) -> dict:
        d = {
            "method": self.method,
            "params": self.params,
            "objective": [float(x) for x in self.objective],
            "primal_residual": [float(x) for x in self.primal_residual],
            "dual_residual": [float(x) for x in self.dual_residual],
            "misfit": [float(x) for x in self.misfit],
            "monitor_iters": [int(x) for x in self.monitor_iters],
            "iterations": int(self.iterations),
            "termination": self.termination,
            "outer": self.outer,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        if include_iterate:
            d["c"] = [float(x) for x in np.ravel(self.c)]
        return d


def _check_dims(K, g):
    K = np.asarray(K, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    if K.ndim != 2 or K.shape[0] != g.size:
        raise ValueError(f"operator {K.shape} and data of length {g.size} do not match")
    return K, g


def solve_tikhonov(K, g, alpha, positivity=True, params: AdmmParams | None = None,
                   system: NormalSystem | None = None) -> SolverReport:
    """Minimize 1/2 ||K c - g||^2 + alpha ||c||^2 (+ nonnegativity)."""
    K, g = _check_dims(K, g)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    t0 = time.perf_counter()
    system = system or prepare_tikhonov_system(K)
    if not positivity:
        c = system.solve(K.T @ g, 2.0 * alpha)
        r = K @ c - g
        return SolverReport(
            "tikhonov", c, {"alpha": alpha, "positivity": False},
            objective=[0.5 * float(r @ r) + alpha * float(c @ c)], misfit=[float(np.linalg.norm(r))],
            monitor_iters=[0], iterations=0, termination="direct", wall_time=time.perf_counter() - t0,
        )
    params = params or AdmmParams(alpha=alpha)
    if params.alpha != alpha:
        params = AdmmParams(**{**asdict(params), "alpha": alpha})
    rep = _admm(K, g, params, (K.shape[1],), system, tv=False)
    rep.method = "tikhonov"
    rep.params["positivity"] = True
    rep.wall_time = time.perf_counter() - t0
    return rep


def solve_tv_admm(K, g, params: AdmmParams, shape=None, system: NormalSystem | None = None) -> SolverReport:
    """Minimize 1/2 ||K c - g||^2 + alpha ||grad c||_1 subject to c >= 0."""
    K, g = _check_dims(K, g)
    shape = tuple(shape) if shape is not None else (K.shape[1],)
    if int(np.prod(shape)) != K.shape[1]:
        raise ValueError(f"grid shape {shape} does not match {K.shape[1]} unknowns")
    t0 = time.perf_counter()
    system = system or prepare_tv_system(K, shape, params.rho)
    rep = _admm(K, g, params, shape, system, tv=True)
    rep.wall_time = time.perf_counter() - t0
    return rep


def _admm(K, g, params: AdmmParams, shape, system: NormalSystem, tv: bool) -> SolverReport:
    n = K.shape[1]
    rho, alpha = params.rho, params.alpha
    grad = GradientOperator(shape)
    ktg = K.T @ g
    np_hat = grad.n_out if tv else 0
    v_hat = np.zeros(np_hat)
    lam_hat = np.zeros(np_hat)
    v_pos = np.zeros(n)
    lam_pos = np.zeros(n)
    shift = 1.0 if tv else 2.0 * alpha + rho
    thresh = alpha / rho

    def penalty(c):
        if tv:
            return alpha * tv_value(c, shape, params.flavor)
        return alpha * float(c @ c)

    rep = SolverReport("tv_admm" if tv else "tikhonov", None, {**asdict(params), "shape": list(shape)})
    sqrt_p = math.sqrt(np_hat + n)
    sqrt_n = math.sqrt(n)
    termination = "max_iter"
    it = 0
    for it in range(1, params.max_iter + 1):
        rhs = ktg + rho * (v_pos - lam_pos / rho)
        if tv:
            rhs = rhs + rho * grad.adjoint(v_hat - lam_hat / rho)
        c = system.solve(rhs, shift)

        v_pos_old = v_pos
        v_pos = np.maximum(c + lam_pos / rho, 0.0)
        r_pos = c - v_pos
        lam_pos = lam_pos + rho * r_pos
        dv = v_pos - v_pos_old
        pri2 = float(r_pos @ r_pos)
        ec2 = float(c @ c)
        v2 = float(v_pos @ v_pos)
        if tv:
            gc = grad(c)
            v_hat_old = v_hat
            z = gc + lam_hat / rho
            if params.flavor == "anisotropic":
                v_hat = soft_threshold(z, thresh)
            else:
                v_hat = group_soft_threshold(z, thresh, grad.ndim)
            r_hat = gc - v_hat
            lam_hat = lam_hat + rho * r_hat
            dv = dv + grad.adjoint(v_hat - v_hat_old)
            pri2 += float(r_hat @ r_hat)
            ec2 += float(gc @ gc)
            v2 += float(v_hat @ v_hat)
            etl = lam_pos + grad.adjoint(lam_hat)
        else:
            etl = lam_pos
        primal = math.sqrt(pri2)
        dual = rho * float(np.linalg.norm(dv))
        rep.primal_residual.append(primal)
        rep.dual_residual.append(dual)
        if it % params.monitor_every == 0 or it == 1:
            r = K @ v_pos - g
            rep.misfit.append(float(np.linalg.norm(r)))
            rep.objective.append(0.5 * float(r @ r) + penalty(v_pos))
            rep.monitor_iters.append(it)
        eps_pri = params.tol_abs * sqrt_p + params.tol_primal * math.sqrt(max(ec2, v2))
        eps_dual = params.tol_abs * sqrt_n + params.tol_dual * float(np.linalg.norm(etl))
        if primal <= eps_pri and dual <= eps_dual:
            termination = "converged"
            break
    if rep.monitor_iters[-1] != it:
        r = K @ v_pos - g
        rep.misfit.append(float(np.linalg.norm(r)))
        rep.objective.append(0.5 * float(r @ r) + penalty(v_pos))
        rep.monitor_iters.append(it)
    rep.c = v_pos
    rep.iterations = it
    rep.termination = termination
    return rep


def objective_tv(K, g, c, alpha, shape=None, flavor="anisotropic") -> float:
    """1/2 ||K c - g||^2 + alpha TV(c); +inf if any entry is negative."""
    c = np.asarray(c, dtype=float).ravel()
    if np.any(c < 0):
        return math.inf
    r = np.asarray(K) @ c - np.asarray(g).ravel()
    return 0.5 * float(r @ r) + alpha * tv_value(c, shape or (c.size,), flavor)


def solve_bregman(K, g, alpha, inner: AdmmParams | None = None, noise_level=None, tau=1.02,
                  max_outer=20, shape=None, select="at", system: NormalSystem | None = None) -> SolverReport:
    """Bregman iteration on the TV + positivity model with fixed, large ``alpha``.

    Starts from ``g^0 = g`` and adds back the residual each round. Stops at the
    first iterate with ``||K c - g|| <= tau * noise_level`` (discrepancy
    principle) or after ``max_outer`` rounds. ``select="before"`` returns the
    last iterate above the threshold instead.
    """
    K, g = _check_dims(K, g)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if select not in ("at", "before"):
        raise ValueError("select must be 'at' or 'before'")
    shape = tuple(shape) if shape is not None else (K.shape[1],)
    inner = inner or AdmmParams(alpha=alpha)
    if inner.alpha != alpha:
        inner = AdmmParams(**{**asdict(inner), "alpha": alpha})
    t0 = time.perf_counter()
    system = system or prepare_tv_system(K, shape, inner.rho)
    gk = g.copy()
    history = []
    prev = None
    termination = "max_outer"
    best = None
    for k in range(1, max_outer + 1):
        rep = solve_tv_admm(K, gk, inner, shape, system)
        c = rep.c
        res = K @ c - g
        mis = float(np.linalg.norm(res))
        history.append({
            "outer": k, "misfit": mis, "inner_objective": rep.objective[-1],
            "inner_iterations": rep.iterations, "inner_termination": rep.termination,
        })
        prev, best = best, (c, rep, mis)
        if noise_level is not None and mis <= tau * noise_level:
            termination = "discrepancy"
            if select == "before" and prev is not None:
                best = prev
            break
        gk = gk + g - K @ c
    c, last, mis = best
    out = SolverReport(
        "bregman", c,
        {**asdict(inner), "shape": list(shape), "tau": tau, "noise_level": noise_level,
         "max_outer": max_outer, "select": select},
        objective=[h["inner_objective"] for h in history],
        misfit=[h["misfit"] for h in history],
        monitor_iters=[h["outer"] for h in history],
        primal_residual=list(last.primal_residual),
        dual_residual=list(last.dual_residual),
        iterations=len(history),
        termination=termination,
        outer=history,
    )
    out.wall_time = time.perf_counter() - t0
    return out
