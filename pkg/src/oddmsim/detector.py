"""Symbol detection: orthogonal message-passing iterations and an LMMSE baseline.

One detection iteration alternates a de-correlated linear estimator

    r_t = s_t + (1/eps) H^H (H H^H + xi I)^{-1} (y - H s_t),
    xi = sigma^2 / v_nle^2,   eps = Tr(H^H (H H^H + xi I)^{-1} H) / MN,

with a divergence-free nonlinear estimator: a per-component posterior mean
over the constellation at noise level v_le^2, recentred by
C * (s_hat - (v_post / v_le^2) r) with C = v_le^2 / (v_le^2 - v_post), which
removes the correlation between the denoiser's output error and its input
error.  Variances propagate deterministically:
v_le^2 = v_nle^2 (1/eps - 1) and 1/v_nle'^2 = 1/v_post - 1/v_le^2.

For small grids the regularized inverse is computed once per channel via an
eigendecomposition of H H^H; for large grids a matrix-free conjugate-gradient
solver exploits the O(P*MN) sparsity of H, with the trace factor estimated by
seeded random probing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FrameConfig, get_constellation, qam_demap
from .effchan import DENSE_LIMIT, EffectiveChannel


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class OampConfig:
    max_iters: int = 20
    var_floor: float = 1e-10
    damping: float = 1.0          # 1 = no damping
    le_mode: str = "auto"         # auto | exact | matrix_free
    solve_tol: float = 1e-6       # relative residual of the inner solve
    cg_max_iters: int = 2000
    n_probes: int = 32            # trace probes in matrix-free mode
    probe_seed: int = 12345
    stop_tol: float = 1e-6        # |delta v_nle^2| stopping rule
    literal_denoiser: bool = False  # A/B switch: unsquared distance in the exponent

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        if self.var_floor <= 0 or self.solve_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class DetectionResult:
    soft_symbols: np.ndarray
    hard_symbols: np.ndarray
    hard_bits: np.ndarray
    variance_trace: list          # (v_le_sq, v_nle_sq) per iteration
    iterations_used: int
    max_solve_residual: float = 0.0
    non_contracting: bool = False


class LinearStage:
    """Regularized-inverse machinery shared by the LE iterations and LMMSE.

    mode 'exact' eigendecomposes the dense H H^H once and serves every
    regularization level from the spectrum; 'matrix_free' answers each level
    with a block conjugate-gradient solve and estimates the trace factor with
    a fixed set of random probes.
    """

    def __init__(self, H: EffectiveChannel, config: OampConfig):
        self.H = H
        self.cfg = config
        self.n = H.config.mn
        mode = config.le_mode
        if mode == "auto":
            mode = "exact" if self.n <= DENSE_LIMIT else "matrix_free"
        self.mode = mode
        self.max_residual = 0.0
        if mode == "exact":
            lam, U = np.linalg.eigh(H.gram_dense())
            self.lam = np.maximum(lam, 0.0)
            self.U = U
        elif mode == "matrix_free":
            if config.n_probes >= self.n:
                # complete basis: the trace estimate becomes exact
                self.probes = np.eye(self.n, dtype=complex) * np.sqrt(self.n)
            else:
                rng = np.random.default_rng(config.probe_seed)
                z = (rng.integers(0, 2, (self.n, config.n_probes)) * 2 - 1) + \
                    1j * (rng.integers(0, 2, (self.n, config.n_probes)) * 2 - 1)
                self.probes = z.astype(complex) / np.sqrt(2.0)
        else:
            raise ValueError(f"unknown le_mode {mode!r}")

    def solve(self, rhs: np.ndarray, xi: float, x0: np.ndarray | None = None) -> np.ndarray:
        """(H H^H + xi I)^{-1} rhs."""
        if self.mode == "exact":
            w = self.U.conj().T @ rhs
            return self.U @ (w / (self.lam + xi))
        X, _ = self._cg(rhs[:, None], xi, x0[:, None] if x0 is not None else None)
        return X[:, 0]

    def eps_phi(self, xi: float) -> float:
        """Tr(H^H (H H^H + xi I)^{-1} H) / MN."""
        if self.mode == "exact":
            return float(np.mean(self.lam / (self.lam + xi)))
        W = self.H.apply(self.probes)
        Q, _ = self._cg(W, xi)
        vals = np.einsum("ij,ij->j", W.conj(), Q).real
        return float(np.mean(vals)) / self.n

    def solve_with_eps(self, rhs: np.ndarray, xi: float, x0=None):
        """One fused call: solve the main system and the probe systems together."""
        if self.mode == "exact":
            return self.solve(rhs, xi), self.eps_phi(xi), None
        W = self.H.apply(self.probes)
        B = np.concatenate([rhs[:, None], W], axis=1)
        X0 = None
        if x0 is not None:
            X0 = np.zeros_like(B)
            X0[:, 0] = x0
        X, _ = self._cg(B, xi, X0)
        vals = np.einsum("ij,ij->j", W.conj(), X[:, 1:]).real
        eps = float(np.mean(vals)) / self.n
        return X[:, 0], eps, X[:, 0]

    def _cg(self, B: np.ndarray, xi: float, X0: np.ndarray | None = None):
        """Block CG on (H H^H + xi I) X = B, per-column stopping."""
        A = lambda X: self.H.apply_gram(X) + xi * X
        X = np.zeros_like(B) if X0 is None else X0.copy()
        R = B - A(X) if X0 is not None else B.copy()
        P = R.copy()
        bnorm = np.sqrt(np.einsum("ij,ij->j", B.conj(), B).real)
        bnorm = np.where(bnorm == 0.0, 1.0, bnorm)
        rsq = np.einsum("ij,ij->j", R.conj(), R).real
        tol = self.cfg.solve_tol
        for it in range(self.cfg.cg_max_iters):
            rel = np.sqrt(rsq) / bnorm
            if np.all(rel <= tol):
                self.max_residual = max(self.max_residual, float(rel.max()))
                return X, it
            Q = A(P)
            den = np.einsum("ij,ij->j", P.conj(), Q).real
            den = np.where(den == 0.0, 1.0, den)
            alpha = rsq / den
            X = X + alpha[None, :] * P
            R = R - alpha[None, :] * Q
            rsq_new = np.einsum("ij,ij->j", R.conj(), R).real
            beta = rsq_new / np.where(rsq == 0.0, 1.0, rsq)
            P = R + beta[None, :] * P
            rsq = rsq_new
        rel = np.sqrt(rsq) / bnorm
        raise SolverError(
            f"inner solve did not reach tol {tol:g} in {self.cfg.cg_max_iters} iterations; "
            f"worst relative residual {float(rel.max()):.3e}")


def _stage_for(H: EffectiveChannel, config: OampConfig) -> LinearStage:
    key = (config.le_mode, config.solve_tol, config.n_probes, config.probe_seed)
    stage = H._stage_cache.get(key)
    if stage is None or stage.cfg.cg_max_iters != config.cg_max_iters:
        stage = LinearStage(H, config)
        H._stage_cache[key] = stage
    return stage


def _le_step(s_t, y, H, v_nle_sq, sigma_sq, config, stage, x0=None):
    v_nle_sq = max(v_nle_sq, config.var_floor)
    xi = sigma_sq / v_nle_sq
    rhs = y - H.apply(s_t)
    z, eps, warm = stage.solve_with_eps(rhs, xi, x0)
    r = s_t + H.apply_adjoint(z) / eps
    v_le_sq = max(v_nle_sq * (1.0 / eps - 1.0), config.var_floor)
    return r, v_le_sq, warm


def oamp_le(s_t: np.ndarray, y: np.ndarray, H: EffectiveChannel, v_nle_sq: float,
            sigma_sq: float, config: OampConfig | None = None):
    """De-correlated linear estimate; returns (r_t, v_le_sq)."""
    config = config or OampConfig()
    stage = _stage_for(H, config)
    r, v_le_sq, _ = _le_step(s_t, y, H, v_nle_sq, sigma_sq, config, stage)
    return r, v_le_sq


def oamp_nle(r_t: np.ndarray, v_le_sq: float, constellation,
             var_floor: float = 1e-10, literal_denoiser: bool = False):
    """Posterior-mean denoiser plus divergence-free recentring.

    Returns (s_next, v_nle_sq_next, posterior_means, posterior_var,
    non_contracting); the last entry flags the degenerate case
    v_post >= v_le_sq, where the orthogonalization step is skipped.
    """
    const = constellation if not isinstance(constellation, str) else get_constellation(constellation)
    v = max(v_le_sq, var_floor)
    d2 = np.abs(r_t[:, None] - const.points[None, :]) ** 2
    expo = -(np.sqrt(d2) if literal_denoiser else d2) / v
    expo -= expo.max(axis=1, keepdims=True)
    w = np.exp(expo)
    w /= w.sum(axis=1, keepdims=True)
    post_mean = w @ const.points
    e2 = w @ (np.abs(const.points) ** 2)
    post_var = np.maximum(e2 - np.abs(post_mean) ** 2, 0.0)
    v_post = max(float(post_var.mean()), var_floor)
    if v_post >= v * (1.0 - 1e-12):
        # denoiser did not contract; skip the orthogonalization step
        return post_mean, max(v_post, var_floor), post_mean, post_var, True
    c = v / (v - v_post)
    s_next = c * (post_mean - (v_post / v) * r_t)
    v_next = max(1.0 / (1.0 / v_post - 1.0 / v), var_floor)
    return s_next, v_next, post_mean, post_var, False


def oamp_detect(y: np.ndarray, H: EffectiveChannel, sigma_sq: float,
                config: OampConfig | None = None) -> DetectionResult:
    """Iterate LE/NLE from a zero prior until the variance estimate settles."""
    config = config or OampConfig()
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    const = H.config.constellation_obj
    stage = _stage_for(H, config)
    n = H.config.mn
    if y.shape[0] != n:
        raise ValueError(f"observation length {y.shape[0]} != MN = {n}")
    s_t = np.zeros(n, dtype=complex)
    v_nle_sq = 1.0  # unit-energy constellation prior
    trace = []
    post_mean = s_t
    warm = None
    non_contracting = False
    iterations = 0
    for t in range(config.max_iters):
        iterations = t + 1
        r, v_le_sq, warm = _le_step(s_t, y, H, v_nle_sq, sigma_sq, config, stage, warm)
        s_next, v_next, post_mean, _, flag = oamp_nle(
            r, v_le_sq, const, config.var_floor, config.literal_denoiser)
        non_contracting = non_contracting or flag
        if config.damping < 1.0:
            s_next = config.damping * s_next + (1.0 - config.damping) * s_t
        trace.append((v_le_sq, v_next))
        delta = abs(v_next - v_nle_sq)
        s_t, v_nle_sq = s_next, v_next
        if delta < config.stop_tol:
            break
    hard = const.points[np.abs(post_mean[:, None] - const.points[None, :]).argmin(axis=1)]
    bits = qam_demap(post_mean, const)
    return DetectionResult(soft_symbols=post_mean, hard_symbols=hard, hard_bits=bits,
                           variance_trace=trace, iterations_used=iterations,
                           max_solve_residual=stage.max_residual,
                           non_contracting=non_contracting)


def lmmse_detect(y: np.ndarray, H: EffectiveChannel, sigma_sq: float,
                 config: OampConfig | None = None) -> DetectionResult:
    """One-shot s_hat = H^H (H H^H + sigma^2 I)^{-1} y with hard decisions."""
    config = config or OampConfig()
    const = H.config.constellation_obj
    stage = _stage_for(H, config)
    z = stage.solve(y, sigma_sq)
    soft = H.apply_adjoint(z)
    hard = const.points[np.abs(soft[:, None] - const.points[None, :]).argmin(axis=1)]
    bits = qam_demap(soft, const)
    return DetectionResult(soft_symbols=soft, hard_symbols=hard, hard_bits=bits,
                           variance_trace=[], iterations_used=1,
                           max_solve_residual=stage.max_residual)
