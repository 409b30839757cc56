"""Graph-regularized reconstruction of the user-item matrix.

The reconstruction Y minimizes::

    ||X - Y||_F^2 + alpha * Tr(Y L_c Y^T) + beta * Tr(Y^T L_r Y)

where L_r and L_c are the user and item graph Laplacians. Setting the
gradient to zero gives the Sylvester equation::

    (beta * L_r + I) Y + alpha * Y L_c = X

Both coefficient matrices are symmetric, so the equation diagonalizes in the
two Laplacian eigenbases (``solve_spectral``). ``solve_cg`` is a matrix-free
conjugate-gradient alternative that only needs sparse products.
"""

from __future__ import annotations

import json
import logging
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import InteractionMatrix
from .errors import DataError, NumericalError, SpecError
from .graph import Laplacian

logger = logging.getLogger(__name__)

METHODS = ("spectral", "cg", "auto")
MATRIX_MAGIC = b"GRECMAT1"


@dataclass(frozen=True)
class ModelConfig:
    """Regularization weights and solver settings.

    ``method="auto"`` uses the spectral solver when ``max(m, n)`` is at most
    ``spectral_max_nodes`` and CG otherwise. ``memory_budget`` bounds the
    bytes needed for the dense m x n output (plus eigenvectors for the
    spectral path).
    """

    alpha: float = 0.0
    beta: float = 0.0
    method: str = "auto"
    cg_tol: float = 1e-10
    cg_max_iter: int = 1000
    spectral_max_nodes: int = 4000
    memory_budget: float = 4 * 2**30

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise SpecError(f"alpha and beta must be nonnegative, got alpha={self.alpha}, beta={self.beta}")
        if not self.cg_tol > 0:
            raise SpecError(f"cg_tol must be positive, got {self.cg_tol}")
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.cg_max_iter < 0:
            raise SpecError("cg_max_iter must be nonnegative")


@dataclass(frozen=True, eq=False)
class ReconstructedMatrix:
    """Dense solution Y plus solve diagnostics."""

    Y: np.ndarray
    config: ModelConfig
    residual_fro: float
    objective: float
    solve_seconds: float
    method_used: str
    iterations: int = 0
    converged: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    def diagnostics(self) -> dict:
        return {
            "config": asdict(self.config),
            "shape": list(self.Y.shape),
            "residual_fro": self.residual_fro,
            "objective": self.objective,
            "solve_seconds": self.solve_seconds,
            "method_used": self.method_used,
            "iterations": self.iterations,
            "converged": self.converged,
            "meta": self.meta,
        }


def _dense(X) -> np.ndarray:
    if isinstance(X, InteractionMatrix):
        return X.toarray()
    if sp.issparse(X):
        return X.toarray()
    return np.asarray(X, dtype=np.float64)


def _lap_matrix(L, n: int, name: str):
    if L is None:
        return None
    M = L.matrix if isinstance(L, Laplacian) else L
    if M.shape != (n, n):
        raise ValueError(f"{name} has shape {M.shape}, expected ({n}, {n})")
    return M


def _apply(Y: np.ndarray, Lr, Lc, alpha: float, beta: float) -> np.ndarray:
    """The Sylvester operator (beta L_r + I) Y + alpha Y L_c."""
    out = Y.copy()
    if beta and Lr is not None:
        out += beta * np.asarray(Lr @ Y)
    if alpha and Lc is not None:
        # L_c is symmetric: Y L_c = (L_c Y^T)^T keeps the sparse operand on the left
        out += alpha * np.asarray(Lc @ Y.T).T
    return out


def objective(X, Y, L_r, L_c, cfg: ModelConfig) -> float:
    """``||X - Y||_F^2 + alpha Tr(Y L_c Y^T) + beta Tr(Y^T L_r Y)``."""
    Xd = _dense(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Xd.shape != Y.shape:
        raise ValueError(f"X has shape {Xd.shape} but Y has shape {Y.shape}")
    m, n = Y.shape
    Lr = _lap_matrix(L_r, m, "L_r")
    Lc = _lap_matrix(L_c, n, "L_c")
    val = float(np.sum((Xd - Y) ** 2))
    if cfg.alpha and Lc is not None:
        val += cfg.alpha * float(np.sum(np.asarray(Lc @ Y.T).T * Y))
    if cfg.beta and Lr is not None:
        val += cfg.beta * float(np.sum(np.asarray(Lr @ Y) * Y))
    return val


def gradient(X, Y, L_r, L_c, cfg: ModelConfig) -> np.ndarray:
    """Gradient of :func:`objective` with respect to Y."""
    Xd = _dense(X)
    m, n = Xd.shape
    Lr = _lap_matrix(L_r, m, "L_r")
    Lc = _lap_matrix(L_c, n, "L_c")
    return 2.0 * (_apply(np.asarray(Y, dtype=np.float64), Lr, Lc, cfg.alpha, cfg.beta) - Xd)


def residual(X, Y, L_r, L_c, cfg: ModelConfig) -> float:
    """Frobenius norm of ``(beta L_r + I) Y + alpha Y L_c - X``."""
    Xd = _dense(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Xd.shape != Y.shape:
        raise ValueError(f"X has shape {Xd.shape} but Y has shape {Y.shape}")
    m, n = Y.shape
    Lr = _lap_matrix(L_r, m, "L_r")
    Lc = _lap_matrix(L_c, n, "L_c")
    return float(np.linalg.norm(_apply(Y, Lr, Lc, cfg.alpha, cfg.beta) - Xd))


def _check_memory(m: int, n: int, cfg: ModelConfig, spectral: bool):
    need = 8.0 * m * n * (3 if spectral else 5)
    if spectral:
        need += 8.0 * (m * m + n * n)
    if need > cfg.memory_budget:
        raise NumericalError(
            f"solve for {m}x{n} needs ~{need / 2**30:.2f} GiB, over the budget of {cfg.memory_budget / 2**30:.2f} GiB"
        )


def _finish(X, Y, L_r, L_c, cfg, method, t0, **kw) -> ReconstructedMatrix:
    return ReconstructedMatrix(
        Y=Y,
        config=cfg,
        residual_fro=residual(X, Y, L_r, L_c, cfg),
        objective=objective(X, Y, L_r, L_c, cfg),
        solve_seconds=time.perf_counter() - t0,
        method_used=method,
        **kw,
    )


def solve_spectral(X, L_r: Laplacian | None, L_c: Laplacian | None, cfg: ModelConfig) -> ReconstructedMatrix:
    """Closed-form solve in the eigenbases of both Laplacians.

    With ``L_r = Q_r diag(lr) Q_r^T`` and ``L_c = Q_c diag(lc) Q_c^T``::

        Y = Q_r [ (Q_r^T X Q_c)_ij / (1 + beta lr_i + alpha lc_j) ] Q_c^T

    Every denominator is at least 1. A side whose weight is zero is skipped
    entirely, so its Laplacian may be None or lack a spectrum; with both
    weights zero the result is X itself.
    """
    t0 = time.perf_counter()
    Xd = _dense(X)
    m, n = Xd.shape
    _lap_matrix(L_r, m, "L_r")
    _lap_matrix(L_c, n, "L_c")
    use_r = cfg.beta > 0
    use_c = cfg.alpha > 0
    for use, L, name in ((use_r, L_r, "L_r"), (use_c, L_c, "L_c")):
        if use and (L is None or not isinstance(L, Laplacian) or not L.has_spectrum):
            raise ValueError(f"{name} needs a cached spectrum for the spectral solver")
    _check_memory(m, n, cfg, spectral=True)

    T = Xd
    if use_r:
        T = L_r.eigenvectors.T @ T
    if use_c:
        T = T @ L_c.eigenvectors
    denom = np.ones((m, n))
    if use_r:
        denom = denom + cfg.beta * L_r.eigenvalues[:, None]
    if use_c:
        denom = denom + cfg.alpha * L_c.eigenvalues[None, :]
    assert denom.min() >= 1.0
    T = T / denom
    if use_r:
        T = L_r.eigenvectors @ T
    if use_c:
        T = T @ L_c.eigenvectors.T
    Y = T.copy() if T is Xd else np.ascontiguousarray(T)
    return _finish(X, Y, L_r, L_c, cfg, "spectral", t0)


def solve_cg(X, L_r, L_c, cfg: ModelConfig) -> ReconstructedMatrix:
    """Matrix-free conjugate gradient on the Sylvester operator.

    The operator is symmetric positive definite with eigenvalues at least 1.
    Iteration starts from Y0 = X and stops once the residual drops to
    ``cg_tol * ||X||_F``. If ``cg_max_iter`` is exhausted the best iterate is
    returned with ``converged=False`` and a warning.
    """
    t0 = time.perf_counter()
    Xd = _dense(X)
    m, n = Xd.shape
    Lr = _lap_matrix(L_r, m, "L_r")
    Lc = _lap_matrix(L_c, n, "L_c")
    if Lr is not None:
        Lr = sp.csr_matrix(Lr)
    if Lc is not None:
        Lc = sp.csr_matrix(Lc)
    _check_memory(m, n, cfg, spectral=False)

    target = cfg.cg_tol * np.linalg.norm(Xd)
    Y = Xd.copy()
    R = Xd - _apply(Y, Lr, Lc, cfg.alpha, cfg.beta)
    rr = float(np.vdot(R, R))
    best_Y, best_res = Y.copy(), np.sqrt(rr)
    P = R.copy()
    it = 0
    while np.sqrt(rr) > target and it < cfg.cg_max_iter:
        AP = _apply(P, Lr, Lc, cfg.alpha, cfg.beta)
        step = rr / float(np.vdot(P, AP))
        Y += step * P
        R -= step * AP
        rr_new = float(np.vdot(R, R))
        it += 1
        if np.sqrt(rr_new) < best_res:
            best_Y, best_res = Y.copy(), np.sqrt(rr_new)
        P = R + (rr_new / rr) * P
        rr = rr_new
    converged = bool(best_res <= target)
    if not converged:
        warnings.warn(
            f"CG stopped after {it} iterations with relative residual "
            f"{best_res / max(np.linalg.norm(Xd), 1e-300):.3e} > {cfg.cg_tol:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return _finish(X, best_Y, L_r, L_c, cfg, "cg", t0, iterations=it, converged=converged)


def solve(X, L_r: Laplacian | None, L_c: Laplacian | None, cfg: ModelConfig) -> ReconstructedMatrix:
    """Dispatch on ``cfg.method``; computes Laplacian spectra when needed."""
    m, n = X.shape
    method = cfg.method
    if method == "auto":
        method = "spectral" if max(m, n) <= cfg.spectral_max_nodes else "cg"
    if method == "cg":
        return solve_cg(X, L_r, L_c, cfg)
    if cfg.beta > 0 and L_r is not None:
        L_r = L_r.with_spectrum()
    if cfg.alpha > 0 and L_c is not None:
        L_c = L_c.with_spectrum()
    return solve_spectral(X, L_r, L_c, cfg)


def save_reconstruction(rec: ReconstructedMatrix, path: str | Path, extra: dict | None = None) -> Path:
    """Write Y as a binary file plus a ``<path>.json`` sidecar.

    Layout: 8-byte magic ``GRECMAT1``, little-endian uint64 m, uint64 n,
    uint32 element width (8), then m*n float64 values in row-major order.
    """
    path = Path(path)
    m, n = rec.Y.shape
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQI", m, n, 8))
        fh.write(np.ascontiguousarray(rec.Y, dtype="<f8").tobytes())
    sidecar = Path(str(path) + ".json")
    info = rec.diagnostics()
    if extra:
        info.update(extra)
    sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_reconstruction(path: str | Path) -> ReconstructedMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise DataError(f"{path}: not a reconstructed-matrix file")
        m, n, width = struct.unpack("<QQI", fh.read(20))
        if width != 8:
            raise DataError(f"{path}: unsupported element width {width}")
        buf = fh.read()
    if len(buf) != 8 * m * n:
        raise DataError(f"{path}: truncated payload ({len(buf)} bytes for {m}x{n})")
    Y = np.frombuffer(buf, dtype="<f8").reshape(m, n).astype(np.float64)
    sidecar = Path(str(path) + ".json")
    info = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    cfg = ModelConfig(**info["config"]) if "config" in info else ModelConfig()
    return ReconstructedMatrix(
        Y=Y,
        config=cfg,
        residual_fro=info.get("residual_fro", float("nan")),
        objective=info.get("objective", float("nan")),
        solve_seconds=info.get("solve_seconds", float("nan")),
        method_used=info.get("method_used", "unknown"),
        iterations=info.get("iterations", 0),
        converged=info.get("converged", True),
        meta=info.get("meta", {}),
    )
