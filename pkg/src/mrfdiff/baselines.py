"""Gridding (SVDMRF) and TV-regularized compressed-sensing (LRTV) reconstructions."""

import logging
from dataclasses import dataclass

import numpy as np

from .acquire import NormalOperator, adjoint
from .train import from_channels, to_channels

log = logging.getLogger(__name__)


@dataclass
class LrtvConfig:
    tv_weight: float = 1e-3
    max_iters: int = 100
    step_size: float = 0.0  # 0 -> 1/L from power iteration
    tol: float = 1e-6
    inner_iters: int = 20
    power_iters: int = 30


def svdmrf(y, basis):
    """Non-iterative gridding reconstruction; identical to the adjoint."""
    return adjoint(y, basis)


def power_iteration(op, shape, n_iter=30, seed=0):
    """Largest eigenvalue of a Hermitian PSD operator (here A^H A), padded by 1%."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        ax = op(x)
        lam = float(np.real(np.vdot(x, ax)))
        nrm = np.linalg.norm(ax)
        if nrm == 0:
            return 0.0
        x = ax / nrm
    return 1.01 * max(lam, float(np.linalg.norm(op(x))))


def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    gy[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    return gx, gy


def _div(px, py):
    """Negative adjoint of _grad."""
    dx = np.zeros_like(px)
    dy = np.zeros_like(py)
    dx[..., :, 0] = px[..., :, 0]
    dx[..., :, 1:-1] = px[..., :, 1:-1] - px[..., :, :-2]
    dx[..., :, -1] = -px[..., :, -2]
    dy[..., 0, :] = py[..., 0, :]
    dy[..., 1:-1, :] = py[..., 1:-1, :] - py[..., :-2, :]
    dy[..., -1, :] = -py[..., -2, :]
    return dx + dy


def tv(u):
    """Isotropic total variation summed over leading (channel) axes of a real array."""
    gx, gy = _grad(u)
    return float(np.sum(np.sqrt(gx ** 2 + gy ** 2)))


def tv_prox(b, weight, n_iter=20, dual=None):
    """argmin_u 0.5 |u - b|^2 + weight * TV(u) by dual projection, per real plane.

    Returns (u, dual) so callers can warm start.
    """
    if weight <= 0:
        return b.copy(), dual
    px, py = (np.zeros_like(b), np.zeros_like(b)) if dual is None else dual
    tau = 0.125
    for _ in range(n_iter):
        gx, gy = _grad(_div(px, py) - b / weight)
        nrm = np.sqrt(gx ** 2 + gy ** 2)
        px = (px + tau * gx) / (1 + tau * nrm)
        py = (py + tau * gy) / (1 + tau * nrm)
    return b - weight * _div(px, py), (px, py)


def lrtv(y, basis, cfg=None, x0=None, trace=None):
    """Minimize 0.5 |A x - y|^2 + tv_weight * TV(x) over the compressed timeseries.

    Monotone FISTA with step 1/L; TV is isotropic per real channel plane. When
    ``trace`` is a list, accepted objective values are appended to it.
    """
    cfg = cfg or LrtvConfig()
    if cfg.tv_weight < 0 or cfg.max_iters < 1:
        raise ValueError("need tv_weight >= 0 and max_iters >= 1")
    normal = NormalOperator(basis, y.coils, y.pattern)
    aty = adjoint(y, basis)
    yy = float(np.vdot(y.data, y.data).real)
    L = 1.0 / cfg.step_size if cfg.step_size > 0 else power_iteration(normal, aty.shape, cfg.power_iters)

    def objective(x, ax):
        fid = 0.5 * float(np.vdot(x, ax).real) - float(np.vdot(x, aty).real) + 0.5 * yy
        return fid + cfg.tv_weight * tv(to_channels(x))

    x = np.zeros_like(aty) if x0 is None else np.asarray(x0, complex).copy()
    ax = normal(x)
    f_x = objective(x, ax)
    z, az = x, ax
    t = 1.0
    dual = None
    for it in range(cfg.max_iters):
        g = z - (az - aty) / L
        u_ch, dual = tv_prox(to_channels(g), cfg.tv_weight / L, cfg.inner_iters, dual)
        u = from_channels(u_ch)
        au = normal(u)
        f_u = objective(u, au)
        if not np.isfinite(f_u):
            raise FloatingPointError(f"LRTV diverged at iteration {it}")
        if f_u > f_x:
            # restart momentum from the last accepted iterate
            z, az, t = x, ax, 1.0
            rel = 0.0
        else:
            t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
            z = u + ((t - 1) / t_new) * (u - x)
            az = au + ((t - 1) / t_new) * (au - ax)
            rel = (f_x - f_u) / max(abs(f_x), 1e-30)
            x, ax, f_x, t = u, au, f_u, t_new
        if trace is not None:
            trace.append(f_x)
        if 0 < rel < cfg.tol:
            break
    return x
