"""Diffusion schedule, forward corruption, learned-variance reverse step and hybrid loss.

Timesteps are one-based, t = 1..T, with the convention alpha_bar(0) = 1. Schedule
arrays are stored zero-based (index t - 1) in float64.
"""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray

    @property
    def T(self):
        return self.beta.size

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def alpha_bar(self):
        return np.cumprod(self.alpha)

    @property
    def posterior_beta_tilde(self):
        ab = self.alpha_bar
        prev = np.concatenate([[1.0], ab[:-1]])
        return (1.0 - prev) / (1.0 - ab) * self.beta

    def alpha_bar_at(self, t):
        """alpha_bar for one-based t (scalar or array), with alpha_bar(0) = 1."""
        t = np.asarray(t)
        ab = np.concatenate([[1.0], self.alpha_bar])
        return ab[t]

    def to_meta(self):
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def q_sample(x0, t, eps, sched):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def spaced_timesteps(T, K):
    """(t, t_next) pairs for k = K..1 with t = (k-1) T/K + 1."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    if T % K:
        raise ValueError(f"K={K} does not divide T={T}")
    g = T // K
    return [((k - 1) * g + 1, (k - 2) * g + 1 if k > 1 else 0) for k in range(K, 0, -1)]


def step_coefficients(sched, t, t_next):
    """Variance-schedule terms for the jump t -> t_next.

    Returns (alpha, alpha_bar_t, beta, log_beta_tilde) where alpha and beta are the
    jump's effective per-step values. When t_next = 0 the posterior variance is
    zero; its log is clipped to the value of the jump one gap above, as in the
    learned-variance reference implementation.
    """
    t = np.asarray(t)
    t_next = np.asarray(t_next)
    if np.any(t_next >= t):
        raise ValueError("t_next must be smaller than t")
    ab_t = sched.alpha_bar_at(t)
    ab_n = sched.alpha_bar_at(t_next)
    alpha = ab_t / ab_n
    beta = 1.0 - alpha
    bt = (1.0 - ab_n) / (1.0 - ab_t) * beta
    # clip the zero posterior variance at t_next = 0
    t_up = np.minimum(2 * t - t_next, sched.T)
    ab_up = sched.alpha_bar_at(t_up)
    bt_up = np.where(t_up > t, (1.0 - ab_t) / (1.0 - ab_up) * (1.0 - ab_up / ab_t), beta)
    bt = np.where(t_next == 0, bt_up, bt)
    return alpha, ab_t, beta, np.log(bt)


def p_mean_logvar(x_t, eps_hat, v_hat, t, t_next, sched, learn_sigma=True, clip=None):
    """Reverse-jump mean and log-variance.

    Without ``clip`` the mean is the epsilon form. With it, x0_hat is clamped to
    [-clip, clip] and pushed through the posterior q(x_next | x_t, x0_hat); the two
    agree whenever the clamp is inactive.
    """
    alpha, ab_t, beta, log_bt = step_coefficients(sched, t, t_next)
    if clip is None:
        mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha)
    else:
        ab_n = ab_t / alpha
        x0 = np.clip((x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t), -clip, clip)
        mean = (np.sqrt(ab_n) * beta * x0 + np.sqrt(alpha) * (1.0 - ab_n) * x_t) / (1.0 - ab_t)
    if learn_sigma:
        v = np.clip(v_hat, 0.0, 1.0)
        logvar = v * np.log(beta) + (1.0 - v) * log_bt
    else:
        logvar = np.broadcast_to(log_bt, np.shape(x_t))
    return mean, logvar


def p_step(x_t, eps_hat, v_hat, t, t_next, z, sched, learn_sigma=True, clip=None):
    """One reverse jump: posterior mean from eps_hat plus sigma * z.

    sigma^2 = exp(v log beta + (1 - v) log beta_tilde), both on the spaced jump.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if np.shape(eps_hat) != x_t.shape or np.shape(z) != x_t.shape:
        raise ValueError("x_t, eps_hat and z must share one shape")
    if t_next >= t:
        raise ValueError("t_next must be smaller than t")
    mean, logvar = p_mean_logvar(x_t, np.asarray(eps_hat, np.float64), np.asarray(v_hat, np.float64),
                                 t, t_next, sched, learn_sigma, clip)
    return mean + np.exp(0.5 * logvar) * z


def gaussian_kl(mean1, logvar1, mean2, logvar2):
    """KL(N(mean1, e^logvar1) || N(mean2, e^logvar2)), elementwise; works on numpy or torch."""
    lib = torch if isinstance(mean1, torch.Tensor) else np
    return 0.5 * (-1.0 + logvar2 - logvar1 + lib.exp(logvar1 - logvar2)
                  + (mean1 - mean2) ** 2 * lib.exp(-logvar2))


def _per_sample(vals, like):
    arr = torch.as_tensor(np.asarray(vals, dtype=np.float64), dtype=like.dtype)
    return arr.reshape((-1,) + (1,) * (like.dim() - 1))


def hybrid_loss(eps, eps_hat, v_hat, x0, x_t, t, lam, sched, learn_sigma=True):
    """L_eps + lam * L_sigma on torch batches (leading batch axis, t one per sample).

    L_sigma is the KL between the true posterior q(x_{t-1} | x_t, x0) and the model
    Gaussian, with the predicted mean detached so it trains the variance only.
    Returns (total, l_eps, l_sigma).
    """
    if not (eps.shape == eps_hat.shape == x0.shape == x_t.shape):
        raise ValueError("eps, eps_hat, x0 and x_t must share one shape")
    if learn_sigma and v_hat.shape != eps_hat.shape:
        raise ValueError("v_hat must match eps_hat")
    l_eps = torch.mean((eps - eps_hat) ** 2)
    if not learn_sigma or lam == 0:
        return l_eps, l_eps, torch.zeros((), dtype=l_eps.dtype)
    t = np.atleast_1d(np.asarray(t))
    alpha, ab_t, beta, log_bt = step_coefficients(sched, t, t - 1)
    ab_prev = sched.alpha_bar_at(t - 1)
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    like = x0
    true_mean = _per_sample(c0, like) * x0 + _per_sample(ct, like) * x_t
    true_logvar = _per_sample(log_bt, like)
    model_mean = (x_t - _per_sample((1.0 - alpha) / np.sqrt(1.0 - ab_t), like) * eps_hat.detach()) \
        / _per_sample(np.sqrt(alpha), like)
    v = torch.clamp(v_hat, 0.0, 1.0)
    model_logvar = v * _per_sample(np.log(beta), like) + (1.0 - v) * true_logvar
    l_sigma = torch.mean(gaussian_kl(true_mean, true_logvar.expand_as(model_logvar), model_mean, model_logvar))
    return l_eps + lam * l_sigma, l_eps, l_sigma
