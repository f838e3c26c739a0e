"""Reconstruction loss, opacity priors and the KL term.

Each loss has a plain function returning its value and a `*_grad`
companion returning the gradient w.r.t. its array inputs; `record_*`
variants put the same computation on a tape as scalar nodes.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from volfit.core.autodiff import Tape
from volfit.core.errors import ShapeError
from volfit.schemas.config import LossWeights


@dataclass
class LossTerms:
    mse: float = 0.0
    kl: float = 0.0
    tv: float = 0.0
    beta: float = 0.0
    total: float = 0.0

    def __add__(self, other: "LossTerms") -> "LossTerms":
        return LossTerms(self.mse + other.mse, self.kl + other.kl, self.tv + other.tv,
                         self.beta + other.beta, self.total + other.total)

    def scaled(self, factor: float) -> "LossTerms":
        return LossTerms(self.mse * factor, self.kl * factor, self.tv * factor,
                         self.beta * factor, self.total * factor)

    def format_line(self, step: int) -> str:
        return f"{step} {self.mse:.9e} {self.kl:.9e} {self.tv:.9e} {self.beta:.9e} {self.total:.9e}"


# --- Reconstruction ---

def mse_loss(rendered: np.ndarray, target: np.ndarray) -> float:
    """(1/P) Σ_p ||Î(p) - I*(p)||², channels summed inside the norm"""
    rendered, target = np.asarray(rendered), np.asarray(target)
    if rendered.shape != target.shape:
        raise ShapeError(f"Rendered pixels {rendered.shape} do not match targets {target.shape}")
    diff = (rendered - target).reshape(-1, rendered.shape[-1])
    return float(np.sum(diff * diff) / len(diff))


def mse_loss_grad(rendered: np.ndarray, target: np.ndarray) -> np.ndarray:
    rendered, target = np.asarray(rendered), np.asarray(target)
    pixels = int(np.prod(rendered.shape[:-1]))
    return 2.0 * (rendered - target) / pixels


# --- Total variation of log opacity ---

def _log_differences(alpha: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences of log(max(α, ε)) along (x, y, z) = axes (2, 1, 0); zero at the + boundary"""
    log_alpha = np.log(np.maximum(alpha, eps))
    diffs = np.zeros((3,) + alpha.shape, dtype=alpha.dtype)
    diffs[0, :, :, :-1] = log_alpha[:, :, 1:] - log_alpha[:, :, :-1]
    diffs[1, :, :-1, :] = log_alpha[:, 1:, :] - log_alpha[:, :-1, :]
    diffs[2, :-1, :, :] = log_alpha[1:, :, :] - log_alpha[:-1, :, :]
    return diffs, np.sqrt(np.sum(diffs * diffs, axis=0))


def tv_log_prior(alpha: np.ndarray, lambda_tv: float = 0.01, eps: float = 1e-5) -> float:
    """(1/N) Σ_voxels λ_tv ||∇ log(max(V_α, ε))|| over a (D, D, D) opacity grid"""
    alpha = np.asarray(alpha)
    if alpha.ndim != 3:
        raise ShapeError(f"Opacity grid must be D x D x D, got {alpha.shape}")
    _, norms = _log_differences(alpha, eps)
    return float(lambda_tv * np.sum(norms) / alpha.size)


def tv_log_prior_grad(alpha: np.ndarray, lambda_tv: float = 0.01, eps: float = 1e-5) -> np.ndarray:
    alpha = np.asarray(alpha)
    diffs, norms = _log_differences(alpha, eps)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms > 0, diffs / safe, 0.0) * (lambda_tv / alpha.size)

    grad_log = np.zeros_like(alpha)
    grad_log[:, :, 1:] += unit[0, :, :, :-1]
    grad_log[:, :, :-1] -= unit[0, :, :, :-1]
    grad_log[:, 1:, :] += unit[1, :, :-1, :]
    grad_log[:, :-1, :] -= unit[1, :, :-1, :]
    grad_log[1:, :, :] += unit[2, :-1, :, :]
    grad_log[:-1, :, :] -= unit[2, :-1, :, :]
    above = alpha > eps
    return np.where(above, grad_log / np.where(above, alpha, 1.0), 0.0).astype(alpha.dtype)


# --- Beta prior on exit opacities ---

def beta_prior(alpha: np.ndarray, lambda_b: float = 0.1, eps: float = 1e-5) -> float:
    """(1/P) Σ_p λ_B [log(a) + log(1 - a)], a = clamp(I_α, ε, 1 - ε)"""
    a = np.clip(np.asarray(alpha, dtype=np.float64), eps, 1.0 - eps)
    return float(lambda_b * np.sum(np.log(a) + np.log(1.0 - a)) / a.size)


def beta_prior_grad(alpha: np.ndarray, lambda_b: float = 0.1, eps: float = 1e-5) -> np.ndarray:
    alpha = np.asarray(alpha)
    inside = (alpha > eps) & (alpha < 1.0 - eps)
    a = np.clip(alpha, eps, 1.0 - eps)
    grad = lambda_b * (1.0 / a - 1.0 / (1.0 - a)) / alpha.size
    return np.where(inside, grad, 0.0).astype(alpha.dtype)


# --- KL ---

def kl_normal(mean: np.ndarray, log_std: np.ndarray) -> float:
    """Σ_i ½(μ_i² + σ_i² - 1 - 2 log σ_i)"""
    mean, log_std = np.asarray(mean), np.asarray(log_std)
    if mean.shape != log_std.shape:
        raise ShapeError(f"Latent mean {mean.shape} and log-std {log_std.shape} differ in shape")
    return float(0.5 * np.sum(mean * mean + np.exp(2.0 * log_std) - 1.0 - 2.0 * log_std))


def kl_normal_grad(mean: np.ndarray, log_std: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean, log_std = np.asarray(mean), np.asarray(log_std)
    return mean.copy(), np.exp(2.0 * log_std) - 1.0


def total_loss(mse: float, kl: float, tv: float, beta: float, weights: LossWeights) -> float:
    """mse + λ_KL kl + tv + beta; tv and beta already carry their weights"""
    return mse + weights.lambda_kl * kl + tv + beta


# --- Taped variants ---

def _scalar(tape: Tape, value: float) -> np.ndarray:
    return np.asarray(value, dtype=tape.dtype)


def record_mse(tape: Tape, out: str, rendered: str, target: np.ndarray) -> float:
    value = mse_loss(tape.values[rendered], target)
    grad = mse_loss_grad(tape.values[rendered], target)

    def vjp(g):
        return (g * grad,)

    tape.record((rendered,), {out: _scalar(tape, value)}, vjp)
    return value


def record_tv(tape: Tape, out: str, template: str, weights: LossWeights) -> float:
    """TV prior on the α channel of a decoded template (4, D, D, D)"""
    grid = tape.values[template]
    value = tv_log_prior(grid[3], weights.lambda_tv, weights.eps_tv)
    grad_alpha = tv_log_prior_grad(grid[3], weights.lambda_tv, weights.eps_tv)

    def vjp(g):
        full = np.zeros_like(grid)
        full[3] = g * grad_alpha
        return (full,)

    tape.record((template,), {out: _scalar(tape, value)}, vjp)
    return value


def record_beta(tape: Tape, out: str, alpha: str, weights: LossWeights) -> float:
    value = beta_prior(tape.values[alpha], weights.lambda_beta, weights.eps_beta)
    grad = beta_prior_grad(tape.values[alpha], weights.lambda_beta, weights.eps_beta)

    def vjp(g):
        return (g * grad,)

    tape.record((alpha,), {out: _scalar(tape, value)}, vjp)
    return value


def record_kl(tape: Tape, out: str, mean: str, log_std: str) -> float:
    value = kl_normal(tape.values[mean], tape.values[log_std])
    grad_mean, grad_log_std = kl_normal_grad(tape.values[mean], tape.values[log_std])

    def vjp(g):
        return g * grad_mean, g * grad_log_std

    tape.record((mean, log_std), {out: _scalar(tape, value)}, vjp)
    return value


def record_total(tape: Tape, out: str, terms: dict, weights: LossWeights,
                 kl: Optional[str] = None) -> float:
    """Weighted sum of recorded scalar terms {"mse": name, "tv": name, "beta": name}, plus λ_KL kl"""
    names = [name for name in (terms.get("mse"), terms.get("tv"), terms.get("beta")) if name is not None]
    factors = [1.0] * len(names)
    if kl is not None:
        names.append(kl)
        factors.append(weights.lambda_kl)
    value = float(sum(f * float(tape.values[name]) for f, name in zip(factors, names)))

    def vjp(g):
        return tuple(f * g for f in factors)

    tape.record(tuple(names), {out: _scalar(tape, value)}, vjp)
    return value
