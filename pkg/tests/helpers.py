"""Independent oracles shared by the test suite.

Everything here is deliberately implemented without touching the package's
fast paths: finite differences instead of the tape, quadrature instead of
the closed-form KL, and from-scratch posterior products for reward
enumeration.
"""

from __future__ import annotations

import numpy as np


def finite_difference_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-6) -> float:
    """max |a - n| / max(|n|, floor) over all coordinates."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(numeric), floor)
    return float((diff / scale).max())


def kl_quadrature_1d(mu1: float, var1: float, mu2: float, var2: float,
                     n: int = 200_001, width: float = 12.0) -> float:
    """KL(N1 || N2) for 1-D Gaussians via trapezoid integration of p log(p/q)."""
    sd1 = np.sqrt(var1)
    lo = mu1 - width * sd1
    hi = mu1 + width * sd1
    x = np.linspace(lo, hi, n)
    logp = -0.5 * np.log(2 * np.pi * var1) - (x - mu1) ** 2 / (2 * var1)
    logq = -0.5 * np.log(2 * np.pi * var2) - (x - mu2) ** 2 / (2 * var2)
    integrand = np.exp(logp) * (logp - logq)
    return float(np.trapezoid(integrand, x))


def brute_force_reward(vae_model, n_symptoms: int, n_diseases: int,
                       evidence: dict, s: int, p_pos: float,
                       pd_pos: np.ndarray, pd_neg: np.ndarray | None) -> float:
    """Direct enumeration of the information reward over all 2*|D| combos.

    Every posterior is built from scratch with the public product/KL ops —
    no accumulator caching — and the full double sum is taken.  The answer
    probability and disease factors are inputs: they are the probabilistic
    weights of the enumeration, not part of it.
    """
    from symcheck.vae import gaussian_kl, poe_product, standard_prior

    prior = standard_prior(vae_model.latent_dim)
    base_experts = [vae_model.expert(f, v) for f, v in sorted(evidence.items())]
    q_o = poe_product(base_experts, prior)
    arms = [(1, p_pos, pd_pos)]
    if pd_neg is not None:
        arms.append((0, 1.0 - p_pos, pd_neg))
    total = 0.0
    for value, p_value, p_d in arms:
        q_os = poe_product(base_experts + [vae_model.expert(s, value)], prior)
        kl_gain = gaussian_kl(q_os, q_o)
        for d in range(n_diseases):
            fd = n_symptoms + d
            q_od = poe_product(base_experts + [vae_model.expert(fd, 1)], prior)
            q_osd = poe_product(
                base_experts + [vae_model.expert(s, value), vae_model.expert(fd, 1)],
                prior)
            kl_penalty = gaussian_kl(q_osd, q_od)
            total += p_value * float(p_d[d]) * (kl_gain - kl_penalty)
    return total
