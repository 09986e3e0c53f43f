"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np

from anisns.dynamics import IntegratorConfig, integrate_deterministic, integrate_primal
from anisns.noise import WienerPath
from anisns.spectral import weighted_sq


def observed_orders(errors):
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


def deterministic_errors(u0, T, dt, levels=3, ref_factor=64):
    """Terminal H errors at dt, dt/2, ... against a dt/ref_factor run."""
    ref = integrate_deterministic(u0, IntegratorConfig(dt / ref_factor, T, record_every=10**9)).final
    errs = []
    for i in range(levels):
        cfg = IntegratorConfig(dt / 2**i, T, record_every=10**9)
        x = integrate_deterministic(u0, cfg).final
        errs.append(math.sqrt(weighted_sq(u0.grid, x - ref)))
    return errs


def stochastic_errors(u0, eps, noise, T, dt, seeds, levels=3, ref_factor=64):
    """RMS terminal errors with frozen increments: coarse paths are block sums of the fine one."""
    n_fine = int(round(T / (dt / ref_factor)))
    sq = np.zeros(levels)
    for s in seeds:
        fine = WienerPath.generate(s, dt / ref_factor, noise.J, n_fine)
        ref = integrate_primal(u0, eps, noise, fine, IntegratorConfig(fine.dt, T, record_every=10**9)).final
        for i in range(levels):
            path = fine.coarsen(ref_factor // 2**i)
            x = integrate_primal(u0, eps, noise, path, IntegratorConfig(path.dt, T, record_every=10**9)).final
            sq[i] += weighted_sq(u0.grid, x - ref)
    return list(np.sqrt(sq / len(seeds)))


def ou_second_moment(q, k1, t):
    """E |q int_0^t exp(-k1^2 (t - s)) dW_s|^2."""
    if k1 == 0:
        return q * q * t
    return q * q * (1 - math.exp(-2 * k1 * k1 * t)) / (2 * k1 * k1)


def skeleton_mode(q, phi, k1, t):
    """Solution of x' = -k1^2 x + q phi, x(0) = 0."""
    if k1 == 0:
        return q * phi * t
    return q * phi * (1 - math.exp(-k1 * k1 * t)) / (k1 * k1)


def fitted_order(errors):
    """Least-squares slope of -log2(error) against refinement level."""
    lv = np.arange(len(errors))
    return float(-np.polyfit(lv, np.log2(errors), 1)[0])
