"""Small reference problems with known structure or closed-form values.

Each builder returns ``(problem, levy)``; grids are built by the caller.
"""
import math

import numpy as np

from . import catalogue as cat
from .levy import LevyModel
from .problem import Domain, Elliptic, Parabolic, Problem


def _problem(horizon, d, mu, sigma, f, g, impulse, S, B=(0.0,), growth_p=0.0,
             ell=None, name="toy", static=True, dim_z=1):
    Z, Gamma, K, k0 = impulse
    return Problem(horizon=horizon, dim_x=d, mu=mu, sigma=sigma, f=f, g=g, K=K,
                   Gamma=Gamma, Z=Z, B=np.asarray(B, dtype=float), S=S,
                   growth_p=growth_p, ell=ell, fixed_cost=k0, name=name,
                   static_payoff=static, dim_z=dim_z)


def frozen(T=2.0, c=1.0, L=1.0):
    """No motion, running profit c, no exit payoff: v(t, x) = c (T - t)."""
    return _problem(Parabolic(T), 1, cat.drift_constant(0.0, 1), cat.vol_constant(0.0, 1),
                    cat.running_constant(c), cat.terminal_constant(0.0),
                    cat.impulse_none(1), Domain.whole(-L, L), name="frozen"), LevyModel()


def heat(T=1.0, vol=1.0, width=0.5, L=6.0):
    """Brownian motion, Gaussian exit payoff, nothing else."""
    s2 = width ** 2

    def g(t, x):
        return np.exp(-0.5 * x[:, 0] ** 2 / s2)

    p = _problem(Parabolic(T), 1, cat.drift_constant(0.0, 1), cat.vol_constant(vol, 1),
                 cat.running_constant(0.0), g, cat.impulse_none(1), Domain.whole(-L, L),
                 name="heat")
    return p, LevyModel()


def heat_exact(t, x, T=1.0, vol=1.0, width=0.5):
    """Gaussian convolution of the heat toy's payoff."""
    v = width ** 2 + vol ** 2 * (T - t)
    return width / np.sqrt(v) * np.exp(-0.5 * np.asarray(x) ** 2 / v)


def constant_elliptic(rho=1.0, c=1.0, L=2.0):
    """Brownian motion, running profit c, discount rho: v = c / rho."""
    p = _problem(Elliptic(rho), 1, cat.drift_constant(0.0, 1), cat.vol_constant(1.0, 1),
                 cat.running_constant(c), cat.terminal_constant(0.0), cat.impulse_none(1),
                 Domain.whole(-L, L), name="constant-elliptic")
    return p, LevyModel()


def exchange_rate_band(T=1.0, k0=0.2, k1=0.1, vol=0.5, L=3.0, jumps=False,
                       jump_size=0.4, jump_rate=1.0):
    """Controlled deviation from a target rate with interventions back to 0.

    dX = beta dt + vol dW (+ jumps of +-jump_size), beta in {-0.5, 0, 0.5},
    f = -x^2 - 0.1 beta^2, g = -x^2, resets to 0 at cost k0 + k1 |x|.
    """
    p = _problem(Parabolic(T), 1, cat.drift_constant(0.0, 1, control_gain=1.0),
                 cat.vol_constant(vol, 1),
                 cat.running_quadratic(1.0, 0.0, 0.1), cat.terminal_quadratic(1.0),
                 cat.impulse_reset([0.0], k0, k1), Domain.whole(-L, L),
                 B=[[-0.5], [0.0], [0.5]], growth_p=2.0,
                 ell=cat.jumps_additive(1) if jumps else None,
                 name="exchange-rate-band" + ("-jumps" if jumps else ""))
    levy = LevyModel(atoms=[(jump_size, jump_rate), (-jump_size, jump_rate)]) if jumps else LevyModel()
    return p, levy


def compound_poisson_band(T=1.0, k0=0.2, **kw):
    return exchange_rate_band(T=T, k0=k0, jumps=True, **kw)


def gbm_injection(rho=1.0, drift=0.05, vol=0.3, k0=0.1, k1=1.0, L=4.0, floor=0.5, target=1.0):
    """Geometric growth with capital injections.

    dX = drift X dt + vol X dW on S = (floor, inf); running profit x,
    nothing on exit; injections lift the state to ``target`` at cost
    k0 + k1 * amount.
    """
    p = _problem(Elliptic(rho), 1, cat.drift_linear(drift, 1), cat.vol_linear(vol, 1),
                 cat.running_linear(1.0), cat.terminal_constant(0.0),
                 cat.impulse_inject(target, k0, k1), Domain.box(0.0, L, floor, math.inf),
                 growth_p=1.0, name="gbm-injection")
    return p, LevyModel()


def fixed_cost_diffusion(rho=1.0, k0=0.5, k1=0.1, vol=0.5, L=3.0):
    """Elliptic controlled diffusion with impulses toward the origin.

    dX = beta dt + vol dW, beta in {-1/2, 0, 1/2}, f = -x^2 - 0.1 beta^2,
    impulses move a fraction {1/2, 1} of the way to 0 at cost k0 + k1 |zeta|.
    """
    p = _problem(Elliptic(rho), 1, cat.drift_constant(0.0, 1, control_gain=1.0),
                 cat.vol_constant(vol, 1), cat.running_quadratic(1.0, 0.0, 0.1),
                 cat.terminal_quadratic(1.0), cat.impulse_toward([0.5, 1.0], k0, k1),
                 Domain.whole(-L, L), B=[[-0.5], [0.0], [0.5]], growth_p=2.0,
                 name="fixed-cost-diffusion")
    return p, LevyModel()


def exit_band(T=1.0, vol=1.0, half=1.0, L=1.5):
    """Brownian motion killed on leaving (-half, half); f = 1, g = 0.

    v(t, x) is the expected time to exit (capped at T).
    """
    p = _problem(Parabolic(T), 1, cat.drift_constant(0.0, 1), cat.vol_constant(vol, 1),
                 cat.running_constant(1.0), cat.terminal_constant(0.0), cat.impulse_none(1),
                 Domain.box(-L, L, -half, half), name="exit-band")
    return p, LevyModel()


def battery():
    """The standard toy battery as (name, problem, levy, grid shape, steps)."""
    return [
        ("frozen", *frozen(), 21, 20),
        ("heat", *heat(L=5.0), 201, 50),
        ("constant-elliptic", *constant_elliptic(), 41, None),
        ("exchange-rate-band", *exchange_rate_band(), 201, 100),
        ("compound-poisson-band", *compound_poisson_band(), 201, 100),
        ("gbm-injection", *gbm_injection(), 161, None),
        ("fixed-cost-diffusion", *fixed_cost_diffusion(), 121, None),
        ("exit-band", *exit_band(), 121, 100),
    ]
