"""Rogers-McCulloch membrane kinetics.

Any object with ``i_ion``, ``di_ion_dv``, ``gate_update`` and ``n_gates`` can
stand in for :class:`RogersMcCulloch` in the time stepper.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class RmcParams:
    G: float = 1.2  # mS/cm^2
    v_th: float = 13.0  # mV
    v_p: float = 100.0  # mV
    eta1: float = 4.4  # mS/cm^2
    eta2: float = 0.012

    def __post_init__(self):
        if min(self.G, self.v_th, self.v_p, self.eta1, self.eta2) <= 0:
            raise ValueError("Rogers-McCulloch parameters must be positive")
        if not self.v_th < self.v_p:
            raise ValueError("need v_th < v_p")


@dataclass(frozen=True)
class MembraneParams:
    chi: float = 1.0  # cm^-1
    cm: float = 1.0  # mF/cm^2

    def __post_init__(self):
        if self.chi <= 0 or self.cm <= 0:
            raise ValueError("chi and C_m must be positive")

    @property
    def chi_cm(self) -> float:
        return self.chi * self.cm


class IonicModel(Protocol):
    n_gates: int

    def i_ion(self, v, w): ...

    def di_ion_dv(self, v, w): ...

    def gate_update(self, v_prev, w_prev, tau): ...


class RogersMcCulloch:
    n_gates = 1

    def __init__(self, params: RmcParams | None = None):
        self.params = params or RmcParams()

    def i_ion(self, v, w):
        p = self.params
        return p.G * v * (1.0 - v / p.v_th) * (1.0 - v / p.v_p) + p.eta1 * v * w

    def di_ion_dv(self, v, w):
        p = self.params
        return p.G * (1.0 - 2.0 * v * (1.0 / p.v_th + 1.0 / p.v_p) + 3.0 * v * v / (p.v_th * p.v_p)) + p.eta1 * w

    def r_gate(self, v, w):
        p = self.params
        return p.eta2 * (v / p.v_p - w)

    def gate_update(self, v_prev, w_prev, tau):
        """Backward Euler for the gate with the potential frozen at v_prev (closed form)."""
        if tau <= 0:
            raise ValueError("time step must be positive")
        p = self.params
        return (w_prev + tau * p.eta2 * v_prev / p.v_p) / (1.0 + tau * p.eta2)


def coercivity_margin(v_range, w_range, tau, model: RogersMcCulloch | None = None,
                      membrane: MembraneParams | None = None):
    """Minimum of chi*C_m + tau * dI_ion/dv over a (v, w) box, and the critical step.

    dI/dv is a convex parabola in v (vertex at (v_th + v_p)/3) and affine in w,
    so the minimum is found in closed form.  Returns ``(margin, tau_star)`` where
    ``tau_star`` is the largest step keeping the margin non-negative (inf when
    dI/dv never goes negative on the box).
    """
    model = model or RogersMcCulloch()
    membrane = membrane or MembraneParams()
    p = model.params
    v_lo, v_hi = v_range
    w_lo, w_hi = w_range
    if v_lo > v_hi or w_lo > w_hi:
        raise ValueError("empty range")
    v_star = np.clip((p.v_th + p.v_p) / 3.0, v_lo, v_hi)
    w_star = w_lo if p.eta1 >= 0 else w_hi
    d_min = float(model.di_ion_dv(v_star, w_star))
    margin = membrane.chi_cm + tau * d_min
    tau_star = np.inf if d_min >= 0 else membrane.chi_cm / (-d_min)
    return margin, tau_star
