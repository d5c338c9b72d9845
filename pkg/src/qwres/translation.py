"""Complex lattice translations and outgoing (resonant) states.

The translation T(theta) multiplies each chirality component by a phase tied
to the coordinate it moves along: left movers pick up e^{i theta x1}, right
movers e^{-i theta x1}, down movers e^{i theta x2}, up movers e^{-i theta x2}.
For real theta this is unitary; for complex theta it dampens every outgoing
ray at the same geometric rate, which is what turns a resonant state with
exponentially growing tails into a square-summable eigenfunction of the
conjugated walk T(theta) U T(-theta).

An OutgoingState stores such a generalized eigenfunction in finite terms: a
core on the perturbation box dilated by one, plus one exponential tail
coefficient per transverse offset along each of the four outgoing ray
bundles.  verify_outgoing rebuilds the state analytically on any requested
window and measures how well the walk equation holds there, so no truncation
enters the check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .lattice import (
    CHIRALITIES,
    DOWN,
    LEFT,
    RIGHT,
    STEPS,
    UP,
    CoinField,
    WalkOperator,
    WalkState,
    apply_walk,
)

# Sign s_j in the weight e^{s_j * i * theta * coordinate}: the coordinate is
# x1 for horizontal movers and x2 for vertical ones.
_WEIGHT_SIGN = {LEFT: +1, RIGHT: -1, DOWN: +1, UP: -1}
_WEIGHT_AXIS = {LEFT: 0, RIGHT: 0, DOWN: 1, UP: 1}


def translation_weight(theta: complex, site, chirality: int) -> complex:
    """The diagonal weight of T(theta) on one (site, chirality) amplitude."""
    return complex(
        np.exp(1j * theta * _WEIGHT_SIGN[chirality] * site[_WEIGHT_AXIS[chirality]])
    )


def apply_T_theta(theta: complex, u: WalkState) -> WalkState:
    """Apply the complex translation T(theta) componentwise."""
    out = {}
    for site, vec in u.items():
        w = np.empty(4, dtype=complex)
        for j in CHIRALITIES:
            w[j] = translation_weight(theta, site, j) * vec[j]
        out[site] = w
    return WalkState._wrap(out)


def apply_U_theta(op: WalkOperator, theta: complex, u: WalkState) -> WalkState:
    """One step of the translated walk T(theta) U T(-theta)."""
    return apply_T_theta(theta, apply_walk(op, apply_T_theta(-theta, u)))


class OutgoingState:
    """Generalized eigenfunction Uu = e^{-i kappa} u with purely outgoing tails.

    Parameters
    ----------
    kappa:
        Complex quasi-energy with Im kappa < 0; the eigenvalue of the walk
        on this state is e^{-i kappa}.
    box_radius:
        Radius M0 of the coin perturbation box the state belongs to.
    core:
        The restriction of u to the dilated box max(|x1|, |x2|) <= M0 + 1.
    tail_left, tail_right, tail_down, tail_up:
        Coefficient maps, transverse offset -> complex amplitude, each
        supported in [-M0, M0].  Outside the dilated box the state is

            u_left(x)  = tail_left[x2]  * e^{-i kappa x1}   (x1 < -(M0+1)),
            u_right(x) = tail_right[x2] * e^{+i kappa x1}   (x1 >  M0+1),
            u_down(x)  = tail_down[x1]  * e^{-i kappa x2}   (x2 < -(M0+1)),
            u_up(x)    = tail_up[x1]    * e^{+i kappa x2}   (x2 >  M0+1),

        and every other component vanishes there.
    """

    __slots__ = ("kappa", "box_radius", "core", "tails")

    def __init__(
        self,
        kappa: complex,
        box_radius: int,
        core: WalkState,
        tail_left: Mapping[int, complex] | None = None,
        tail_right: Mapping[int, complex] | None = None,
        tail_down: Mapping[int, complex] | None = None,
        tail_up: Mapping[int, complex] | None = None,
    ):
        kappa = complex(kappa)
        if kappa.imag >= 0:
            raise ValueError(
                f"outgoing states require Im kappa < 0, got Im kappa = {kappa.imag}"
            )
        self.kappa = kappa
        self.box_radius = int(box_radius)
        r1 = self.box_radius + 1
        for site in core.sites():
            if max(abs(site[0]), abs(site[1])) > r1:
                raise ValueError(f"core site {site} outside dilated box of radius {r1}")
        self.core = core
        tails = []
        for name, raw in (
            ("tail_left", tail_left),
            ("tail_right", tail_right),
            ("tail_down", tail_down),
            ("tail_up", tail_up),
        ):
            clean: Dict[int, complex] = {}
            for offset, a in (raw or {}).items():
                if abs(int(offset)) > self.box_radius:
                    raise ValueError(
                        f"{name} offset {offset} outside [-{self.box_radius}, {self.box_radius}]"
                    )
                if a != 0:
                    clean[int(offset)] = complex(a)
            tails.append(clean)
        self.tails = tuple(tails)  # indexed by chirality

    def is_trivial(self) -> bool:
        return len(self.core) == 0 and all(not t for t in self.tails)

    def is_summable_after(self, theta: complex) -> bool:
        """Whether T(theta) maps this state into l2.

        Along each tail the translated amplitude has constant modulus ratio
        e^{-(Im kappa - Im theta)} per lattice step, so the geometric series
        converges exactly when Im theta < Im kappa.
        """
        return complex(theta).imag < self.kappa.imag

    def sample(self, radius: int) -> WalkState:
        """Evaluate the state exactly on all sites with max(|x1|, |x2|) <= radius."""
        r1 = self.box_radius + 1
        amp: Dict[tuple, np.ndarray] = {}
        for site, vec in self.core.items():
            amp[site] = vec.copy()
        if radius > r1:
            k = self.kappa

            def put(site, j, value):
                v = amp.setdefault(site, np.zeros(4, dtype=complex))
                v[j] += value

            for x2, a in self.tails[LEFT].items():
                for x1 in range(-radius, -r1):
                    put((x1, x2), LEFT, a * np.exp(-1j * k * x1))
            for x2, a in self.tails[RIGHT].items():
                for x1 in range(r1 + 1, radius + 1):
                    put((x1, x2), RIGHT, a * np.exp(1j * k * x1))
            for x1, a in self.tails[DOWN].items():
                for x2 in range(-radius, -r1):
                    put((x1, x2), DOWN, a * np.exp(-1j * k * x2))
            for x1, a in self.tails[UP].items():
                for x2 in range(r1 + 1, radius + 1):
                    put((x1, x2), UP, a * np.exp(1j * k * x2))
        return WalkState(amp)


@dataclass(frozen=True)
class OutgoingReport:
    """Result of checking an outgoing state against the walk equation."""

    residual: float
    scale: float
    window: int
    trivial: bool
    kappa: complex

    def summable_after(self, theta: complex) -> bool:
        return complex(theta).imag < self.kappa.imag


def verify_outgoing(op: WalkOperator, s: OutgoingState, window: int) -> OutgoingReport:
    """Measure max |(U u)(x) - e^{-i kappa} u(x)| over the given window.

    The state is reconstructed analytically on the window dilated by one, so
    the single application of the walk sees every inbound neighbor and the
    residual carries no truncation error.  The window must reach at least one
    site past the dilated box, where the tail formulas take over from the
    stored core.
    """
    coin = op.coin if isinstance(op, WalkOperator) else op
    if coin.box_radius != s.box_radius:
        raise ValueError(
            f"operator box radius {coin.box_radius} != state box radius {s.box_radius}"
        )
    if window < s.box_radius + 2:
        raise ValueError(
            f"window {window} too small; need at least box_radius + 2 = {s.box_radius + 2}"
        )
    if s.is_trivial():
        return OutgoingReport(0.0, 0.0, window, True, s.kappa)

    u_ext = s.sample(window + 1)
    pushed = apply_walk(op, u_ext)
    w = np.exp(-1j * s.kappa)
    residual = 0.0
    scale = 0.0
    for x1 in range(-window, window + 1):
        for x2 in range(-window, window + 1):
            site = (x1, x2)
            diff = pushed.amplitude(site) - w * u_ext.amplitude(site)
            residual = max(residual, float(np.max(np.abs(diff))))
            scale = max(scale, float(np.max(np.abs(u_ext.amplitude(site)))))
    return OutgoingReport(residual, scale, window, False, s.kappa)
