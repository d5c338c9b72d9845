"""States and one-step dynamics of coined walks on the two-dimensional lattice.

A walk state is a finitely supported map Z^2 -> C^4.  The four internal
components (chirality) are indexed LEFT, RIGHT, DOWN, UP; one time step
applies a site-dependent 4x4 unitary coin and then shifts each component one
lattice unit in its own direction, so the walk operator is shift-after-coin.
Coins differ from the identity only inside the square box |x1| <= M0,
|x2| <= M0, which keeps every spectral object downstream a finite computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

Site = Tuple[int, int]

LEFT, RIGHT, DOWN, UP = 0, 1, 2, 3
CHIRALITIES = (LEFT, RIGHT, DOWN, UP)
CHIRALITY_NAMES = ("left", "right", "down", "up")

# Lattice displacement of each component under one shift.
STEPS: Tuple[Site, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))

UNITARITY_TOL = 1e-12

_IDENTITY4 = np.eye(4, dtype=complex)
_IDENTITY4.setflags(write=False)


def unitarity_residual(m: np.ndarray) -> float:
    """Max-abs entry of M*M - I."""
    m = np.asarray(m, dtype=complex)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


class WalkState:
    """Finitely supported C^4-valued state stored as a sparse site map.

    Amplitudes are kept per site as length-4 complex vectors; sites absent
    from the map read as zero.  Instances are treated as immutable by the
    rest of the package.
    """

    __slots__ = ("_amp",)

    def __init__(self, amplitudes: Mapping[Site, np.ndarray] | None = None):
        self._amp: Dict[Site, np.ndarray] = {}
        if amplitudes:
            for site, vec in amplitudes.items():
                v = np.asarray(vec, dtype=complex)
                if v.shape != (4,):
                    raise ValueError(
                        f"amplitude at {site} has shape {v.shape}, expected (4,)"
                    )
                if np.any(v != 0):
                    self._amp[(int(site[0]), int(site[1]))] = v.copy()

    @classmethod
    def _wrap(cls, amp: Dict[Site, np.ndarray]) -> "WalkState":
        out = cls.__new__(cls)
        out._amp = {s: v for s, v in amp.items() if np.any(v != 0)}
        return out

    @classmethod
    def delta(cls, site: Site, chirality: int, value: complex = 1.0) -> "WalkState":
        """State concentrated on a single (site, chirality) pair."""
        vec = np.zeros(4, dtype=complex)
        vec[chirality] = value
        return cls({tuple(site): vec})

    def amplitude(self, site: Site) -> np.ndarray:
        """Length-4 amplitude vector at a site (a copy; zeros off support)."""
        vec = self._amp.get(tuple(site))
        if vec is None:
            return np.zeros(4, dtype=complex)
        return vec.copy()

    def component(self, site: Site, chirality: int) -> complex:
        vec = self._amp.get(tuple(site))
        return complex(vec[chirality]) if vec is not None else 0.0j

    def sites(self) -> Iterator[Site]:
        return iter(self._amp)

    def items(self) -> Iterator[Tuple[Site, np.ndarray]]:
        return iter(self._amp.items())

    def support(self) -> frozenset:
        return frozenset(self._amp)

    def norm(self) -> float:
        if not self._amp:
            return 0.0
        total = 0.0
        for vec in self._amp.values():
            total += float(np.sum(np.abs(vec) ** 2))
        return float(np.sqrt(total))

    def inner(self, other: "WalkState") -> complex:
        """l2 pairing (self, other) = sum_x self(x) . conj(other(x))."""
        if len(other._amp) < len(self._amp):
            return np.conj(other.inner(self))
        total = 0.0j
        for site, vec in self._amp.items():
            ovec = other._amp.get(site)
            if ovec is not None:
                total += complex(np.dot(vec, ovec.conj()))
        return total

    def scaled(self, factor: complex) -> "WalkState":
        return WalkState._wrap({s: factor * v for s, v in self._amp.items()})

    def plus(self, other: "WalkState") -> "WalkState":
        amp = {s: v.copy() for s, v in self._amp.items()}
        for site, vec in other._amp.items():
            if site in amp:
                amp[site] = amp[site] + vec
            else:
                amp[site] = vec.copy()
        return WalkState._wrap(amp)

    def allclose(self, other: "WalkState", tol: float = 1e-12) -> bool:
        for site in set(self._amp) | set(other._amp):
            a = self._amp.get(site)
            b = other._amp.get(site)
            av = a if a is not None else 0.0
            bv = b if b is not None else 0.0
            if np.max(np.abs(av - bv)) > tol:
                return False
        return True

    def __len__(self) -> int:
        return len(self._amp)

    def __repr__(self) -> str:
        return f"WalkState(support={len(self._amp)} sites, norm={self.norm():.6g})"


class CoinField:
    """Site-dependent coin assignment, identity outside the stored overrides.

    Parameters
    ----------
    box_radius:
        Half-width M0 of the perturbation box; every override site x must
        satisfy |x1| <= M0 and |x2| <= M0.
    overrides:
        Map from site to a 4x4 complex matrix.  Each matrix must be unitary
        to max-abs tolerance 1e-12; failing coins are rejected outright
        rather than renormalized, since downstream phase products must not
        be silently altered.
    """

    __slots__ = ("box_radius", "_overrides")

    def __init__(self, box_radius: int, overrides: Mapping[Site, np.ndarray]):
        if int(box_radius) != box_radius or box_radius < 0:
            raise ValueError(f"box_radius must be a nonnegative integer, got {box_radius}")
        self.box_radius = int(box_radius)
        stored: Dict[Site, np.ndarray] = {}
        for site, mat in overrides.items():
            x = (int(site[0]), int(site[1]))
            if max(abs(x[0]), abs(x[1])) > self.box_radius:
                raise ValueError(f"override site {x} outside box of radius {self.box_radius}")
            m = np.asarray(mat, dtype=complex)
            if m.shape != (4, 4):
                raise ValueError(f"coin at {x} has shape {m.shape}, expected (4, 4)")
            res = unitarity_residual(m)
            if res > UNITARITY_TOL:
                raise ValueError(
                    f"coin at {x} is not unitary (residual {res:.3e} > {UNITARITY_TOL:.0e})"
                )
            m = m.copy()
            m.setflags(write=False)
            stored[x] = m
        self._overrides = stored

    @property
    def overrides(self) -> Dict[Site, np.ndarray]:
        return dict(self._overrides)

    def override_sites(self) -> Tuple[Site, ...]:
        return tuple(sorted(self._overrides))

    def coin_at(self, site: Site) -> np.ndarray:
        return self._overrides.get(tuple(site), _IDENTITY4)

    def is_identity(self) -> bool:
        return not self._overrides

    def __repr__(self) -> str:
        return f"CoinField(box_radius={self.box_radius}, overrides={len(self._overrides)})"


@dataclass(frozen=True)
class WalkOperator:
    """One-step walk operator: coin multiplication followed by the shift."""

    coin: CoinField

    def apply(self, u: WalkState) -> WalkState:
        return apply_walk(self, u)

    def evolve(self, u: WalkState, t: int) -> WalkState:
        return evolve(self, u, t)


def _coin_field_of(op) -> CoinField:
    if isinstance(op, WalkOperator):
        return op.coin
    if isinstance(op, CoinField):
        return op
    raise TypeError(f"expected WalkOperator or CoinField, got {type(op).__name__}")


def apply_walk(op: WalkOperator, u: WalkState) -> WalkState:
    """One step of the walk: mix each site's amplitude by its coin, then shift.

    The support grows by at most one lattice step and the l2 norm is
    preserved up to rounding.
    """
    coin = _coin_field_of(op)
    out: Dict[Site, np.ndarray] = {}
    for site, vec in u.items():
        mixed = coin.coin_at(site) @ vec
        x, y = site
        for j in CHIRALITIES:
            a = mixed[j]
            if a == 0:
                continue
            dx, dy = STEPS[j]
            target = (x + dx, y + dy)
            acc = out.get(target)
            if acc is None:
                acc = np.zeros(4, dtype=complex)
                out[target] = acc
            acc[j] += a
    return WalkState._wrap(out)


def _ray_misses_box(site: Site, chirality: int, box_radius: int) -> bool:
    """True when the forward ray from (site, chirality) never meets the coin box."""
    x, y = site
    if chirality == LEFT:
        return abs(y) > box_radius or x < -box_radius
    if chirality == RIGHT:
        return abs(y) > box_radius or x > box_radius
    if chirality == DOWN:
        return abs(x) > box_radius or y < -box_radius
    return abs(x) > box_radius or y > box_radius


def evolve(op: WalkOperator, u: WalkState, t: int) -> WalkState:
    """Apply ``t`` walk steps exactly.

    Far from the coin box the walk is a pure translation, so any amplitude
    sitting on a ray that never re-enters the box is banked with its emission
    time and reconstructed at the end by free flight.  Only a dense window
    (the box dilated by one) is evolved step by step, which keeps the cost
    per step independent of t and makes horizons of 10^4 steps cheap while
    remaining exact.
    """
    if int(t) != t or t < 0:
        raise ValueError(f"t must be a nonnegative integer, got {t}")
    coin = _coin_field_of(op)
    if t == 0:
        return WalkState._wrap({s: v.copy() for s, v in u.items()})

    m0 = coin.box_radius
    r = m0 + 1  # window radius
    n = 2 * r + 1  # window side length

    active = np.zeros((n, n, 4), dtype=complex)
    movers: Dict[Tuple[Site, int], complex] = {}
    banked: list[Tuple[int, int, int, complex, int]] = []  # (x, y, chirality, value, t_emit)

    for site, vec in u.items():
        x, y = site
        if max(abs(x), abs(y)) <= r:
            active[x + r, y + r] += vec
            continue
        for j in CHIRALITIES:
            a = vec[j]
            if a == 0:
                continue
            if _ray_misses_box(site, j, m0):
                banked.append((x, y, j, a, 0))
            else:
                key = (site, j)
                movers[key] = movers.get(key, 0.0) + a

    # Stacked 4x4 coins over the window (identity off the box).
    coins = np.empty((n, n, 4, 4), dtype=complex)
    for ix in range(n):
        for iy in range(n):
            coins[ix, iy] = coin.coin_at((ix - r, iy - r))

    for step in range(1, t + 1):
        mixed = np.einsum("xyjk,xyk->xyj", coins, active)
        new = np.zeros_like(active)

        # LEFT moves toward smaller x; the column leaving the window is banked.
        new[:-1, :, LEFT] = mixed[1:, :, LEFT]
        for iy in np.flatnonzero(mixed[0, :, LEFT]):
            banked.append((-r - 1, int(iy) - r, LEFT, mixed[0, iy, LEFT], step))
        new[1:, :, RIGHT] = mixed[:-1, :, RIGHT]
        for iy in np.flatnonzero(mixed[-1, :, RIGHT]):
            banked.append((r + 1, int(iy) - r, RIGHT, mixed[-1, iy, RIGHT], step))
        new[:, :-1, DOWN] = mixed[:, 1:, DOWN]
        for ix in np.flatnonzero(mixed[:, 0, DOWN]):
            banked.append((int(ix) - r, -r - 1, DOWN, mixed[ix, 0, DOWN], step))
        new[:, 1:, UP] = mixed[:, :-1, UP]
        for ix in np.flatnonzero(mixed[:, -1, UP]):
            banked.append((int(ix) - r, r + 1, UP, mixed[ix, -1, UP], step))

        if movers:
            advanced: Dict[Tuple[Site, int], complex] = {}
            for ((x, y), j), a in movers.items():
                dx, dy = STEPS[j]
                nx, ny = x + dx, y + dy
                if max(abs(nx), abs(ny)) <= r:
                    new[nx + r, ny + r, j] += a
                else:
                    advanced[((nx, ny), j)] = a
            movers = advanced

        active = new

    out: Dict[Site, np.ndarray] = {}
    nz = np.nonzero(np.any(active != 0, axis=2))
    for ix, iy in zip(*nz):
        out[(int(ix) - r, int(iy) - r)] = active[ix, iy].copy()
    for (site, j), a in movers.items():
        vec = out.setdefault(site, np.zeros(4, dtype=complex))
        vec[j] += a
    for x, y, j, a, t_emit in banked:
        dx, dy = STEPS[j]
        flight = t - t_emit
        target = (x + dx * flight, y + dy * flight)
        vec = out.setdefault(target, np.zeros(4, dtype=complex))
        vec[j] += a
    return WalkState._wrap(out)


def random_unitary_coin(seed: int) -> np.ndarray:
    """Deterministic Haar-like 4x4 unitary for a given seed.

    Built from the QR factorization of a complex Gaussian sample with the
    usual diagonal phase fix; the unitarity residual is at rounding level.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    q, rmat = np.linalg.qr(z)
    d = np.diagonal(rmat)
    q = q * (d / np.abs(d))
    return q


def random_coin_field(box_radius: int, seed: int, density: float = 1.0) -> CoinField:
    """Seeded coin field with independent random unitaries inside the box.

    ``density`` < 1 keeps each site with that probability, leaving the rest
    as identity.
    """
    rng = np.random.default_rng(seed)
    overrides: Dict[Site, np.ndarray] = {}
    for x in range(-box_radius, box_radius + 1):
        for y in range(-box_radius, box_radius + 1):
            if density < 1.0 and rng.random() >= density:
                continue
            z = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            q, rmat = np.linalg.qr(z)
            d = np.diagonal(rmat)
            overrides[(x, y)] = q * (d / np.abs(d))
    return CoinField(box_radius, overrides)


def coin_field_from_json(doc: dict) -> CoinField:
    """Build a coin field from the interchange document.

    Expected shape: ``{"M0": int, "coins": [{"x": [i, j], "m": [[[re, im] x4] x4]}]}``
    with matrix rows in chirality order left, right, down, up.
    """
    if not isinstance(doc, dict):
        raise ValueError("coin document must be a JSON object")
    unknown = set(doc) - {"M0", "coins"}
    if unknown:
        raise ValueError(f"unknown keys in coin document: {sorted(unknown)}")
    try:
        m0 = int(doc["M0"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("coin document needs an integer 'M0'") from exc
    overrides: Dict[Site, np.ndarray] = {}
    for entry in doc.get("coins", []):
        try:
            site = (int(entry["x"][0]), int(entry["x"][1]))
            rows = entry["m"]
            mat = np.array(
                [[complex(cell[0], cell[1]) for cell in row] for row in rows],
                dtype=complex,
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed coin entry: {entry!r}") from exc
        overrides[site] = mat
    return CoinField(m0, overrides)


def coin_field_to_json(coin: CoinField) -> dict:
    """Inverse of :func:`coin_field_from_json`."""
    coins = []
    for site in coin.override_sites():
        m = coin.coin_at(site)
        coins.append(
            {
                "x": [site[0], site[1]],
                "m": [[[float(c.real), float(c.imag)] for c in row] for row in m],
            }
        )
    return {"M0": coin.box_radius, "coins": coins}
