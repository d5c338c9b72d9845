"""Resolvent kernels, the finite characteristic determinant, and root location.

For the unperturbed walk the resolvent (U0 - e^{-i kappa})^{-1} acts
per chirality with an explicit one-sided exponential kernel, so compressing
the second-resolvent series to the coin override sites turns every spectral
question about the perturbed walk into linear algebra on a matrix of size
4 * (number of overridden sites).  The characteristic determinant

    D(kappa) = det(I + M(kappa)),

with M the compressed kernel-times-coin-increment matrix, is entire and
2 pi periodic; its zeros in the closed lower half plane are the eigenvalues
(on the real axis) and resonances (below it) of the walk, counted with
multiplicity by the winding of D.  Every entry of M is a constant times
e^{i kappa n} for a positive integer n, which is what makes evaluation on
batches of kappa cheap and the continuation to the lower half plane free.

Root location runs an adaptive argument-principle scan over a rectangle:
the winding number of each cell is read off a phase-tracked boundary walk,
cells with nonzero winding are quadrisected along cuts chosen to stay away
from zeros, and a multiplicity-corrected Newton iteration from the cell
center short-circuits the recursion once it lands on a root that a small
verification contour confirms.  Windings that refuse to settle to integers
raise NumericalFailure rather than being rounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .lattice import CHIRALITIES, STEPS, CoinField, WalkState

TWO_PI = 2.0 * np.pi

# Default scan strip: one full period in Re kappa, shifted a little off zero
# so that the frequently occurring roots at rational multiples of pi stay
# clear of the vertical seam, and reaching just above the real axis so that
# embedded eigenvalues are enclosed.
STRIP_SHIFT = -np.pi / 32
STRIP_IM_MIN = -2.0
STRIP_IM_MAX = 1e-6

EIGENVALUE_IM_TOL = 1e-8
ROOT_RESIDUAL_TOL = 1e-8
WINDING_INTEGER_TOL = 1e-3

# The half coordinate a chirality component moves along (x1 horizontal,
# x2 vertical) and the side of the diagonal its free kernel lives on.
_KERNEL_AXIS = (0, 0, 1, 1)
_KERNEL_SENSE = (+1, -1, +1, -1)


class NumericalFailure(RuntimeError):
    """A spectral computation could not certify its own answer."""


def _free_kernel_exponent(j: int, x: Tuple[int, int], y: Tuple[int, int]) -> Optional[int]:
    """Exponent n with G_j(x, y) = -e^{i kappa n}, or None off the support."""
    axis = _KERNEL_AXIS[j]
    if x[1 - axis] != y[1 - axis]:
        return None
    d = _KERNEL_SENSE[j] * (y[axis] - x[axis])
    if d < 0:
        return None
    return d + 1


def resolvent_kernel_entry(j: int, x: Tuple[int, int], y: Tuple[int, int], kappa: complex) -> complex:
    """Kernel of the free resolvent (U0 - e^{-i kappa})^{-1} on chirality j.

    Left movers see a one-sided exponential to their right (y1 >= x1 on the
    same row), right movers the mirror image, and the vertical pair the same
    along columns.  Entries are -e^{i kappa (distance + 1)}; for Im kappa > 0
    these are the summable kernels of the honest resolvent and the formula
    itself continues entirely to all kappa.
    """
    n = _free_kernel_exponent(j, tuple(x), tuple(y))
    if n is None:
        return 0.0j
    return -np.exp(1j * kappa * n)


@dataclass(frozen=True)
class KappaRect:
    """Axis-aligned rectangle in the complex kappa plane."""

    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.re_max - self.re_min

    @property
    def height(self) -> float:
        return self.im_max - self.im_min

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    def corners(self) -> Tuple[complex, complex, complex, complex]:
        """Counterclockwise from the bottom-left corner."""
        return (
            complex(self.re_min, self.im_min),
            complex(self.re_max, self.im_min),
            complex(self.re_max, self.im_max),
            complex(self.re_min, self.im_max),
        )

    def contains(self, z: complex, margin: float = 0.0) -> bool:
        return (
            self.re_min - margin <= z.real <= self.re_max + margin
            and self.im_min - margin <= z.imag <= self.im_max + margin
        )

    def expanded(self, delta: float) -> "KappaRect":
        return KappaRect(
            self.re_min - delta, self.re_max + delta, self.im_min - delta, self.im_max + delta
        )

    @staticmethod
    def around(z: complex, half_width: float, half_height: Optional[float] = None) -> "KappaRect":
        hh = half_width if half_height is None else half_height
        return KappaRect(z.real - half_width, z.real + half_width, z.imag - hh, z.imag + hh)


def default_strip() -> KappaRect:
    return KappaRect(STRIP_SHIFT, STRIP_SHIFT + TWO_PI, STRIP_IM_MIN, STRIP_IM_MAX)


@dataclass(frozen=True)
class Root:
    """A zero of the characteristic determinant.

    kind is "eigenvalue" for zeros on the real axis (|Im kappa| at most
    1e-8 before snapping) and "resonance" for zeros strictly below it.
    multiplicity is the verified winding of a small contour around kappa.
    """

    kappa: complex
    multiplicity: int
    residual: float
    kind: str

    @property
    def w(self) -> complex:
        """The associated spectral parameter e^{-i kappa}."""
        return complex(np.exp(-1j * self.kappa))


class DeterminantFamily:
    """Precomputed structure of M(kappa) for one coin field.

    Every matrix entry is coeff * e^{i kappa * expo} with integer expo >= 1,
    so a batch of kappas is evaluated with one broadcast exponential.
    """

    def __init__(self, coin: CoinField):
        self.coin = coin
        sites = coin.override_sites()
        self.pairs: Tuple[Tuple[Tuple[int, int], int], ...] = tuple(
            (site, j) for site in sites for j in CHIRALITIES
        )
        m = len(self.pairs)
        self.m = m
        expo = np.zeros((m, m), dtype=float)
        coeff = np.zeros((m, m), dtype=complex)
        eye = np.eye(4)
        deltas = {site: coin.coin_at(site) - eye for site in sites}
        # The free kernel is diagonal in chirality on the row index while the
        # coin increment mixes chiralities on the column one: the (row, col)
        # entry is K_j(x, y) * (C(y) - I)[j, k], and K_j(x, y) is the free
        # kernel evaluated at y shifted one step along j.
        for row, (x, j) in enumerate(self.pairs):
            for col, (y, k) in enumerate(self.pairs):
                shifted = (y[0] + STEPS[j][0], y[1] + STEPS[j][1])
                n = _free_kernel_exponent(j, x, shifted)
                if n is None:
                    continue
                c = -deltas[y][j, k]
                if c == 0:
                    continue
                expo[row, col] = n
                coeff[row, col] = c
        self.expo = expo
        self.coeff = coeff
        self.trivial = not np.any(coeff)

    def matrices(self, kappas: np.ndarray) -> np.ndarray:
        """Stack of M(kappa), shape (len(kappas), m, m)."""
        kappas = np.asarray(kappas, dtype=complex).reshape(-1)
        return self.coeff * np.exp(1j * kappas[:, None, None] * self.expo)

    def logdet(self, kappas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(log|D|, arg D) for a batch of kappas, overflow free."""
        kappas = np.asarray(kappas, dtype=complex).reshape(-1)
        if self.trivial or self.m == 0:
            zero = np.zeros(kappas.shape, dtype=float)
            return zero, zero.copy()
        a = self.matrices(kappas)
        a[:, np.arange(self.m), np.arange(self.m)] += 1.0
        sign, logabs = np.linalg.slogdet(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            ang = np.angle(sign)
        return logabs, ang

    def det_dlog(self, kappa: complex) -> Tuple[complex, complex]:
        """(D(kappa), d/dkappa log D(kappa)); D may overflow deep in the strip."""
        if self.trivial or self.m == 0:
            return 1.0 + 0.0j, 0.0j
        mat = self.matrices(np.array([kappa]))[0]
        a = mat + np.eye(self.m)
        sign, logabs = np.linalg.slogdet(a)
        d = sign * np.exp(logabs)
        mprime = 1j * self.expo * mat
        try:
            dlog = complex(np.trace(np.linalg.solve(a, mprime)))
        except np.linalg.LinAlgError:
            dlog = complex(np.inf)
        return complex(d), dlog

    def abs_det(self, kappa: complex) -> float:
        logabs, _ = self.logdet(np.array([kappa]))
        return float(np.exp(logabs[0]))


def interaction_index(coin: CoinField) -> Tuple[Tuple[Tuple[int, int], int], ...]:
    """Row/column labels (site, chirality) of the interaction matrix."""
    return DeterminantFamily(coin).pairs


def interaction_matrix(coin: CoinField, kappa: complex) -> np.ndarray:
    """The compressed matrix M(kappa) on the override pairs."""
    fam = DeterminantFamily(coin)
    if fam.m == 0:
        return np.zeros((0, 0), dtype=complex)
    return fam.matrices(np.array([kappa]))[0]


def det_value(coin: CoinField, kappa: complex) -> Tuple[complex, complex]:
    """(D(kappa), d log D / d kappa) at a single point."""
    return DeterminantFamily(coin).det_dlog(kappa)


class _EdgeTrouble(Exception):
    """Contour integration hit a (near) zero; the caller may perturb."""


_SIMPSON_DEPTH = 48
_EDGE_TOL = 2e-4


def _edge_dlog_integral(fam: DeterminantFamily, a: complex, b: complex) -> complex:
    """Integral of (log D)' along the segment a -> b by adaptive Simpson.

    Integrating the logarithmic derivative instead of tracking arg D keeps
    long edges honest: the derivative is smooth wherever D is zero free, so
    a whole hidden turn of D between samples cannot alias away.  The seed
    partition is matched to the highest frequency e^{i kappa n} present in
    the matrix family; refinement then concentrates near any zeros close to
    the edge.
    """
    span = b - a

    def f(t: float) -> complex:
        _, dlog = fam.det_dlog(a + span * t)
        if not (np.isfinite(dlog.real) and np.isfinite(dlog.imag)):
            raise _EdgeTrouble(f"determinant (near) zero on contour at t={t:.6f}")
        return dlog * span

    e_max = max(1.0, float(np.max(fam.expo)) if fam.expo.size else 1.0)
    panels = max(8, int(np.ceil(abs(span) * 4.0 * e_max)))
    knots = np.linspace(0.0, 1.0, panels + 1)
    values = [f(t) for t in knots]
    total = 0.0j
    tol = _EDGE_TOL / panels
    for i in range(panels):
        t0, t2 = knots[i], knots[i + 1]
        t1 = 0.5 * (t0 + t2)
        f1 = f(t1)
        whole = (t2 - t0) / 6.0 * (values[i] + 4.0 * f1 + values[i + 1])
        total += _simpson(f, t0, t1, t2, values[i], f1, values[i + 1], whole, tol, _SIMPSON_DEPTH)
    return total


def _simpson(f, t0, t1, t2, f0, f1, f2, whole, tol, depth) -> complex:
    lm = 0.5 * (t0 + t1)
    rm = 0.5 * (t1 + t2)
    flm = f(lm)
    frm = f(rm)
    left = (t1 - t0) / 6.0 * (f0 + 4.0 * flm + f1)
    right = (t2 - t1) / 6.0 * (f1 + 4.0 * frm + f2)
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        raise _EdgeTrouble("adaptive contour integration exhausted its depth budget")
    return _simpson(f, t0, lm, t1, f0, flm, f1, left, tol / 2.0, depth - 1) + _simpson(
        f, t1, rm, t2, f1, frm, f2, right, tol / 2.0, depth - 1
    )


def _winding(fam: DeterminantFamily, rect: KappaRect) -> int:
    corners = rect.corners()
    total = 0.0j
    for i in range(4):
        total += _edge_dlog_integral(fam, corners[i], corners[(i + 1) % 4])
    # The real part is the change of log|D| around a closed loop, zero in
    # exact arithmetic; a drift means the quadrature cannot be trusted.
    if abs(total.real) > 0.02 * (1.0 + abs(total.imag)):
        raise _EdgeTrouble(f"log|D| failed to close around {rect} (drift {total.real:.2e})")
    turns = total.imag / TWO_PI
    nearest = round(turns)
    if abs(turns - nearest) > WINDING_INTEGER_TOL:
        raise _EdgeTrouble(f"winding {turns:.6f} does not settle to an integer")
    return int(nearest)


def winding_number(coin: CoinField, region: KappaRect, retries: int = 3) -> int:
    """Number of determinant zeros inside the rectangle, by argument principle.

    If a zero sits (numerically) on the boundary the rectangle is expanded by
    a tiny amount and retried; persistent trouble raises NumericalFailure.
    """
    fam = coin if isinstance(coin, DeterminantFamily) else DeterminantFamily(coin)
    if fam.trivial:
        return 0
    rect = region
    delta = max(1e-8, 1e-7 * max(region.width, region.height))
    for attempt in range(retries + 1):
        try:
            return _winding(fam, rect)
        except _EdgeTrouble as trouble:
            last = trouble
            rect = region.expanded(delta * (attempt + 1))
    raise NumericalFailure(
        f"winding over {region} failed after {retries} boundary perturbations: {last}"
    )


_CUT_FRACTIONS = (0.5, 0.47, 0.53, 0.41, 0.59)


def _best_cut(fam: DeterminantFamily, lo: float, hi: float, fixed_lo: float, fixed_hi: float, vertical: bool) -> float:
    """Pick a cut coordinate whose line stays farthest from zeros of D.

    Candidates are fixed fractions of the interval; the score of each is the
    minimum log|D| over a coarse sampling of the cut segment.
    """
    ts = np.linspace(0.0, 1.0, 17)
    best_val = -np.inf
    best_cut = 0.5 * (lo + hi)
    for frac in _CUT_FRACTIONS:
        cut = lo + frac * (hi - lo)
        if vertical:
            zs = cut + 1j * (fixed_lo + ts * (fixed_hi - fixed_lo))
        else:
            zs = (fixed_lo + ts * (fixed_hi - fixed_lo)) + 1j * cut
        logabs, _ = fam.logdet(zs)
        score = float(np.min(logabs))
        if score > best_val:
            best_val = score
            best_cut = cut
    return best_cut


_NEWTON_MAX_ITER = 60
_VERIFY_RADIUS = 1e-6
_MIN_CELL = 1e-12


def _newton_root(fam: DeterminantFamily, rect: KappaRect, mult: int) -> Optional[complex]:
    """Multiplicity-corrected Newton from the cell center; None if it strays."""
    z = rect.center
    bound = rect.expanded(0.25 * max(rect.width, rect.height))
    last_step = np.inf
    for _ in range(_NEWTON_MAX_ITER):
        _, dlog = fam.det_dlog(z)
        if not np.isfinite(dlog.real) or not np.isfinite(dlog.imag) or dlog == 0:
            return None
        step = -mult / dlog
        z = z + step
        if not bound.contains(z):
            return None
        last_step = abs(step)
        if last_step < 1e-14 * max(1.0, abs(z)):
            return z
    return z if last_step < 1e-11 else None


def _verify_root(fam: DeterminantFamily, z: complex, mult: int) -> bool:
    radius = _VERIFY_RADIUS
    for attempt in range(3):
        try:
            return _winding(fam, KappaRect.around(z, radius)) == mult
        except _EdgeTrouble:
            radius *= 1.9
    return False


def _scan_cell(fam: DeterminantFamily, rect: KappaRect, tol: float, out: List[Tuple[complex, int]]):
    w = winding_number(fam, rect)
    if w == 0:
        return
    if w < 0:
        raise NumericalFailure(
            f"negative winding {w} over {rect}; the determinant is holomorphic so "
            "this indicates a numerical breakdown"
        )
    if max(rect.width, rect.height) < 1.0:
        z = _newton_root(fam, rect, w)
        if z is not None and rect.expanded(1e-3 * max(rect.width, rect.height)).contains(z):
            if _verify_root(fam, z, w):
                out.append((z, w))
                return
    if min(rect.width, rect.height) < _MIN_CELL:
        raise NumericalFailure(
            f"could not separate a zero cluster of total multiplicity {w} near {rect.center}"
        )
    re_cut = _best_cut(fam, rect.re_min, rect.re_max, rect.im_min, rect.im_max, vertical=True)
    im_cut = _best_cut(fam, rect.im_min, rect.im_max, rect.re_min, rect.re_max, vertical=False)
    for child in (
        KappaRect(rect.re_min, re_cut, rect.im_min, im_cut),
        KappaRect(re_cut, rect.re_max, rect.im_min, im_cut),
        KappaRect(rect.re_min, re_cut, im_cut, rect.im_max),
        KappaRect(re_cut, rect.re_max, im_cut, rect.im_max),
    ):
        _scan_cell(fam, child, tol, out)


def locate_roots(
    coin: CoinField,
    region: Optional[KappaRect] = None,
    tol: float = 1e-10,
) -> List[Root]:
    """All determinant zeros in the region, as verified Root records.

    With no region the default strip (one period in Re kappa, Im kappa from
    -2 to just above the axis) is scanned and real parts are reported in
    [0, 2 pi).  Roots are only accepted after a Newton refinement whose
    multiplicity is confirmed by a small verification contour; anything the
    scan cannot certify raises NumericalFailure instead of degrading the
    answer silently.
    """
    fam = DeterminantFamily(coin) if not isinstance(coin, DeterminantFamily) else coin
    normalize = region is None
    rect = default_strip() if region is None else region
    if fam.trivial:
        return []
    found: List[Tuple[complex, int]] = []
    _scan_cell(fam, rect, tol, found)

    roots: List[Root] = []
    for z, mult in found:
        if z.imag > 1e-10:
            raise NumericalFailure(
                f"located a zero at {z} above the real axis, which contradicts "
                "unitarity of the walk"
            )
        kappa = z
        if abs(z.imag) <= EIGENVALUE_IM_TOL:
            snapped = complex(z.real, 0.0)
            if fam.abs_det(snapped) <= max(ROOT_RESIDUAL_TOL, 4.0 * fam.abs_det(z)):
                kappa = snapped
            kind = "eigenvalue"
        else:
            kind = "resonance"
        if normalize:
            re = kappa.real % TWO_PI
            if re >= TWO_PI - 1e-12:
                re = 0.0
            kappa = complex(re, kappa.imag)
        residual = fam.abs_det(kappa)
        if residual > ROOT_RESIDUAL_TOL:
            raise NumericalFailure(
                f"root at {kappa} has residual |D| = {residual:.3e} above {ROOT_RESIDUAL_TOL:.0e}"
            )
        roots.append(Root(kappa, mult, residual, kind))

    # Merge duplicates that can arise from boundary perturbation near the
    # periodic seam of the default strip.
    merged: List[Root] = []
    for root in sorted(roots, key=lambda r: (r.kappa.real, r.kappa.imag)):
        dup = None
        for prev in merged:
            gap = abs((root.kappa.real - prev.kappa.real + np.pi) % TWO_PI - np.pi)
            if gap < 1e-7 and abs(root.kappa.imag - prev.kappa.imag) < 1e-7:
                dup = prev
                break
        if dup is None:
            merged.append(root)
    return merged


# ---------------------------------------------------------------------------
# Resolvent matrix elements and Riesz projections
# ---------------------------------------------------------------------------


def _free_resolvent_triplets(f: WalkState, g: WalkState) -> Tuple[np.ndarray, np.ndarray]:
    """Exponents and coefficients with <R0 f, g> = sum coeff * e^{i kappa n}."""
    expos = []
    coeffs = []
    for x, gvec in g.items():
        for y, fvec in f.items():
            for j in CHIRALITIES:
                c = fvec[j] * np.conj(gvec[j])
                if c == 0:
                    continue
                n = _free_kernel_exponent(j, x, y)
                if n is None:
                    continue
                expos.append(n)
                coeffs.append(-c)
    return np.asarray(expos, dtype=float), np.asarray(coeffs, dtype=complex)


class ResolventPairing:
    """Batched evaluator of <R(kappa) f, g> for one coin field and one (f, g).

    The full resolvent is reduced to the override block: with b(kappa) the
    restriction of R0 f to the override pairs and h solving
    (I + M(kappa)) h = b, the matrix element is

        <R0 f, g> - sum_y ((C(y) - I) h(y)) . conj(K^T g)(y),

    where the last factor pairs the pushed coin increment against g through
    the same one-sided kernels.  Everything is a finite sum of terms
    coeff * e^{i kappa n}, so batches of kappa evaluate with one broadcast.
    """

    def __init__(self, coin: CoinField, f: WalkState, g: WalkState):
        self.fam = DeterminantFamily(coin)
        self.coin = coin
        self.f = f
        self.g = g
        self.base_expo, self.base_coeff = _free_resolvent_triplets(f, g)

        m = self.fam.m
        b_expo: List[List[float]] = [[] for _ in range(m)]
        b_coeff: List[List[complex]] = [[] for _ in range(m)]
        for row, (x, j) in enumerate(self.fam.pairs):
            for y, fvec in f.items():
                c = fvec[j]
                if c == 0:
                    continue
                n = _free_kernel_exponent(j, x, y)
                if n is None:
                    continue
                b_expo[row].append(n)
                b_coeff[row].append(-c)
        self._b = [
            (np.asarray(e, dtype=float), np.asarray(c, dtype=complex))
            for e, c in zip(b_expo, b_coeff)
        ]

        # Pairing of a unit amplitude pushed from override site y in
        # chirality l against g: sum_x K_l(x, y) conj(g_l(x)).
        w_expo: List[List[float]] = [[] for _ in range(m)]
        w_coeff: List[List[complex]] = [[] for _ in range(m)]
        for col, (y, l) in enumerate(self.fam.pairs):
            shifted = (y[0] + STEPS[l][0], y[1] + STEPS[l][1])
            for x, gvec in g.items():
                c = np.conj(gvec[l])
                if c == 0:
                    continue
                n = _free_kernel_exponent(l, x, shifted)
                if n is None:
                    continue
                w_expo[col].append(n)
                w_coeff[col].append(-c)
        self._w = [
            (np.asarray(e, dtype=float), np.asarray(c, dtype=complex))
            for e, c in zip(w_expo, w_coeff)
        ]
        sites = coin.override_sites()
        eye = np.eye(4)
        self._deltas = [coin.coin_at(site) - eye for site in sites]

    def _series(self, table, kappas: np.ndarray) -> np.ndarray:
        out = np.zeros((len(kappas), len(table)), dtype=complex)
        for idx, (expo, coeff) in enumerate(table):
            if expo.size:
                out[:, idx] = np.exp(1j * kappas[:, None] * expo[None, :]) @ coeff
        return out

    def values(self, kappas: Iterable[complex]) -> np.ndarray:
        kappas = np.asarray(list(kappas), dtype=complex)
        base = np.zeros(len(kappas), dtype=complex)
        if self.base_expo.size:
            base = np.exp(1j * kappas[:, None] * self.base_expo[None, :]) @ self.base_coeff
        m = self.fam.m
        if m == 0 or self.fam.trivial:
            return base
        b = self._series(self._b, kappas)
        w = self._series(self._w, kappas)
        mats = self.fam.matrices(kappas)
        mats[:, np.arange(m), np.arange(m)] += 1.0
        h = np.linalg.solve(mats, b[:, :, None])[:, :, 0]
        n_sites = m // 4
        hv = h.reshape(len(kappas), n_sites, 4)
        pushed = np.empty_like(hv)
        for s in range(n_sites):
            pushed[:, s, :] = hv[:, s, :] @ np.asarray(self._deltas[s]).T
        correction = np.sum(pushed.reshape(len(kappas), m) * w, axis=1)
        return base - correction


def resolvent_matrix_element(coin: CoinField, kappa: complex, f: WalkState, g: WalkState) -> complex:
    """<(U - e^{-i kappa})^{-1} f, g>, continued meromorphically in kappa."""
    return complex(ResolventPairing(coin, f, g).values([kappa])[0])


def resolvent_apply(coin: CoinField, kappa: complex, f: WalkState, radius: int) -> WalkState:
    """Pointwise values of R(kappa) f on the square window of given radius.

    The result solves (U - e^{-i kappa}) u = f identically as a pointwise
    statement even below the real axis, where u is the continued resolvent
    rather than an l2 function.
    """
    fam = DeterminantFamily(coin)
    m = fam.m
    h = np.zeros(m, dtype=complex)
    if m and not fam.trivial:
        b = np.zeros(m, dtype=complex)
        for row, (x, j) in enumerate(fam.pairs):
            acc = 0.0j
            for y, fvec in f.items():
                if fvec[j] == 0:
                    continue
                n = _free_kernel_exponent(j, x, y)
                if n is not None:
                    acc += -np.exp(1j * kappa * n) * fvec[j]
            b[row] = acc
        mat = fam.matrices(np.array([kappa]))[0] + np.eye(m)
        h = np.linalg.solve(mat, b)

    sites = coin.override_sites()
    eye = np.eye(4)
    pushed = []  # (site, chirality, amplitude) of V chi* h
    for s, y in enumerate(sites):
        delta = coin.coin_at(y) - eye
        v = delta @ h[4 * s : 4 * s + 4]
        for l in CHIRALITIES:
            if v[l] != 0:
                pushed.append(((y[0] + STEPS[l][0], y[1] + STEPS[l][1]), l, v[l]))

    amp = {}
    for x1 in range(-radius, radius + 1):
        for x2 in range(-radius, radius + 1):
            x = (x1, x2)
            vec = np.zeros(4, dtype=complex)
            for y, fvec in f.items():
                for j in CHIRALITIES:
                    if fvec[j] == 0:
                        continue
                    n = _free_kernel_exponent(j, x, y)
                    if n is not None:
                        vec[j] += -np.exp(1j * kappa * n) * fvec[j]
            for y, l, a in pushed:
                n = _free_kernel_exponent(l, x, y)
                if n is not None:
                    vec[l] -= -np.exp(1j * kappa * n) * a
            if np.any(vec != 0):
                amp[x] = vec
    return WalkState(amp)


_PROJECTION_TOL = 1e-8
_MAX_LOOP_SAMPLES = 1 << 15


def projection_element(
    coin: CoinField,
    kappa0,
    loop,
    f: WalkState,
    g: WalkState,
) -> complex:
    """Matrix element <P f, g> of the Riesz projection at the roots inside loop.

    Evaluates (1/2 pi) of the counterclockwise integral of
    e^{-i mu} <R(mu) f, g> d mu over the rectangle ``loop`` (a KappaRect, or
    a float half-width of a square centered at kappa0).  On the real axis
    this is the spectral projection of the unitary walk; below it, the
    residue pairing of the continued resolvent.  Trapezoid sums are doubled
    until two refinements agree to 1e-8.
    """
    center = kappa0.kappa if isinstance(kappa0, Root) else complex(kappa0)
    if isinstance(loop, KappaRect):
        rect = loop
    else:
        rect = KappaRect.around(center, float(loop))
    pairing = ResolventPairing(coin, f, g)
    corners = rect.corners()

    def integral(n_per_side: int) -> complex:
        total = 0.0j
        for i in range(4):
            a, b = corners[i], corners[(i + 1) % 4]
            ts = np.linspace(0.0, 1.0, n_per_side + 1)
            zs = a + (b - a) * ts
            vals = np.exp(-1j * zs) * pairing.values(zs)
            total += np.trapezoid(vals, zs)
        return total / TWO_PI

    n = 16
    prev = integral(n)
    while n <= _MAX_LOOP_SAMPLES:
        n *= 2
        cur = integral(n)
        if abs(cur - prev) < _PROJECTION_TOL:
            return complex(cur)
        prev = cur
    raise NumericalFailure(
        f"projection integral over {rect} did not converge to {_PROJECTION_TOL:.0e}"
    )
