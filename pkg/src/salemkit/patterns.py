"""Point patterns on the torus and exact violation scanning.

Three pattern kinds are supported:

* :class:`RoughPattern` -- an arbitrary union of grid cells in the tuple
  space T^(d*n), given by occupied cell indices at resolution 1/g.
* :class:`SurfacePattern` -- a smooth graph relation x_n = f(x_1..x_{n-1})
  with a Lipschitz bound, together with the construction cubes R_1..R_n.
* :class:`TranslationalPattern` -- a relation x_n - a*x_{n-1} in T(x_1..x_{n-2})
  with rational a != 0 and a finite target map T, periodized with period m.

A *violation* of a pattern at margin eta is an n-tuple of distinct,
s-separated configuration points whose relation residual is <= eta.
"""

from fractions import Fraction
from itertools import product

import numpy as np

from .errors import BudgetError, LayoutError
from .torus import Cube, cube_distance, double_cube, tdist, wrap

__all__ = [
    "RoughPattern",
    "SurfacePattern",
    "TranslationalPattern",
    "periodize",
    "violation_scan",
]

# Cap on exact enumeration work before a scan refuses to run.
DEFAULT_SCAN_BUDGET = 200_000_000


def periodize(targets, m, d=None):
    """Close a finite target set under translation by the grid (Z/m)^d / m.

    Parameters
    ----------
    targets : array_like, shape (..., K, d)
        Target points on T^d.
    m : int
        Period; the result contains ``K * m**d`` points per input.

    Returns
    -------
    ndarray, shape (..., K * m**d, d)
    """
    targets = np.asarray(targets, dtype=float)
    if targets.ndim < 2:
        raise ValueError("targets must have shape (..., K, d)")
    m = int(m)
    if m < 1:
        raise ValueError(f"period m must be >= 1, got {m}")
    if d is None:
        d = targets.shape[-1]
    shifts = np.array(list(product(range(m), repeat=d)), dtype=float) / m
    out = targets[..., :, None, :] + shifts[None, :, :]
    new_shape = targets.shape[:-2] + (targets.shape[-2] * m**d, d)
    return wrap(out.reshape(new_shape))


def _check_cubes(cubes, d, n, min_sep_factor=10.0):
    if len(cubes) != n:
        raise LayoutError(f"expected {n} cubes, got {len(cubes)}")
    for c in cubes:
        if c.d != d:
            raise LayoutError("cube dimension does not match pattern dimension")
    side = cubes[0].side
    for c in cubes[1:]:
        if abs(c.side - side) > 1e-12:
            raise LayoutError("construction cubes must share a common sidelength")
    for i in range(n):
        for j in range(i + 1, n):
            sep = cube_distance(cubes[i], cubes[j])
            if sep < min_sep_factor * side - 1e-12:
                raise LayoutError(
                    f"cubes {i} and {j} are {sep:.4g} apart; need >= "
                    f"{min_sep_factor}*sidelength = {min_sep_factor * side:.4g}"
                )


def _domain_mask(tuples, domain, d, n):
    """True where every slot x_i lies in the doubled construction cube Q_i.

    Cube-backed patterns define their relation on the product
    Q_1 x ... x Q_n only; tuples with a slot outside that product are not
    occurrences, no matter how small the algebraic residual.
    """
    shape = tuples.shape[:-1]
    flat = tuples.reshape(-1, d * n)
    mask = np.ones(flat.shape[0], dtype=bool)
    for i, q in enumerate(domain):
        mask &= q.contains(flat[:, i * d : (i + 1) * d])
    return mask.reshape(shape)


class RoughPattern:
    """Union of occupied grid cells in tuple space T^(d*n).

    Parameters
    ----------
    n : int
        Tuple length; the ambient space is T^(d*n).
    d : int
        Dimension of the underlying torus.
    g : int
        Grid size; cells have sidelength 1/g (``cell_resolution``).
    cells : array_like, shape (K, d*n), integer
        Occupied cell indices, each in [0, g).
    """

    kind = "rough"

    def __init__(self, n, d, g, cells):
        self.n = int(n)
        self.d = int(d)
        self.g = int(g)
        if self.n < 2 or self.d < 1 or self.g < 1:
            raise ValueError("need n >= 2, d >= 1, g >= 1")
        cells = np.asarray(cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != self.dn:
            raise ValueError(f"cells must have shape (K, {self.dn})")
        if cells.size and (cells.min() < 0 or cells.max() >= self.g):
            raise ValueError("cell indices must lie in [0, g)")
        # canonical order, duplicates dropped
        self.cells = np.unique(cells, axis=0)
        self._keys = np.sort(self._ravel(self.cells))

    @property
    def dn(self):
        return self.n * self.d

    @property
    def cell_resolution(self):
        return 1.0 / self.g

    def _ravel(self, cells):
        keys = np.zeros(len(cells), dtype=np.int64)
        for j in range(self.dn):
            keys = keys * self.g + cells[:, j]
        return keys

    def thickened_membership(self, points, threshold):
        """Is each point within ``threshold`` of the closed union of cells?

        ``points`` has shape (K, d*n); returns a boolean array of length K.
        ``threshold`` may be 0 (plain closed membership).
        """
        points = np.atleast_2d(wrap(points))
        if points.shape[1] != self.dn:
            raise ValueError(f"points must have shape (K, {self.dn})")
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        reach = int(np.ceil(threshold * self.g)) + 1
        if (2 * reach + 1) ** self.dn > 100_000:
            raise BudgetError(
                "threshold too coarse for the cell resolution: probe "
                f"window (2*{reach}+1)^{self.dn} is too large"
            )
        if len(self.cells) == 0:
            return np.zeros(len(points), dtype=bool)
        base = np.floor(points * self.g).astype(np.int64)
        base = np.minimum(base, self.g - 1)
        half = 0.5 / self.g
        out = np.zeros(len(points), dtype=bool)
        offsets = np.array(
            list(product(range(-reach, reach + 1), repeat=self.dn)),
            dtype=np.int64,
        )
        for off in offsets:
            cand = (base + off[None, :]) % self.g
            keys = np.zeros(len(cand), dtype=np.int64)
            for j in range(self.dn):
                keys = keys * self.g + cand[:, j]
            idx = np.searchsorted(self._keys, keys)
            idx = np.minimum(idx, len(self._keys) - 1)
            occupied = self._keys[idx] == keys
            if not occupied.any():
                continue
            centers = (cand[occupied] + 0.5) / self.g
            gap = np.abs(points[occupied] - centers)
            gap = np.minimum(gap, 1.0 - gap) - half
            np.clip(gap, 0.0, None, out=gap)
            dist = np.sqrt(np.sum(gap * gap, axis=1))
            hit = np.zeros(len(points), dtype=bool)
            hit[occupied] = dist <= threshold + 1e-15
            out |= hit
        return out

    def save(self, path):
        """Write the cell list: header line ``dn g``, one cell per line."""
        with open(path, "w") as fh:
            fh.write(f"{self.dn} {self.g}\n")
            for row in self.cells:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path, n=None):
        """Read a cell list written by :meth:`save`.

        The file records only the ambient dimension d*n; pass ``n`` to fix
        the tuple factorization (default: n = dn, d = 1 when dn is prime
        to nothing -- caller should supply n for d > 1).
        """
        with open(path) as fh:
            first = fh.readline().split()
            if len(first) != 2:
                raise ValueError(f"{path}: bad header, expected 'dn g'")
            dn, g = int(first[0]), int(first[1])
            rows = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = [int(v) for v in line.split()]
                if len(row) != dn:
                    raise ValueError(f"{path}: cell of length {len(row)}, expected {dn}")
                rows.append(row)
        if n is None:
            n = dn
        if dn % n:
            raise ValueError(f"{path}: ambient dimension {dn} not divisible by n={n}")
        cells = np.asarray(rows, dtype=np.int64).reshape(len(rows), dn)
        return cls(n=n, d=dn // n, g=g, cells=cells)


class SurfacePattern:
    """Graph relation x_n = f(x_1, ..., x_{n-1}) with Lipschitz bound L.

    ``f`` must be vectorized: it maps an array of shape (..., d*(n-1)) to
    target points of shape (..., d).  ``cubes`` are the n pairwise
    separated construction cubes R_1..R_n (separation >= 10 * sidelength).
    """

    kind = "surface"

    def __init__(self, d, n, cubes, f, lipschitz):
        self.d = int(d)
        self.n = int(n)
        if self.n < 2:
            raise ValueError("surface patterns need n >= 2")
        _check_cubes(cubes, self.d, self.n)
        self.cubes = list(cubes)
        self._domain = [double_cube(c) for c in self.cubes]
        self.f = f
        self.lipschitz = float(lipschitz)
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be >= 0")

    def residual(self, tuples):
        """|x_n - f(x_1..x_{n-1})| in the torus metric.

        ``tuples`` has shape (..., d*n).  The relation is defined on the
        product of the doubled construction cubes Q_1 x ... x Q_n; tuples
        outside that domain get residual +inf.
        """
        tuples = np.asarray(tuples, dtype=float)
        prefix = tuples[..., : self.d * (self.n - 1)]
        last = tuples[..., self.d * (self.n - 1) :]
        target = np.asarray(self.f(prefix), dtype=float)
        res = tdist(last, target)
        mask = _domain_mask(tuples, self._domain, self.d, self.n)
        return np.where(mask, res, np.inf)


class TranslationalPattern:
    """Relation x_n - a*x_{n-1} in periodized T(x_1..x_{n-2}).

    Parameters
    ----------
    d, n : int
        Torus dimension and tuple length (n >= 2).
    a : int or Fraction
        Nonzero rational dilation factor.  Products a*x on the torus are
        taken through the representative of x in [0, 1).
    period_m : int
        Periodization order; targets are closed under adding b/m for
        b in {0..m-1}^d.
    T : callable
        Vectorized target map: (..., d*(n-2)) -> (..., K, d).  For n = 2
        it receives an empty last axis and must broadcast.
    lipschitz : float
        Lipschitz bound of T in the Hausdorff metric.
    cubes : sequence of Cube, optional
        Construction cubes R_1..R_n (validated if given).
    """

    kind = "translational"

    def __init__(self, d, n, a, period_m, T, lipschitz, cubes=None):
        self.d = int(d)
        self.n = int(n)
        if self.n < 2:
            raise ValueError("translational patterns need n >= 2")
        a = Fraction(a)
        if a == 0:
            raise ValueError("dilation factor a must be nonzero")
        self.a = a
        self.period_m = int(period_m)
        if self.period_m < 1:
            raise ValueError("period_m must be >= 1")
        self.T = T
        self.lipschitz = float(lipschitz)
        self.cubes = None
        self._domain = None
        if cubes is not None:
            _check_cubes(cubes, self.d, self.n)
            self.cubes = list(cubes)
            self._domain = [double_cube(c) for c in self.cubes]

    @property
    def a_float(self):
        return float(self.a)

    def targets(self, prefix):
        """Periodized target set tilde-T for prefixes (..., d*(n-2))."""
        prefix = np.asarray(prefix, dtype=float)
        raw = np.asarray(self.T(prefix), dtype=float)
        return periodize(raw, self.period_m, self.d)

    def residual(self, tuples):
        """Distance from x_n - a*x_{n-1} to the periodized target set.

        When the pattern carries its cube layout, the relation is defined
        on the product of the doubled cubes Q_1 x ... x Q_n only; tuples
        with a slot outside that product get residual +inf.
        """
        tuples = np.asarray(tuples, dtype=float)
        dp = self.d * (self.n - 2)
        prefix = tuples[..., :dp]
        xprev = tuples[..., dp : dp + self.d]
        xlast = tuples[..., dp + self.d :]
        tgt = self.targets(prefix)  # (..., K', d)
        v = wrap(xlast - self.a_float * xprev)
        if tgt.shape[-2] == 0:
            # empty target set: nothing to be close to
            return np.full(v.shape[:-1], np.inf)
        dists = tdist(v[..., None, :], tgt)
        res = dists.min(axis=-1)
        if self._domain is not None:
            mask = _domain_mask(tuples, self._domain, self.d, self.n)
            res = np.where(mask, res, np.inf)
        return res


def _pairwise_sep_ok(points, idx_tuple, s):
    if s <= 0:
        return len(set(int(i) for i in idx_tuple)) == len(idx_tuple)
    pts = points[list(idx_tuple)]
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            if idx_tuple[i] == idx_tuple[j] or tdist(pts[i], pts[j]) < s:
                return False
    return True


def _residual_of(pattern, pts_tuple):
    flat = np.concatenate([np.atleast_1d(p) for p in pts_tuple])
    if pattern.kind == "rough":
        return 0.0 if pattern.thickened_membership(flat[None, :], 0.0)[0] else np.inf
    return float(pattern.residual(flat[None, :])[0])


def _scan_brute(points, pattern, margin, separation_s, budget):
    n = pattern.n
    N = len(points)
    if N**n > budget:
        raise BudgetError(
            f"exact scan needs {N}^{n} tuple evaluations; over budget {budget}"
        )
    d = points.shape[1]
    hits = []
    resid = []
    # chunked cartesian product over index tuples, so peak memory stays
    # bounded even when N^n approaches the evaluation budget
    chunk = 2_000_000
    total = N**n
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total), dtype=np.int64)
        idx = np.stack(np.unravel_index(flat, (N,) * n), axis=1)
        distinct = np.ones(len(idx), dtype=bool)
        for i in range(n):
            for j in range(i + 1, n):
                distinct &= idx[:, i] != idx[:, j]
        idx = idx[distinct]
        if len(idx) == 0:
            continue
        tuples = points[idx].reshape(len(idx), n * d)
        if pattern.kind == "rough":
            ok = pattern.thickened_membership(tuples, margin)
            rvals = np.where(ok, 0.0, np.inf)
        else:
            rvals = pattern.residual(tuples)
            ok = rvals <= margin + 1e-15
        for k in np.nonzero(ok)[0]:
            if _pairwise_sep_ok(points, idx[k], separation_s):
                hits.append(tuple(int(v) for v in idx[k]))
                resid.append(float(rvals[k]))
    return np.asarray(hits, dtype=np.int64).reshape(len(hits), n), np.asarray(resid)


def _scan_translational_1d(points, pattern, margin, separation_s, budget):
    """Fast path for d = 1 translational patterns with integer a.

    Folds the relation modulo the periodization grid 1/m, so each
    (x_{n-1}, x_n) pair costs one sorted lookup per raw target.
    """
    n = pattern.n
    x = points[:, 0]
    N = len(x)
    m = pattern.period_m
    a = pattern.a_float
    # cube-backed relations only count tuples inside the doubled cubes, so
    # each slot's candidates shrink to the points its cube contains
    if pattern._domain is not None:
        slot_idx = [
            np.nonzero(q.contains(points))[0] for q in pattern._domain
        ]
        if any(len(s) == 0 for s in slot_idx):
            return np.empty((0, n), dtype=np.int64), np.empty(0)
    else:
        slot_idx = [np.arange(N, dtype=np.int64)] * n
    # prefix tuples (x_1..x_{n-2}); enumerate their raw targets once
    dp = n - 2
    if N**dp * N > budget:
        raise BudgetError("translational scan over budget")
    if dp == 0:
        prefix_idx = np.zeros((1, 0), dtype=np.int64)
        raw = np.asarray(pattern.T(np.zeros((1, 0))), dtype=float)
        raw = raw.reshape(1, -1)
    elif dp == 1:
        prefix_idx = slot_idx[0][:, None]
        raw = np.asarray(
            pattern.T(x[slot_idx[0]][:, None]), dtype=float
        ).reshape(len(slot_idx[0]), -1)
    else:
        grid = np.indices([len(s) for s in slot_idx[:dp]]).reshape(dp, -1).T
        prefix_idx = np.stack(
            [slot_idx[j][grid[:, j]] for j in range(dp)], axis=1
        )
        raw = np.asarray(
            pattern.T(x[prefix_idx].reshape(len(prefix_idx), dp)), dtype=float
        ).reshape(len(prefix_idx), -1)
    K = raw.shape[1]
    period = 1.0 / m
    eps = margin + 1e-15
    prev_idx = slot_idx[n - 2]
    xprev = x[prev_idx]
    last_idx = slot_idx[n - 1]
    xfold = wrap(x[last_idx]) % period
    order = np.argsort(xfold, kind="stable")
    xs = xfold[order]
    # three period-images of the sorted residues, so a +-eps window around
    # any folded value in [0, period) always lands inside the probe array
    xs_ext = np.concatenate([xs - period, xs, xs + period])
    orig = last_idx[order]
    ord_ext = np.concatenate([orig, orig, orig])
    # quantized occupancy bitmap for the cheap first-stage filter: bucket
    # width h >= 2 eps, so a true hit perturbs the key by at most one
    # bucket, and the marked +-2 neighborhood absorbs float rounding of
    # the key computation; survivors get the exact window test below
    h = max(2.0 * eps, period / 2.0**26)
    nb = max(1, int(np.ceil(period / h)))
    kx = np.minimum((xs / h).astype(np.int64), nb - 1)
    mark = np.zeros(nb, dtype=bool)
    for off in (-2, -1, 0, 1, 2):
        mark[(kx + off) % nb] = True
    hits = {}
    P = len(prefix_idx)
    Np = len(prev_idx)
    chunk = max(1, 8_000_000 // max(Np * K, 1))
    for p0 in range(0, P, chunk):
        pr_idx = prefix_idx[p0 : p0 + chunk]
        pr_raw = raw[p0 : p0 + chunk]  # (B, K)
        # base values a*x_{n-1} + t for every (prefix, k_{n-1}, target),
        # folded modulo the periodization grid
        base = a * xprev[None, :, None] + pr_raw[:, None, :]  # (B, Np, K)
        q = (wrap(base) % period).reshape(-1)
        qk = np.minimum((q / h).astype(np.int64), nb - 1)
        cand = np.nonzero(mark[qk])[0]
        if len(cand) == 0:
            continue
        lo = np.searchsorted(xs_ext, q[cand] - eps, side="left")
        hi = np.searchsorted(xs_ext, q[cand] + eps, side="right")
        for ci in np.nonzero(hi > lo)[0]:
            flat = int(cand[ci])
            b, rem = divmod(flat, Np * K)
            k_prev_pos, _t = divmod(rem, K)
            k_prev = int(prev_idx[k_prev_pos])
            for c in range(lo[ci], hi[ci]):
                k_last = int(ord_ext[c])
                idx_tuple = tuple(int(v) for v in pr_idx[b]) + (k_prev, k_last)
                flatpt = x[list(idx_tuple)]
                r = float(pattern.residual(flatpt[None, :])[0])
                if r <= eps and _pairwise_sep_ok(points, idx_tuple, separation_s):
                    hits[idx_tuple] = r
    tuples = np.asarray(sorted(hits), dtype=np.int64).reshape(len(hits), n)
    return tuples, np.asarray([hits[tuple(t)] for t in tuples])


def _scan_surface_1d(points, pattern, margin, separation_s, budget):
    """Surface scan for d = 1: enumerate prefixes, probe the last slot."""
    n = pattern.n
    x = points[:, 0]
    N = len(x)
    if N ** (n - 1) > budget:
        raise BudgetError("surface scan over budget")
    # the relation only counts tuples inside the doubled cubes, so each
    # slot's candidates shrink to the points its cube contains
    slot_idx = [np.nonzero(q.contains(points))[0] for q in pattern._domain]
    if any(len(s) == 0 for s in slot_idx):
        return np.empty((0, n), dtype=np.int64), np.empty(0)
    last_idx = slot_idx[n - 1]
    order = np.argsort(x[last_idx], kind="stable")
    xs = x[last_idx][order]
    orig = last_idx[order]
    NL = len(xs)
    hits = {}
    grid = np.indices([len(s) for s in slot_idx[: n - 1]]).reshape(n - 1, -1).T
    idx = np.stack(
        [slot_idx[j][grid[:, j]] for j in range(n - 1)], axis=1
    )
    chunk = 2_000_000
    for p0 in range(0, len(idx), chunk):
        pr = idx[p0 : p0 + chunk]
        tgt = np.asarray(
            pattern.f(x[pr].reshape(len(pr), n - 1)), dtype=float
        ).reshape(-1)
        tgt = wrap(tgt)
        lo = np.searchsorted(xs, tgt - margin - 1e-15, side="left")
        hi = np.searchsorted(xs, tgt + margin + 1e-15, side="right")
        wlo = np.searchsorted(xs, tgt - margin - 1e-15 + 1.0, side="left")
        whi = np.searchsorted(xs, tgt + margin + 1e-15 - 1.0, side="right")
        interesting = (hi > lo) | (wlo < NL) | (whi > 0)
        for b in np.nonzero(interesting)[0]:
            cands = list(range(lo[b], hi[b]))
            cands += list(range(wlo[b], NL))
            cands += list(range(0, whi[b]))
            for c in set(cands):
                k_last = int(orig[c])
                idx_tuple = tuple(int(v) for v in pr[b]) + (k_last,)
                flatpt = x[list(idx_tuple)]
                r = float(pattern.residual(flatpt[None, :])[0])
                if r <= margin + 1e-15 and _pairwise_sep_ok(
                    points, idx_tuple, separation_s
                ):
                    hits[idx_tuple] = r
    tuples = np.asarray(sorted(hits), dtype=np.int64).reshape(len(hits), n)
    return tuples, np.asarray([hits[tuple(t)] for t in tuples])


def violation_scan(
    points, pattern, margin=0.0, separation_s=0.0, budget=DEFAULT_SCAN_BUDGET
):
    """Exhaustively list pattern violations among configuration points.

    Returns ``(tuples, residuals)`` where ``tuples`` is an integer array of
    shape (V, n): every ordered n-tuple of distinct, pairwise s-separated
    point indices whose pattern residual is <= margin.  Raises
    :class:`BudgetError` when no exact strategy fits the work budget.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != pattern.d:
        raise ValueError("points dimension does not match pattern")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if (
        pattern.kind == "translational"
        and points.shape[1] == 1
        and pattern.a.denominator == 1
    ):
        return _scan_translational_1d(points, pattern, margin, separation_s, budget)
    if pattern.kind == "surface" and points.shape[1] == 1:
        return _scan_surface_1d(points, pattern, margin, separation_s, budget)
    return _scan_brute(points, pattern, margin, separation_s, budget)
