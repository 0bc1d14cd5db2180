"""Randomized avoiding constructions.

Each builder samples stratified point clouds on T^d, removes the indices
whose tuples come too close to the pattern (the incidence index set), and
returns a weighted configuration with provenance.

Scale note.  The incidence threshold from the asymptotic analysis is
``2*sqrt(n)*(L+1)*r``; at desk scale (M in the thousands) that threshold
can remove essentially every point for lambda near the critical exponent.
Builders therefore cap the threshold so the *expected* number of removals
stays at the removal budget the analysis actually allots (~ sqrt(M)),
using a pilot estimate of the residual distribution.  Whenever the theory
threshold already fits the budget it is used unchanged.  Both values and
the rule applied are recorded in the provenance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConstructionFailure, LayoutError
from .patterns import RoughPattern, SurfacePattern, TranslationalPattern
from .torus import double_cube, load_points, load_sidecar, save_points, save_sidecar, wrap

__all__ = [
    "ConstructionParams",
    "WeightedConfiguration",
    "derive_radius",
    "incidence_index_set",
    "build_rough",
    "build_surface",
    "build_translational",
]

INCIDENCE_BUDGET = 300_000_000


@dataclass
class ConstructionParams:
    """Knobs shared by all three builders."""

    M: int
    lam: float
    seed: int = 0
    delta: float = 1.0
    kappa: float = 0.2
    separation_s: float = 0.0
    # None -> min(theory threshold, budget-capped threshold)
    filter_scale: float | None = None
    # target expected removals for the cap; None -> sqrt(M)
    removal_budget: float | None = None

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not 0.0 < self.lam:
            raise ValueError("lambda must be positive")


def derive_radius(M, lam):
    """Radius r with r**(-lam) <= M <= r**(-lam) + 1."""
    if M < 1:
        raise ValueError("M must be >= 1")
    r = float(M) ** (-1.0 / lam)
    # nudge so the invariant holds despite rounding
    while r ** (-lam) > M:
        r = np.nextafter(r, 1.0)
    return r


def _stream(seed, stratum):
    """Deterministic counter-based RNG stream per (seed, stratum)."""
    key = np.array([np.uint64(seed), np.uint64(stratum)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class WeightedConfiguration:
    """Weighted point configuration S with per-point weights a_k.

    Invariants: weights are positive... well, nonnegative; their sum is
    normalized to N (the Lemma hypothesis sum a >= N/2 then holds with
    room to spare); radius_r satisfies the derive_radius bracketing.
    """

    points: np.ndarray
    weights: np.ndarray
    radius_r: float
    lam: float
    strata: list = field(default_factory=list)  # (name, start, stop)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.points):
            raise ValueError("one weight per point required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def N(self):
        return len(self.points)

    @property
    def d(self):
        return self.points.shape[1]

    def stratum_indices(self, name):
        for nm, start, stop in self.strata:
            if nm == name:
                return np.arange(start, stop)
        raise KeyError(name)

    def save(self, path):
        save_points(path, self.points, self.weights)
        save_sidecar(
            path,
            {
                "radius_r": self.radius_r,
                "lam": self.lam,
                "d": self.d,
                "N": self.N,
                "strata": [[nm, int(a), int(b)] for nm, a, b in self.strata],
                "provenance": self.provenance,
            },
        )

    @classmethod
    def load(cls, path):
        pts, ws = load_points(path)
        side = load_sidecar(path)
        if not side:
            raise ValueError(f"{path}: missing JSON sidecar")
        return cls(
            points=pts,
            weights=ws,
            radius_r=float(side["radius_r"]),
            lam=float(side["lam"]),
            strata=[(nm, int(a), int(b)) for nm, a, b in side.get("strata", [])],
            provenance=side.get("provenance", {}),
        )


def _normalize_weights(raw_weights):
    """Rescale weights so they sum to N; returns (weights, scale)."""
    total = float(raw_weights.sum())
    N = len(raw_weights)
    if total <= 0:
        raise ConstructionFailure("all stratum weights vanished")
    scale = N / total
    return raw_weights * scale, scale


def _cap_threshold(tau_theory, residual_pilot, M, n, removal_budget):
    """Budget-capped incidence threshold.

    ``residual_pilot`` is a sorted array of pilot residuals from random
    independent tuples.  The cap solves E[#removed] ~ M^n * F(tau) =
    removal_budget through a linear model F(tau) ~ c0 + c1*tau fitted to
    the lower tail of the pilot.
    """
    B = len(residual_pilot)
    target_F = removal_budget / float(M) ** n
    # accept the theory threshold only when the pilot can actually certify
    # F(tau_theory) <= target_F: a raw count of zero just means F < 1/B,
    # so use the rule-of-three Poisson upper bound instead of the count
    n_below = int(np.searchsorted(residual_pilot, tau_theory, side="right"))
    if (n_below + 3.0) / B <= target_F:
        return tau_theory, "theory"
    c0 = np.searchsorted(residual_pilot, 0.0, side="right") / B
    if c0 >= target_F:
        # atoms alone exceed the budget; cap as low as possible
        return 0.0, "budget-capped(floor)"
    # slope from a low quantile of the pilot
    k = max(20, B // 1000)
    tau_c = residual_pilot[k - 1]
    if tau_c <= 0:
        return 0.0, "budget-capped(floor)"
    c1 = (k / B - c0) / tau_c
    tau = (target_F - c0) / max(c1, 1e-300)
    return min(tau, tau_theory), "budget-capped"


def _wilson_interval(successes, total, z=1.96):
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def incidence_index_set(strata, pattern, threshold, budget=INCIDENCE_BUDGET):
    """Indices into the last slot's pool taking part in a near-incidence.

    ``strata`` is either a single point array (one shared pool, tuples use
    distinct indices, as in the rough construction) or one pool per tuple
    slot (stratified constructions, distinctness is automatic).  Returns
    the index set I as a sorted integer array; exact — fast paths must
    agree with full enumeration.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    strata = [np.atleast_2d(np.asarray(s, dtype=float)) for s in strata]
    n = pattern.n
    if len(strata) == 1:
        pool = strata[0]
        if float(len(pool)) ** n > budget:
            raise BudgetError("single-pool incidence enumeration over budget")
        from .patterns import _scan_brute

        tuples, _ = _scan_brute(pool, pattern, threshold, 0.0, budget)
        if len(tuples) == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(tuples[:, -1])
    if len(strata) != n:
        raise ValueError(f"need 1 or {n} strata pools, got {len(strata)}")
    domain = getattr(pattern, "_domain", None)
    if domain is not None:
        # cube-backed relations are only defined on Q_1 x ... x Q_n, so
        # slots outside their doubled cube can never take part in a
        # near-incidence; dropping them up front keeps the window-based
        # fast paths exact under the domain-restricted residual
        keep = [np.nonzero(q.contains(s))[0] for q, s in zip(domain, strata)]
        if any(len(k) != len(s) for k, s in zip(keep, strata)):
            if any(len(k) == 0 for k in keep):
                return np.empty(0, dtype=np.int64)
            sub = incidence_index_set(
                [s[k] for s, k in zip(strata, keep)], pattern, threshold, budget
            )
            return keep[-1][sub]
    if pattern.kind == "translational" and pattern.d == 1:
        return _translational_incidence_1d(
            strata[: n - 2], strata[n - 2], strata[n - 1].reshape(-1),
            pattern, threshold,
        )
    if pattern.kind == "surface" and pattern.d == 1:
        return _surface_incidence_1d(
            strata[: n - 1], strata[n - 1].reshape(-1), pattern.f, threshold
        )
    return _incidence_brute(strata, pattern, threshold, budget)


def _incidence_brute(strata, pattern, threshold, budget, chunk=2_000_000):
    """Reference path: cross-product enumeration over the pools, chunked
    so peak memory stays bounded regardless of the product size."""
    n = pattern.n
    shapes = [len(s) for s in strata]
    total = int(np.prod([float(s) for s in shapes]))
    if float(np.prod([float(s) for s in shapes])) > budget:
        raise BudgetError("incidence enumeration over budget")
    hit_last = []
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total), dtype=np.int64)
        idx = np.stack(np.unravel_index(flat, shapes), axis=1)
        tuples = np.concatenate(
            [strata[j][idx[:, j]] for j in range(n)], axis=1
        )
        if pattern.kind == "rough":
            hit = pattern.thickened_membership(tuples, threshold)
        else:
            hit = pattern.residual(tuples) <= threshold
        if hit.any():
            hit_last.append(idx[hit, -1])
    if not hit_last:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(hit_last))


# ------------------------------------------------------------------ rough


def build_rough(pattern, params):
    """Uniform cloud on T^d minus the incidence index set of a rough pattern.

    Samples M i.i.d. uniform points, removes every index that ends a tuple
    lying within the threshold of the occupied cells, keeps unit weights.
    """
    if not isinstance(pattern, RoughPattern):
        raise TypeError("build_rough needs a RoughPattern")
    M, lam = params.M, params.lam
    r = derive_radius(M, lam)
    n, d = pattern.n, pattern.d
    rng = _stream(params.seed, 0)
    X = rng.random((M, d))
    tau_theory = 2.0 * math.sqrt(n) * r
    if params.filter_scale is not None:
        tau, rule = params.filter_scale * r, "explicit"
    else:
        budget = params.removal_budget or math.sqrt(M)
        pilot_rng = _stream(params.seed, 10_000)
        B = 200_000
        tup = pilot_rng.random((B, n * d))
        # membership is an indicator, not a distance, so fit the removal
        # probability on a small grid of thresholds instead of a CDF
        taus = np.linspace(0.0, tau_theory, 9)
        F = np.array(
            [pattern.thickened_membership(tup, t).mean() for t in taus]
        )
        target_F = budget / float(M) ** n
        # same rule-of-three guard as _cap_threshold: a zero pilot count
        # cannot certify F below 1/B
        if F[-1] + 3.0 / B <= target_F:
            tau, rule = tau_theory, "theory"
        elif F[0] >= target_F:
            tau, rule = 0.0, "budget-capped(floor)"
        else:
            k = int(np.searchsorted(F, target_F))
            # linear interpolation between bracketing thresholds
            t0, t1, f0, f1 = taus[k - 1], taus[k], F[k - 1], F[k]
            tau = t0 if f1 == f0 else t0 + (target_F - f0) * (t1 - t0) / (f1 - f0)
            rule = "budget-capped"
    removed = incidence_index_set([X], pattern, tau)
    keep = np.setdiff1d(np.arange(M), removed)
    if len(keep) < M / 2:
        raise ConstructionFailure(
            f"only {len(keep)} of {M} points survive rough filtering"
        )
    pts = X[keep]
    return WeightedConfiguration(
        points=pts,
        weights=np.ones(len(keep)),
        radius_r=r,
        lam=lam,
        strata=[("uniform", 0, len(keep))],
        provenance={
            "kind": "rough",
            "M": M,
            "seed": params.seed,
            "n": n,
            "d": d,
            "tau_theory": tau_theory,
            "tau_used": float(tau),
            "tau_rule": rule,
            "n_removed": int(len(removed)),
        },
    )


# ------------------------------------------------------------------ surface


def _bump_ramp(v):
    """C-infinity ramp: 0 for v <= 0, 1 for v >= 1."""
    v = np.clip(v, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        b0 = np.where(v > 0, np.exp(-1.0 / np.maximum(v, 1e-300)), 0.0)
        b1 = np.where(v < 1, np.exp(-1.0 / np.maximum(1.0 - v, 1e-300)), 0.0)
    return b0 / (b0 + b1)


def _psi_axis(offset, side):
    """1-D bump profile: 1 within the 1.5-cube, 0 outside the doubled cube.

    ``offset`` is the wrapped signed distance to the cube center; the
    plateau half-width is 0.75*side, the support half-width is side.
    """
    t = np.abs(offset)
    return _bump_ramp((side - t) / (0.25 * side))


def _psi_cube(points, cube):
    """Product bump for one cube: 1 on 1.5*R, 0 off Q = 2*R."""
    pts = np.atleast_2d(points)
    center = cube.center
    off = (pts - center[None, :] + 0.5) % 1.0 - 0.5
    vals = _psi_axis(off, cube.side)
    return vals.prod(axis=1)


def _psi_integral(cube, d):
    """Integral of the product bump over T^d (one-axis quadrature, product)."""
    t = np.linspace(-cube.side, cube.side, 8193)
    w = _psi_axis(t, cube.side)
    axis = np.trapezoid(w, t)
    return axis**d


def _sample_psi(rng, cube, count):
    """Draw ``count`` points with density psi_i / A_i by rejection."""
    out = np.empty((count, cube.d))
    have = 0
    Q = double_cube(cube)
    while have < count:
        cand = Q.sample(rng, 2 * (count - have) + 16)
        u = rng.random(len(cand))
        acc = cand[u < _psi_cube(cand, cube)]
        take = min(len(acc), count - have)
        out[have : have + take] = acc[:take]
        have += take
    return out


def _sample_psi0(rng, cubes, count, d):
    """Draw from the residual bump psi_0 = 1 - sum_i psi_i by rejection."""
    out = np.empty((count, d))
    have = 0
    while have < count:
        cand = rng.random((4 * (count - have) + 16, d))
        density = np.ones(len(cand))
        for c in cubes:
            density -= _psi_cube(cand, c)
        u = rng.random(len(cand))
        acc = cand[u < density]
        take = min(len(acc), count - have)
        out[have : have + take] = acc[:take]
        have += take
    return out


def _surface_incidence_1d(strata_pts, xlast, f, tau):
    """Index set of stratum-n points within tau of f(prefix) for some prefix."""
    M = len(xlast)
    order = np.argsort(xlast, kind="stable")
    xs = xlast[order]
    pools = [p.reshape(-1) for p in strata_pts]
    shapes = [len(p) for p in pools]
    total = int(np.prod([float(s) for s in shapes]))
    if total > INCIDENCE_BUDGET:
        raise BudgetError("surface incidence enumeration over budget")
    idx = np.indices(shapes).reshape(len(shapes), -1).T
    removed = np.zeros(M, dtype=bool)
    chunk = 2_000_000
    for p0 in range(0, len(idx), chunk):
        pr = idx[p0 : p0 + chunk]
        args = np.stack(
            [pools[j][pr[:, j]] for j in range(len(pools))], axis=1
        )
        tgt = wrap(np.asarray(f(args), dtype=float).reshape(-1))
        for shift in (0.0, -1.0, 1.0):
            lo = np.searchsorted(xs, tgt + shift - tau, side="left")
            hi = np.searchsorted(xs, tgt + shift + tau, side="right")
            for b in np.nonzero(hi > lo)[0]:
                removed[order[lo[b] : hi[b]]] = True
    return np.nonzero(removed)[0]


def build_surface(pattern, params):
    """Stratified construction avoiding a smooth graph x_n = f(x_1..x_{n-1}).

    One stratum per cube plus a residual stratum, sampled from a smooth
    partition of unity; the final stratum is filtered against f.
    """
    if not isinstance(pattern, SurfacePattern):
        raise TypeError("build_surface needs a SurfacePattern")
    M, lam = params.M, params.lam
    n, d = pattern.n, pattern.d
    r = derive_radius(M, lam)
    L = pattern.lipschitz
    cubes = pattern.cubes
    A = [_psi_integral(c, d) for c in cubes]
    A0 = 1.0 - sum(A)
    if A0 <= 0:
        raise LayoutError("cubes cover the torus; residual stratum is empty")
    strata_pts = []
    for i, c in enumerate(cubes):
        strata_pts.append(_sample_psi(_stream(params.seed, i + 1), c, M))
    pts0 = _sample_psi0(_stream(params.seed, 0), cubes, M, d)

    tau_theory = 2.0 * math.sqrt(n) * (L + 1.0) * r
    if params.filter_scale is not None:
        tau, rule = params.filter_scale * r, "explicit"
    else:
        budget = params.removal_budget or math.sqrt(M)
        prng = _stream(params.seed, 10_000)
        B = 200_000
        pil = [double_cube(c).sample(prng, B) for c in cubes[: n - 1]]
        args = np.concatenate(pil, axis=1)
        tgt = np.asarray(pattern.f(args), dtype=float)
        last = double_cube(cubes[n - 1]).sample(prng, B)
        from .torus import tdist

        resid = np.sort(tdist(last, tgt))
        tau, rule = _cap_threshold(tau_theory, resid, M, n, budget)

    removed = incidence_index_set(strata_pts, pattern, tau)
    keep = np.setdiff1d(np.arange(M), removed)
    if len(keep) < M / 2:
        raise ConstructionFailure(
            f"only {len(keep)} of {M} stratum-{n} points survive filtering"
        )

    blocks = [pts0] + strata_pts[: n - 1] + [strata_pts[n - 1][keep]]
    raw_w = np.concatenate(
        [np.full(len(b), w) for b, w in zip(blocks, [A0] + A[: n - 1] + [A[n - 1]])]
    )
    weights, scale = _normalize_weights(raw_w)
    points = np.concatenate(blocks, axis=0)
    strata = []
    pos = 0
    names = ["residual"] + [f"cube{i}" for i in range(1, n)] + [f"cube{n}(kept)"]
    for nm, b in zip(names, blocks):
        strata.append((nm, pos, pos + len(b)))
        pos += len(b)
    return WeightedConfiguration(
        points=points,
        weights=weights,
        radius_r=r,
        lam=lam,
        strata=strata,
        provenance={
            "kind": "surface",
            "M": M,
            "seed": params.seed,
            "n": n,
            "d": d,
            "lipschitz": L,
            "tau_theory": tau_theory,
            "tau_used": float(tau),
            "tau_rule": rule,
            "n_removed": int(len(removed)),
            "stratum_weights": [A0] + list(A),
            "weight_scale": scale,
        },
    )


# ------------------------------------------------------------ translational


def _complement_sample(rng, cubes, count, d):
    """Uniform sample on T^d minus the union of doubled cubes."""
    out = np.empty((count, d))
    have = 0
    doubled = [double_cube(c) for c in cubes]
    while have < count:
        cand = rng.random((2 * (count - have) + 16, d))
        mask = np.ones(len(cand), dtype=bool)
        for q in doubled:
            mask &= ~q.contains(cand)
        acc = cand[mask]
        take = min(len(acc), count - have)
        out[have : have + take] = acc[:take]
        have += take
    return out


def _translational_incidence_1d(prefix_pools, xprev, xlast, pattern, tau):
    """Removal set for d=1: fold the relation modulo the periodization grid."""
    a = pattern.a_float
    period = 1.0 / pattern.period_m
    M = len(xlast)
    fol = (wrap(xlast) % period).reshape(-1)
    order = np.argsort(fol, kind="stable")
    xs = fol[order]
    if prefix_pools:
        shapes = [len(p) for p in prefix_pools]
        idx = np.indices(shapes).reshape(len(shapes), -1).T
        args = np.stack(
            [prefix_pools[j][idx[:, j], 0] for j in range(len(prefix_pools))], axis=1
        )
    else:
        args = np.zeros((1, 0))
    raw = np.asarray(pattern.T(args), dtype=float).reshape(len(args), -1)
    K = raw.shape[1]
    if len(args) * len(xprev) * K > INCIDENCE_BUDGET:
        raise BudgetError("translational incidence over budget")
    removed = np.zeros(M, dtype=bool)
    chunk = max(1, 4_000_000 // max(len(xprev) * K, 1))
    for p0 in range(0, len(raw), chunk):
        base = a * xprev[None, :, 0, None] + raw[p0 : p0 + chunk][:, None, :]
        q = (wrap(base) % period).reshape(-1)
        for shift in (0.0, -period, period):
            lo = np.searchsorted(xs, q + shift - tau, side="left")
            hi = np.searchsorted(xs, q + shift + tau, side="right")
            for b in np.nonzero(hi > lo)[0]:
                removed[order[lo[b] : hi[b]]] = True
    return np.nonzero(removed)[0]


def build_translational(pattern, params):
    """Stratified construction avoiding x_n - a*x_{n-1} in periodized T.

    Requires the pattern to carry its cube layout (sidelength 1/(2am)).
    Stratum 0 is uniform on the complement of the doubled cubes; strata
    1..n are uniform on the doubled cubes; stratum n is filtered against
    the periodized targets.  Weights follow the removal probability P_hat.
    """
    if not isinstance(pattern, TranslationalPattern):
        raise TypeError("build_translational needs a TranslationalPattern")
    if pattern.cubes is None:
        raise LayoutError("translational construction requires pattern cubes")
    M, lam = params.M, params.lam
    n, d = pattern.n, pattern.d
    r = derive_radius(M, lam)
    cubes = pattern.cubes
    side_expected = 1.0 / (2.0 * abs(pattern.a_float) * pattern.period_m)
    if abs(cubes[0].side - side_expected) > 1e-9:
        raise LayoutError(
            f"cube sidelength {cubes[0].side} != 1/(2|a|m) = {side_expected}"
        )
    doubled = [double_cube(c) for c in cubes]
    vol_q = doubled[0].volume
    vol_comp = 1.0 - n * vol_q

    pts0 = _complement_sample(_stream(params.seed, 0), cubes, M, d)
    strata_pts = [doubled[i].sample(_stream(params.seed, i + 1), M) for i in range(n)]

    L = pattern.lipschitz
    tau_theory = 2.0 * math.sqrt(n) * (L + 1.0) * r
    if params.filter_scale is not None:
        tau, rule = params.filter_scale * r, "explicit"
    else:
        budget = params.removal_budget or math.sqrt(M)
        prng = _stream(params.seed, 10_000)
        B = 200_000
        pil_tuple = np.concatenate(
            [doubled[i].sample(prng, B) for i in range(n)], axis=1
        )
        resid = np.sort(pattern.residual(pil_tuple))
        tau, rule = _cap_threshold(tau_theory, resid, M, n, budget)

    removed = incidence_index_set(strata_pts, pattern, tau)
    P_hat = len(removed) / M
    ci = _wilson_interval(len(removed), M)
    if P_hat > 0.5:
        raise ConstructionFailure(
            f"estimated removal probability {P_hat:.3f} > 1/2"
        )
    keep = np.setdiff1d(np.arange(M), removed)
    if len(keep) < M / 2:
        raise ConstructionFailure("fewer than M/2 stratum-n points survive")

    A0 = vol_comp * P_hat
    Ai = vol_q * P_hat
    An = vol_q
    blocks = [pts0] + strata_pts[: n - 1] + [strata_pts[n - 1][keep]]
    raw_w = np.concatenate(
        [
            np.full(len(blocks[0]), A0),
            *[np.full(M, Ai) for _ in range(n - 1)],
            np.full(len(keep), An),
        ]
    )
    weights, scale = _normalize_weights(raw_w)
    points = np.concatenate(blocks, axis=0)
    strata = []
    pos = 0
    names = ["complement"] + [f"cube{i}" for i in range(1, n)] + [f"cube{n}(kept)"]
    for nm, b in zip(names, blocks):
        strata.append((nm, pos, pos + len(b)))
        pos += len(b)
    return WeightedConfiguration(
        points=points,
        weights=weights,
        radius_r=r,
        lam=lam,
        strata=strata,
        provenance={
            "kind": "translational",
            "M": M,
            "seed": params.seed,
            "n": n,
            "d": d,
            "a": str(pattern.a),
            "period_m": pattern.period_m,
            "tau_theory": tau_theory,
            "tau_used": float(tau),
            "tau_rule": rule,
            "P_hat": P_hat,
            "P_hat_wilson95": list(ci),
            "n_removed": int(len(removed)),
            "stratum_weights": [A0] + [Ai] * (n - 1) + [An],
            "weight_scale": scale,
        },
    )
