"""Empirical dimension estimators.

Box counting gives a lower-Minkowski surrogate for finite point sets
(optionally thickened into unions of balls); Fourier-decay exponents give
a fordim surrogate for grid measures and weighted configurations.  Both
are finite-scale estimates: every result carries the scale or annulus
table it was fitted on.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["DimensionEstimate", "box_dimension", "fourier_dimension"]


@dataclass
class DimensionEstimate:
    kind: str  # "box" | "fourier"
    value: float
    scales: list
    table: list
    residual: float
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": self.kind,
            "value": self.value,
            "scales": list(self.scales),
            "table": self.table,
            "residual": self.residual,
            "notes": self.notes,
        }


def _count_boxes(points, scale, thicken):
    """Number of scale-boxes hit by the union of closed balls of radius
    ``thicken`` around the points (plain occupancy when thicken = 0)."""
    N, d = points.shape
    g = max(1, int(round(1.0 / scale)))
    cells = np.floor(points * g).astype(np.int64) % g
    if thicken <= 0:
        return len(np.unique(cells, axis=0))
    reach = int(math.floor(thicken * g)) + 1
    if (2 * reach + 1) ** d > 100_000:
        raise ValueError("thickening window too large for this scale")
    offs = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*[offs] * d, indexing="ij")
    window = np.stack([w.reshape(-1) for w in grids], axis=1)  # (W, d)
    # candidate cells and exact point-to-box distances, per axis
    cand = (cells[:, None, :] + window[None, :, :]) % g  # (N, W, d)
    lo = cand / g
    hi = (cand + 1) / g
    x = points[:, None, :]
    # wrapped gap from the point to the box interval on each axis
    gap = np.zeros_like(lo)
    for shift in (-1.0, 0.0, 1.0):
        a = lo + shift - x
        b = x - (hi + shift)
        gcur = np.maximum(np.maximum(a, b), 0.0)
        gap = gcur if shift == -1.0 else np.minimum(gap, gcur)
    dist = np.sqrt((gap**2).sum(axis=2))
    hit = cand[dist <= thicken + 1e-12]
    return len(np.unique(hit, axis=0))


def box_dimension(points, scales, thicken=0.0):
    """Box-counting dimension estimate over the given decreasing scales.

    Fits log(count) against log(1/scale) by least squares (with
    intercept); the slope is the estimate, clipped to [0, d].  With
    ``thicken`` > 0 the counts are for the union of closed balls of that
    radius, which is the honest object when the input is a construction's
    retained point set (below its radius the count saturates).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    scales = [float(s) for s in scales]
    if len(scales) < 4:
        raise ValueError("need at least 4 scales")
    if any(s1 >= s0 for s0, s1 in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    counts = [_count_boxes(points, s, thicken) for s in scales]
    logs = np.log([1.0 / s for s in scales])
    logc = np.log(counts)
    A = np.stack([logs, np.ones_like(logs)], axis=1)
    (slope, intercept), res, _, _ = np.linalg.lstsq(A, logc, rcond=None)
    residual = float(np.sqrt(res[0] / len(scales))) if len(res) else 0.0
    table = [
        {"scale": s, "count": int(c), "log_inv_scale": float(l), "log_count": float(lc)}
        for s, c, l, lc in zip(scales, counts, logs, logc)
    ]
    return DimensionEstimate(
        kind="box",
        value=float(np.clip(slope, 0.0, d)),
        scales=scales,
        table=table,
        residual=residual,
        notes={"intercept": float(intercept), "thicken": thicken, "raw_slope": float(slope)},
    )


def _annulus_sups_grid(mu, j_list):
    """Exhaustive per-annulus sups |mu^(xi)| from the grid spectrum."""
    out = {}
    if mu.d == 1:
        xi_all = np.arange(1, mu.nyquist + 1)[:, None]
        mags = np.abs(mu.transform(xi_all))
        norms = xi_all[:, 0].astype(float)
    else:
        ax = np.arange(-mu.nyquist, mu.nyquist + 1)
        grids = np.meshgrid(*[ax] * mu.d, indexing="ij")
        xi_all = np.stack([g.reshape(-1) for g in grids], axis=1)
        xi_all = xi_all[np.any(xi_all != 0, axis=1)]
        mags = np.abs(mu.transform(xi_all))
        norms = np.sqrt((xi_all.astype(float) ** 2).sum(axis=1))
    for j in j_list:
        sel = (norms >= 2**j) & (norms < 2 ** (j + 1)) & (norms <= mu.nyquist)
        if not sel.any():
            continue
        out[j] = (float(mags[sel].max()), int(sel.sum()), False)
    return out


def fourier_dimension(source, j_range=None, per_annulus=256, window_trim=2):
    """Fourier-decay exponent estimate (liminf surrogate).

    Per dyadic annulus 2^j <= |xi| < 2^{j+1} the decay exponent is
    s_j = 2 log(1/sup_j) / (j log 2); the estimate is the minimum of s_j
    over the usable annuli with ``window_trim`` trimmed from each end
    (low annuli carry smooth-bulk bias, top annuli roll off).

    ``source`` is a GridMeasure (exhaustive sups up to Nyquist) or a
    WeightedConfiguration (sampled sups, usable up to |xi| ~ 1/r where the
    mollification of radius r starts suppressing the sums).
    """
    from .expsum import config_annulus_sups
    from .measures import GridMeasure

    notes = {}
    if isinstance(source, GridMeasure):
        d = source.d
        j_max = int(math.floor(math.log2(source.nyquist)))
        j_list = list(range(0, j_max + 1)) if j_range is None else list(j_range)
        sups = _annulus_sups_grid(source, j_list)
        notes["source"] = "grid"
    else:
        d = source.d
        r = source.radius_r
        j_max = int(math.floor(math.log2(1.0 / max(r, 1e-300))))
        j_list = list(range(0, j_max + 1)) if j_range is None else list(j_range)
        sups = config_annulus_sups(
            source.points, source.weights, j_list, per_annulus=per_annulus
        )
        notes["source"] = "config"
        notes["radius_r"] = r
    table = []
    exponents = {}
    for j in sorted(sups):
        sup, n_eval, sampled = sups[j]
        row = {"j": j, "sup": sup, "n_evaluated": n_eval, "sampled": sampled}
        if sup <= 0:
            row["excluded"] = "zero sup"
        elif j == 0:
            row["excluded"] = "j = 0 carries no exponent"
        else:
            s_j = 2.0 * math.log(1.0 / sup) / (j * math.log(2.0))
            row["s_j"] = s_j
            exponents[j] = s_j
        table.append(row)
    usable = sorted(exponents)
    window = usable[window_trim : len(usable) - window_trim] if len(usable) > 2 * window_trim else usable
    notes["window"] = list(window)
    if not window:
        # no nonzero coefficient below the band: flat-measure convention
        notes["convention"] = "no usable annuli; value capped at ambient d"
        value = float(d)
        residual = 0.0
    else:
        vals = [exponents[j] for j in window]
        value = float(np.clip(min(vals), 0.0, d))
        residual = float(max(vals) - min(vals))
        if min(vals) > d:
            notes["convention"] = "raw exponent above ambient d; capped"
    return DimensionEstimate(
        kind="fourier",
        value=value,
        scales=[2.0**j for j in (window or [])],
        table=table,
        residual=residual,
        notes=notes,
    )
