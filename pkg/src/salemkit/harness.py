"""Experiment orchestration: trial batteries, concentration checks, demos.

Everything here is deterministic given a configuration: trial seeds are
``seed + trial_index``, calibration uses its own fixed stream, and
aggregate reports are pure folds over the per-trial rows.
"""

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .dimension import box_dimension, fourier_dimension
from .errors import ConstructionFailure
from .expsum import calibrate_constant, sweep, weighted_exp_sum
from .patterns import (
    RoughPattern,
    SurfacePattern,
    TranslationalPattern,
    violation_scan,
)
from .sampler import (
    ConstructionParams,
    WeightedConfiguration,
    _stream,
    build_rough,
    build_surface,
    build_translational,
    derive_radius,
    incidence_index_set,
)
from .torus import Cube, double_cube

SCHEMA_VERSION = 1

__all__ = [
    "ExperimentConfig",
    "TrialReport",
    "ap3_pattern",
    "make_pattern",
    "run_experiment",
    "hoeffding_check",
    "split_sum_check",
    "demo_ap3",
    "demo_linear_equations",
    "demo_isosceles",
    "isosceles_functional",
]


# ---------------------------------------------------------------- patterns


def ap3_pattern(m=16):
    """Three-term arithmetic progression relation x3 - 2 x2 = -x1 (mod 1/m).

    The layout uses cubes of sidelength 1/(2 a m) = 1/(4m) centered at
    1/6, 1/2, 5/6 (an arithmetic progression of centers, so the relation
    is live across the cubes).
    """
    side = 1.0 / (4 * m)
    cubes = [Cube([c - side / 2], side) for c in (1 / 6, 1 / 2, 5 / 6)]
    return TranslationalPattern(
        d=1,
        n=3,
        a=2,
        period_m=m,
        T=lambda x: (-np.asarray(x))[..., None, :],
        lipschitz=1.0,
        cubes=cubes,
    )


def make_pattern(spec):
    """Build a pattern object from a JSON-friendly description."""
    spec = dict(spec)
    pid = spec.pop("id")
    if pid == "ap3":
        out = ap3_pattern(m=int(spec.pop("m", 16)))
    elif pid == "rough":
        out = RoughPattern(
            n=int(spec.pop("n")),
            d=int(spec.pop("d")),
            g=int(spec.pop("g")),
            cells=np.asarray(spec.pop("cells"), dtype=np.int64),
        )
    elif pid == "isosceles-parabola":
        out = isosceles_surface_pattern()
    else:
        raise ValueError(f"unknown pattern id {pid!r}")
    if spec:
        raise ValueError(f"unknown pattern fields: {sorted(spec)}")
    return out


# ------------------------------------------------------------------- config


_CONFIG_FIELDS = {
    "schema_version",
    "pattern",
    "construction",
    "trials",
    "sweep",
    "grid_G",
    "out_dir",
    "do_scan",
    "do_dims",
}


@dataclass
class ExperimentConfig:
    pattern: dict
    construction: dict
    trials: int = 1
    sweep: dict = field(default_factory=dict)
    grid_G: int = 2048
    out_dir: str = None
    do_scan: bool = True
    do_dims: bool = False
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"config schema version {self.schema_version}; "
                f"this build reads version {SCHEMA_VERSION}"
            )

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - _CONFIG_FIELDS
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def params_for_trial(self, trial):
        c = dict(self.construction)
        c["seed"] = int(c.get("seed", 0)) + trial
        return ConstructionParams(**c)


# ------------------------------------------------------------------- report


_AGGREGATED = ("N", "removed_count", "P_hat", "sweep_sup_stat")


def _aggregate(rows):
    ok = [r for r in rows if not r.get("error")]
    agg = {
        "trials": len(rows),
        "failed_trials": len(rows) - len(ok),
    }
    if ok:
        if all("sweep_pass" in r for r in ok):
            rate = sum(1 for r in ok if r["sweep_pass"]) / len(ok)
            agg["sweep_pass_rate"] = rate
        if all(r.get("scan_violations") is not None for r in ok):
            agg["scan_violations_total"] = int(
                sum(r["scan_violations"] for r in ok)
            )
        for key in _AGGREGATED:
            vals = [r[key] for r in ok if r.get(key) is not None]
            if vals:
                qs = np.quantile(vals, [0.0, 0.5, 0.9, 1.0])
                agg[key + "_quantiles"] = {
                    "min": float(qs[0]),
                    "median": float(qs[1]),
                    "q90": float(qs[2]),
                    "max": float(qs[3]),
                }
    return agg


@dataclass
class TrialReport:
    rows: list
    aggregate: dict
    meta: dict = field(default_factory=dict)

    def save(self, out_dir, stem="report"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, stem + ".json"), "w") as fh:
            json.dump(
                {"meta": self.meta, "aggregate": self.aggregate, "rows": self.rows},
                fh,
                indent=2,
                sort_keys=True,
                default=_jsonable,
            )
            fh.write("\n")
        cols = sorted({k for r in self.rows for k in r})
        with open(os.path.join(out_dir, stem + ".csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in cols})

    @classmethod
    def load(cls, out_dir, stem="report"):
        with open(os.path.join(out_dir, stem + ".json")) as fh:
            data = json.load(fh)
        rep = cls(rows=data["rows"], aggregate=data["aggregate"], meta=data["meta"])
        recomputed = _aggregate(rep.rows)
        if json.dumps(recomputed, sort_keys=True, default=_jsonable) != json.dumps(
            rep.aggregate, sort_keys=True, default=_jsonable
        ):
            raise ValueError("aggregate does not match its per-trial rows")
        return rep


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


_BUILDERS = {
    "rough": build_rough,
    "surface": build_surface,
    "translational": build_translational,
}


def run_experiment(cfg, threads=1):
    """Run the trial battery described by an :class:`ExperimentConfig`.

    Per trial: build the configuration, sweep its exponential sums against
    the calibrated bound, optionally run the exact violation scan and the
    dimension estimators.  Per-trial errors are recorded and the battery
    continues unless more than half the trials fail.
    """
    pattern = make_pattern(cfg.pattern)
    builder = _BUILDERS[pattern.kind]
    sweep_cfg = dict(cfg.sweep)
    C = sweep_cfg.pop("C", None)
    delta = float(sweep_cfg.pop("delta", 1.0))
    kappa = float(sweep_cfg.pop("kappa", 0.2))
    percentile = float(sweep_cfg.pop("percentile", 95.0))
    cal_trials = int(sweep_cfg.pop("calibration_trials", 50))
    if sweep_cfg:
        raise ValueError(f"unknown sweep fields: {sorted(sweep_cfg)}")

    rows = []
    runtimes = []
    calibration = None
    for trial in range(cfg.trials):
        params = cfg.params_for_trial(trial)
        row = {"trial": trial, "seed": params.seed}
        t0 = time.monotonic()
        try:
            config = builder(pattern, params)
            row["N"] = config.N
            row["removed_count"] = config.provenance.get("n_removed")
            row["P_hat"] = config.provenance.get("P_hat")
            if C is None and calibration is None:
                # calibrate once against uniform points with the same
                # weight multiset; reused for every trial
                cal_C, _ = calibrate_constant(
                    N=config.N,
                    d=config.d,
                    lam=params.lam,
                    weights=config.weights,
                    delta=delta,
                    kappa=kappa,
                    trials=cal_trials,
                    percentile=percentile,
                    seed=params.seed,
                    threads=threads,
                )
                calibration = cal_C
            use_C = C if C is not None else calibration
            report = sweep(
                config.points,
                config.weights,
                lam=params.lam,
                C=use_C,
                delta=delta,
                kappa=kappa,
                threads=threads,
            )
            row["sweep_C"] = use_C
            row["sweep_violations"] = report.n_violations
            row["sweep_pass"] = report.passed
            row["sweep_sup_stat"] = report.sup_overall
            if cfg.do_scan:
                tuples, _ = violation_scan(
                    config.points,
                    pattern,
                    margin=0.0,
                    separation_s=params.separation_s,
                )
                row["scan_violations"] = len(tuples)
            if cfg.do_dims:
                r = config.radius_r
                box = box_dimension(
                    config.points,
                    scales=[16 * r, 8 * r, 4 * r, 2 * r, r],
                    thicken=r,
                )
                four = fourier_dimension(config)
                row["box_dimension"] = box.value
                row["fourier_dimension"] = four.value
        except Exception as exc:  # recorded, battery continues
            row["error"] = f"{type(exc).__name__}: {exc}"
        # wall-clock time lives in meta: rows must be re-run-identical
        runtimes.append(round(time.monotonic() - t0, 4))
        rows.append(row)
        failed = sum(1 for r in rows if r.get("error"))
        if failed > cfg.trials / 2:
            break
    report = TrialReport(
        rows=rows,
        aggregate=_aggregate(rows),
        meta={
            "pattern": cfg.pattern,
            "construction": cfg.construction,
            "trials": cfg.trials,
            "calibrated_C": calibration,
            "schema_version": cfg.schema_version,
            "runtime_s_per_trial": runtimes,
        },
    )
    if cfg.out_dir:
        report.save(cfg.out_dir)
    return report


# -------------------------------------------------------------- hoeffding


def hoeffding_check(bounds, t_grid=None, n_samples=10_000, seed=0):
    """Empirical tails of |sum A_k e(theta_k) - E| against 4 exp(-t^2 / (2 sum A^2)).

    The summands are A_k e^{2 pi i theta_k} with independent uniform
    phases, so the expectation is 0 and both the real and the imaginary
    part satisfy the two-sided bound; the factor 4 covers the union.  The
    bound is a theorem: any empirical exceedance signals a bug.
    """
    A = np.asarray(bounds, dtype=float)
    if n_samples < 200:
        raise ValueError("need at least 200 Monte Carlo samples")
    var2 = 2.0 * float((A**2).sum())
    if t_grid is None:
        scale = math.sqrt((A**2).sum()) if (A > 0).any() else 1.0
        t_grid = [scale * f for f in (0.5, 1.0, 2.0, 3.0, 4.0)]
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    sums = np.zeros(n_samples)
    chunk = max(1, 4_000_000 // max(len(A), 1))
    for s0 in range(0, n_samples, chunk):
        m = min(chunk, n_samples - s0)
        theta = rng.random((m, len(A)))
        z = (A[None, :] * np.exp(2j * math.pi * theta)).sum(axis=1)
        sums[s0 : s0 + m] = np.abs(z)
    table = []
    for t in t_grid:
        emp = float((sums >= t).mean())
        bound = 4.0 * math.exp(-(t**2) / var2) if var2 > 0 else (0.0 if t > 0 else 4.0)
        table.append(
            {
                "t": float(t),
                "empirical": emp,
                "bound": min(bound, 1.0),
                "exceeds": emp > min(bound, 1.0),
            }
        )
    return table


# -------------------------------------------------------------- split sums


def split_sum_check(pattern, params0, trials=50, n_xi=20, seed_xi=0, C=None):
    """Reconstruct and test the split F = G - H for a stratified battery.

    Per trial the raw (pre-normalization) weighted sums are rebuilt from
    the construction's own deterministic streams: G runs over all
    candidates, H over the removed incidence set, and F over the emitted
    configuration; F = G - H must hold to 1e-10.  Across trials the mean
    of H(xi) at sampled xi != 0 is compared with 0 at 3 sigma, and the
    per-trial sup |H - mean H| is tested against C sqrt(M) log^{1/2} M.
    """
    if trials < 50:
        raise ValueError("split-sum statistics need >= 50 trials")
    if pattern.kind not in ("surface", "translational"):
        raise ValueError("split sums apply to stratified constructions")
    builder = _BUILDERS[pattern.kind]
    M = params0.M
    n, d = pattern.n, pattern.d
    # sample test frequencies from the upper part of the sweep range: the
    # removed stratum lives in a cube of volume |Q_n|, so mean H carries an
    # O(1/(|xi| |Q_n|)) localization bias that only dies off at large |xi|
    xi_max = int(math.ceil(float(M) ** (1.0 + params0.kappa)))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed_xi)))
    xi = np.sort(rng.integers(max(2, xi_max // 4), xi_max, size=n_xi))
    xi = xi[:, None].astype(float)

    H_vals = np.zeros((trials, n_xi), dtype=complex)
    recon_err = 0.0
    for t in range(trials):
        params = ConstructionParams(
            M=M,
            lam=params0.lam,
            seed=params0.seed + t,
            delta=params0.delta,
            kappa=params0.kappa,
            separation_s=params0.separation_s,
            filter_scale=params0.filter_scale,
            removal_budget=params0.removal_budget,
        )
        config = builder(pattern, params)
        raw_w = np.asarray(config.provenance["stratum_weights"], dtype=float)
        tau = config.provenance["tau_used"]
        # rebuild the raw strata from the same streams the builder used
        if pattern.kind == "translational":
            pools = [
                double_cube(c).sample(_stream(params.seed, i + 1), M)
                for i, c in enumerate(pattern.cubes)
            ]
        else:
            from .sampler import _sample_psi

            pools = [
                _sample_psi(_stream(params.seed, i + 1), c, M)
                for i, c in enumerate(pattern.cubes)
            ]
        removed = incidence_index_set(pools, pattern, tau)
        A_n = raw_w[-1]
        # H: removed part of the final stratum, raw weights, unnormalized
        xs_removed = pools[n - 1][removed]
        H = A_n * _raw_sum(xs_removed, xi)
        # G: every candidate, including the removed ones
        G = A_n * _raw_sum(pools[n - 1], xi)
        for i in range(n - 1):
            G += raw_w[i + 1] * _raw_sum(pools[i], xi)
        G += raw_w[0] * _raw_sum(
            config.points[config.stratum_indices(config.strata[0][0])], xi
        )
        # F: the emitted configuration with raw weights
        scale = config.provenance["weight_scale"]
        F = np.zeros(n_xi, dtype=complex)
        for nm, a, b in config.strata:
            F += _raw_sum(config.points[a:b], xi) * (config.weights[a] / scale)
        recon_err = max(recon_err, float(np.abs(F - (G - H)).max()))
        H_vals[t] = H

    meanH = H_vals.mean(axis=0)
    stdH = H_vals.std(axis=0, ddof=1) / math.sqrt(trials)
    # componentwise 3-sigma band on real and imaginary parts
    se = np.maximum(stdH, 1e-300)
    within = np.abs(meanH) <= 3.0 * se * math.sqrt(2.0)
    bound = (C if C is not None else 1.0) * math.sqrt(M) * math.sqrt(math.log(M))
    sup_dev = np.abs(H_vals - meanH[None, :]).max(axis=1)
    pass_rate = float((sup_dev <= bound).mean())
    return {
        "trials": trials,
        "xi": [int(v) for v in xi[:, 0]],
        "reconstruction_error": recon_err,
        "reconstruction_ok": recon_err <= 1e-10,
        "mean_H": [complex(v) for v in meanH],
        "stderr_H": [float(v) for v in stdH],
        "within_3sigma": [bool(b) for b in within],
        "n_within_3sigma": int(within.sum()),
        "sup_dev_bound": bound,
        "tail_pass_rate": pass_rate,
        "binomial_note": _binomial_note(int((sup_dev <= bound).sum()), trials),
    }


def _raw_sum(points, xi):
    """Unnormalized sum of e(xi . x) over the points, at each xi."""
    if len(points) == 0:
        return np.zeros(len(xi), dtype=complex)
    return weighted_exp_sum(points, np.ones(len(points)), xi) * len(points)


def _binomial_note(successes, trials, p=0.9):
    """One-sided binomial check of pass-rate >= p at 95% confidence."""
    from scipy.stats import binomtest

    res = binomtest(successes, trials, p, alternative="less")
    return {
        "successes": successes,
        "trials": trials,
        "target_rate": p,
        "p_value_below_target": float(res.pvalue),
    }


# -------------------------------------------------------------------- demos


def demo_ap3(M=2048, lam=0.45, trials=50, seed=0, out_dir=None, threads=1, do_dims=False):
    """The 3-term arithmetic progression battery (d=1, n=3, a=2, T(x) = {-x})."""
    cfg = ExperimentConfig(
        pattern={"id": "ap3", "m": 16},
        construction={"M": M, "lam": lam, "seed": seed},
        trials=trials,
        out_dir=out_dir,
        do_scan=True,
        do_dims=do_dims,
    )
    return run_experiment(cfg, threads=threads)


# ----- linear equations


def _normalized_coeff_vectors(n, coeff_bound):
    """Sign-normalized integer coefficient vectors with 0 < |m_i| <= bound."""
    from itertools import product as iproduct

    seen = set()
    out = []
    rng = range(-coeff_bound, coeff_bound + 1)
    for vec in iproduct(*[rng] * n):
        if any(v == 0 for v in vec):
            continue
        key = vec if vec[0] > 0 else tuple(-v for v in vec)
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def _linear_hit_last_indices(x, vectors, s_set, margin):
    """Indices k3 completing m1 x_i + m2 x_j + m3 x_k = s (mod 1) within margin.

    Exact enumeration over ordered distinct index triples for every
    coefficient vector, via sorted probing of the solved last coordinate.
    """
    N = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    removed = np.zeros(N, dtype=bool)
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    distinct = (ii != jj).reshape(-1)
    pair_i = ii.reshape(-1)[distinct]
    pair_j = jj.reshape(-1)[distinct]
    for m1, m2, m3 in vectors:
        for s in s_set:
            # x_k solves m3 x = s - m1 x_i - m2 x_j (mod 1): |m3| branches
            base = (s - m1 * x[pair_i] - m2 * x[pair_j]) / m3
            for branch in range(abs(m3)):
                tgt = (base + branch / m3) % 1.0
                eff = margin / abs(m3)
                for shift in (0.0, -1.0, 1.0):
                    lo = np.searchsorted(xs, tgt + shift - eff, side="left")
                    hi = np.searchsorted(xs, tgt + shift + eff, side="right")
                    for b in np.nonzero(hi > lo)[0]:
                        for k in order[lo[b] : hi[b]]:
                            if k != pair_i[b] and k != pair_j[b]:
                                removed[k] = True
    return np.nonzero(removed)[0]


def _count_linear_violations(x, vectors, s_set, margin):
    """Number of ordered distinct triples solving a covered equation."""
    N = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    count = 0
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    distinct = (ii != jj).reshape(-1)
    pair_i = ii.reshape(-1)[distinct]
    pair_j = jj.reshape(-1)[distinct]
    for m1, m2, m3 in vectors:
        for s in s_set:
            base = (s - m1 * x[pair_i] - m2 * x[pair_j]) / m3
            for branch in range(abs(m3)):
                tgt = (base + branch / m3) % 1.0
                eff = margin / abs(m3)
                for shift in (0.0, -1.0, 1.0):
                    lo = np.searchsorted(xs, tgt + shift - eff, side="left")
                    hi = np.searchsorted(xs, tgt + shift + eff, side="right")
                    for b in np.nonzero(hi > lo)[0]:
                        for k in order[lo[b] : hi[b]]:
                            if k != pair_i[b] and k != pair_j[b]:
                                count += 1
    return count


def demo_linear_equations(
    coeff_bound=2, s_set=(0.0,), M=1024, lam=0.45, seed=0, trials=1, out_dir=None
):
    """Avoid every equation m1 x1 + m2 x2 + m3 x3 = s with 0 < |m_i| <= bound.

    Uniform sampling, union removal across all sign-normalized coefficient
    vectors; the final check rescans every covered equation at margin 0.
    For d = 1, n = 3 the avoidable range is lam < d/(n-1) = 1/2.
    """
    if coeff_bound < 1:
        raise ValueError("coeff_bound must be >= 1")
    n = 3
    vectors = _normalized_coeff_vectors(n, coeff_bound)
    rows = []
    for trial in range(trials):
        t0 = time.monotonic()
        params = ConstructionParams(M=M, lam=lam, seed=seed + trial)
        r = derive_radius(M, lam)
        rng = _stream(params.seed, 0)
        x = rng.random(M)
        tau_theory = 2.0 * math.sqrt(n) * r
        # per-point removal load grows with M^2 * #vectors; cap the margin
        # so the expected removals stay near sqrt(M) (same rule as the
        # builders, with the density of solved targets known analytically:
        # each (vector, s, pair) contributes ~2 tau hits on average)
        budget = math.sqrt(M)
        load = float(M) ** (n - 1) * len(vectors) * len(s_set) * 2.0 * M
        tau = min(tau_theory, budget / load) if load > 0 else tau_theory
        removed = _linear_hit_last_indices(x, vectors, s_set, tau)
        keep = np.setdiff1d(np.arange(M), removed)
        if len(keep) < M / 2:
            raise ConstructionFailure(
                f"linear-equation demo: only {len(keep)} of {M} points survive"
            )
        kept = x[keep]
        violations = _count_linear_violations(kept, vectors, s_set, 0.0)
        rows.append(
            {
                "trial": trial,
                "seed": params.seed,
                "N": len(keep),
                "removed_count": len(removed),
                "n_equations": len(vectors) * len(s_set),
                "tau_used": tau,
                "tau_theory": tau_theory,
                "scan_violations": violations,
                "runtime_s": round(time.monotonic() - t0, 4),
            }
        )
    report = TrialReport(
        rows=rows,
        aggregate=_aggregate(rows),
        meta={
            "demo": "linear-equations",
            "coeff_bound": coeff_bound,
            "s_set": list(s_set),
            "M": M,
            "lam": lam,
        },
    )
    if out_dir:
        report.save(out_dir, stem="linear-eq")
    return report


# ----- isosceles triples on a curve


_PARABOLA_C = math.sqrt(5.0)  # sup |gamma'| on [0, 1] for gamma(t) = (t, t^2)
ISO_EPSILON = 1.0 / (2.0 * _PARABOLA_C**3)


def _gamma(t):
    t = np.asarray(t, dtype=float)
    return np.stack([t, t * t], axis=-1)


def isosceles_functional(t1, t2, t3):
    """F = |gamma(t1) - gamma(t2)|^2 - |gamma(t2) - gamma(t3)|^2 (apex t2)."""
    a = _gamma(t1) - _gamma(t2)
    b = _gamma(t3) - _gamma(t2)
    return (a**2).sum(axis=-1) - (b**2).sum(axis=-1)


def _solve_third_leg(t1, t2, lo, hi, iters=80):
    """Bisect for t3 in [lo, hi] with |gamma(t3)-gamma(t2)| = |gamma(t1)-gamma(t2)|.

    The squared chord length from gamma(t2) is strictly increasing in t3
    on t3 > t2 >= 0, so the root is unique when bracketed.
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    lo = np.full_like(t2, lo) if np.isscalar(lo) else np.asarray(lo, float)
    hi = np.full_like(t2, hi) if np.isscalar(hi) else np.asarray(hi, float)
    f_lo = isosceles_functional(t1, t2, lo)
    f_hi = isosceles_functional(t1, t2, hi)
    if np.any(np.sign(f_lo) == np.sign(f_hi)):
        raise RuntimeError("isosceles solver: root not bracketed on a probe")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = isosceles_functional(t1, t2, mid)
        neg = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(neg, mid, lo)
        f_lo = np.where(neg, f_mid, f_lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def isosceles_surface_pattern():
    """Surface pattern t3 = f(t1, t2) for isosceles triples on the parabola.

    Works inside [0, epsilon] with epsilon = 1/(2 C^3); the cube centers
    are in near-arithmetic progression so the implicit surface actually
    meets the product of the cubes.
    """
    eps = ISO_EPSILON
    side = eps / 33.0  # 3 cubes with >= 10*side pairwise gaps fit in [0, eps]
    centers = [2 * side, eps / 2.0, eps - 2 * side]

    def f(prefix):
        prefix = np.asarray(prefix, dtype=float)
        t1 = prefix[..., 0]
        t2 = prefix[..., 1]
        return _solve_third_leg(t1, t2, t2, 3.0 * eps)[..., None]

    cubes = [Cube([c - side / 2], side) for c in centers]
    # |f'| along the surface: chord ratios on the short parabola arc stay
    # below ~2 on this layout; 4.0 is a safe declared bound
    return SurfacePattern(d=1, n=3, cubes=cubes, f=f, lipschitz=4.0)


def min_isosceles_gap(points, separation_s=0.0):
    """min over apexes j and legs i != k of | |g_i - g_j|^2 - |g_k - g_j|^2 |.

    Sorted-row-gap trick: for each apex the minimum difference of squared
    leg lengths is attained between neighbors in sorted order, so the scan
    is O(N^2 log N) instead of O(N^3).
    """
    pts = np.asarray(points, dtype=float).reshape(-1)
    g = _gamma(pts)
    N = len(pts)
    best = math.inf
    for j in range(N):
        diff = g - g[j]
        d2 = (diff**2).sum(axis=1)
        if separation_s > 0:
            ok = np.abs(pts - pts[j]) > separation_s
        else:
            ok = np.arange(N) != j
        vals = np.sort(d2[ok])
        if len(vals) >= 2:
            gaps = np.diff(vals)
            best = min(best, float(gaps.min()))
    return best


def demo_isosceles(
    route="surface", M=512, lam=4.0 / 9.0, seed=0, trials=1, out_dir=None
):
    """Isosceles-free point sets along the parabola arc.

    ``route='surface'`` runs the stratified graph construction at
    lam = 4/9; ``route='rough'`` covers the isosceles surface inside the
    working box [0, eps]^3 with grid cells and runs the uniform-cloud
    construction at lam = 2/5.
    """
    eps = ISO_EPSILON
    rows = []
    for trial in range(trials):
        t0 = time.monotonic()
        params = ConstructionParams(M=M, lam=lam, seed=seed + trial)
        if route == "surface":
            pattern = isosceles_surface_pattern()
            config = build_surface(pattern, params)
            in_work = config.points[:, 0] <= eps
            gap = min_isosceles_gap(config.points[in_work, 0])
        elif route == "rough":
            pattern = _isosceles_rough_pattern(g=1024)
            config = build_rough(pattern, params)
            in_work = config.points[:, 0] <= eps
            gap = min_isosceles_gap(config.points[in_work, 0])
        else:
            raise ValueError(f"unknown route {route!r}")
        rows.append(
            {
                "trial": trial,
                "seed": params.seed,
                "route": route,
                "N": config.N,
                "removed_count": config.provenance.get("n_removed"),
                "min_functional_gap": gap,
                "gap_positive": gap > 0,
                "runtime_s": round(time.monotonic() - t0, 4),
            }
        )
    report = TrialReport(
        rows=rows,
        aggregate=_aggregate(rows),
        meta={"demo": "isosceles-parabola", "route": route, "M": M, "lam": lam},
    )
    if out_dir:
        report.save(out_dir, stem="isosceles")
    return report


def _isosceles_rough_pattern(g=1024):
    """Grid-cell cover of the isosceles surface inside [0, eps]^3.

    Marks every cell whose subsampled corners change the sign of the
    functional or bring it below a cell-diameter margin — a conservative
    cover, so exact zeros always land in occupied cells.
    """
    eps = ISO_EPSILON
    k = int(math.ceil(eps * g))
    axis = np.arange(k)
    c1, c2, c3 = np.meshgrid(axis, axis, axis, indexing="ij")
    cells = np.stack([c1.ravel(), c2.ravel(), c3.ravel()], axis=1)
    # evaluate F at the 8 corners of each cell
    signs_pos = np.zeros(len(cells), dtype=bool)
    signs_neg = np.zeros(len(cells), dtype=bool)
    small = np.zeros(len(cells), dtype=bool)
    # |grad F| <= ~6 eps on the box; cell diagonal sqrt(3)/g
    margin = 6.0 * eps * math.sqrt(3.0) / g
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                v = isosceles_functional(
                    (cells[:, 0] + dx) / g,
                    (cells[:, 1] + dy) / g,
                    (cells[:, 2] + dz) / g,
                )
                signs_pos |= v > 0
                signs_neg |= v < 0
                small |= np.abs(v) <= margin
    occupied = cells[(signs_pos & signs_neg) | small]
    return RoughPattern(n=3, d=1, g=g, cells=occupied)
