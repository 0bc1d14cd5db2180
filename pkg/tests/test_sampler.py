"""Tests for the randomized avoiding constructions."""

import math

import numpy as np
import pytest

from salemkit.errors import ConstructionFailure, LayoutError
from salemkit.patterns import RoughPattern, SurfacePattern, TranslationalPattern
from salemkit.sampler import (
    ConstructionParams,
    WeightedConfiguration,
    build_rough,
    build_surface,
    build_translational,
    derive_radius,
)
from salemkit.torus import Cube, tdist


def ap3_pattern(m=16):
    side = 1.0 / (2 * 2 * m)
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


def surface_pattern():
    f = lambda p: (p[..., :1] + p[..., 1:2]) % 1.0  # noqa: E731
    cubes = [Cube([0.05], 0.02), Cube([0.35], 0.02), Cube([0.65], 0.02)]
    return SurfacePattern(d=1, n=3, cubes=cubes, f=f, lipschitz=2.0)


# -------------------------------------------------------------- derive_radius


def test_derive_radius_bracketing():
    for M in (7, 64, 2048, 100_003):
        for lam in (0.25, 0.45, 0.9):
            r = derive_radius(M, lam)
            assert r ** (-lam) <= M <= r ** (-lam) + 1


def test_derive_radius_rejects_bad_input():
    with pytest.raises(ValueError):
        derive_radius(0, 0.5)


# ---------------------------------------------------------------- invariants


def _check_config(cfg, d):
    assert cfg.points.shape == (cfg.N, d)
    assert np.all((cfg.points >= 0) & (cfg.points < 1))
    assert cfg.weights.sum() == pytest.approx(cfg.N, rel=1e-12)
    assert cfg.weights.sum() >= cfg.N / 2
    starts = [a for _, a, _ in cfg.strata]
    stops = [b for _, _, b in cfg.strata]
    assert starts[0] == 0 and stops[-1] == cfg.N
    assert all(b == a2 for b, a2 in zip(stops, starts[1:]))


def test_rough_build_invariants_and_avoidance():
    # a thin set of occupied pair-cells in T^2 = (T^1)^2
    cells = np.array([[0, 0], [5, 17]])
    pat = RoughPattern(n=2, d=1, g=32, cells=cells)
    params = ConstructionParams(M=80, lam=0.5, seed=3)
    cfg = build_rough(pat, params)
    _check_config(cfg, 1)
    assert np.all(cfg.weights == cfg.weights[0])  # uniform weights
    # no ordered pair of kept points lands in the thickened cells
    tau = cfg.provenance["tau_used"]
    x = cfg.points[:, 0]
    ii, jj = np.meshgrid(np.arange(cfg.N), np.arange(cfg.N), indexing="ij")
    mask = ii != jj
    pairs = np.stack([x[ii[mask]], x[jj[mask]]], axis=1)
    assert not pat.thickened_membership(pairs, tau).any()


def test_rough_removal_matches_naive_filter():
    # tiny M: compare kept set against a brute-force python filter
    rng_pat = np.random.default_rng(0)
    cells = rng_pat.integers(0, 6, size=(4, 2))
    pat = RoughPattern(n=2, d=1, g=6, cells=cells)
    params = ConstructionParams(M=24, lam=0.4, seed=11, filter_scale=1.0)
    cfg = build_rough(pat, params)
    # rebuild the raw cloud from the same stream
    from salemkit.sampler import _stream

    X = _stream(11, 0).random((24, 1))
    tau = cfg.provenance["tau_used"]
    removed = set()
    for j in range(24):
        for i in range(24):
            if i == j:
                continue
            if pat.thickened_membership(
                np.array([[X[i, 0], X[j, 0]]]), tau
            )[0]:
                removed.add(j)
    kept = np.array(sorted(set(range(24)) - removed))
    np.testing.assert_allclose(np.sort(cfg.points[:, 0]), np.sort(X[kept, 0]))


def test_rough_construction_failure_when_pattern_everywhere():
    # every cell occupied: any pair is a hit, nothing survives
    g = 3
    cells = np.stack(np.meshgrid(*[np.arange(g)] * 2, indexing="ij"), -1).reshape(-1, 2)
    pat = RoughPattern(n=2, d=1, g=g, cells=cells)
    with pytest.raises(ConstructionFailure):
        build_rough(pat, ConstructionParams(M=32, lam=0.4, seed=1, filter_scale=1.0))


# ------------------------------------------------------------------- surface


def test_surface_build_invariants():
    pat = surface_pattern()
    cfg = build_surface(pat, ConstructionParams(M=64, lam=0.25, seed=5))
    _check_config(cfg, 1)
    assert len(cfg.strata) == 4  # residual + 3 cube strata
    # cube strata live inside the doubled cubes
    from salemkit.torus import double_cube

    for i, c in enumerate(pat.cubes):
        idx = cfg.stratum_indices(cfg.strata[i + 1][0])
        assert double_cube(c).contains(cfg.points[idx]).all()
    # stratum weights are constant within a stratum
    for nm, a, b in cfg.strata:
        assert np.ptp(cfg.weights[a:b]) == 0


def test_surface_filter_removes_graph_hits():
    # gentle scale: lam far below critical so the theory threshold applies
    pat = surface_pattern()
    params = ConstructionParams(M=64, lam=0.25, seed=7)
    cfg = build_surface(pat, params)
    assert cfg.provenance["tau_rule"] == "theory"
    tau = cfg.provenance["tau_used"]
    # no kept stratum-3 point is within tau of f(x1, x2) for stratum 1 x 2
    i1 = cfg.stratum_indices(cfg.strata[1][0])
    i2 = cfg.stratum_indices(cfg.strata[2][0])
    i3 = cfg.stratum_indices(cfg.strata[3][0])
    x1 = cfg.points[i1, 0]
    x2 = cfg.points[i2, 0]
    tgt = pat.f(
        np.stack(
            [np.repeat(x1, len(x2)), np.tile(x2, len(x1))], axis=1
        )
    ).reshape(-1)
    dmin = tdist(cfg.points[i3][:, None, :], tgt[None, :, None]).min()
    assert dmin > tau


def test_surface_partition_of_unity_weights():
    pat = surface_pattern()
    cfg = build_surface(pat, ConstructionParams(M=48, lam=0.25, seed=2))
    A = cfg.provenance["stratum_weights"]
    # integrals of the bumps plus the residual mass total 1
    assert sum(A) == pytest.approx(1.0, abs=1e-9)
    # bump mass sits between the plateau (1.5R) and support (2R) volumes
    for i, c in enumerate(pat.cubes):
        assert (1.5 * c.side) ** 1 < A[i + 1] < (2 * c.side) ** 1


def test_surface_rejects_covering_cubes():
    f = lambda p: p[..., :1]  # noqa: E731
    cubes = [Cube([0.0], 0.3)]
    with pytest.raises((LayoutError, ValueError)):
        pat = SurfacePattern(d=1, n=2, cubes=cubes, f=f, lipschitz=1.0)
        build_surface(pat, ConstructionParams(M=16, lam=0.3, seed=0))


# -------------------------------------------------------------- translational


def test_translational_build_invariants():
    pat = ap3_pattern(m=16)
    cfg = build_translational(pat, ConstructionParams(M=128, lam=0.3, seed=9))
    _check_config(cfg, 1)
    prov = cfg.provenance
    assert 0.0 <= prov["P_hat"] <= 0.5
    lo, hi = prov["P_hat_wilson95"]
    assert lo <= prov["P_hat"] <= hi
    # the unfiltered final cube stratum outweighs the filtered cube strata
    A = prov["stratum_weights"]
    assert A[-1] >= max(A[1:-1])


def test_translational_removal_matches_naive_filter():
    pat = ap3_pattern(m=16)
    params = ConstructionParams(M=20, lam=0.3, seed=13, filter_scale=0.02)
    cfg = build_translational(pat, params)
    from salemkit.sampler import _stream
    from salemkit.torus import double_cube

    doubled = [double_cube(c) for c in pat.cubes]
    strata = [doubled[i].sample(_stream(13, i + 1), 20) for i in range(3)]
    tau = cfg.provenance["tau_used"]
    removed = set()
    for k3 in range(20):
        for k1 in range(20):
            for k2 in range(20):
                tup = np.array(
                    [[strata[0][k1, 0], strata[1][k2, 0], strata[2][k3, 0]]]
                )
                if pat.residual(tup)[0] <= tau:
                    removed.add(k3)
    kept = np.array(sorted(set(range(20)) - removed))
    i3 = cfg.stratum_indices(cfg.strata[3][0])
    np.testing.assert_allclose(
        np.sort(cfg.points[i3, 0]), np.sort(strata[2][kept, 0])
    )


def test_translational_requires_cubes_and_correct_side():
    pat = TranslationalPattern(
        d=1, n=3, a=2, period_m=16,
        T=lambda x: (-np.asarray(x))[..., None, :], lipschitz=1.0,
    )
    with pytest.raises(LayoutError):
        build_translational(pat, ConstructionParams(M=16, lam=0.3, seed=0))
    bad_side = 0.9 / (2 * 2 * 16)
    cubes = [Cube([c], bad_side) for c in (1 / 6, 1 / 2, 5 / 6)]
    pat2 = TranslationalPattern(
        d=1, n=3, a=2, period_m=16,
        T=lambda x: (-np.asarray(x))[..., None, :], lipschitz=1.0, cubes=cubes,
    )
    with pytest.raises(LayoutError):
        build_translational(pat2, ConstructionParams(M=16, lam=0.3, seed=0))


def test_translational_fails_when_removal_probability_large():
    # threshold wide enough to hit everything -> P_hat > 1/2
    pat = ap3_pattern(m=16)
    params = ConstructionParams(M=64, lam=0.3, seed=4, filter_scale=1e6)
    with pytest.raises(ConstructionFailure):
        build_translational(pat, params)


def test_translational_degenerate_empty_targets():
    # T produces the empty set: nothing is ever removed, P_hat = 0 and the
    # low strata carry zero weight
    side = 1.0 / (2 * 2 * 16)
    cubes = [Cube([c - side / 2], side) for c in (1 / 6, 1 / 2, 5 / 6)]
    pat = TranslationalPattern(
        d=1, n=3, a=2, period_m=16,
        T=lambda x: np.empty(np.asarray(x).shape[:-1] + (0, 1)),
        lipschitz=0.0, cubes=cubes,
    )
    cfg = build_translational(pat, ConstructionParams(M=32, lam=0.3, seed=6))
    assert cfg.provenance["P_hat"] == 0.0
    i0 = cfg.stratum_indices("complement")
    assert np.all(cfg.weights[i0] == 0)
    _check_config(cfg, 1)


def naive_incidence(strata, pattern, threshold):
    """Oracle: python-loop enumeration of every admissible tuple."""
    import itertools

    n = pattern.n
    removed = set()
    if len(strata) == 1:
        pool = strata[0]
        for combo in itertools.permutations(range(len(pool)), n):
            tup = np.concatenate([pool[j] for j in combo])[None, :]
            hit = (
                pattern.thickened_membership(tup, threshold)[0]
                if pattern.kind == "rough"
                else pattern.residual(tup)[0] <= threshold
            )
            if hit:
                removed.add(combo[-1])
    else:
        for combo in itertools.product(*[range(len(s)) for s in strata]):
            tup = np.concatenate([strata[j][k] for j, k in enumerate(combo)])[None, :]
            hit = (
                pattern.thickened_membership(tup, threshold)[0]
                if pattern.kind == "rough"
                else pattern.residual(tup)[0] <= threshold
            )
            if hit:
                removed.add(combo[-1])
    return sorted(removed)


def test_incidence_index_set_matches_naive_enumeration():
    from salemkit.sampler import incidence_index_set

    pat_t = ap3_pattern(m=16)
    pat_s = surface_pattern()
    rng = np.random.default_rng(99)
    for trial in range(10):
        # translational: three pools, wide threshold to force hits
        pools = [rng.random((8, 1)) for _ in range(3)]
        for tau in (0.002, 0.02):
            got = incidence_index_set(pools, pat_t, tau)
            assert list(got) == naive_incidence(pools, pat_t, tau)
        # surface
        pools = [rng.random((8, 1)) for _ in range(3)]
        got = incidence_index_set(pools, pat_s, 0.05)
        assert list(got) == naive_incidence(pools, pat_s, 0.05)
        # rough, single shared pool
        cells = rng.integers(0, 5, size=(3, 2))
        pat_r = RoughPattern(n=2, d=1, g=5, cells=cells)
        pool = rng.random((10, 1))
        got = incidence_index_set([pool], pat_r, 0.03)
        assert list(got) == naive_incidence([pool], pat_r, 0.03)


# -------------------------------------------------------------- determinism


def test_builds_are_deterministic_in_seed():
    pat = ap3_pattern(m=16)
    p = ConstructionParams(M=96, lam=0.3, seed=21)
    a = build_translational(pat, p)
    b = build_translational(pat, p)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = build_translational(pat, ConstructionParams(M=96, lam=0.3, seed=22))
    assert not np.array_equal(a.points, c.points)


def test_configuration_save_load_roundtrip(tmp_path):
    pat = ap3_pattern(m=16)
    cfg = build_translational(pat, ConstructionParams(M=64, lam=0.3, seed=1))
    path = tmp_path / "cfg.csv"
    cfg.save(path)
    back = WeightedConfiguration.load(path)
    np.testing.assert_array_equal(back.points, cfg.points)
    np.testing.assert_array_equal(back.weights, cfg.weights)
    assert back.radius_r == cfg.radius_r
    assert back.strata == cfg.strata
    assert back.provenance["kind"] == "translational"


def test_desk_scale_threshold_is_capped():
    # at the demo scale the theory threshold would remove nearly every
    # point; the builder must cap it and record the rule
    pat = ap3_pattern(m=16)
    cfg = build_translational(pat, ConstructionParams(M=512, lam=0.45, seed=0))
    prov = cfg.provenance
    assert prov["tau_rule"].startswith("budget-capped")
    assert prov["tau_used"] < prov["tau_theory"]
    # expected removals ~ sqrt(M): generous factor-10 sanity band
    assert prov["n_removed"] <= 10 * math.sqrt(512)
