import numpy as np
import pytest

from featreg import ConvexConfig, FeatureVolume, build_cost_volume, coupled_convex
from featreg.costvol import coupled_convex_coarse


def oracle_cost_volume(f, m, cfg):
    """Triple-loop SSD with explicit border clamping."""
    c, d, h, w = f.shape
    cands = cfg.candidates()
    centers = [np.arange(0, n, cfg.coarse_stride) for n in (d, h, w)]
    costs = np.zeros((len(cands), len(centers[0]), len(centers[1]), len(centers[2])))
    for k, (dz, dy, dx) in enumerate(cands):
        for iz, z in enumerate(centers[0]):
            for iy, y in enumerate(centers[1]):
                for ix, x in enumerate(centers[2]):
                    mz = min(max(z + dz, 0), d - 1)
                    my = min(max(y + dy, 0), h - 1)
                    mx = min(max(x + dx, 0), w - 1)
                    diff = f[:, z, y, x] - m[:, mz, my, mx]
                    costs[k, iz, iy, ix] = float(np.dot(diff, diff))
    return costs


def test_matches_bruteforce_oracle_on_random_volumes():
    rng = np.random.default_rng(0)
    cfg = ConvexConfig(search_radius=2, quantization=1, coarse_stride=2)
    for _ in range(10):
        f = rng.random((4, 8, 8, 8)).astype(np.float32)
        m = rng.random((4, 8, 8, 8)).astype(np.float32)
        cv = build_cost_volume(FeatureVolume(f), FeatureVolume(m), cfg)
        ref = oracle_cost_volume(f, m, cfg)
        assert cv.costs.shape == ref.shape
        assert np.allclose(cv.costs, ref, atol=1e-5)
        assert np.array_equal(cv.costs.reshape(len(cv.candidates), -1).argmin(axis=0),
                              ref.reshape(len(cv.candidates), -1).argmin(axis=0))


def test_candidate_order_is_lexicographic():
    cfg = ConvexConfig(search_radius=2, quantization=2)
    cands = cfg.candidates()
    assert cands.shape == (27, 3)
    assert np.array_equal(cands[0], [-2, -2, -2])
    assert np.array_equal(cands[1], [-2, -2, 0])
    assert np.array_equal(cands[-1], [2, 2, 2])
    # strictly increasing under lexicographic comparison
    as_tuples = [tuple(c) for c in cands]
    assert as_tuples == sorted(as_tuples)


def test_shifted_volume_argmin_at_true_displacement():
    rng = np.random.default_rng(1)
    base = rng.random((3, 16, 16, 16)).astype(np.float32)
    m = np.roll(base, 2, axis=3)  # m(x) = f(x - 2) along x
    cfg = ConvexConfig(search_radius=4, quantization=2, coarse_stride=2)
    cv = build_cost_volume(FeatureVolume(base), FeatureVolume(m), cfg)
    want = int(np.where((cv.candidates == [0, 0, 2]).all(axis=1))[0][0])
    am = cv.costs.argmin(axis=0)
    interior = am[1:-1, 1:-1, 2:-2]
    assert (interior == want).mean() > 0.95


def test_identical_inputs_zero_cost_at_zero_candidate():
    rng = np.random.default_rng(2)
    f = rng.random((2, 12, 12, 12)).astype(np.float32)
    cfg = ConvexConfig(search_radius=2, quantization=2)
    cv = build_cost_volume(FeatureVolume(f), FeatureVolume(f), cfg)
    zero = int(np.where((cv.candidates == 0).all(axis=1))[0][0])
    assert cv.costs[zero].max() == 0.0


def test_coupled_convex_identical_inputs_zero_field():
    rng = np.random.default_rng(3)
    f = FeatureVolume(rng.random((2, 16, 16, 16)).astype(np.float32))
    cfg = ConvexConfig(search_radius=4, quantization=2)
    field = coupled_convex(build_cost_volume(f, f, cfg), cfg)
    assert np.abs(field.data).max() == 0.0


def test_coupled_convex_recovers_translation():
    rng = np.random.default_rng(4)
    from scipy.ndimage import gaussian_filter
    base = np.stack([gaussian_filter(rng.random((20, 20, 20)), 1.5)
                     for _ in range(3)]).astype(np.float32)
    m = np.roll(base, 2, axis=1)  # true displacement +2 along z
    cfg = ConvexConfig(search_radius=4, quantization=2)
    field = coupled_convex(build_cost_volume(FeatureVolume(base), FeatureVolume(m), cfg), cfg)
    interior = field.data[:, 4:-4, 4:-4, 4:-4]
    assert np.allclose(interior[0], 2.0, atol=0.5)
    assert np.abs(interior[1:]).max() < 0.5


def test_per_cell_objective_never_increases_within_iteration():
    # for each theta, re-solving the per-cell argmin cannot make the cell
    # objective worse than the previous assignment's
    rng = np.random.default_rng(5)
    f = FeatureVolume(rng.random((3, 16, 16, 16)).astype(np.float32))
    m = FeatureVolume(rng.random((3, 16, 16, 16)).astype(np.float32))
    cfg = ConvexConfig(search_radius=4, quantization=2)
    trace = []
    coupled_convex_coarse(build_cost_volume(f, m, cfg), cfg, objective_trace=trace)
    assert len(trace) == len(cfg.coupling_schedule)
    for prev, new in trace:
        assert np.all(new <= prev + 1e-6)


def test_coarse_field_units_and_grid():
    rng = np.random.default_rng(6)
    f = FeatureVolume(rng.random((2, 12, 12, 12)).astype(np.float32))
    m = FeatureVolume(np.roll(f.data, 2, axis=3))
    cfg = ConvexConfig(search_radius=2, quantization=2, coarse_stride=2)
    coarse = coupled_convex_coarse(build_cost_volume(f, m, cfg), cfg)
    # coarse grid spans the feature grid at double spacing, and the field
    # carries displacements in its own (coarse-cell) units: 2 feature
    # voxels -> 1 coarse cell
    assert coarse.grid.spacing == (2.0, 2.0, 2.0)
    assert coarse.grid_shape == (6, 6, 6)
    assert np.allclose(coarse.data[2, 2:-2, 2:-2, 1:-1], 1.0, atol=0.25)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        ConvexConfig(search_radius=5, quantization=2)  # not divisible
    with pytest.raises(ValueError):
        ConvexConfig(search_radius=2, quantization=4)  # q > R
    with pytest.raises(ValueError):
        ConvexConfig(coupling_schedule=(2.0, 1.0))  # not increasing
    with pytest.raises(ValueError):
        ConvexConfig(coupling_schedule=())


def test_channel_and_grid_mismatch_rejected():
    f = FeatureVolume(np.zeros((2, 8, 8, 8), dtype=np.float32))
    with pytest.raises(ValueError, match="channel mismatch"):
        build_cost_volume(f, FeatureVolume(np.zeros((3, 8, 8, 8), dtype=np.float32)))
    with pytest.raises(ValueError, match="grid mismatch"):
        build_cost_volume(f, FeatureVolume(np.zeros((2, 8, 8, 9), dtype=np.float32)))
