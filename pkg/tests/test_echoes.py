import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melidar import _core_py, kernels, photon
from melidar.echoes import (
    aggregate_neighborhood,
    aggregate_sparse,
    assemble_frame,
    backproject,
    dense_echoes,
    gaussian_kernel,
    select_topk,
)
from melidar.errors import ConfigError
from melidar.model import frames_equal, validate_frame
from melidar.scene import toy_scene
from melidar.simulate import simulate


class TestKernel:
    def test_normalized_symmetric(self):
        g = gaussian_kernel(5, 1.0)
        assert g.sum() == pytest.approx(1) and np.allclose(g, g.T) and np.allclose(g, g[::-1])

    def test_even_rejected(self):
        with pytest.raises(ConfigError):
            gaussian_kernel(4, 1.0)


class TestAggregate:
    def test_delta_identity(self):
        h = np.random.default_rng(0).poisson(2, (4, 5, 6))
        assert np.array_equal(aggregate_neighborhood(h, np.ones((1, 1))), h)

    def test_uniform_spike(self):
        h = np.zeros((5, 5, 3))
        h[2, 2, 1] = 9
        out = aggregate_neighborhood(h, np.full((3, 3), 1 / 9))
        assert np.allclose(out[1:4, 1:4, 1], 1.0) and out[..., 1].sum() == pytest.approx(9)
        assert not out[..., [0, 2]].any()

    def test_bins_do_not_mix(self):
        h = np.zeros((3, 3, 4))
        h[1, 1, 0] = 5
        h[1, 1, 3] = 7
        out = aggregate_neighborhood(h, gaussian_kernel(3, 1.0))
        assert not out[..., 1:3].any()

    def test_interior_mass_conserved(self):
        h = np.zeros((9, 9, 2))
        h[4, 4, 0] = 3.0
        out = aggregate_neighborhood(h, gaussian_kernel(5, 1.0))
        assert out.sum() == pytest.approx(3.0, rel=1e-6)

    def test_sparse_matches_dense(self):
        gen = np.random.default_rng(3)
        h = np.zeros((6, 7, 5))
        hists = {}
        for _ in range(12):
            r, c, n = gen.integers(6), gen.integers(7), gen.integers(5)
            h[r, c, n] += 1
            hists.setdefault((r, c), {}).setdefault(n, 0)
            hists[(r, c)][n] += 1
        k = gaussian_kernel(3, 0.8)
        dense = aggregate_neighborhood(h, k)
        sparse = aggregate_sparse(hists, k, (6, 7))
        for (r, c), bins in sparse.items():
            for n, v in bins.items():
                assert v == pytest.approx(dense[r, c, n])


class TestTopK:
    def test_example(self):
        out = select_topk([0, 5, 0, 3, 1], 2, 2, 0)
        assert [(c.bin, c.strength) for c in out] == [(1, 5), (3, 3)]

    def test_below_tau(self):
        assert select_topk([1, 1, 0.5], 3, 2) == []

    def test_tie_smaller_bin(self):
        assert select_topk([4, 4], 1, 0)[0].bin == 0

    def test_nms(self):
        out = select_topk([0, 9, 8, 0, 0, 7], 3, 1, nms_window=1)
        assert [c.bin for c in out] == [1, 5]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 20), min_size=1, max_size=30), st.integers(1, 4), st.integers(0, 10), st.integers(0, 3))
    def test_properties(self, hist, k, tau, win):
        out = select_topk(hist, k, tau, win)
        s = [c.strength for c in out]
        assert len(out) <= k and all(v >= tau for v in s) and s == sorted(s, reverse=True)
        bins = [c.bin for c in out]
        assert all(abs(a - b) > win for i, a in enumerate(bins) for b in bins[i + 1:])


class TestBackproject:
    def test_first_bin_center(self):
        p = backproject(0, np.array([1.0, 0, 0]), 1000 / 10240)
        assert p[0] == pytest.approx(0.048828125)

    def test_axis(self):
        assert np.allclose(backproject(4.5, [1.0, 0, 0], 1.0), [5, 0, 0])


class TestAssemble:
    def test_reflectance_and_empty(self):
        bins = np.array([[[3, -1], [7, -1], [-1, -1]]])
        s = np.array([[[2.0, 0], [6.0, 0], [0, 0]]])
        dirs = np.tile(np.array([1.0, 0, 0]), (1, 3, 1))
        frame, image, cloud = assemble_frame(bins, s, np.zeros((1, 3)), dirs, 0.5)
        assert np.allclose(frame.reflectance[0, :2, 0], [0.5, 1.5])
        assert frame.group(0, 2).echoes == () and not image.data[0, 2, 1:].any()
        assert cloud.shape == (1, 3, 2, 5) and validate_frame(frame) == []


def _inputs(scene):
    res = simulate(scene.rgb, scene.depth, scene.normals, scene.config)
    h, w = res.rates.signal_bin.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    keys = _core_py.pixel_keys(scene.config.seed, np.maximum(res.inputs.view, 0), rows, cols)
    sig, amb = res.rates.draw_params()
    return res, keys, sig, amb


class TestSparseKernels:
    @pytest.mark.parametrize("threads", [1, 4, 16])
    def test_backends_agree(self, threads):
        sc = toy_scene(5, seed=3)
        res, keys, sig, amb = _inputs(sc)
        k = gaussian_kernel(5, 1.0)
        ref = _core_py.sparse_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3)
        for b in kernels.available_backends():
            got = kernels.sparse_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3, threads=threads, backend=b)
            assert got[0].tobytes() == ref[0].tobytes() and got[1].tobytes() == ref[1].tobytes()

    def test_dense_oracle(self):
        sc = toy_scene(9, bins=128, depth_range=60.0, seed=1)
        res, keys, sig, amb = _inputs(sc)
        k = gaussian_kernel(5, 1.0)
        d = dense_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3, 128)
        s = kernels.sparse_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3)
        assert np.array_equal(d[0], s[0]) and d[1].tobytes() == s[1].tobytes()

    def test_block_rows_irrelevant(self):
        sc = toy_scene(2, seed=4)
        res, keys, sig, amb = _inputs(sc)
        k = gaussian_kernel(5, 1.0)
        a = _core_py.sparse_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3, block_rows=1)
        b = _core_py.sparse_echoes(res.rates.signal_bin, keys, sig, amb, k, 3, res.tau, 3, block_rows=64)
        assert a[1].tobytes() == b[1].tobytes()


class TestSimulate:
    def test_seed_changes_output(self, toy):
        a = simulate(toy.rgb, toy.depth, toy.normals, toy.config)
        b = simulate(toy.rgb, toy.depth, toy.normals, toy.config.updated(seed=8))
        assert not frames_equal(a.frame, b.frame)

    def test_sbr_raises_echoes(self, toy):
        lo = simulate(toy.rgb, toy.depth, toy.normals, toy.config.updated(sbr=5.0))
        hi = simulate(toy.rgb, toy.depth, toy.normals, toy.config.updated(sbr=200.0))
        assert hi.frame.num_points() > lo.frame.num_points()

    def test_echo_count_monotone(self, toy_result):
        c = toy_result.frame.echo_counts()
        assert np.all(np.diff(c) <= 0) and c[0] > 0

    def test_tau_default(self, toy_result):
        k = gaussian_kernel(5, 1.0)
        assert toy_result.tau == photon.ambient_tau_bound(float(toy_result.rates.ambient_rate.max()), k, 10240)

    def test_strongest_echo_near_surface(self, toy_result):
        # the first echo sits within a few bins of the true surface range
        inp = toy_result.inputs
        f = toy_result.frame
        m = inp.hit & f.valid[..., 0]
        r = np.linalg.norm(f.points[..., 0, :], axis=-1)
        assert np.median(np.abs(r[m] - inp.ranges[m])) < 0.5

    def test_multi_camera(self):
        from melidar.model import ArraySpec
        from melidar.optics import camera_for_fov
        from melidar.scene import render, random_objects

        spec = ArraySpec((-10, 5), (-60, 60), 1.0, 2.0)
        cams = tuple(camera_for_fov((-10, 5), (-35, 35), 48, 24, yaw_deg=y) for y in (-35, 35))
        boxes = random_objects(np.random.default_rng(0), 3, 2, (6, 30))
        views = [render(c, boxes, [0.8] * len(boxes)) for c in cams]
        rgb = np.stack([v[0] for v in views])
        depth = np.stack([v[1] for v in views])
        normals = np.stack([v[2] for v in views])
        from melidar.model import SimConfig

        res = simulate(rgb, depth, normals, SimConfig(array=spec, cameras=cams, seed=2))
        assert set(np.unique(res.inputs.view)) == {0, 1}
        assert validate_frame(res.frame) == []
