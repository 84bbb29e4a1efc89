import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singdrift import _kernels as K
from singdrift.fbm import TimeGrid, sample_fbm_array


def paths(n_paths=4, n=256, d=1, seed=0):
    return sample_fbm_array(0.3, TimeGrid(n), n_paths, d, seed)


class TestEquivalence:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000), st.floats(-1, 1))
    def test_euler_grid(self, seed, x0):
        w = paths(seed=seed)[:, :, 0]
        vals = np.random.default_rng(seed).normal(size=64)
        x0 = np.full(4, x0)
        a = K._euler_grid_1d_nb(x0, w, 1 / 256, -2.0, 4 / 63, vals)
        b = K._euler_grid_1d_np(x0, w, 1 / 256, -2.0, 4 / 63, vals)
        assert a[1] == b[1]
        assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.02, 0.5))
    def test_occupation_1d(self, seed, R):
        w = np.ascontiguousarray(paths(seed=seed)[:, :, 0])
        t_idx = np.array([64, 128, 256])
        a = K._occupation_1d_nb(w, 1 / 256, -1.5, 0.05, 61, R, t_idx)
        b = K._occupation_1d_np(w, 1 / 256, -1.5, 0.05, 61, R, t_idx)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_occupation_ball(self, d):
        w = np.ascontiguousarray(paths(d=d, seed=d))
        pts = np.random.default_rng(d).uniform(-0.5, 0.5, size=(7, d))
        t_idx = np.array([100, 256])
        a = K._occupation_ball_nb(w, 1 / 256, pts, 0.3, t_idx)
        b = K._occupation_ball_np(w, 1 / 256, pts, 0.3, t_idx)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("floor", [2.0**-20, 2.0**-10])
    def test_ce_euler(self, d, floor):
        f = np.ascontiguousarray(sample_fbm_array(0.6, TimeGrid(2048), 3, d, 1))
        a = K._ce_euler_nb(f, 1 / 2048, 1.0, floor)
        b = K._ce_euler_np(f, 1 / 2048, 1.0, floor)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


class TestSwitch:
    def test_flag_disables_numba(self):
        code = ("import json, numpy as np; from singdrift import _kernels as K;"
                "from singdrift.fbm import TimeGrid, sample_fbm_array;"
                "w = sample_fbm_array(0.3, TimeGrid(128), 2, 1, 0)[:, :, 0];"
                "o = K.occupation_1d(w, 1/128, -1.0, 0.1, 21, 0.2, np.array([128]));"
                "print(json.dumps({'numba': K.HAS_NUMBA, 'sum': float(o.sum())}))")
        env = dict(os.environ, SINGDRIFT_DISABLE_NUMBA="1")
        off = json.loads(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                        text=True, check=True).stdout)
        env.pop("SINGDRIFT_DISABLE_NUMBA")
        on = json.loads(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                       text=True, check=True).stdout)
        print(off, on)
        assert off["numba"] is False
        assert off["sum"] == pytest.approx(on["sum"], rel=1e-12)
