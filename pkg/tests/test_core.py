import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kidqn.core import (
    BILINEAR,
    NEAREST,
    Action,
    DimensionError,
    Pose2D,
    WorkspaceConfig,
    action_to_world,
    push_direction_deg,
    rotate_grid,
    rotate_grid_adjoint,
    world_to_cell,
)


def dense(fn, n, *args):
    """Probe a linear grid map with basis vectors; column k is fn(e_k)."""
    cols = []
    for k in range(n * n):
        e = np.zeros(n * n)
        e[k] = 1.0
        cols.append(fn(e.reshape(n, n), *args).ravel())
    return np.stack(cols, axis=1)


def brute_nearest_rotation(field, angle):
    """Literal per-cell mapping: output(x, y) = input(R(-angle)((x, y) - c) + c), rounded."""
    n = field.shape[0]
    c = (n - 1) / 2
    a = math.radians(angle)
    out = np.zeros_like(field)
    for y in range(n):
        for x in range(n):
            sx = math.cos(a) * (x - c) + math.sin(a) * (y - c) + c
            sy = -math.sin(a) * (x - c) + math.cos(a) * (y - c) + c
            ix, iy = math.floor(round(sx, 9) + 0.5), math.floor(round(sy, 9) + 0.5)
            if 0 <= ix < n and 0 <= iy < n:
                out[y, x] = field[iy, ix]
    return out


class TestWorkspaceConfig:
    def test_defaults(self):
        cfg = WorkspaceConfig()
        assert cfg.n_actions == 40 * 40 * 3 == 4800
        assert cfg.cell_cm == 1.0 and cfg.pixel_cm == 0.5

    def test_desk(self):
        cfg = WorkspaceConfig.desk()
        assert (cfg.action_grid, cfg.obs_grid) == (20, 40)

    @pytest.mark.parametrize("kw", [
        dict(obs_grid=81), dict(rotations=(0.0, 0.0)), dict(rotations=(180.0,)), dict(rotations=()),
        dict(channels=3), dict(side_cm=0.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            WorkspaceConfig(**kw)


@settings(max_examples=200)
@given(st.integers(1, 12), st.integers(1, 4), st.data())
def test_flat_index_bijection(n, r, data):
    idx = data.draw(st.integers(0, n * n * r - 1))
    a = Action.from_flat(idx, n)
    assert a.flat(n) == idx
    assert 0 <= a.i < n and 0 <= a.j < n and a.phi_idx < r


def test_flat_index_exhaustive():
    cfg = WorkspaceConfig()
    seen = {Action.from_flat(k, 40) for k in range(cfg.n_actions)}
    assert len(seen) == 4800


def test_action_validate():
    with pytest.raises(ValueError):
        Action(20, 0, 0).validate(WorkspaceConfig.desk())
    with pytest.raises(ValueError):
        Action(0, 0, 3).validate(WorkspaceConfig.desk())


def test_pose_normalises_theta():
    assert Pose2D(1, 2, -90).theta == 270.0
    assert Pose2D(1, 2, 720.5).theta == pytest.approx(0.5)


class TestRotateGrid:
    def test_identity_uniform(self):
        f = np.ones((6, 6))
        for mode in (NEAREST, BILINEAR):
            out = rotate_grid(f, 0.0, mode)
            assert np.array_equal(out, f) and out is not f

    @pytest.mark.parametrize("angle", [10.0, 45.0, 90.0, 133.0, 270.0])
    def test_centre_fixed(self, angle):
        f = np.zeros((5, 5))
        f[2, 2] = 1.0
        assert np.array_equal(rotate_grid(f, angle, NEAREST), f)

    def test_hot_pixel_90(self):
        f = np.zeros((4, 4))
        f[1, 0] = 1.0  # (x=0, y=1)
        out = rotate_grid(f, 90.0, NEAREST)
        assert np.array_equal(out, brute_nearest_rotation(f, 90.0))
        assert np.argwhere(out == 1.0).tolist() == [[0, 2]]

    @pytest.mark.parametrize("angle", [30.0, 45.0, 90.0, 180.0])
    def test_nearest_matches_brute_force(self, angle):
        f = np.random.default_rng(0).normal(size=(7, 7))
        assert np.array_equal(rotate_grid(f, angle, NEAREST), brute_nearest_rotation(f, angle))

    def test_non_square(self):
        with pytest.raises(DimensionError):
            rotate_grid(np.zeros((3, 4)), 10.0)
        with pytest.raises(DimensionError):
            rotate_grid_adjoint(np.zeros((3, 4)), 10.0)

    def test_inverse_recovers_interior(self):
        y, x = np.mgrid[0:16, 0:16]
        f = np.sin(x / 3.0) + np.cos(y / 4.0)
        back = rotate_grid(rotate_grid(f, 45.0), -45.0)
        assert np.abs(back - f)[5:11, 5:11].max() < 0.1

    def test_stack(self):
        f = np.random.default_rng(1).normal(size=(3, 6, 6))
        out = rotate_grid(f, 45.0)
        for k in range(3):
            assert np.allclose(out[k], rotate_grid(f[k], 45.0))


class TestAdjoint:
    def test_zero_angle(self):
        g = np.random.default_rng(0).normal(size=(5, 5))
        assert np.array_equal(rotate_grid_adjoint(g, 0.0), g)

    def test_dense_transpose_bilinear_45(self):
        rng = np.random.default_rng(3)
        u, v = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        fwd = dense(rotate_grid, 8, 45.0, BILINEAR)
        adj = dense(rotate_grid_adjoint, 8, 45.0, BILINEAR)
        assert np.array_equal(adj, fwd.T)
        lhs = float((rotate_grid(u, 45.0) * v).sum())
        rhs = float((u * rotate_grid_adjoint(v, 45.0)).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_nearest_90_adjoint_is_inverse_rotation(self):
        adj = dense(rotate_grid_adjoint, 4, 90.0, NEAREST)
        inv = dense(rotate_grid, 4, -90.0, NEAREST)
        assert np.array_equal(adj, inv)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 10), st.floats(-360, 360, allow_nan=False), st.sampled_from([NEAREST, BILINEAR]),
           st.integers(0, 2**31 - 1))
    def test_inner_product_identity(self, n, angle, mode, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        lhs = float((rotate_grid(u, angle, mode) * v).sum())
        rhs = float((u * rotate_grid_adjoint(v, angle, mode)).sum())
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), 1.0)


class TestActionToWorld:
    def test_centre_cell(self):
        p, u = action_to_world(Action(20, 20, 0), WorkspaceConfig())
        assert np.allclose(p, [20.5, 20.5])
        assert np.allclose(u, [0.0, -1.0])

    def test_corner_cell(self):
        p, _ = action_to_world(Action(0, 0, 0), WorkspaceConfig())
        assert np.allclose(p, [0.5, 0.5])

    def test_headings(self):
        assert [push_direction_deg(p) for p in (0.0, 45.0, 90.0)] == [270.0, 225.0, 180.0]
        _, u = action_to_world(Action(10, 30, 2), WorkspaceConfig())
        assert np.array_equal(u, [-1.0, 0.0])
        _, u = action_to_world(Action(10, 30, 1), WorkspaceConfig())
        assert np.allclose(u, [-math.sqrt(0.5), -math.sqrt(0.5)])

    def test_point_independent_of_rotation(self):
        cfg = WorkspaceConfig()
        pts = [action_to_world(Action(10, 30, r), cfg)[0] for r in range(3)]
        assert all(np.array_equal(pts[0], p) for p in pts)
        assert np.allclose(pts[0], [10.5, 30.5])

    def test_world_to_cell_roundtrip(self):
        cfg = WorkspaceConfig.desk()
        for k in range(cfg.action_grid ** 2):
            a = Action.from_flat(k, cfg.action_grid)
            assert world_to_cell(action_to_world(a, cfg)[0], cfg) == (a.i, a.j)
