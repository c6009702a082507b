import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kidqn.acceptance import fine_step_displacement
from kidqn.core import Action, Pose2D, WorkspaceConfig, action_to_world
from kidqn.geometry import inside_box, penetrates, rect_distance
from kidqn.render import object_masks
from kidqn.sim import (
    CORNER_SLACK,
    OutcomeKind,
    Regime,
    Scene,
    SceneObject,
    SimParams,
    Wall,
    contacted_face,
    corner_slack,
    execute_sag,
    generate_test_scene,
    generate_training_scene,
    grasp_success,
    scene_from_text,
    scene_to_text,
    scenes_from_text,
    scenes_to_text,
)

FULL = WorkspaceConfig()
DESK = WorkspaceConfig.desk()


def wall_scene(obj_x=20.0, obj_y=20.0, theta=0.0):
    """Vertical wall occupying x in [5, 10]; 15 cm box centred at (obj_x, obj_y)."""
    wall = Wall(Pose2D(7.5, 20.0, 90.0), 30.0, 5.0, 25.0, 0.3)
    obj = SceneObject(Pose2D(obj_x, obj_y, theta), 15.0, 15.0, 3.0, 0.6)
    return Scene(obj, (wall,), 0.1, 0)


class TestGeneration:
    def test_deterministic(self):
        for gen in (generate_training_scene, generate_test_scene):
            assert gen(5, DESK) == gen(5, DESK)
            assert gen(5, DESK) != gen(6, DESK)

    def test_training_audit(self):
        for seed in range(1000):
            s = generate_training_scene(seed, FULL)
            assert inside_box(s.object.footprint, FULL.side_cm, tol=1e-9)
            assert len(s.walls) == 1
            w = s.walls[0]
            assert (w.length, w.thickness, w.height) == (30.0, 5.0, 25.0)
            assert inside_box(w.footprint, FULL.side_cm, tol=1e-6)
            assert -1e-6 <= corner_slack(w) <= CORNER_SLACK + 1e-6
            assert rect_distance(s.object.footprint, w.footprint) > 0.0
            assert 0.0 <= s.floor_intensity <= 1.0 and 0.0 <= s.object.intensity <= 1.0

    def test_test_scene_audit(self):
        heights, counts = [], set()
        for seed in range(1000):
            s = generate_test_scene(seed, FULL)
            counts.add(len(s.walls))
            for w in s.walls:
                assert 0.5 <= w.height <= 3.0 <= s.object.height
                assert 10.0 <= w.length <= 20.0
                assert inside_box(w.footprint, FULL.side_cm, tol=1e-6)
                heights.append(w.height)
            if len(s.walls) == 2:
                assert not penetrates(s.walls[0].footprint, s.walls[1].footprint)
        assert counts == {1, 2}
        assert 1.6 <= np.mean(heights) <= 1.9

    def test_multi_step_scene_exists(self):
        # one SaG pushes at most 10 cm, so a larger gap needs at least two actions
        def gap(s):
            scene = generate_training_scene(s, FULL)
            return rect_distance(scene.object.footprint, scene.walls[0].footprint)
        assert any(gap(s) > 10.0 for s in range(200))

    def test_desk_scaling(self):
        s = generate_training_scene(0, DESK)
        assert s.object.length == 15.0 and s.walls[0].height == 25.0  # side_cm stays 40 at desk scale


class TestSerialisation:
    def test_roundtrip(self):
        for seed in range(20):
            s = generate_test_scene(seed, DESK)
            assert scene_from_text(scene_to_text(s)) == s
        many = [generate_training_scene(k, DESK) for k in range(5)]
        assert scenes_from_text(scenes_to_text(many)) == many


class TestExecuteSag:
    def test_no_contact_unchanged(self):
        s = wall_scene()
        out = execute_sag(s, Action(35, 35, 2), Regime.SIM, FULL)
        assert out.kind is OutcomeKind.NO_CONTACT and out.reward == 0
        assert out.new_scene is s and out.object_displacement == 0.0

    def test_wall_collision(self):
        s = wall_scene()
        a = Action(6, 20, 2)  # tip ends inside the wall
        sim = execute_sag(s, a, Regime.SIM, FULL)
        real = execute_sag(s, a, Regime.REAL, FULL)
        assert sim.kind is real.kind is OutcomeKind.WALL_COLLISION
        assert sim.new_scene is s and not sim.fatal and real.fatal and sim.reward == 0

    def test_push_to_contact(self):
        # wall face at x = 5 + thickness = 10; object spans [12.5, 27.5]
        s = wall_scene()
        a = Action(24, 20, 2)
        p, u = action_to_world(a, FULL)
        assert np.array_equal(u, [-1.0, 0.0]) and np.allclose(p, [24.5, 20.5])
        out = execute_sag(s, a, Regime.SIM, FULL)
        # pushed flush with the tip still on the object: the same action also grasps
        assert out.kind is OutcomeKind.GRASP_SUCCESS
        assert out.object_displacement == pytest.approx(2.5, abs=1e-6)
        assert out.object_displacement == pytest.approx(fine_step_displacement(s, a, FULL), abs=0.05)
        left = out.new_scene.object.footprint.corners()[:, 0].min()
        assert left == pytest.approx(10.0, abs=1e-6)

    def test_short_push_matches_oracle(self):
        s = wall_scene()
        a = Action(25, 20, 2)  # the sweep meets the object 2 cm before its end point
        out = execute_sag(s, a, Regime.SIM, FULL)
        assert out.object_displacement == pytest.approx(2.0, abs=1e-9)
        assert abs(out.object_displacement - fine_step_displacement(s, a, FULL)) <= 0.05

    def test_grasp_after_contact(self):
        flush = wall_scene(obj_x=17.5)
        out = execute_sag(flush, Action(20, 20, 2), Regime.SIM, FULL)
        assert out.kind is OutcomeKind.GRASP_SUCCESS and out.reward == 1
        assert out.object_displacement == pytest.approx(0.0, abs=1e-6)

    def test_low_wall_cannot_grasp(self):
        s = wall_scene(obj_x=17.5)
        low = Scene(s.object, (Wall(s.walls[0].pose, 30.0, 5.0, 0.3, 0.3),), 0.1)
        assert not grasp_success(low, Action(20, 20, 2), FULL)

    def test_deterministic(self):
        s = generate_training_scene(3, DESK)
        a = Action(5, 7, 1)
        assert execute_sag(s, a, Regime.SIM, DESK) == execute_sag(s, a, Regime.SIM, DESK)


class TestGraspPredicate:
    def test_far_from_wall(self):
        assert not grasp_success(wall_scene(obj_x=27.5), Action(27, 20, 2), FULL)

    def test_flush_aligned(self):
        s = wall_scene(obj_x=17.5)
        gap, n_in = contacted_face(s.object.footprint, s.walls[0].footprint, [-1.0, 0.0])
        assert gap == pytest.approx(0.0, abs=1e-9) and np.allclose(n_in, [-1.0, 0.0])
        assert grasp_success(s, Action(17, 20, 2), FULL)

    def test_angle_tolerance(self):
        s = wall_scene(obj_x=17.5)
        # 45 deg heading is inside a 50 deg tolerance but outside 30
        cfg = FULL
        a = Action(17, 20, 1)
        _, u = action_to_world(a, cfg)
        assert math.degrees(math.acos(u @ np.array([-1.0, 0.0]))) == pytest.approx(45.0)
        assert not grasp_success(s, a, cfg, SimParams(theta_tol_deg=30.0))
        assert grasp_success(s, a, cfg, SimParams(theta_tol_deg=50.0))

    def test_fifty_degrees_rejected(self):
        ws = WorkspaceConfig(rotations=(0.0, 40.0))  # heading 230: 50 deg from the wall normal
        s = wall_scene(obj_x=17.5)
        assert not grasp_success(s, Action(17, 20, 1), ws)


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, DESK.n_actions - 1), st.booleans(), st.sampled_from(list(Regime)))
def test_physics_invariants(seed, flat, test_scene, regime):
    scene = (generate_test_scene if test_scene else generate_training_scene)(seed, DESK)
    a = Action.from_flat(flat, DESK.action_grid)
    out = execute_sag(scene, a, regime, DESK)
    assert (out.reward == 1) == (out.kind is OutcomeKind.GRASP_SUCCESS)
    obj = out.new_scene.object.footprint
    assert inside_box(obj, DESK.side_cm, tol=1e-6)
    assert not any(penetrates(obj, w.footprint, tol=1e-6) for w in scene.walls)
    if out.kind in (OutcomeKind.NO_CONTACT, OutcomeKind.WALL_COLLISION):
        assert out.new_scene == scene
    assert out.fatal == (out.kind is OutcomeKind.WALL_COLLISION and regime is Regime.REAL)


def test_fine_step_oracle_sample():
    rng = np.random.default_rng(0)
    checked = 0
    for seed in range(60):
        scene = generate_training_scene(seed, DESK)
        cells = np.flatnonzero(object_masks(scene, DESK).ravel())
        a = Action.from_flat(int(cells[rng.integers(cells.size)]), DESK.action_grid)
        out = execute_sag(scene, a, Regime.SIM, DESK)
        if out.kind is OutcomeKind.WALL_COLLISION:
            continue
        checked += 1
        assert abs(out.object_displacement - fine_step_displacement(scene, a, DESK)) <= 0.05
    assert checked >= 30


def test_monotone_progress_toward_wall():
    cos_tol = math.cos(math.radians(30.0))
    tried = 0
    for seed in range(150):
        scene = generate_training_scene(seed, DESK)
        wall = scene.walls[0].footprint
        masks = object_masks(scene, DESK)
        for flat in np.flatnonzero(masks.ravel())[::7]:
            a = Action.from_flat(int(flat), DESK.action_grid)
            p, u = action_to_world(a, DESK)
            _, n_in = contacted_face(scene.object.footprint, wall, u)
            if u @ n_in < cos_tol:
                continue
            out = execute_sag(scene, a, Regime.SIM, DESK)
            if out.kind is OutcomeKind.WALL_COLLISION:
                continue
            tried += 1
            before = rect_distance(scene.object.footprint, wall)
            after = rect_distance(out.new_scene.object.footprint, wall)
            assert after <= before + 1e-9
    assert tried > 20
