"""Scene generation, path tracing, channel grid, snapping, trajectories."""

import math

import numpy as np
import pytest

from beamseq.mobility import Trajectory, TrajectoryError, sample_trajectory
from beamseq.phy import ArrayGeometry, synthesize_channel
from beamseq.scene import (
    BaseStation,
    ChannelGrid,
    GridSpec,
    Scene,
    SceneParams,
    Wall,
    build_channel_grid,
    generate_scene,
    snap_positions,
    snap_to_grid,
    trace_paths,
)


def coarse_params(**overrides):
    kwargs = dict(grid_spacing=0.5)
    kwargs.update(overrides)
    return SceneParams(**kwargs)


@pytest.fixture(scope="module")
def los_scene():
    return generate_scene(coarse_params(num_reflectors=0, num_scatterers=0), seed=1)


@pytest.fixture(scope="module")
def rich_scene():
    return generate_scene(coarse_params(), seed=1)


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(coarse_params(), seed=42)
        b = generate_scene(coarse_params(), seed=42)
        assert a.to_dict() == b.to_dict()
        assert a.digest() == b.digest()

    def test_seed_changes_scene(self):
        a = generate_scene(coarse_params(), seed=42)
        b = generate_scene(coarse_params(), seed=43)
        assert a.digest() != b.digest()

    def test_default_antenna_counts(self):
        scene = generate_scene(coarse_params(), seed=0)
        assert scene.station("rsu0").geometry.num_antennas == 32
        assert scene.station("rsu1").geometry.num_antennas == 32
        assert scene.station("mbs").geometry.num_antennas == 128
        assert scene.station("rsu0").height == 3.0
        assert scene.station("mbs").height == 22.0

    def test_los_only_scene_has_single_path_everywhere(self, los_scene):
        rng = np.random.default_rng(0)
        pts = los_scene.grid.points()
        for idx in rng.choice(len(pts), size=10, replace=False):
            for bs_id in ("rsu0", "rsu1", "mbs"):
                paths = trace_paths(los_scene, bs_id, pts[idx])
                assert len(paths) == 1

    def test_uncovered_grid_rejected(self):
        # MBS pushed inside the grid: corners fall behind the array
        with pytest.raises(ValueError):
            generate_scene(coarse_params(mbs_offset=-5.0), seed=0)

    def test_default_grid_point_count(self):
        # origin-inclusive, far-edge-exclusive: extent/spacing points per axis
        grid = GridSpec(origin=(0.0, 0.0), extent=(30.0, 10.0), spacing=0.05)
        assert grid.n_x == 600
        assert grid.n_y == 200
        assert grid.num_points == 600 * 200


class TestTracePaths:
    def test_los_aod_matches_geometry(self, los_scene):
        bs = los_scene.station("rsu0")
        point = np.array([10.0, 7.0])
        (path,) = trace_paths(los_scene, "rsu0", point)
        expected_az = math.atan2(
            point[1] - bs.position[1], point[0] - bs.position[0]
        )
        expected_aod = math.asin(math.sin(expected_az - bs.boresight))
        assert path.aod == pytest.approx(expected_aod, abs=1e-12)
        assert path.aoa == pytest.approx(0.0, abs=1e-12)
        # free-space amplitude over the 3-D distance
        d3 = math.hypot(
            np.linalg.norm(point - np.asarray(bs.position)),
            bs.height - los_scene.rx_height,
        )
        lam = los_scene.wavelength_m
        assert abs(path.gain) == pytest.approx(lam / (4 * math.pi * d3), rel=1e-12)

    def test_reflected_path_matches_image_source_oracle(self):
        # single full-width wall behind the road
        scene = generate_scene(
            coarse_params(num_reflectors=1, num_scatterers=0), seed=5
        )
        wall = scene.walls[0]
        assert wall.a[1] == wall.b[1]  # wall parallel to the road
        bs = scene.station("rsu0")
        point = np.array([12.0, 4.0])
        paths = trace_paths(scene, "rsu0", point)
        assert len(paths) == 2  # LoS + one reflection
        refl = paths[1]
        wall_y = wall.a[1]
        image = np.array([bs.position[0], 2 * wall_y - bs.position[1]])
        plan = float(np.linalg.norm(point - image))
        d3 = math.hypot(plan, bs.height - scene.rx_height)
        lam = scene.wavelength_m
        expected_amp = lam / (4 * math.pi * d3) * 10 ** (-wall.reflection_loss_db / 20)
        assert abs(refl.gain) == pytest.approx(expected_amp, rel=1e-12)
        expected_phase = (-2 * math.pi * d3 / lam) % (2 * math.pi)
        assert np.angle(refl.gain) % (2 * math.pi) == pytest.approx(
            expected_phase, abs=1e-6
        )
        # departure toward the mirror point on the wall
        t = (wall_y - image[1]) / (point[1] - image[1])
        hit = image + t * (point - image)
        expected_aod = math.asin(
            math.sin(
                math.atan2(hit[1] - bs.position[1], hit[0] - bs.position[0])
                - bs.boresight
            )
        )
        assert refl.aod == pytest.approx(expected_aod, abs=1e-12)

    def test_mirrored_points_have_symmetric_aods(self):
        # custom symmetric scene: BS below the grid looking up (+y), wall above
        geometry = ArrayGeometry(num_antennas=8)
        scene = Scene(
            carrier_hz=28e9,
            rx_height=1.5,
            stations={
                "bs": BaseStation(
                    bs_id="bs",
                    position=(15.0, -5.0),
                    height=3.0,
                    boresight=math.pi / 2,
                    geometry=geometry,
                )
            },
            walls=(Wall(a=(-5.0, 12.0), b=(35.0, 12.0), height=6.0, reflection_loss_db=4.0),),
            scatterers=(),
            grid=GridSpec(origin=(0.0, 0.0), extent=(30.0, 10.0), spacing=0.5),
            seed=0,
        )
        left = trace_paths(scene, "bs", np.array([10.0, 4.0]))
        right = trace_paths(scene, "bs", np.array([20.0, 4.0]))
        assert len(left) == len(right) == 2
        for pl, pr in zip(left, right):
            assert pl.aod == pytest.approx(-pr.aod, abs=1e-12)
            assert abs(pl.gain) == pytest.approx(abs(pr.gain), rel=1e-12)

    def test_blocking_wall_creates_outage(self):
        # wall dropped between the BS and the grid, taller than both
        geometry = ArrayGeometry(num_antennas=4)
        scene = Scene(
            carrier_hz=28e9,
            rx_height=1.5,
            stations={
                "bs": BaseStation(
                    bs_id="bs",
                    position=(15.0, -5.0),
                    height=3.0,
                    boresight=math.pi / 2,
                    geometry=geometry,
                )
            },
            walls=(Wall(a=(-5.0, -1.0), b=(35.0, -1.0), height=30.0, reflection_loss_db=4.0),),
            scatterers=(),
            grid=GridSpec(origin=(0.0, 0.0), extent=(30.0, 10.0), spacing=0.5),
            seed=0,
        )
        assert trace_paths(scene, "bs", np.array([15.0, 5.0])) == []

    def test_point_outside_grid_rejected(self, los_scene):
        with pytest.raises(ValueError):
            trace_paths(los_scene, "rsu0", np.array([100.0, 100.0]))


class TestChannelGrid:
    def test_cache_coherence_spot_checks(self, rich_scene):
        grid = build_channel_grid(rich_scene, bs_ids=("rsu0", "rsu1"))
        rng = np.random.default_rng(2)
        for idx in rng.choice(rich_scene.grid.num_points, size=12, replace=False):
            for bs_id in ("rsu0", "rsu1"):
                paths = grid.paths_at(bs_id, int(idx))
                snap = synthesize_channel(
                    paths, rich_scene.station(bs_id).geometry
                )
                np.testing.assert_allclose(
                    grid.snapshots[bs_id][idx],
                    snap.coefficients,
                    rtol=1e-12,
                    atol=1e-20,
                )

    def test_los_snapshot_is_scaled_steering_vector(self, los_scene):
        grid = build_channel_grid(los_scene, bs_ids=("rsu0",))
        bs = los_scene.station("rsu0")
        for idx in (0, 57, 1199):
            (path,) = grid.paths_at("rsu0", idx)
            from beamseq.phy import steering_vector

            expected = path.gain * steering_vector(bs.geometry, path.aod)
            np.testing.assert_allclose(
                grid.snapshots["rsu0"][idx], expected, rtol=1e-12
            )

    def test_los_gain_strictly_decreases_with_distance(self, los_scene):
        grid = build_channel_grid(los_scene, bs_ids=("rsu0",))
        bs = los_scene.station("rsu0")
        pts = los_scene.grid.points()
        d3 = np.hypot(
            np.linalg.norm(pts - np.asarray(bs.position), axis=1),
            bs.height - los_scene.rx_height,
        )
        amp = np.abs(grid.path_gains["rsu0"][:, 0])
        order = np.argsort(d3)
        d_sorted, a_sorted = d3[order], amp[order]
        distinct = np.diff(d_sorted) > 1e-9
        assert np.all(np.diff(a_sorted)[distinct] < 0)

    def test_save_load_roundtrip(self, tmp_path, los_scene):
        grid = build_channel_grid(los_scene, bs_ids=("rsu0",))
        path = tmp_path / "grid.npz"
        grid.save(path)
        loaded = ChannelGrid.load(path)
        assert loaded.scene.digest() == los_scene.digest()
        np.testing.assert_array_equal(loaded.snapshots["rsu0"], grid.snapshots["rsu0"])
        np.testing.assert_array_equal(loaded.path_valid["rsu0"], grid.path_valid["rsu0"])


class TestSnapToGrid:
    GRID = GridSpec(origin=(0.0, 0.0), extent=(2.0, 1.0), spacing=0.05)

    def test_exact_point_maps_to_itself(self):
        idx = snap_to_grid(self.GRID.point_at(33), self.GRID)
        assert idx == 33

    def test_midpoint_rule(self):
        # 0.024 past a point stays, 0.026 moves on; exact midpoint goes lower
        assert snap_to_grid((0.024, 0.0), self.GRID) == 0
        assert snap_to_grid((0.026, 0.0), self.GRID) == self.GRID.n_y
        assert snap_to_grid((0.25, 0.0), GridSpec((0.0, 0.0), (2.0, 1.0), 0.5)) == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        grid = GridSpec(origin=(-1.0, 2.0), extent=(1.5, 1.0), spacing=0.25)
        pts = grid.points()
        for _ in range(300):
            pos = np.array(
                [
                    rng.uniform(-1.0 - 0.124, -1.0 + 1.25 + 0.124),
                    rng.uniform(2.0 - 0.124, 2.0 + 0.75 + 0.124),
                ]
            )
            d = np.linalg.norm(pts - pos, axis=1)
            best = np.flatnonzero(d <= d.min() + 1e-12).min()
            assert snap_to_grid(pos, grid) == best

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            snap_to_grid((-0.5, 0.0), self.GRID)
        with pytest.raises(ValueError):
            snap_to_grid((0.0, 1.2), self.GRID)

    def test_half_spacing_overhang_accepted(self):
        assert snap_to_grid((-0.025, 0.0), self.GRID) == 0


class TestTrajectories:
    def test_constant_speed_displacement(self):
        traj = Trajectory(
            start=(0.0, 0.0),
            heading=0.0,
            initial_speed=10.0,
            acceleration=0.0,
            num_slots=101,
        )
        pos = traj.positions()
        assert pos[100, 0] == pytest.approx(1.0, abs=1e-12)
        assert pos[100, 1] == 0.0

    def test_closed_form_matches_stepwise_integration(self):
        traj = Trajectory(
            start=(3.0, 4.0),
            heading=0.7,
            initial_speed=12.0,
            acceleration=-2.5,
            num_slots=200,
        )
        pos = traj.positions()
        # independent per-slot kinematic accumulation
        direction = np.array([math.cos(0.7), math.sin(0.7)])
        p = np.array([3.0, 4.0])
        dt = traj.dt
        stepwise = [p.copy()]
        for k in range(199):
            v_k = 12.0 + (-2.5) * k * dt
            p = p + direction * (v_k * dt + 0.5 * (-2.5) * dt * dt)
            stepwise.append(p.copy())
        np.testing.assert_allclose(pos, np.array(stepwise), atol=1e-9)

    def test_sampled_speeds_within_bounds(self, los_scene):
        rng = np.random.default_rng(8)
        speeds, accels = [], []
        for _ in range(500):
            traj = sample_trajectory(los_scene, rng, num_slots=100)
            speeds.append(traj.initial_speed)
            accels.append(traj.acceleration)
        assert min(speeds) >= 10.0 and max(speeds) <= 15.0
        assert min(accels) >= -3.0 and max(accels) <= 3.0

    def test_sampled_path_stays_on_grid(self, los_scene):
        rng = np.random.default_rng(9)
        for _ in range(50):
            traj = sample_trajectory(los_scene, rng, num_slots=150)
            snap_positions(traj.positions(), los_scene.grid)  # raises if outside

    def test_impossible_fit_reports_failure(self):
        tiny = generate_scene(
            coarse_params(grid_extent=(1.0, 1.0), grid_spacing=0.5), seed=0
        )
        rng = np.random.default_rng(10)
        with pytest.raises(TrajectoryError):
            # 1 second at >=10 m/s cannot stay inside a 1 m grid
            sample_trajectory(tiny, rng, num_slots=1000, max_retries=50)
