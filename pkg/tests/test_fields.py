import numpy as np
import pytest

from equiavg.fields import (
    FieldError,
    FieldSet,
    GridSpec,
    Trajectory,
    Window,
    load_trajectory,
    make_fieldset,
    make_schema,
    save_trajectory,
    slide_window,
    spatial_mean,
)

from conftest import random_fieldset


class TestMakeFieldset:
    def test_scalar_round_trip(self):
        grid = GridSpec(2, 2)
        schema = make_schema(("u", "scalar"))
        f = make_fieldset(grid, schema, [[0.0, 1.0], [2.0, 3.0]])
        assert f.n_components == 1
        assert f.grid.n_cells == 4
        assert np.array_equal(f.data[0], [[0, 1], [2, 3]])

    def test_nan_rejected(self):
        grid = GridSpec(2, 2)
        schema = make_schema(("u", "scalar"))
        data = np.array([[0.0, np.nan], [0.0, 0.0]])
        with pytest.raises(FieldError, match="non-finite"):
            make_fieldset(grid, schema, data)

    def test_inf_rejected(self):
        grid = GridSpec(2, 2)
        schema = make_schema(("u", "scalar"))
        with pytest.raises(FieldError, match="non-finite"):
            make_fieldset(grid, schema, np.full((1, 2, 2), np.inf))

    def test_component_arity(self):
        grid = GridSpec(3, 3)
        schema = make_schema(("c", "scalar"), ("v", "vector"))
        ok = make_fieldset(grid, schema, np.zeros((3, 3, 3)))
        assert ok.n_components == 3
        with pytest.raises(FieldError, match="shape"):
            make_fieldset(grid, schema, np.zeros((2, 3, 3)))

    def test_data_is_immutable(self):
        grid = GridSpec(2, 2)
        f = make_fieldset(grid, make_schema(("u", "scalar")), np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            f.data[0, 0, 0] = 1.0

    def test_unknown_channel(self):
        grid = GridSpec(2, 2)
        f = make_fieldset(grid, make_schema(("u", "scalar")), np.zeros((1, 2, 2)))
        with pytest.raises(FieldError, match="unknown channel"):
            f.channel_data("nope")


class TestGridSpec:
    def test_too_small(self):
        with pytest.raises(FieldError):
            GridSpec(1, 4)

    def test_bad_spacing(self):
        with pytest.raises(FieldError):
            GridSpec(4, 4, dx=0.0)

    def test_bad_boundary(self):
        with pytest.raises(FieldError):
            GridSpec(4, 4, boundary="open")

    def test_periodicity(self):
        both = GridSpec(4, 4)
        assert both.periodic_axis("x") and both.periodic_axis("y")
        channel = GridSpec(6, 4, boundary="periodic-x-neumann-y")
        assert channel.periodic_axis("x") and not channel.periodic_axis("y")


class TestSchema:
    def test_offsets_contiguous(self):
        schema = make_schema(("a", "scalar"), ("v", "vector"), ("D", "tensor"))
        assert [g.offset for g in schema] == [0, 1, 3]

    def test_gap_rejected(self):
        from equiavg.fields import ChannelGroup, schema_components
        bad = (ChannelGroup("a", "scalar", 0), ChannelGroup("b", "scalar", 2))
        with pytest.raises(FieldError, match="contiguous"):
            schema_components(bad)

    def test_bad_kind(self):
        from equiavg.fields import ChannelGroup
        with pytest.raises(FieldError):
            ChannelGroup("a", "matrix", 0)


class TestSlideWindow:
    def _frame(self, t):
        grid = GridSpec(2, 2)
        schema = make_schema(("u", "scalar"))
        return make_fieldset(grid, schema, np.full((1, 2, 2), float(t)), time_index=t)

    def test_queue_semantics(self):
        w = Window((self._frame(0), self._frame(1)))
        w2 = slide_window(w, self._frame(2))
        assert [f.time_index for f in w2.frames] == [1, 2]

    def test_k1(self):
        w = Window((self._frame(0),))
        w2 = slide_window(w, self._frame(1))
        assert [f.time_index for f in w2.frames] == [1]

    def test_gap_rejected(self):
        w = Window((self._frame(0), self._frame(1)))
        with pytest.raises(FieldError, match="time-index gap"):
            slide_window(w, self._frame(3))

    def test_length_invariant_under_many_slides(self):
        w = Window((self._frame(0), self._frame(1), self._frame(2)))
        for t in range(3, 40):
            w = slide_window(w, self._frame(t))
            assert w.k == 3


class TestSpatialMean:
    def test_scalar(self):
        grid = GridSpec(2, 2)
        f = make_fieldset(grid, make_schema(("u", "scalar")), [[0.0, 1.0], [2.0, 3.0]])
        assert spatial_mean(f, "u")[0] == pytest.approx(1.5)

    def test_constant(self):
        grid = GridSpec(5, 3)
        f = make_fieldset(grid, make_schema(("u", "scalar")), np.full((1, 3, 5), 2.75))
        assert spatial_mean(f, "u")[0] == pytest.approx(2.75)

    def test_vector_components_independent(self, rng):
        # oracle: plain double loop over cells, one component at a time
        grid = GridSpec(3, 4)
        schema = make_schema(("v", "vector"))
        data = rng.standard_normal((2, 4, 3))
        f = make_fieldset(grid, schema, data, dtype=np.float64)
        expected = []
        for comp in range(2):
            total = 0.0
            for iy in range(4):
                for ix in range(3):
                    total += data[comp, iy, ix]
            expected.append(total / 12.0)
        got = spatial_mean(f, "v")
        assert got == pytest.approx(expected, rel=1e-13)

    def test_translation_invariance(self, rng):
        grid = GridSpec(8, 8)
        schema = make_schema(("u", "scalar"))
        data = rng.standard_normal((1, 8, 8))
        f = make_fieldset(grid, schema, data, dtype=np.float64)
        base = spatial_mean(f, "u")[0]
        for _ in range(20):
            sx, sy = rng.integers(0, 8, 2)
            shifted = make_fieldset(
                grid, schema, np.roll(data, (int(sy), int(sx)), (1, 2)),
                dtype=np.float64,
            )
            assert spatial_mean(shifted, "u")[0] == pytest.approx(base, rel=1e-12)


class TestTrajectoryIO:
    def _trajectory(self, rng, dtype):
        grid = GridSpec(5, 4)
        schema = make_schema(("c", "scalar"), ("v", "vector"))
        frames = tuple(
            random_fieldset(grid, schema, rng, time_index=t, dtype=dtype)
            for t in range(6)
        )
        return Trajectory(grid, schema, frames, dt=0.5)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_bit_exact(self, tmp_path, rng, dtype):
        traj = self._trajectory(rng, dtype)
        save_trajectory(traj, tmp_path / "traj")
        back = load_trajectory(tmp_path / "traj")
        assert back.dt == traj.dt
        assert back.grid == traj.grid
        assert back.schema == traj.schema
        assert len(back) == len(traj)
        for a, b in zip(traj.frames, back.frames):
            assert a.time_index == b.time_index
            assert a.data.dtype == b.data.dtype
            assert np.array_equal(a.data, b.data)

    def test_truncated_file_rejected(self, tmp_path, rng):
        traj = self._trajectory(rng, np.float32)
        save_trajectory(traj, tmp_path / "traj")
        blob = (tmp_path / "traj" / "frames.bin").read_bytes()
        (tmp_path / "traj" / "frames.bin").write_bytes(blob[:-8])
        with pytest.raises(FieldError, match="expected"):
            load_trajectory(tmp_path / "traj")

    def test_time_index_must_increase(self):
        grid = GridSpec(2, 2)
        schema = make_schema(("u", "scalar"))
        f0 = make_fieldset(grid, schema, np.zeros((1, 2, 2)), time_index=0)
        with pytest.raises(FieldError):
            Trajectory(grid, schema, (f0, f0), dt=1.0)
