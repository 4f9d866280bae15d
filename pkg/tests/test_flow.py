import numpy as np
import pytest

from lrvis import flow, io_formats
from lrvis.accel import build_kdtree
from lrvis.flow import (AnalyticField, ButcherTableau, IntegrationError,
                        IntegratorConfig, Streamline, VectorField,
                        efficiency_experiment, error_metric, experiment_csv,
                        integrate, integrate_all, reference_solution,
                        render_streamlines, rk_step, streamlines_to_json,
                        tableau)
from lrvis.lr_core import BezierVolume, TriDegree
from lrvis.volren import Camera, adaptive_step

ALL_METHODS = ["RK1", "RK2", "RK3", "RK4", "RK4_38", "RKF5", "HE", "BS",
               "RKF45"]
EMBEDDED = {"HE": 1, "BS": 2, "RKF45": 4}


def rot_lr_field(omega=3.0, half=2.5, segments=2):
    """Degree-(1,1,1) dataset reproducing f = omega(-y, x, 0) exactly."""
    spec = io_formats.SyntheticSpec(
        kind="uniform", degrees=TriDegree(1, 1, 1), range_dim=3,
        segments=segments, domain=np.array([[-half, half]] * 3),
        field_name="rotational", field_args={"omega": omega})
    vol = io_formats.generate_uniform(spec)
    return VectorField(BezierVolume.from_lr(vol), build_kdtree(vol))


def rot_analytic(omega=1.0, half=2.0):
    fn = io_formats.field_rotational(omega=omega)
    return AnalyticField(fn, np.array([[-half, half]] * 3))


def const_analytic(v, half=10.0):
    v = np.asarray(v, dtype=np.float64)

    def fn(p):
        return np.broadcast_to(v, (len(np.atleast_2d(p)), 3))
    return AnalyticField(fn, np.array([[-half, half]] * 3))


def circle_point(t, omega=1.0, radius=1.0):
    return np.array([radius * np.cos(omega * t),
                     radius * np.sin(omega * t), 0.0])


def pairwise_slope(hs, errs):
    """Median of consecutive log-log slopes, robust to endpoint floors."""
    hs = np.asarray(hs, dtype=np.float64)
    errs = np.asarray(errs, dtype=np.float64)
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    return float(np.median(slopes))


class TestTableaus:
    def test_rk1_is_euler(self):
        tab = tableau("RK1")
        assert tab.stages == 1
        assert np.array_equal(tab.b, [1.0])
        assert tab.order == 1 and not tab.is_embedded

    def test_rk4_classic_rows(self):
        tab = tableau("RK4")
        assert np.allclose(tab.b, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
        assert np.allclose(tab.c, [0, 0.5, 0.5, 1])

    @pytest.mark.parametrize("name", ALL_METHODS)
    def test_weights_sum_to_one(self, name):
        tab = tableau(name)
        assert abs(tab.b.sum() - 1.0) <= 1e-12
        assert np.all(np.triu(tab.a) == 0)
        if tab.b_hat is not None:
            assert abs(tab.b_hat.sum() - 1.0) <= 1e-12

    def test_embedded_flags(self):
        for name, p_hat in EMBEDDED.items():
            tab = tableau(name)
            assert tab.is_embedded and tab.embedded_order == p_hat
        assert not tableau("RKF5").is_embedded

    def test_rkf45_shares_fehlberg_rows(self):
        assert np.array_equal(tableau("RKF45").b, tableau("RKF5").b)
        assert np.array_equal(tableau("RKF45").a, tableau("RKF5").a)

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            tableau("RK17")


class TestRkStep:
    @pytest.mark.parametrize("name", ALL_METHODS)
    def test_zero_field_fixed_point(self, name):
        field_ = const_analytic([0, 0, 0])
        x0 = np.array([0.3, -0.2, 0.7])
        x1, _ = rk_step(field_, tableau(name), x0, 0.37, precision="double")
        assert np.array_equal(x1, x0)

    @pytest.mark.parametrize("name", ALL_METHODS)
    def test_constant_field_consistency(self, name):
        v = np.array([0.4, -1.1, 0.25])
        field_ = const_analytic(v)
        x0 = np.array([0.0, 0.5, -0.5])
        x1, _ = rk_step(field_, tableau(name), x0, 0.2, precision="double")
        assert np.max(np.abs(x1 - (x0 + 0.2 * v))) < 1e-14

    def test_rk4_matches_hand_rolled(self):
        """Independent scalar transcription of the classic scheme."""
        field_ = rot_analytic(omega=1.0)
        x = np.array([1.0, 0.0, 0.0])
        h = 0.1

        def f(p):
            return np.array([-p[1], p[0], 0.0])

        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        expected = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        got, _ = rk_step(field_, tableau("RK4"), x, h, precision="double")
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_heun_euler_embedded_is_euler(self):
        field_ = rot_analytic()
        x = np.array([1.0, 0.0, 0.0])
        h = 0.05
        _, emb = rk_step(field_, tableau("HE"), x, h, precision="double")
        euler = x + h * np.array([-0.0, 1.0, 0.0])
        assert np.max(np.abs(emb - euler)) < 1e-14

    def test_non_embedded_returns_none(self):
        field_ = rot_analytic()
        _, emb = rk_step(field_, tableau("RK4"), np.zeros(3), 0.1,
                         precision="double")
        assert emb is None

    def test_non_finite_field_raises(self):
        def fn(p):
            return np.full((len(np.atleast_2d(p)), 3), np.nan)
        field_ = AnalyticField(fn, np.array([[-1, 1]] * 3))
        with pytest.raises(IntegrationError):
            rk_step(field_, tableau("RK2"), np.zeros(3), 0.1)

    @pytest.mark.parametrize("name", ["HE", "BS", "RKF45"])
    def test_embedded_estimate_order(self, name):
        """||x_high - x_low|| ~ h^(min(p, p_hat)+1) on a smooth field."""
        field_ = rot_analytic(omega=1.0)
        tab = tableau(name)
        x = np.array([1.0, 0.0, 0.0])
        hs = [2.0 ** -k for k in range(3, 8)]
        errs = []
        for h in hs:
            hi, lo = rk_step(field_, tab, x, h, precision="double")
            errs.append(float(np.linalg.norm(hi - lo)))
        expected = min(tab.order, tab.embedded_order) + 1
        assert abs(pairwise_slope(hs, errs) - expected) < 0.3


class TestIntegrate:
    def test_zero_field_stays_at_seed(self):
        field_ = const_analytic([0, 0, 0])
        sl = integrate(field_, [0.1, 0.2, 0.3],
                       IntegratorConfig(h0=0.25, t_max=1.0))
        assert sl.termination == "time-reached"
        assert np.allclose(sl.points, sl.points[0])
        assert np.all(np.diff(sl.times) > 0)

    def test_seed_outside_raises(self):
        field_ = const_analytic([1, 0, 0], half=1.0)
        with pytest.raises(IntegrationError):
            integrate(field_, [5, 0, 0], IntegratorConfig())

    def test_boundary_seed_outward_field(self):
        field_ = const_analytic([1.0, 0.0, 0.0], half=1.0)
        sl = integrate(field_, [1.0, 0.0, 0.0],
                       IntegratorConfig(h0=0.1, t_max=1.0))
        assert sl.termination == "exited-domain"
        assert len(sl.times) >= 1
        assert np.all(np.diff(sl.times) > 0)

    def test_exit_point_clipped_to_boundary(self):
        field_ = const_analytic([1.0, 0.0, 0.0], half=1.0)
        sl = integrate(field_, [0.85, 0.0, 0.0],
                       IntegratorConfig(h0=0.1, t_max=10.0))
        assert sl.termination == "exited-domain"
        assert sl.points[-1][0] == pytest.approx(1.0, abs=1e-12)
        assert sl.times[-1] == pytest.approx(0.15, abs=1e-12)

    def test_rotational_one_period_returns(self):
        field_ = rot_analytic(omega=1.0)
        cfg = IntegratorConfig(method="RK4", h0=2 * np.pi / 256,
                               t_max=2 * np.pi, precision="double")
        sl = integrate(field_, [1.0, 0.0, 0.0], cfg)
        assert sl.termination == "time-reached"
        assert np.max(np.abs(sl.points[-1] - [1, 0, 0])) < 1e-5

    def test_max_samples_termination(self):
        field_ = rot_analytic()
        sl = integrate(field_, [1.0, 0.0, 0.0],
                       IntegratorConfig(h0=0.01, t_max=100.0,
                                        max_samples=10))
        assert sl.termination == "max-samples"
        assert len(sl.times) == 10

    def test_step_underflow_termination(self):
        field_ = rot_analytic()
        sl = integrate(field_, [1.0, 0.0, 0.0],
                       IntegratorConfig(h0=1e-20, t_max=1.0))
        assert sl.termination == "step-underflow"

    def test_embedded_requires_estimate(self):
        field_ = rot_analytic()
        with pytest.raises(IntegrationError):
            integrate(field_, [1.0, 0.0, 0.0],
                      IntegratorConfig(method="RK4", mode="embedded"))

    def test_embedded_reaches_time(self):
        field_ = rot_analytic(omega=1.0)
        cfg = IntegratorConfig(method="RKF45", mode="embedded", tol=1e-6,
                               h0=0.5, t_max=2 * np.pi, precision="double")
        sl = integrate(field_, [1.0, 0.0, 0.0], cfg)
        assert sl.termination == "time-reached"
        assert np.max(np.abs(sl.points[-1] - [1, 0, 0])) < 1e-3
        assert np.all(np.diff(sl.times) > 0)

    def test_heuristic_step_is_adaptive_step(self, dyadic_vector):
        field_ = VectorField(BezierVolume.from_lr(dyadic_vector),
                             build_kdtree(dyadic_vector))
        seed = np.array([0.6, 0.6, 0.6])
        scale = 0.5
        cfg = IntegratorConfig(method="RK4", mode="heuristic", h0=scale,
                               t_max=10.0, max_samples=3)
        sl = integrate(field_, seed, cfg)
        eid = field_.element_at(seed)
        expected = adaptive_step(field_.bezier.lo[eid],
                                 field_.bezier.hi[eid],
                                 field_.bezier.degrees, scale)
        assert sl.times[1] == pytest.approx(expected, rel=1e-12)

    def test_samples_inside_domain_except_last(self):
        field_ = rot_lr_field(omega=1.0, half=1.5)
        cfg = IntegratorConfig(method="RK4", h0=0.05, t_max=50.0,
                               max_samples=100000)
        sl = integrate(field_, [1.4, 0.0, 0.0], cfg)
        lo, hi = field_.domain[:, 0], field_.domain[:, 1]
        body = sl.points if sl.termination != "exited-domain" \
            else sl.points[:-1]
        assert np.all(body >= lo - 1e-12) and np.all(body <= hi + 1e-12)
        assert np.all(np.diff(sl.times) > 0)

    def test_bit_identical_reruns(self):
        field_ = rot_lr_field(omega=3.0)
        cfg = IntegratorConfig(method="RKF5", h0=0.02, t_max=1.0)
        a = integrate(field_, [1.0, 0.0, 0.0], cfg)
        b = integrate(field_, [1.0, 0.0, 0.0], cfg)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.times, b.times)

    def test_integrate_all_order(self):
        field_ = rot_analytic()
        seeds = [[1, 0, 0], [0, 1, 0]]
        lines = integrate_all(field_, seeds,
                              IntegratorConfig(h0=0.1, t_max=0.5))
        assert len(lines) == 2
        assert np.allclose(lines[0].seed, seeds[0])
        assert np.allclose(lines[1].seed, seeds[1])


class TestIntegratorConfig:
    @pytest.mark.parametrize("kwargs", [
        {"mode": "wiggle"},
        {"h0": 0.0},
        {"mode": "embedded", "tol": 0.0},
        {"max_samples": 1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            IntegratorConfig(**kwargs)


def make_line(times, points, seed=None):
    points = np.asarray(points, dtype=np.float64)
    seed = points[0] if seed is None else np.asarray(seed)
    return Streamline(seed, np.asarray(times, dtype=np.float64), points,
                      "time-reached")


class TestErrorMetric:
    def test_identical_is_zero(self):
        t = [0.0, 0.5, 1.0]
        pts = [[0, 0, 0], [0.5, 0, 0], [1, 0, 0]]
        a = make_line(t, pts)
        assert error_metric([a], [make_line(t, pts)]) == 0.0

    def test_constant_offset_gives_delta_T(self):
        t = np.array([0.0, 0.25, 0.6, 1.0])
        pts = np.column_stack([t, np.zeros(4), np.zeros(4)])
        delta = 0.125
        shifted = pts + [0, delta, 0]
        a = make_line(t, shifted, seed=pts[0])
        r = make_line(t, pts)
        assert abs(error_metric([a], [r]) - delta * 1.0) < 1e-12

    def test_max_over_streamlines(self):
        t = np.array([0.0, 1.0])
        pts = np.array([[0, 0, 0], [1, 0, 0]], dtype=np.float64)
        small = make_line(t, pts + [0, 0.1, 0], seed=pts[0])
        big = make_line(t, pts + [0, 0.3, 0], seed=pts[0])
        refs = [make_line(t, pts), make_line(t, pts)]
        assert abs(error_metric([small, big], refs) - 0.3) < 1e-12

    def test_mismatched_sizes(self):
        t = [0.0, 1.0]
        pts = [[0, 0, 0], [1, 0, 0]]
        with pytest.raises(ValueError):
            error_metric([make_line(t, pts)], [])

    def test_mismatched_seeds(self):
        t = [0.0, 1.0]
        a = make_line(t, [[0, 0, 0], [1, 0, 0]])
        r = make_line(t, [[5, 5, 5], [6, 5, 5]])
        with pytest.raises(ValueError):
            error_metric([a], [r])


class TestReferenceSolution:
    def test_constant_field_exact_line(self):
        v = np.array([0.3, 0.1, -0.2])
        field_ = const_analytic(v)
        lines = reference_solution(field_, [[0.0, 0.0, 0.0]], t_max=1.0,
                                   h_ref=0.125)
        sl = lines[0]
        # the 32-bit evaluation path sees v rounded once, so the exact
        # line has the rounded slope
        v32 = v.astype(np.float32).astype(np.float64)
        expect = sl.times[:, None] * v32
        assert np.max(np.abs(sl.points - expect)) < 1e-12

    def test_rotational_close_to_analytic(self):
        # binary-representable knots keep the 32-bit evaluation path free
        # of coefficient rounding, leaving only per-eval arithmetic noise
        field_ = rot_lr_field(omega=1.0, half=0.5, segments=4)
        t_max = 2 * np.pi
        r = 0.25
        lines = reference_solution(field_, [[r, 0.0, 0.0]], t_max)
        sl = lines[0]
        truth = np.column_stack([r * np.cos(sl.times),
                                 r * np.sin(sl.times),
                                 np.zeros(len(sl.times))])
        dev = np.linalg.norm(sl.points - truth, axis=1)
        metric = float(np.sum(np.diff(sl.times, prepend=0.0) * dev))
        assert metric <= 1e-8

    def test_halving_h_ref_sharpens_by_16(self):
        field_ = rot_analytic(omega=1.0)
        t_max = 2 * np.pi

        def metric_for(h):
            sl = reference_solution(field_, [[1.0, 0.0, 0.0]], t_max,
                                    h_ref=h)[0]
            truth = np.column_stack([np.cos(sl.times), np.sin(sl.times),
                                     np.zeros(len(sl.times))])
            dev = np.linalg.norm(sl.points - truth, axis=1)
            return float(np.sum(np.diff(sl.times, prepend=0.0) * dev))

        coarse = metric_for(2 * np.pi / 16)
        fine = metric_for(2 * np.pi / 32)
        assert coarse / fine >= 16.0


class TestConvergenceOrders:
    """Fixed-step order measurement on the rotating field (full method
    sweep lives in the acceptance suite)."""

    @pytest.mark.parametrize("name,order", [("RK2", 2), ("RK4", 4)])
    def test_observed_order(self, name, order):
        field_ = rot_lr_field(omega=3.0, half=2.5)
        omega = 3.0
        t_max = 2 * np.pi / omega
        hs = [2.0 ** -k * 2 * np.pi for k in range(4, 10)]
        errs = []
        for h in hs:
            cfg = IntegratorConfig(method=name, h0=h, t_max=t_max,
                                   max_samples=200000, precision="mixed")
            sl = integrate(field_, [1.0, 0.0, 0.0], cfg)
            truth = np.column_stack([np.cos(omega * sl.times),
                                     np.sin(omega * sl.times),
                                     np.zeros(len(sl.times))])
            dev = np.linalg.norm(sl.points - truth, axis=1)
            errs.append(float(np.sum(np.diff(sl.times, prepend=0.0) * dev)))
        assert abs(pairwise_slope(hs, errs) - order) < 0.3

    def test_single_precision_floor_above_mixed(self):
        field_ = rot_lr_field(omega=3.0, half=2.5)
        omega = 3.0
        t_max = 2 * np.pi / omega
        h = 2.0 ** -9 * 2 * np.pi

        def final_error(precision):
            cfg = IntegratorConfig(method="RKF5", h0=h, t_max=t_max,
                                   max_samples=200000, precision=precision)
            sl = integrate(field_, [1.0, 0.0, 0.0], cfg)
            return float(np.linalg.norm(sl.points[-1] - [1.0, 0.0, 0.0]))

        assert final_error("single") > final_error("mixed")


class TestEfficiencyExperiment:
    def test_rows_and_csv(self):
        field_ = rot_lr_field(omega=1.0, half=1.5)
        seeds = [[1.0, 0.0, 0.0]]
        t_max = 1.0
        ref = reference_solution(field_, seeds, t_max)
        rows = efficiency_experiment(
            field_, seeds,
            [{"name": "RK4", "mode": "fixed", "values": [0.1, 0.05]},
             {"name": "RKF45", "mode": "embedded", "values": [1e-3]}],
            ref, t_max)
        assert len(rows) == 3
        assert all(r["field_evals"] > 0 and r["error"] >= 0 for r in rows)
        text = experiment_csv(rows)
        assert text.splitlines()[0] == "method,mode,param,field_evals,error"
        assert len(text.splitlines()) == 4

    def test_fixed_step_error_decreases(self):
        field_ = rot_lr_field(omega=1.0, half=1.5)
        seeds = [[1.0, 0.0, 0.0]]
        t_max = 2.0
        ref = reference_solution(field_, seeds, t_max)
        rows = efficiency_experiment(
            field_, seeds,
            [{"name": "RK2", "mode": "fixed", "values": [0.2, 0.05]}],
            ref, t_max)
        assert rows[0]["error"] > rows[1]["error"]


class TestStreamlineJson:
    def test_schema(self):
        field_ = rot_analytic()
        lines = integrate_all(field_, [[1, 0, 0]],
                              IntegratorConfig(h0=0.25, t_max=0.5))
        doc = streamlines_to_json(lines)
        assert len(doc) == 1
        entry = doc[0]
        assert entry["termination"] == "time-reached"
        assert entry["seed"] == [1.0, 0.0, 0.0]
        assert len(entry["samples"]) == len(lines[0].times)
        first = entry["samples"][0]
        assert set(first) == {"t", "x", "y", "z"}
        assert all(isinstance(first[k], float) for k in first)


class TestRenderStreamlines:
    def camera(self, n=41):
        return Camera(eye=[0, 0, 3.0], look_at=[0, 0, 0], up=[0, 1, 0],
                      fov=0.6, width=n, height=n)

    def test_empty_gives_background(self):
        field_ = const_analytic([1, 0, 0])
        img = render_streamlines([], field_, self.camera(8), 0.1,
                                 background=(0.2, 0.4, 0.6))
        assert np.array_equal(img, np.broadcast_to([0.2, 0.4, 0.6],
                                                   (8, 8, 3)))

    def segment_line(self):
        pts = np.array([[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])
        return make_line([0.0, 1.0], pts)

    def test_broadside_tube_width(self):
        """Vertical thickness at the image center matches the projected
        capsule diameter within a pixel."""
        n = 41
        radius = 0.1
        field_ = const_analytic([1, 0, 0])
        img = render_streamlines([self.segment_line()], field_,
                                 self.camera(n), radius)
        center_col = img[:, n // 2, :]
        hit = np.any(center_col != 1.0, axis=1)
        assert hit.any()
        rows = np.nonzero(hit)[0]
        assert np.all(np.diff(rows) == 1)       # contiguous run
        world_per_px = 2 * np.tan(0.3) * 3.0 / n
        expected_px = 2 * radius / world_per_px
        assert abs(len(rows) - expected_px) <= 1.5

    def test_uniform_speed_single_hue(self):
        """Constant |f| maps every tube pixel to one colormap entry, so
        only the diffuse shade varies."""
        field_ = const_analytic([1, 0, 0])
        img = render_streamlines([self.segment_line()], field_,
                                 self.camera(), 0.1)
        mask = np.any(img != 1.0, axis=2)
        tube = img[mask]
        assert len(tube) > 0
        assert np.all(tube[:, 0] == 0.0)        # slow end of the map
        assert np.all(tube[:, 2] > 0.0)
