import os
import unittest

import numpy as np
import numpy.testing as npt

from core import cone as cones
from core.flow import integrate
from core.system import PiecewiseControl, catalog, load_problem
from core.variation import (NeedleSpec, SamplingConfig, extended_vertical_cone, extended_vertical_needle,
                            is_reachable_direction, multi_needle_endpoint, needle_vector, random_needles,
                            sample_times, variational_cone, vertical_cone, vertical_needle_vector)
from utils.errors import FiberViolationError, InputFormatError, OffGridError, StepTooLargeError

PROBLEMS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'problems')

SMOOTH_CONTROLS = {
    "lqr1d": ["1"],
    "double_integrator": ["cos(2*t)"],
    "heisenberg": ["cos(t)", "sin(t)"],
    "martinet": ["1 + 0.2*t", "0.5*sin(t)"],
}


def small_sampling(**overrides):
    values = {'time_samples': 8, 'fiber_samples': 8, 'seed': 7}
    values.update(overrides)
    return SamplingConfig.from_config(**values)


def reference(name, exprs=None, steps=100):
    problem = catalog(name)
    control = PiecewiseControl.from_expressions(problem, exprs or SMOOTH_CONTROLS[name])
    x0 = np.zeros(problem.state_dim)
    return problem, x0, integrate(problem, control, x0, steps=steps)


class TestNeedleVectors(unittest.TestCase):

    def setUp(self):
        self.problem, _, self.traj = reference("lqr1d")

    def test_alt_control(self):
        vector = needle_vector(self.problem, self.traj, NeedleSpec.alt(0.5, [2.0]))
        npt.assert_allclose(vector, [2.0], atol=1e-14)

    def test_reverse_leg(self):
        vector = needle_vector(self.problem, self.traj, NeedleSpec.reverse(0.5))
        npt.assert_allclose(vector, [-1.0], atol=1e-14)

    def test_weight_scales_vector(self):
        vector = needle_vector(self.problem, self.traj, NeedleSpec.alt(0.5, [2.0], weight=0.25))
        npt.assert_allclose(vector, [0.5], atol=1e-14)

    def test_vertical(self):
        npt.assert_allclose(vertical_needle_vector(self.problem, self.traj, 0.5, [2.0]), [1.0], atol=1e-14)

    def test_extended_vertical(self):
        npt.assert_allclose(extended_vertical_needle(self.problem, self.traj, 0.5, [0.0]), [-1.0, -0.5], atol=1e-14)
        npt.assert_allclose(extended_vertical_needle(self.problem, self.traj, 0.5, [2.0]), [1.0, 1.5], atol=1e-14)

    def test_martinet_on_line(self):
        problem, _, traj = reference("martinet", ["1", "0"])
        npt.assert_allclose(needle_vector(problem, traj, NeedleSpec.alt(0.3, [0.0, 1.0])), [0.0, 1.0, 0.0],
                            atol=1e-14)
        npt.assert_allclose(vertical_needle_vector(problem, traj, 0.3, [0.0, 1.0]), [-1.0, 1.0, 0.0], atol=1e-14)

    def test_needle_at_initial_time(self):
        with self.assertRaises(OffGridError):
            needle_vector(self.problem, self.traj, NeedleSpec.alt(0.0, [2.0]))

    def test_needle_off_grid(self):
        with self.assertRaises(OffGridError):
            needle_vector(self.problem, self.traj, NeedleSpec.alt(0.505, [2.0]))

    def test_alternative_outside_fiber(self):
        problem = load_problem(os.path.join(PROBLEMS_DIR, 'lqr1d_box.json'))
        traj = integrate(problem, PiecewiseControl.constant(problem, [0.5]), [0.0], steps=20)
        with self.assertRaises(FiberViolationError):
            vertical_needle_vector(problem, traj, 0.5, [0.9])


class TestSampling(unittest.TestCase):

    def test_sample_times_cover_all_nodes_when_dense(self):
        _, _, traj = reference("lqr1d", steps=10)
        self.assertEqual(sample_times(traj, 64, np.random.default_rng(0)), list(range(1, 11)))

    def test_sample_times_are_stratified_and_seeded(self):
        _, _, traj = reference("lqr1d", steps=100)
        first = sample_times(traj, 10, np.random.default_rng(3))
        again = sample_times(traj, 10, np.random.default_rng(3))
        self.assertEqual(first, again)
        self.assertEqual(len(first), 10)
        self.assertEqual(first, sorted(first))
        self.assertTrue(all(1 <= j <= 100 for j in first))

    def test_sampling_config_overrides(self):
        sampling = SamplingConfig.from_config(time_samples=5, seed=11)
        self.assertEqual(sampling.time_samples, 5)
        self.assertEqual(sampling.seed, 11)
        self.assertEqual(sampling.to_dict()['time_samples'], 5)

    def test_sampling_config_rejects_zero(self):
        with self.assertRaises(InputFormatError):
            SamplingConfig.from_config(fiber_samples=0)


class TestCones(unittest.TestCase):

    def test_lqr_extended_vertical_cone_lies_above_diagonal(self):
        problem, _, traj = reference("lqr1d")
        cone = extended_vertical_cone(problem, traj, small_sampling())
        self.assertTrue(np.all(cone.generators[:, 1] - cone.generators[:, 0] >= -1e-12))
        self.assertTrue(cones.contains(cone, [1.0, 1.0]))
        self.assertTrue(cones.contains(cone, [-1.0, -1.0]))
        self.assertFalse(cones.contains(cone, [1.0, 0.0]))

    def test_lqr_extended_dual_ray(self):
        problem, _, traj = reference("lqr1d")
        rays = cones.dual_rays(extended_vertical_cone(problem, traj, small_sampling()))
        self.assertEqual(len(rays), 1)
        npt.assert_allclose(rays[0], [1.0, -1.0], atol=1e-9)

    def test_lqr_variational_cone(self):
        problem, _, traj = reference("lqr1d")
        cone = variational_cone(problem, traj, small_sampling())
        self.assertEqual(cone.ambient_dim, 2)
        self.assertTrue(cones.contains(cone, [1.0, 1.0]))
        self.assertTrue(cones.contains(cone, [-1.0, -1.0]))
        backwards = cone.generators[cone.generators[:, 0] < 0.0]
        npt.assert_allclose(backwards, np.tile([-1.0, -1.0], (len(backwards), 1)), atol=1e-14)

    def test_martinet_vertical_cone_stays_in_plane(self):
        problem, _, traj = reference("martinet", ["1", "0"])
        cone = vertical_cone(problem, traj, small_sampling())
        npt.assert_allclose(cone.generators[:, 2], 0.0, atol=1e-14)
        self.assertEqual(cones.dimension(cone), 2)

    def test_reachable_direction_at_box_bound(self):
        problem = load_problem(os.path.join(PROBLEMS_DIR, 'lqr1d_box.json'))
        traj = integrate(problem, PiecewiseControl.constant(problem, [0.5]), [0.0], steps=50)
        cone = vertical_cone(problem, traj, small_sampling())
        self.assertTrue(is_reachable_direction(cone, [-1.0]))
        self.assertFalse(is_reachable_direction(cone, [1.0]))

    def test_unconstrained_lqr_reaches_both_sides(self):
        problem, _, traj = reference("lqr1d")
        cone = vertical_cone(problem, traj, small_sampling())
        self.assertTrue(is_reachable_direction(cone, [1.0]))
        self.assertTrue(is_reachable_direction(cone, [-1.0]))


class TestMultiNeedle(unittest.TestCase):

    def test_zero_epsilon_reproduces_endpoint(self):
        problem, x0, traj = reference("heisenberg")
        needles = [NeedleSpec.reverse(0.3), NeedleSpec.alt(0.3, [1.0, -1.0]), NeedleSpec.alt(0.7, [0.0, 2.0])]
        endpoint, cost = multi_needle_endpoint(problem, x0, traj, needles, 0.0)
        npt.assert_allclose(endpoint, traj.endpoint, atol=1e-14)
        self.assertAlmostEqual(cost, traj.final_cost, places=14)

    def test_lqr_paired_needles_are_exact(self):
        problem, x0, traj = reference("lqr1d", steps=10)
        needles = [NeedleSpec.alt(0.5, [3.0]), NeedleSpec.reverse(0.5)]
        endpoint, cost = multi_needle_endpoint(problem, x0, traj, needles, 0.1)
        npt.assert_allclose(endpoint, [1.2], atol=1e-12)
        self.assertAlmostEqual(cost, 0.9, places=12)

    def test_reverse_leg_too_long(self):
        problem, x0, traj = reference("lqr1d", steps=10)
        with self.assertRaises(StepTooLargeError):
            multi_needle_endpoint(problem, x0, traj, [NeedleSpec.reverse(0.1)], 0.5)

    def test_negative_epsilon(self):
        problem, x0, traj = reference("lqr1d", steps=10)
        with self.assertRaises(StepTooLargeError):
            multi_needle_endpoint(problem, x0, traj, [NeedleSpec.alt(0.5, [1.0])], -0.1)

    def test_random_needles_keep_total_time(self):
        problem, x0, traj = reference("martinet", steps=100)
        needles = random_needles(problem, traj, np.random.default_rng(9), 3, [0.5, 1.0])
        self.assertEqual(len(needles), 6)
        reverse = sum(n.weight for n in needles if n.is_reverse)
        alt = sum(n.weight for n in needles if not n.is_reverse)
        self.assertAlmostEqual(reverse, alt, places=14)
        endpoint, _ = multi_needle_endpoint(problem, x0, traj, needles, 1e-3)
        self.assertLess(np.max(np.abs(endpoint - traj.endpoint)), 1e-2)

    def test_random_needles_require_a_pair(self):
        problem, _, traj = reference("lqr1d", steps=100)
        with self.assertRaises(InputFormatError):
            random_needles(problem, traj, np.random.default_rng(9), 0, [1.0])

    def test_first_order_law(self):
        # (終点(ε) − y)/ε → 針状変分ベクトル、誤差は ε に比例
        rng = np.random.default_rng(2024)
        eps = 1e-2
        for name in SMOOTH_CONTROLS:
            problem, x0, traj = reference(name, steps=1000)
            for _ in range(10):
                j = int(rng.integers(50, 950))
                u_alt = traj.u[j] + rng.normal(0.0, 1.0, problem.control_dim)
                spec = NeedleSpec.alt(traj.t[j], u_alt)
                vector = needle_vector(problem, traj, spec)
                errors = []
                for e in (eps, eps / 2):
                    endpoint, _ = multi_needle_endpoint(problem, x0, traj, [spec], e)
                    errors.append(float(np.linalg.norm((endpoint - traj.endpoint) / e - vector)))
                if errors[0] <= 1e-8:
                    continue
                ratio = errors[0] / errors[1]
                self.assertGreaterEqual(ratio, 1.5, name)
                self.assertLessEqual(ratio, 3.0, name)


if __name__ == '__main__':
    unittest.main()
