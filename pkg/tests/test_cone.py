import unittest

import numpy as np
import numpy.testing as npt
from scipy.optimize import linprog

from core import cone as cones
from core.cone import Cone
from utils.errors import DimensionLimitError, InputFormatError
from utils.events import EventType, event_system

HALF_PLANE = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)]


def make(vectors, n):
    return Cone.from_vectors(vectors, n)


def member_by_linprog(G: np.ndarray, v: np.ndarray) -> bool:
    if len(G) == 0:
        return bool(np.allclose(v, 0.0))
    result = linprog(np.zeros(len(G)), A_eq=G.T, b_eq=v, bounds=[(0, None)] * len(G), method='highs')
    return result.status == 0


def interior_by_sampling(G: np.ndarray, v: np.ndarray, radius: float, rng: np.random.Generator) -> bool:
    """v のまわりの小球から点を抜き取り、全点が錐に入るか"""
    directions = rng.standard_normal((24, len(v)))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    return all(member_by_linprog(G, v + radius * w) for w in directions)


def contains_ray(rays, direction, tol=1e-9):
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.max(np.abs(direction))
    return any(np.max(np.abs(ray - direction)) <= tol for ray in rays)


class TestConeConstruction(unittest.TestCase):

    def test_zero_generators_dropped_with_diagnostic(self):
        seen = []
        listener = seen.append
        event_system.subscribe(EventType.DIAGNOSTIC, listener)
        try:
            cone = make([(0.0, 0.0), (1.0, 0.0)], 2)
        finally:
            event_system.unsubscribe(EventType.DIAGNOSTIC, listener)
        self.assertEqual(cone.count, 1)
        self.assertEqual(len(seen), 1)
        self.assertEqual(seen[0].data.count, 1)
        self.assertEqual(seen[0].type, EventType.DIAGNOSTIC)

    def test_length_mismatch(self):
        with self.assertRaises(InputFormatError):
            make([(1.0, 0.0, 0.0)], 2)


class TestDimension(unittest.TestCase):

    def test_half_plane(self):
        self.assertEqual(cones.dimension(make(HALF_PLANE, 2)), 2)

    def test_empty(self):
        self.assertEqual(cones.dimension(make([], 3)), 0)

    def test_parallel(self):
        self.assertEqual(cones.dimension(make([(1, 1, 0), (2, 2, 0)], 3)), 1)


class TestContains(unittest.TestCase):

    def test_orthant(self):
        orthant = make(np.eye(4), 4)
        self.assertTrue(cones.contains(orthant, np.ones(4)))
        self.assertFalse(cones.contains(orthant, [-1.0, 0.0, 0.0, 0.0]))

    def test_half_plane(self):
        self.assertTrue(cones.contains(make(HALF_PLANE, 2), [5.0, 2.0]))
        self.assertFalse(cones.contains(make(HALF_PLANE, 2), [5.0, -2.0]))

    def test_zero_vector_always_member(self):
        self.assertTrue(cones.contains(make([], 2), [0.0, 0.0]))


class TestSeparatingCovector(unittest.TestCase):

    def test_orthant_and_negative_point(self):
        eta = cones.separating_covector(make(np.eye(2), 2), [-1.0, -1.0])
        self.assertIsNotNone(eta)
        self.assertTrue(np.all(eta <= 1e-12))
        self.assertGreater(eta @ np.array([-1.0, -1.0]), 0.0)

    def test_member_has_no_separator(self):
        self.assertIsNone(cones.separating_covector(make(np.eye(2), 2), [1.0, 2.0]))

    def test_whole_plane_is_not_proper(self):
        whole = make([(1, 0), (-1, 0), (0, 1), (0, -1)], 2)
        self.assertIsNone(cones.separating_covector(whole))

    def test_half_plane_supporting_direction(self):
        eta = cones.separating_covector(make(HALF_PLANE, 2))
        npt.assert_allclose(eta / np.max(np.abs(eta)), [0.0, -1.0], atol=1e-9)


class TestInterior(unittest.TestCase):

    def test_half_plane(self):
        cone = make(HALF_PLANE, 2)
        self.assertTrue(cones.in_interior(cone, [0.0, 1.0]))
        self.assertFalse(cones.in_interior(cone, [1.0, 0.0]))

    def test_lower_dimensional_cone_has_no_interior(self):
        cone = make([(1, 0, 0), (0, 1, 0), (-1, -1, 0)], 3)
        self.assertFalse(cones.in_interior(cone, [0.0, 0.0, 0.0]))
        self.assertFalse(cones.in_interior(cone, [0.3, 0.2, 0.0]))


class TestDualRays(unittest.TestCase):

    def test_orthant(self):
        rays = cones.dual_rays(make(np.eye(3), 3))
        self.assertEqual(len(rays), 3)
        for j in range(3):
            self.assertTrue(contains_ray(rays, -np.eye(3)[j]))

    def test_whole_space(self):
        whole = make([(1, 0), (-1, 0), (0, 1), (0, -1)], 2)
        self.assertEqual(cones.dual_rays(whole), [])

    def test_half_plane(self):
        rays = cones.dual_rays(make(HALF_PLANE, 2))
        self.assertEqual(len(rays), 1)
        npt.assert_allclose(rays[0], [0.0, -1.0], atol=1e-12)

    def test_line_gives_both_signs(self):
        rays = cones.dual_rays(make([(0.0, 1.0), (0.0, -1.0)], 2))
        self.assertTrue(contains_ray(rays, [1.0, 0.0]))
        self.assertTrue(contains_ray(rays, [-1.0, 0.0]))

    def test_empty_cone(self):
        self.assertEqual(len(cones.dual_rays(make([], 2))), 4)

    def test_dimension_limit(self):
        with self.assertRaises(DimensionLimitError):
            cones.dual_rays(make([np.ones(9)], 9))


class TestDuality(unittest.TestCase):

    def test_random_cones(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            count = int(rng.integers(1, 7))
            G = rng.standard_normal((count, 3))
            cone = make(G, 3)
            rays = cones.dual_rays(cone)
            for ray in rays:
                self.assertLessEqual(float(np.max(G @ ray)), 1e-9)

            g_max = float(np.max(np.linalg.norm(G, axis=1)))
            for _ in range(20):
                v = rng.standard_normal(3)
                # 閉包は双対の双対
                pairing = max((float(ray @ v) for ray in rays), default=-1.0)
                if abs(pairing) > 1e-7:
                    self.assertEqual(cones.contains(cone, v), pairing < 0.0 or not rays)
                radius = 2e-6 * max(1.0, float(np.linalg.norm(v)), g_max)
                self.assertEqual(cones.in_interior(cone, v), interior_by_sampling(G, v, radius, rng))


if __name__ == '__main__':
    unittest.main()
