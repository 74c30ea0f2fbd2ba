import unittest

import numpy as np

from sdforward.controller import (
    ControllerSpec,
    bound_check,
    example41_direct,
    example42_feedback,
    forwarding_feedback,
    linear_feedback,
    recursive_feedback,
    sat,
    scalar_saturated_feedback,
)
from sdforward.design import conservative_gains, example42_stage, fast_gains
from sdforward.errors import DimensionMismatch, ValidationError


class TestSaturation(unittest.TestCase):
    def test_sat(self):
        self.assertEqual(sat(0.3), 0.3)
        self.assertEqual(sat(-5.0), -1.0)
        self.assertEqual(sat(1.0), 1.0)

    def test_outer_law(self):
        self.assertEqual(scalar_saturated_feedback([3.0, 0.0], 0.5, 1.0), -0.5)
        self.assertAlmostEqual(scalar_saturated_feedback([0.2], 1.0, 2.0), -0.4)


class TestRecursiveLaw(unittest.TestCase):
    def test_matches_direct_transcription(self):
        rng = np.random.default_rng(11)
        cases = (("fast", fast_gains()), ("conservative", conservative_gains()))
        for name, schedule in cases:
            for scale in (0.05, 0.3, 2.0):
                for x in scale * rng.standard_normal((300, 3)):
                    self.assertAlmostEqual(
                        recursive_feedback(x, schedule), example41_direct(x, name), delta=1e-12, msg=f"{name} {x}"
                    )

    def test_branches(self):
        schedule = fast_gains()
        # outside every region: outer law
        self.assertEqual(recursive_feedback([5.0, 0.0, 0.0], schedule), -1.0)
        # inside stage 1 only
        x = np.array([0.2, 3.0, 0.0])
        self.assertAlmostEqual(recursive_feedback(x, schedule), -0.2 - 0.25 * sat(3.2))
        # origin lies in the innermost region
        self.assertEqual(recursive_feedback([0.0, 0.0, 0.0], schedule), 0.0)

    def test_wrong_dimension(self):
        with self.assertRaises(DimensionMismatch):
            recursive_feedback([1.0, 2.0], fast_gains())

    def test_bound_check(self):
        bound, within = bound_check(fast_gains(), 10.0)
        self.assertTrue(within)
        self.assertGreaterEqual(bound, 1.0)
        self.assertFalse(bound_check(fast_gains(), 0.1)[1])

    def test_law_respects_bound(self):
        schedule = conservative_gains()
        bound, _ = bound_check(schedule, np.inf)
        rng = np.random.default_rng(2)
        for x in rng.uniform(-2.0, 2.0, (500, 3)):
            self.assertLessEqual(abs(recursive_feedback(x, schedule)), bound + 1e-12)

    def test_unknown_direct_variant(self):
        with self.assertRaises(ValueError):
            example41_direct([0.0, 0.0, 0.0], "medium")


class TestSingleStage(unittest.TestCase):
    def setUp(self):
        self.stage = example42_stage(0.5, 0.5, R=2.0, K=0.25, omega=10.0)

    def test_fallback_outside_region(self):
        x = np.array([10.0, 0.0])
        u = forwarding_feedback(x, 0.3, self.stage, linear_feedback(self.stage.p))
        self.assertAlmostEqual(u, float(self.stage.p @ x))

    def test_saturated_term_inside_region(self):
        x = np.array([0.1, -0.1])
        y = 0.05
        expected = float(self.stage.p @ x) - 0.25 * self.stage.cb * sat(10.0 * (y + float(self.stage.c @ x)))
        self.assertAlmostEqual(example42_feedback([0.1, -0.1, y], self.stage), expected)

    def test_stage_dimension_checked(self):
        with self.assertRaises(DimensionMismatch):
            forwarding_feedback([0.1, 0.2, 0.3], 0.0, self.stage, linear_feedback(self.stage.p))


class TestControllerSpec(unittest.TestCase):
    def test_recursive_spec(self):
        spec = ControllerSpec.recursive(fast_gains())
        x = np.array([0.3, -0.2, 0.1])
        self.assertEqual(spec(x), recursive_feedback(x, fast_gains()))
        self.assertEqual(spec.dimension, 3)

    def test_single_stage_spec(self):
        stage = example42_stage(0.5, 0.5, R=2.0, K=0.25, omega=10.0)
        spec = ControllerSpec.single(stage)
        x = np.array([0.4, 0.1, -0.3])
        self.assertAlmostEqual(spec(x), example42_feedback(x, stage))
        self.assertEqual(spec.dimension, 3)

    def test_outer_kinds(self):
        linear = ControllerSpec(kind="linear_outer", gain=(-1.0, -2.0))
        self.assertEqual(linear([1.0, 1.0]), -3.0)
        saturated = ControllerSpec(kind="saturated_outer", K0=2.0, omega0=1.0)
        self.assertEqual(saturated([4.0]), -2.0)
        self.assertIsNone(saturated.dimension)

    def test_dict_round_trip(self):
        stage = example42_stage(0.5, 0.5, R=2.0, K=0.25, omega=10.0)
        for spec in (
            ControllerSpec.recursive(conservative_gains()),
            ControllerSpec.single(stage),
            ControllerSpec(kind="saturated_outer", K0=0.5, omega0=2.0),
        ):
            self.assertEqual(ControllerSpec.from_dict(spec.to_dict()).to_dict(), spec.to_dict())

    def test_validation(self):
        with self.assertRaises(ValidationError):
            ControllerSpec(kind="pid")
        with self.assertRaises(ValidationError):
            ControllerSpec(kind="recursive_forwarding")
        with self.assertRaises(ValidationError):
            ControllerSpec(kind="linear_outer")


if __name__ == "__main__":
    unittest.main()
