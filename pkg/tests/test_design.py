import math
import unittest

import numpy as np

from sdforward.config import config
from sdforward.controller import bound_check
from sdforward.design import (
    GainSchedule,
    GridSpec,
    NonlinearityBound,
    bounded_schedule,
    certify_condition_33,
    certify_condition_34,
    certify_condition_35,
    certify_stage,
    chain3_stage_feasible,
    chain_stage_nonlinearities,
    conservative_gains,
    example41_stage1_feasible,
    example41_stage2_feasible,
    example42_decay_check,
    example42_design,
    example42_gain_window,
    fast_gains,
    lemma36_constants,
    make_stage,
    synthesize_schedule,
)
from sdforward.design.builtin import (
    CHAIN3_P1,
    CHAIN3_P1_GAIN,
    CHAIN3_P2,
    CHAIN3_P2_GAIN,
    example42_threshold,
    stage1_dissipation_weight,
    stage2_dissipation_weight,
)
from sdforward.design.certify import StageNonlinearities
from sdforward.design.constants import stage_from_constants
from sdforward.design.stage import ChainData, DesignStage
from sdforward.errors import DimensionMismatch, InfeasibleDesign, NotNegativeDefinite, SmallGainViolated, ValidationError
from sdforward.linalg_core import c_vector, chain_matrices, sandwich_constants
from sdforward.simulator.systems import example41_rhs

SMALL_GRID = GridSpec(angular=32, radial=6, slab=5, disturbance=3, interior=400, seed=0)


def chain_nl(j):
    return chain_stage_nonlinearities(example41_rhs, 3, j)


class TestFeasibilityWindows(unittest.TestCase):
    def test_published_stage_one_gains(self):
        self.assertTrue(example41_stage1_feasible(3 / 8, 1 / 4))

    def test_published_stage_two_gains(self):
        self.assertTrue(example41_stage2_feasible(1 / 20, 1 / 20))

    def test_stage_one_window_edges(self):
        R = 3 / 8
        lower = R**2 / (1 - R)
        self.assertFalse(example41_stage1_feasible(R, 1.01 * R))
        self.assertFalse(example41_stage1_feasible(R, 0.99 * lower))
        self.assertTrue(example41_stage1_feasible(R, 1.01 * lower))

    def test_stage_two_window_edges(self):
        R = 1 / 20
        sqrt2 = math.sqrt(2.0)
        lower = 4 * R**2 / (1 - 2 * sqrt2 * R)
        upper = 2 * R * (1 - 2 * (2 + sqrt2) * R) / (R + 1)
        self.assertFalse(example41_stage2_feasible(R, 1.01 * upper))
        self.assertFalse(example41_stage2_feasible(R, 0.99 * lower))
        self.assertTrue(example41_stage2_feasible(R, 0.99 * upper))

    def test_stage_two_outside_growth_condition(self):
        self.assertFalse(example41_stage2_feasible(0.2, 0.05))
        self.assertFalse(example41_stage2_feasible(-0.1, 0.05))

    def test_fast_gains_violate_stage_two_window(self):
        self.assertFalse(example41_stage2_feasible(1.0, 1.0))

    def test_stage_feasibility_of_gain_sets(self):
        conservative, fast = conservative_gains(), fast_gains()
        self.assertTrue(chain3_stage_feasible(conservative.stage(1)))
        self.assertTrue(chain3_stage_feasible(conservative.stage(2)))
        self.assertTrue(chain3_stage_feasible(fast.stage(1)))
        self.assertFalse(chain3_stage_feasible(fast.stage(2)))

    def test_stage_feasibility_needs_chain_data(self):
        other = make_stage(1, [[2.0]], [-1.0], K=0.25, R=0.375, omega=1.0)
        self.assertIsNone(chain3_stage_feasible(other))

    def test_dissipation_weights(self):
        self.assertAlmostEqual(stage1_dissipation_weight(0.375, 0.25), 0.4)
        expected = 0.05 * (2 + (3 + 2 * math.sqrt(2)) * 0.05) / 0.2
        self.assertAlmostEqual(stage2_dissipation_weight(0.05, 0.05), expected)


class TestStageData(unittest.TestCase):
    def test_make_stage_derives_c(self):
        stage = make_stage(2, CHAIN3_P2, CHAIN3_P2_GAIN, K=0.05, R=0.05, omega=1.0)
        np.testing.assert_allclose(stage.c, [0.5, 1.0], atol=1e-12)
        self.assertAlmostEqual(stage.cb, 0.5)

    def test_make_stage_rejects_unstable_gain(self):
        with self.assertRaises(NotNegativeDefinite):
            make_stage(1, CHAIN3_P1, [1.0], K=0.1, R=0.1, omega=1.0)

    def test_make_stage_rejects_bad_shape(self):
        with self.assertRaises(DimensionMismatch):
            make_stage(2, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.1, R=0.1, omega=1.0)

    def test_stage_region_is_strict(self):
        stage = make_stage(1, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.25, R=0.375, omega=1.0)
        self.assertTrue(stage.inside([0.3]))
        self.assertFalse(stage.inside([0.375]))

    def test_schedule_dict_round_trip(self):
        schedule = conservative_gains()
        again = GainSchedule.from_dict(schedule.to_dict())
        self.assertEqual(again.to_dict(), schedule.to_dict())

    def test_schedule_needs_every_stage(self):
        with self.assertRaises(DimensionMismatch):
            GainSchedule(n=3, K0=1.0, omega0=1.0, stages=(conservative_gains().stage(1),))

    def test_stage_from_dict(self):
        stage = fast_gains().stage(2)
        self.assertEqual(DesignStage.from_dict(stage.to_dict()).to_dict(), stage.to_dict())

    def test_chain_data(self):
        data = ChainData.build(3)
        self.assertEqual(len(data.A), 2)
        np.testing.assert_allclose(data.c(2, CHAIN3_P2_GAIN), [0.5, 1.0], atol=1e-12)


class TestStageConstants(unittest.TestCase):
    def test_stage_one_unit_envelope(self):
        consts = lemma36_constants(NonlinearityBound.constant(1.0), CHAIN3_P1, CHAIN3_P1_GAIN, 1.0, 1.0)
        self.assertAlmostEqual(consts.R_star, 0.1, places=8)
        self.assertAlmostEqual(consts.R, 0.1 * (1 - config.DESIGN["r_shrink"]), places=8)
        self.assertAlmostEqual(consts.K, 0.5 * consts.R, places=12)
        self.assertAlmostEqual(consts.q, 1.0)
        self.assertGreater(consts.M, 0.0)
        self.assertGreater(consts.delta_hint, 0.0)
        self.assertTrue(example41_stage1_feasible(consts.R, consts.K))

    def test_stage_from_constants(self):
        consts = lemma36_constants(NonlinearityBound.constant(1.0), CHAIN3_P1, CHAIN3_P1_GAIN, 2.0, 1.0)
        stage = stage_from_constants(1, CHAIN3_P1, CHAIN3_P1_GAIN, 2.0, consts)
        self.assertEqual((stage.R, stage.K, stage.M, stage.delta), (consts.R, consts.K, consts.M, consts.delta_hint))
        self.assertEqual(stage.omega, 2.0)
        np.testing.assert_allclose(stage.c, [1.0])

    def test_requested_radius_below_r_star_is_kept(self):
        consts = lemma36_constants(NonlinearityBound.constant(1.0), CHAIN3_P1, CHAIN3_P1_GAIN, 1.0, 0.05)
        self.assertEqual(consts.R, 0.05)

    def test_zero_envelope_has_unbounded_radius(self):
        consts = lemma36_constants(NonlinearityBound.zero(), CHAIN3_P1, CHAIN3_P1_GAIN, 1.0, 7.0)
        self.assertTrue(math.isinf(consts.R_star))
        self.assertEqual(consts.R, 7.0)
        self.assertGreater(consts.M, 0.0)

    def test_non_positive_request(self):
        with self.assertRaises(InfeasibleDesign):
            lemma36_constants(NonlinearityBound.constant(1.0), CHAIN3_P1, CHAIN3_P1_GAIN, 1.0, 0.0)

    def test_stage_two_constants(self):
        consts = lemma36_constants(NonlinearityBound.constant(2.0), CHAIN3_P2, CHAIN3_P2_GAIN, 1.0, 1.0)
        self.assertGreater(consts.R, 5e-4)
        self.assertLess(consts.R, 2e-3)
        self.assertLess(consts.R, consts.R_star)
        self.assertGreater(consts.delta_hint, 0.0)

    def test_synthesized_schedule_scales_envelope(self):
        schedule = synthesize_schedule(
            3,
            [CHAIN3_P1, CHAIN3_P2],
            [CHAIN3_P1_GAIN, CHAIN3_P2_GAIN],
            NonlinearityBound.constant(1.0),
            K0=1.0,
            omega0=1.0,
            omegas=[1.0, 1.0],
            R_requested=[1.0, 1.0],
        )
        direct = lemma36_constants(NonlinearityBound.constant(2.0), CHAIN3_P2, CHAIN3_P2_GAIN, 1.0, 1.0)
        self.assertAlmostEqual(schedule.stage(2).R, direct.R)
        self.assertAlmostEqual(schedule.stage(2).M, direct.M)

    def test_synthesize_needs_matching_lists(self):
        with self.assertRaises(InfeasibleDesign):
            synthesize_schedule(3, [CHAIN3_P1], [CHAIN3_P1_GAIN], NonlinearityBound.zero(), 1.0, 1.0, [1.0], [1.0])

    def test_scaled_envelope_keeps_constant_label(self):
        scaled = NonlinearityBound.constant(1.5).scaled(2)
        self.assertEqual(scaled(10.0), 3.0)
        self.assertTrue(scaled.label.startswith("const:"))
        self.assertTrue(NonlinearityBound(lambda s: s, "linear").spot_check())


class TestBoundedSchedule(unittest.TestCase):
    def test_bound_is_enforced(self):
        G = 0.2
        bound, within = bound_check(conservative_gains(), G)
        self.assertFalse(within)
        bounded = bounded_schedule(conservative_gains(), G)
        bound, within = bound_check(bounded, G)
        self.assertTrue(within)
        self.assertLessEqual(bound, G)
        self.assertEqual(bounded.K0, G)

    def test_gain_ratio_preserved_without_envelope(self):
        original = conservative_gains()
        bounded = bounded_schedule(original, 0.2)
        for before, after in zip(original.stages, bounded.stages):
            self.assertAlmostEqual(after.K / after.R, before.K / before.R)

    def test_envelope_rederives_constants(self):
        L = NonlinearityBound.constant(1.0)
        schedule = synthesize_schedule(
            3, [CHAIN3_P1, CHAIN3_P2], [CHAIN3_P1_GAIN, CHAIN3_P2_GAIN], L, 1.0, 1.0, [1.0, 1.0], [1.0, 1.0]
        )
        bounded = bounded_schedule(schedule, 0.05, L)
        self.assertTrue(bound_check(bounded, 0.05)[1])
        for stage in bounded.stages:
            self.assertIsNotNone(stage.M)

    def test_bad_bound(self):
        with self.assertRaises(InfeasibleDesign):
            bounded_schedule(conservative_gains(), 0.0)


class TestCertificates(unittest.TestCase):
    def stage1(self):
        return make_stage(1, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.25, R=0.375, omega=1.0, M=0.4, delta=1e-4)

    def stage2(self):
        return make_stage(
            2, CHAIN3_P2, CHAIN3_P2_GAIN, K=0.05, R=0.05, omega=1.0, M=stage2_dissipation_weight(0.05, 0.05)
        )

    def test_stage_one_published_gains_pass(self):
        certs = certify_stage(self.stage1(), chain_nl(1), SMALL_GRID)
        self.assertEqual([c.condition for c in certs], ["3.3", "3.4", "3.5"])
        for cert in certs:
            self.assertTrue(cert.passed, f"{cert.condition} margin {cert.margin}")

    def test_stage_one_drift_margin(self):
        cert = certify_condition_34(self.stage1(), chain_nl(1), SMALL_GRID)
        # max |x1 u| over the slab is R (R + K)
        self.assertAlmostEqual(cert.margin, 0.25 - 0.375 * 0.625, places=6)

    def test_stage_two_published_gains_pass(self):
        for cert in certify_stage(self.stage2(), chain_nl(2), SMALL_GRID):
            self.assertTrue(cert.passed, f"{cert.condition} margin {cert.margin}")

    def test_gain_above_radius_fails_shell_check(self):
        stage = make_stage(1, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.5, R=0.375, omega=1.0)
        self.assertFalse(certify_condition_33(stage, chain_nl(1), SMALL_GRID).passed)

    def test_synthesized_stages_pass(self):
        L = NonlinearityBound.constant(1.0)
        for j, (P, p) in enumerate([(CHAIN3_P1, CHAIN3_P1_GAIN), (CHAIN3_P2, CHAIN3_P2_GAIN)], start=1):
            stage = stage_from_constants(j, P, p, 1.0, lemma36_constants(L.scaled(j), P, p, 1.0, 1.0))
            for cert in certify_stage(stage, chain_nl(j), SMALL_GRID):
                self.assertTrue(cert.passed, f"stage {j} {cert.condition} margin {cert.margin}")

    def test_linear_chain_dissipation(self):
        stage = make_stage(1, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.25, R=0.375, omega=1.0, M=1.0)
        zero = chain_stage_nonlinearities(lambda d, x, u: np.column_stack([u, x[:, 0], x[:, 1]]), 3, 1)
        self.assertTrue(certify_condition_35(stage, zero, SMALL_GRID).passed)

    def test_dissipation_needs_weight(self):
        stage = make_stage(1, CHAIN3_P1, CHAIN3_P1_GAIN, K=0.25, R=0.375, omega=1.0)
        with self.assertRaises(InfeasibleDesign):
            certify_condition_35(stage, chain_nl(1), SMALL_GRID)

    def test_nonlinearities_must_match_stage_dimension(self):
        wide = StageNonlinearities(f=lambda d, x, u: np.zeros((len(u), 2)), g=lambda d, x, u: np.zeros(len(u)))
        for check in (certify_condition_33, certify_condition_34, certify_condition_35):
            with self.assertRaises(DimensionMismatch):
                check(self.stage1(), wide, SMALL_GRID)

    def test_scalar_drift_shape_is_checked(self):
        flat = StageNonlinearities(f=lambda d, x, u: np.zeros((len(u), 1)), g=lambda d, x, u: np.zeros((len(u), 1)))
        with self.assertRaises(DimensionMismatch):
            certify_condition_34(self.stage1(), flat, SMALL_GRID)

    def test_stage_two_terms_rejected_for_stage_one(self):
        with self.assertRaises(DimensionMismatch):
            certify_stage(self.stage1(), chain_nl(2), SMALL_GRID)

    def test_finer_nested_grid_never_raises_margin(self):
        coarse = GridSpec(angular=32, slab=5, interior=0)
        fine = GridSpec(angular=64, slab=9, interior=0)
        stage = self.stage2()
        m_coarse = certify_condition_33(stage, chain_nl(2), coarse).margin
        m_fine = certify_condition_33(stage, chain_nl(2), fine).margin
        self.assertLessEqual(m_fine, m_coarse + 1e-15)

    def test_deterministic_across_thread_counts(self):
        one = certify_condition_35(self.stage1(), chain_nl(1), SMALL_GRID, threads=1)
        many = certify_condition_35(self.stage1(), chain_nl(1), SMALL_GRID, threads=4)
        self.assertEqual(one.to_json(), many.to_json())

    def test_certificate_record(self):
        record = certify_condition_33(self.stage1(), chain_nl(1), SMALL_GRID).to_json()
        for key in ("condition", "pass", "margin", "grid", "worst_point", "grid_points"):
            self.assertIn(key, record)
        self.assertEqual(record["grid"]["angular"], 32)

    def test_grid_spec_parse(self):
        grid = GridSpec.parse("angular=16, interior=100")
        self.assertEqual((grid.angular, grid.interior), (16, 100))
        with self.assertRaises(ValidationError):
            GridSpec.parse("angular=abc")
        with self.assertRaises(ValidationError):
            GridSpec.parse("nonsense=3")

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for default-grid certificates")
    def test_default_grid_certificates(self):
        for stage, j in ((self.stage1(), 1), (self.stage2(), 2)):
            for cert in certify_stage(stage, chain_nl(j)):
                self.assertTrue(cert.passed, f"stage {j} {cert.condition} margin {cert.margin}")


class TestExample42Design(unittest.TestCase):
    def test_closed_form_at_one_half(self):
        design = example42_design(0.5, 0.5)
        np.testing.assert_allclose(design.P, [[1.0, 1.5], [1.5, 3.25]])
        self.assertAlmostEqual(design.S, 2.125)
        np.testing.assert_allclose(design.p, [-3.625, -4.1875])
        self.assertAlmostEqual(design.q, 0.125)

    def test_printed_q_formula_without_second_uncertainty(self):
        design = example42_design(1.0, 0.0)
        self.assertAlmostEqual(design.q, (math.sqrt(5.0) - 1.0) / (2.0 + 2.0 * math.sqrt(5.0)))

    def test_decay_check_on_grid(self):
        ks = np.linspace(0.15, 3.0, 20)
        for k1 in ks:
            for k2 in ks:
                design = example42_design(k1, k2)
                self.assertGreater(np.linalg.eigvalsh(design.P)[0], 0.0)
                holds, worst = example42_decay_check(k1, k2, samples=500, seed=1)
                self.assertTrue(holds, f"k=({k1:.3f}, {k2:.3f}) worst={worst:.3e}")

    def test_negative_gains_rejected(self):
        with self.assertRaises(ValueError):
            example42_design(-0.1, 0.5)

    def window_inputs(self):
        design = example42_design(0.5, 0.5)
        A, b = chain_matrices(2)
        c = c_vector(A, b, design.p)
        a1, a2 = sandwich_constants(design.P)
        return design, c, a1, a2

    def test_gain_window_below_threshold(self):
        design, c, a1, a2 = self.window_inputs()
        threshold = example42_threshold(design.P, design.p, c, design.q, a1, a2)
        window = example42_gain_window(0.25 * threshold, design.P, design.p, c, design.q, 2.0, a1, a2, 10.0)
        self.assertLess(window.K_lo, window.K_hi)
        self.assertGreater(window.M, 0.0)

    def test_gain_window_above_threshold(self):
        design, c, a1, a2 = self.window_inputs()
        with self.assertRaises(SmallGainViolated):
            example42_gain_window(0.5, design.P, design.p, c, design.q, 2.0, a1, a2, 10.0)


if __name__ == "__main__":
    unittest.main()
