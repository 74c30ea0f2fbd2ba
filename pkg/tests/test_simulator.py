import math
import unittest

import numpy as np

from sdforward.config import config
from sdforward.controller import ControllerSpec
from sdforward.design import chain3_stage_feasible, conservative_gains, example42_stage, fast_gains
from sdforward.errors import Divergence, InvalidPerturbation, NoStabilizingRate, ValidationError
from sdforward.simulator import (
    DisturbanceSpec,
    builtin_system,
    compose_exact_steps,
    exact_step_example41,
    example41_system,
    example42_system,
    gronwall_check,
    integrate_held,
    make_schedule,
    masp_search,
    paper_sine,
    parse_perturbation,
    scalar_chain_system,
    simulate_closed_loop,
    simulate_many,
    stability_metrics,
    stage_invariants,
    time_to_ball,
)
from sdforward.simulator.metrics import entry_time, fit_decay_rate
from sdforward.simulator.systems import decay_system, example41_rhs
from sdforward.utils.logger import RunLogger


def hold_zero(x):
    return 0.0


class TestSchedule(unittest.TestCase):
    def test_paper_sine_gaps(self):
        schedule = make_schedule(0.2, "paper_sine", 100.0)
        gaps = schedule.gaps
        self.assertTrue(np.all(gaps >= 0.1 - 1e-15))
        self.assertTrue(np.all(gaps <= 0.2 + 1e-15))
        self.assertGreaterEqual(schedule.tau[-1], 100.0)
        self.assertLess(schedule.tau[-2], 100.0)

    def test_paper_sine_values(self):
        self.assertAlmostEqual(paper_sine(0.0), math.log(2.0))
        self.assertAlmostEqual(paper_sine(math.pi / 2), 0.0)

    def test_zero_perturbation_is_periodic(self):
        schedule = make_schedule(0.25, "zero", 2.0)
        np.testing.assert_allclose(schedule.tau, np.arange(9) * 0.25)

    def test_constant_perturbation(self):
        schedule = make_schedule(0.2, "const:0.6931471805599453", 1.0)
        np.testing.assert_allclose(schedule.gaps, 0.1)

    def test_sequence_holds_last_value(self):
        schedule = make_schedule(1.0, [0.0, math.log(2.0)], 3.0)
        np.testing.assert_allclose(schedule.gaps, [1.0, 0.5, 0.5, 0.5, 0.5])

    def test_random_bank_is_seeded(self):
        a = make_schedule(0.2, "random:7", 20.0)
        b = make_schedule(0.2, "random:7", 20.0)
        np.testing.assert_array_equal(a.tau, b.tau)
        self.assertTrue(np.all(a.gaps >= 0.05 - 1e-15))
        self.assertFalse(np.array_equal(a.tau[:20], make_schedule(0.2, "random:8", 20.0).tau[:20]))

    def test_random_bank_cells(self):
        w = parse_perturbation("random:3")
        self.assertEqual(w(1.0, 0), w(1.124, 0))
        values = {w(k / 8.0, 0) for k in range(16)}
        self.assertGreater(len(values), 1)
        self.assertTrue(all(0.0 <= v <= 2.0 * math.log(2.0) for v in values))

    def test_invalid_specs(self):
        with self.assertRaises(InvalidPerturbation):
            make_schedule(-1.0, "zero", 10.0)
        with self.assertRaises(InvalidPerturbation):
            make_schedule(0.2, "const:-1", 10.0)
        with self.assertRaises(InvalidPerturbation):
            make_schedule(0.2, lambda t: -0.5, 10.0)
        with self.assertRaises(InvalidPerturbation):
            parse_perturbation("square_wave")


class TestIntegrator(unittest.TestCase):
    def test_matches_exact_map(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.uniform(-2.0, 2.0, 3)
            u = float(rng.uniform(-1.0, 1.0))
            r = float(rng.uniform(1e-3, 0.2))
            numeric = integrate_held(example41_rhs, None, x, u, r, 1e-3)
            np.testing.assert_allclose(numeric, exact_step_example41(x, u, r), rtol=0.0, atol=1e-8)

    def test_fourth_order_convergence(self):
        rhs = decay_system().rhs
        exact = math.exp(-1.0)
        coarse = abs(integrate_held(rhs, None, np.array([1.0]), 0.0, 1.0, 0.1)[0] - exact)
        fine = abs(integrate_held(rhs, None, np.array([1.0]), 0.0, 1.0, 0.05)[0] - exact)
        self.assertGreaterEqual(coarse / fine, 12.0)

    def test_exact_composition(self):
        x = np.array([0.3, -0.2, 0.7])
        composed = compose_exact_steps(x, [(0.5, 0.1), (-0.25, 0.05)])
        by_hand = exact_step_example41(exact_step_example41(x, 0.5, 0.1), -0.25, 0.05)
        np.testing.assert_array_equal(composed, by_hand)
        with self.assertRaises(ValueError):
            exact_step_example41(x, 0.0, -0.1)

    def test_closed_loop_matches_exact_samples(self):
        schedule = make_schedule(0.2, "paper_sine", 5.0)
        controller = ControllerSpec.recursive(fast_gains())
        traj = simulate_closed_loop(example41_system(), controller, [1.0, 1.0, 1.0], schedule, step=1e-3)
        x = np.array([1.0, 1.0, 1.0])
        for gap in schedule.gaps:
            x = exact_step_example41(x, controller(x), gap)
        np.testing.assert_allclose(traj.states[-1], x, atol=1e-8)
        np.testing.assert_allclose(traj.sample_times, schedule.tau)

    def test_input_held_between_samples(self):
        schedule = make_schedule(0.2, "zero", 1.0)
        traj = simulate_closed_loop(
            example41_system(), ControllerSpec.recursive(fast_gains()), [1.0, 0.0, 0.0], schedule, step=0.01
        )
        for a, b in zip(schedule.tau[:-1], schedule.tau[1:]):
            mask = (traj.times >= a - 1e-12) & (traj.times < b - 1e-12)
            self.assertEqual(len(set(traj.inputs[mask].tolist())), 1)

    def test_trajectory_is_read_only(self):
        traj = simulate_closed_loop(scalar_chain_system(), hold_zero, [1.0], make_schedule(0.5, "zero", 1.0))
        with self.assertRaises(ValueError):
            traj.states[0, 0] = 2.0

    def test_step_limited_by_smallest_gap(self):
        with self.assertRaises(InvalidPerturbation):
            simulate_closed_loop(scalar_chain_system(), hold_zero, [1.0], make_schedule(0.1, "zero", 1.0), step=0.05)

    def test_bad_initial_state(self):
        with self.assertRaises(ValidationError):
            simulate_closed_loop(example41_system(), hold_zero, [1.0, 1.0], make_schedule(0.2, "zero", 1.0))

    def test_divergence_reported(self):
        unstable = ControllerSpec(kind="linear_outer", gain=(10.0,))
        with self.assertRaises(Divergence) as ctx:
            simulate_closed_loop(scalar_chain_system(), unstable, [1.0], make_schedule(0.1, "zero", 50.0), step=0.01)
        self.assertGreater(ctx.exception.norm, config.TOLERANCES["overflow_guard"])

    def test_uniform_disturbance_is_seeded(self):
        system = example42_system()
        controller = ControllerSpec.single(example42_stage(0.5, 0.5, R=2.0, K=0.25, omega=10.0))
        schedule = make_schedule(0.05, "zero", 2.0)
        dist = DisturbanceSpec(mode="uniform", seed=4)
        a = simulate_closed_loop(system, controller, [0.5, -0.5, 0.5], schedule, dist, step=0.01)
        b = simulate_closed_loop(system, controller, [0.5, -0.5, 0.5], schedule, dist, step=0.01)
        np.testing.assert_array_equal(a.states, b.states)
        self.assertTrue(np.all(np.abs(a.disturbance) <= 1.0))

    def test_simulate_many_order(self):
        schedule = make_schedule(0.5, "zero", 2.0)
        x0s = [[1.0], [2.0], [-1.0]]
        trajs = simulate_many(scalar_chain_system(), ControllerSpec(kind="saturated_outer"), x0s, schedule, threads=3)
        self.assertEqual([t.states[0, 0] for t in trajs], [1.0, 2.0, -1.0])

    def test_builtin_systems(self):
        self.assertTrue(example42_system().spot_check())
        self.assertTrue(example41_system().spot_check())
        self.assertEqual(builtin_system("example42", gamma=0.1).params["gamma"], 0.1)
        with self.assertRaises(ValidationError):
            builtin_system("pendulum")


class TestGronwall(unittest.TestCase):
    def setUp(self):
        schedule = make_schedule(0.1, "zero", 20.0)
        self.traj = simulate_closed_loop(decay_system(), hold_zero, [1.0], schedule, step=1e-3)

    def test_first_window(self):
        applicable, holds, worst = gronwall_check(self.traj.segment(0.0, 0.1), 1.0, 0.0)
        self.assertTrue(applicable)
        self.assertTrue(holds)
        self.assertAlmostEqual(worst, 0.846, places=2)

    def test_random_windows(self):
        rng = np.random.default_rng(5)
        for a in rng.uniform(0.0, 19.8, 100):
            applicable, holds, worst = gronwall_check(self.traj.segment(a, a + 0.1), 1.0, 0.0)
            self.assertTrue(applicable)
            self.assertTrue(holds, f"window at {a}: ratio {worst}")

    def test_long_window_not_applicable(self):
        applicable, holds, _ = gronwall_check(self.traj.segment(0.0, 1.0), 10.0, 0.0)
        self.assertFalse(applicable)
        self.assertFalse(holds)


class TestMetrics(unittest.TestCase):
    def test_time_to_ball(self):
        schedule = make_schedule(0.5, "zero", 10.0)
        traj = simulate_closed_loop(scalar_chain_system(), ControllerSpec(kind="saturated_outer"), [3.0], schedule, step=0.01)
        # |x| drops by 0.5 per interval while saturated, deadbeat-halving inside
        self.assertLess(time_to_ball(traj, 1e-3), 10.0)
        self.assertLessEqual(entry_time(traj, 1e-3), time_to_ball(traj, 1e-3))
        never = simulate_closed_loop(scalar_chain_system(), hold_zero, [3.0], schedule, step=0.01)
        self.assertTrue(math.isinf(time_to_ball(never, 1e-3)))
        self.assertEqual(time_to_ball(never, 10.0), 0.0)

    def test_stability_report(self):
        schedule = make_schedule(0.2, "paper_sine", 30.0)
        controller = ControllerSpec.recursive(fast_gains())
        trajs = simulate_many(example41_system(), controller, [[0.5, 0.5, 0.5], [-0.5, 0.2, 0.1]], schedule, step=0.005)
        report = stability_metrics(trajs, fast_gains().stage(2))
        self.assertGreaterEqual(report.lyapunov_ratio, 1.0)
        self.assertGreaterEqual(report.sup_norm, np.linalg.norm([0.5, 0.5, 0.5]))
        record = report.to_json()
        self.assertIn("time_to_ball", record)
        with self.assertRaises(ValueError):
            stability_metrics([])

    def test_invariants_inside_terminal_region(self):
        schedule = make_schedule(0.01, "zero", 30.0)
        stage = conservative_gains().stage(2)
        traj = simulate_closed_loop(
            example41_system(), ControllerSpec.recursive(conservative_gains()), [0.01, 0.01, 0.5], schedule, step=0.0025
        )
        checks = stage_invariants(traj, stage)
        self.assertTrue(checks["positive_invariance"]["entered"])
        for name, result in checks.items():
            self.assertTrue(result["holds"], f"{name}: {result}")
        self.assertGreater(checks["lyapunov_nonincrease"]["pairs"], 0)

    def test_decay_rate_fit(self):
        schedule = make_schedule(0.01, "zero", 30.0)
        stage = conservative_gains().stage(2)
        traj = simulate_closed_loop(
            example41_system(), ControllerSpec.recursive(conservative_gains()), [0.01, 0.01, 0.5], schedule, step=0.0025
        )
        mu = fit_decay_rate(traj, stage)
        self.assertIsNotNone(mu)
        self.assertGreater(mu, 0.0)


class TestAcceptanceRuns(unittest.TestCase):
    def fast_run(self, w):
        schedule = make_schedule(0.2, w, 100.0)
        return simulate_closed_loop(
            example41_system(), ControllerSpec.recursive(fast_gains()), [1.0, 1.0, 1.0], schedule, step=0.005
        )

    def assert_fast_convergence(self, traj, label):
        x0_norm = np.sqrt(3.0)
        late = traj.times >= 50.0
        self.assertTrue(np.all(traj.norms[late] <= 0.05 * x0_norm), label)
        self.assertLessEqual(traj.norms[-1], 1e-2, label)

    def test_perturbed_sampling_run(self):
        traj = self.fast_run("paper_sine")
        self.assert_fast_convergence(traj, "paper_sine")
        self.assertTrue(math.isfinite(time_to_ball(traj, 1e-3)))

    def test_fast_stage_invariants_not_applicable(self):
        traj = self.fast_run("zero")
        stage = fast_gains().stage(2)
        checks = stage_invariants(traj, stage, chain3_stage_feasible(stage))
        for name, result in checks.items():
            self.assertFalse(result["applicable"], name)

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for the fast-gain run under random perturbations")
    def test_fast_gain_random_banks(self):
        for seed in range(20):
            traj = self.fast_run(f"random:{seed}")
            self.assertLessEqual(float(np.max(np.diff(traj.sample_times))), 0.2 + 1e-12)
            self.assert_fast_convergence(traj, f"random:{seed}")

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for the long conservative-gain run")
    def test_conservative_gain_run(self):
        schedule = make_schedule(0.01, "zero", 1500.0)
        traj = simulate_closed_loop(
            example41_system(), ControllerSpec.recursive(conservative_gains()), [1.0, 1.0, 1.0], schedule, step=0.002
        )
        head = traj.states[:, :2]
        outside_head = np.nonzero(np.linalg.norm(head, axis=1) > 0.05)[0]
        self.assertLess(traj.times[outside_head[-1] + 1], 50.0)
        outside_x3 = np.nonzero(np.abs(traj.states[:, 2]) > 0.05)[0]
        t_star = traj.times[outside_x3[-1] + 1]
        self.assertGreaterEqual(t_star, 300.0)
        self.assertLessEqual(t_star, 1500.0)

        stage = conservative_gains().stage(2)
        checks = stage_invariants(traj, stage, chain3_stage_feasible(stage))
        self.assertTrue(checks["positive_invariance"]["entered"])
        for name, result in checks.items():
            self.assertTrue(result["applicable"], name)
            self.assertTrue(result["holds"], f"{name}: {result}")


class TestExample42Loop(unittest.TestCase):
    x0 = np.array([0.5, -0.5, 0.5])

    @classmethod
    def setUpClass(cls):
        cls.system = example42_system(gamma=0.05)
        cls.controller = ControllerSpec.single(example42_stage(0.5, 0.5, R=2.0, K=0.25, omega=10.0))
        cls.rate = masp_search(
            cls.system,
            cls.controller,
            [cls.x0],
            ["zero"],
            [DisturbanceSpec(mode="uniform", seed=s) for s in range(3)],
            r_hi=0.05,
            horizon=150.0,
            step=0.0125,
            probe_divisor=4,
            eps=0.05 * np.linalg.norm(cls.x0),
        )

    def test_masp_rate(self):
        self.assertGreaterEqual(self.rate, 0.0125)
        self.assertLessEqual(self.rate, 0.05)

    def test_loop_converges_at_masp_rate(self):
        schedule = make_schedule(self.rate, "zero", 150.0)
        dists = [DisturbanceSpec(mode="uniform", seed=s) for s in range(3)]
        for traj in simulate_many(self.system, self.controller, [self.x0], schedule, dists, step=0.0125):
            self.assertLessEqual(traj.norms[-1], 0.05 * np.linalg.norm(self.x0))

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for the two-state plant disturbance banks")
    def test_banks_at_masp_rate(self):
        dists = [DisturbanceSpec(mode="uniform", seed=s) for s in range(20)]
        for w in [f"random:{s}" for s in range(20)]:
            schedule = make_schedule(self.rate, w, 150.0)
            for traj in simulate_many(self.system, self.controller, [self.x0], schedule, dists, step=0.01):
                self.assertLessEqual(traj.norms[-1], 0.05 * np.linalg.norm(self.x0))


class TestMasp(unittest.TestCase):
    def test_deadbeat_rate_passes(self):
        log = RunLogger()
        estimate = masp_search(
            scalar_chain_system(),
            ControllerSpec(kind="saturated_outer"),
            [[2.0], [-3.0], [0.5]],
            ["zero"],
            [],
            r_hi=1.0,
            horizon=20.0,
            step=0.01,
            probe_divisor=4,
            run_logger=log,
        )
        self.assertEqual(estimate, 1.0)
        self.assertEqual(log.stats["failed"], 0)
        self.assertEqual(log.stats["converged"], 6)

    def test_bisection_below_unstable_rate(self):
        estimate = masp_search(
            scalar_chain_system(),
            ControllerSpec(kind="saturated_outer"),
            [[0.5]],
            ["zero"],
            [],
            r_hi=3.0,
            horizon=20.0,
            step=0.01,
            probe_divisor=4,
        )
        self.assertGreaterEqual(estimate, 1.0)
        self.assertLess(estimate, 2.0)

    def test_no_stabilizing_rate(self):
        with self.assertRaises(NoStabilizingRate):
            masp_search(
                scalar_chain_system(),
                ControllerSpec(kind="linear_outer", gain=(1.0,)),
                [[1.0]],
                ["zero"],
                [],
                r_hi=0.4,
                horizon=10.0,
                step=0.01,
                probe_divisor=4,
            )

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for MASP on the three-state chain")
    def test_fast_gains_masp(self):
        estimate = masp_search(
            example41_system(),
            ControllerSpec.recursive(fast_gains()),
            [[1.0, 1.0, 1.0], [-1.0, 0.5, -0.5]],
            ["zero", "paper_sine", "random:1"],
            [],
            r_hi=0.2,
            horizon=100.0,
            step=0.005,
            probe_divisor=8,
        )
        self.assertGreaterEqual(estimate, 0.2)

    @unittest.skipUnless(config.SLOW_TESTS, "set FWD_SLOW_TESTS=1 for MASP with the conservative gains")
    def test_conservative_gains_masp(self):
        estimate = masp_search(
            example41_system(),
            ControllerSpec.recursive(conservative_gains()),
            [[1.0, 1.0, 1.0]],
            ["zero"],
            [],
            r_hi=0.05,
            horizon=1500.0,
            step=0.0025,
            probe_divisor=8,
        )
        self.assertGreaterEqual(estimate, 0.01)
        self.assertLessEqual(estimate, 0.05)


if __name__ == "__main__":
    unittest.main()
