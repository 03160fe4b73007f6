"""Acceptance suite: every exit criterion at its stated tolerance, one
pass/fail line per criterion (run with -s to see them).

The claims under test are limit statements, so beyond exact spectral
identities the checks are property-based with independent oracles
(Gramian quadrature, Gaussian tails, finite differences) plus trend
diagnostics at desk scale with confidence intervals."""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from sqglab import make_grid, random_field, unit_mode, zero_field
from sqglab.action import (
    ActionProblem,
    ObservableSpec,
    TargetSpec,
    action,
    analytic_rate_linear,
    forward_observable,
    gradient_action_penalty,
    minimize_action,
)
from sqglab.dynamics import (
    DynamicsConfig,
    solve_delayed_mollified,
    solve_deterministic,
    transport_exponent,
)
from sqglab.montecarlo import (
    RareEventSpec,
    exponential_equivalence,
    lp_tail_study,
    run_scaling_study,
    scaling_fit,
)
from sqglab.noise import Control, GFunction, NoiseModel
from sqglab.spectral import (
    SpectralField,
    apply_lambda_power,
    lp_norm,
    partial_array,
    riesz_velocity_array,
    sobolev_norm,
    to_physical,
    transport_array,
)


def report(name: str, ok: bool, detail: str = ""):
    print(f"{'PASS' if ok else 'FAIL'}: {name}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"{name}: {detail}"


class TestAcceptance:
    def test_transport_orthogonality(self):
        t0 = time.monotonic()
        worst = 0.0
        for n in (8, 16, 32):
            grid = make_grid(n)
            rng = np.random.default_rng(1000 + n)
            coeffs = rng.standard_normal((100, grid.n_modes)) * grid.kabs ** (-1.0)
            b = transport_array(grid, coeffs)
            inner = np.abs(np.sum(b * coeffs, axis=-1))
            scale = np.linalg.norm(b, axis=-1) * np.linalg.norm(coeffs, axis=-1)
            worst = max(worst, float(np.max(inner / np.maximum(scale, 1e-300))))
        elapsed = time.monotonic() - t0
        report("transport orthogonality |<B(theta),theta>| <= 1e-10 ||B|| ||theta||",
               worst <= 1e-10 and elapsed < 10.0,
               f"worst ratio {worst:.2e}, {elapsed:.1f}s")

    def test_spectral_identities(self):
        t0 = time.monotonic()
        grid = make_grid(16)
        rng = np.random.default_rng(7)
        ok = True
        details = []
        for _ in range(20):
            theta = random_field(grid, rng)
            u1, u2 = riesz_velocity_array(grid, theta.coeffs)
            # Riesz isometry at 1e-12 relative.
            iso = abs(np.sum(u1**2) + np.sum(u2**2) - theta.l2() ** 2) / theta.l2() ** 2
            ok &= iso <= 1e-12
            # Per-mode divergence-free at 1e-12 relative scale.
            div = partial_array(grid, u1, 0) + partial_array(grid, u2, 1)
            dv = float(np.max(np.abs(div))) / (theta.l2() * grid.resolution)
            ok &= dv <= 1e-12
            # Multiplier composition at 1e-12 relative.
            s, t = rng.uniform(-1.0, 1.5, size=2)
            lhs = apply_lambda_power(apply_lambda_power(theta, s), t)
            rhs = apply_lambda_power(theta, s + t)
            comp = (lhs - rhs).l2() / max(rhs.l2(), 1e-300)
            ok &= comp <= 1e-12
            # Parseval: quadrature L2 matches coefficient L2 at 1e-10.
            par = abs(lp_norm(to_physical(theta), 2.0) - theta.l2()) / theta.l2()
            ok &= par <= 1e-10
            details = [iso, dv, comp, par]
        elapsed = time.monotonic() - t0
        report("spectral identities (isometry, divergence, composition, Parseval)",
               ok and elapsed < 5.0,
               f"last errors {['%.1e' % d for d in details]}, {elapsed:.1f}s")

    def test_energy_identity(self):
        t0 = time.monotonic()
        grid = make_grid(32)
        theta0 = random_field(grid, np.random.default_rng(5), decay=2.0, norm=1.0)

        def defect(dt):
            cfg = DynamicsConfig(alpha=0.75, kappa=0.1, resolution=32, dt=dt,
                                 t_final=1.0, snapshot_stride=10**9)
            tr = solve_deterministic(theta0, cfg)
            diss = np.trapezoid(tr.norm("h_alpha") ** 2, tr.times)
            return abs(tr.final.l2() ** 2 + 2.0 * cfg.kappa * diss - theta0.l2() ** 2)

        d1, d2 = defect(1.0 / 128), defect(1.0 / 256)
        ratio = d1 / d2
        elapsed = time.monotonic() - t0
        report("energy identity defect shrinks ~4x when dt halves (N=32, T=1)",
               2.5 < ratio < 7.0 and elapsed < 30.0,
               f"defects {d1:.3e} -> {d2:.3e}, ratio {ratio:.2f}, {elapsed:.1f}s")

    def test_delayed_mollified_convergence(self):
        t0 = time.monotonic()
        grid = make_grid(16)
        theta0 = (1.0 * unit_mode(grid, (1, 0), "sin")
                  + 0.6 * unit_mode(grid, (0, 1), "cos")
                  + 0.4 * unit_mode(grid, (1, 1), "sin")
                  + 0.2 * unit_mode(grid, (2, 1), "cos"))
        cfg = DynamicsConfig(alpha=0.75, kappa=0.4, resolution=16, dt=0.0125,
                             t_final=1.0)
        reference = solve_deterministic(theta0, cfg)
        ref = np.array([s.coeffs for s in reference.snapshots])
        dists = []
        for delta in (0.2, 0.1, 0.05, 0.025):
            tr = solve_delayed_mollified(theta0, delta, cfg=cfg)
            states = np.array([s.coeffs for s in tr.snapshots])
            dists.append(float(np.max(np.linalg.norm(states - ref, axis=1))))
        elapsed = time.monotonic() - t0
        monotone = all(a > b for a, b in zip(dists, dists[1:]))
        report("delayed-mollified scheme: sup-t L2 distance decreasing in delta_n",
               monotone and elapsed < 120.0,
               f"distances {['%.4f' % d for d in dists]}, {elapsed:.1f}s")

    def test_adjoint_gradient(self):
        t0 = time.monotonic()
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(300 + seed)
            grid = make_grid(8)
            cfg = DynamicsConfig(alpha=0.75, kappa=0.4, resolution=8, dt=1.0 / 32,
                                 t_final=1.0)
            model = NoiseModel(
                grid,
                [random_field(grid, rng, decay=2.0, norm=1.0),
                 random_field(grid, rng, decay=2.0, norm=0.7)],
                [GFunction("constant", 1.0), GFunction("identity")][seed % 2])
            obs = [ObservableSpec("l2"),
                   ObservableSpec("mode", mode_k=(1, 1), mode_trig="cos"),
                   ObservableSpec("hminus_half")][seed % 3]
            problem = ActionProblem(
                theta0=random_field(grid, rng, decay=1.5, norm=0.8),
                model=model, cfg=cfg, observable=obs,
                target=TargetSpec("exceed", 2.0),
                flavor=["small-noise", "small-time"][seed % 2])
            v = Control(problem.blank_control().times,
                        0.3 * rng.standard_normal((2, cfg.n_steps)))
            penalty = 50.0
            grad = gradient_action_penalty(problem, v, penalty).values

            def objective(values):
                vv = Control(v.times, values)
                obs_val = forward_observable(problem, vv)
                return action(vv) + 0.5 * penalty * problem.target.distance(obs_val) ** 2

            for _ in range(3):
                d = rng.standard_normal(v.values.shape)
                d /= np.linalg.norm(d)
                h = 1e-6
                fd = (objective(v.values + h * d) - objective(v.values - h * d)) / (2 * h)
                an = float(np.sum(grad * d))
                worst = max(worst, abs(an - fd) / max(abs(fd), 1e-12))
        elapsed = time.monotonic() - t0
        report("adjoint gradient vs central differences < 1e-5 (10 problems)",
               worst < 1e-5 and elapsed < 60.0,
               f"worst rel err {worst:.2e}, {elapsed:.1f}s")

    def test_rate_function_oracle(self):
        t0 = time.monotonic()
        # Independent oracle: Gramian quadrature for lam = b = eta = T = 1.
        gram, _ = quad(lambda s: math.exp(-2.0 * (1.0 - s)), 0.0, 1.0)
        oracle = 1.0 / (2.0 * gram)
        closed = analytic_rate_linear(1.0, 1.0, 1.0, 1.0)
        agree = abs(closed - oracle) / oracle < 1e-10
        assert abs(closed - 1.0 / (1.0 - math.exp(-2.0))) < 1e-12

        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=1.0 / 64,
                             t_final=1.0)
        model = NoiseModel(grid, [unit_mode(grid, (1, 0), "sin")],
                           GFunction("constant", 1.0))
        problem = ActionProblem(
            theta0=zero_field(grid), model=model, cfg=cfg,
            observable=ObservableSpec("mode", mode_k=(1, 0)),
            target=TargetSpec("exceed", 1.0))
        est = minimize_action(problem)
        rel = abs(est.i_value - closed) / closed
        elapsed = time.monotonic() - t0
        report("minimum action matches the scalar Gramian oracle within 1%",
               agree and rel < 0.01 and est.converged and elapsed < 60.0,
               f"I={est.i_value:.6f} vs {closed:.6f} ({100 * rel:.2f}%), {elapsed:.1f}s")

    def test_ldp_scaling(self):
        t0 = time.monotonic()
        grid = make_grid(4)
        kappa = b = 1.0
        t_final = 1.0
        eta = 0.46493674
        cfg = DynamicsConfig(alpha=0.75, kappa=kappa, resolution=4, dt=1.0 / 64,
                             t_final=t_final)
        model = NoiseModel(grid, [b * unit_mode(grid, (1, 0), "sin")],
                           GFunction("constant", 1.0))
        problem = ActionProblem(
            theta0=zero_field(grid), model=model, cfg=cfg,
            observable=ObservableSpec("mode", mode_k=(1, 0)),
            target=TargetSpec("exceed", eta))
        tilt = minimize_action(problem).control
        i_ref = analytic_rate_linear(kappa, b, eta, t_final)

        spec = RareEventSpec(
            theta0=zero_field(grid), model=model, cfg=cfg,
            observable=ObservableSpec("mode", mode_k=(1, 0)), threshold=eta,
            flavor="small-noise", tilt=tilt, tilt_scale=0.5)
        study = run_scaling_study(spec, (0.1, 0.05, 0.02), n=100_000,
                                  master_seed=2024, method="tilted",
                                  batch_size=16384)
        fit = scaling_fit(study, i_ref=i_ref)
        elapsed = time.monotonic() - t0
        report("LDP scaling: extrapolated eps log p within 15% of -I (n=1e5, tilted)",
               fit.informative and fit.rel_gap is not None and fit.rel_gap < 0.15
               and elapsed < 600.0,
               f"limit {fit.limit:.4f} vs {-i_ref:.4f}, gap "
               f"{100 * (fit.rel_gap or 0):.1f}%, {elapsed:.0f}s")

    def test_exponential_equivalence(self):
        t0 = time.monotonic()
        grid = make_grid(16)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=16, dt=1.0 / 40,
                             t_final=0.5)
        model = NoiseModel(
            grid,
            [0.5, 0.4 * unit_mode(grid, (1, 0), "cos"),
             0.3 * unit_mode(grid, (0, 1), "sin")],
            GFunction("identity"))
        theta0 = (1.0 * unit_mode(grid, (1, 0), "sin")
                  + 0.6 * unit_mode(grid, (0, 1), "cos")
                  + 0.3 * unit_mode(grid, (1, 1), "sin"))
        # Threshold frozen from a pilot run: the median of the coupled-gap
        # distribution at the middle eps, so the rows land near (1, 1/2, 0+).
        eta = 0.0036793376428452314
        rep = exponential_equivalence(theta0, (0.2, 0.1, 0.05), eta, 10_000,
                                      master_seed=123, cfg=cfg, model=model,
                                      batch_size=1250)
        mono = rep.strictly_decreasing_within_ci()
        elapsed = time.monotonic() - t0
        qs = [r.q_hat for r in rep.rows]
        report("exponential equivalence: eps log q strictly decreasing within CIs",
               mono and elapsed < 900.0,
               f"q = {['%.4f' % q for q in qs]}, {elapsed:.0f}s")

    def test_lp_tail(self):
        t0 = time.monotonic()
        # Admissibility pins the transport exponent: alpha=3/4, p=8 -> 6.
        assert transport_exponent(0.75, 8.0) == pytest.approx(6.0, rel=1e-14)
        grid = make_grid(16)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=16, dt=1.0 / 40,
                             t_final=0.5)
        model = NoiseModel(
            grid,
            [0.5, 0.4 * unit_mode(grid, (1, 0), "cos"),
             0.3 * unit_mode(grid, (0, 1), "sin")],
            GFunction("identity"))
        theta0 = (1.0 * unit_mode(grid, (1, 0), "sin")
                  + 0.6 * unit_mode(grid, (0, 1), "cos")
                  + 0.3 * unit_mode(grid, (1, 1), "sin"))
        base = lp_norm(to_physical(theta0), 8.0) ** 8
        table = lp_tail_study(theta0, (0.2, 0.1, 0.05),
                              (2.0 * base, 4.0 * base, 8.0 * base), p=8.0,
                              n=4000, master_seed=77, cfg=cfg, model=model,
                              batch_size=1000)
        mono = table.monotone_in_level()
        informative = any(c.p_hat > 0.0 for c in table.cells)
        elapsed = time.monotonic() - t0
        cells = {(c.eps, round(c.level / base)): c.p_hat for c in table.cells}
        report("L^p tail: eps log P non-increasing in the level for each eps",
               mono and informative and elapsed < 900.0,
               f"p-hats {cells}, {elapsed:.0f}s")

    def test_reproducibility(self, tmp_path):
        import json
        import shutil

        from sqglab.io import parse_config, run_experiment

        t0 = time.monotonic()
        out = tmp_path / "repro"
        doc = {
            "run_id": "repro", "command": "mc", "master_seed": 31,
            "out_dir": str(out),
            "dynamics": {"alpha": 0.75, "kappa": 1.0, "resolution": 4,
                         "dt": 0.02, "t_final": 0.2},
            "noise": {"profiles": [{"kind": "mode", "k": [1, 0],
                                    "trig": "sin", "amplitude": 1.0}]},
            "eps_grid": [0.4, 0.2], "n_samples": 200,
            "event": {"flavor": "small-time", "observable": {"kind": "l2"},
                      "threshold": 0.05, "direction": ">=", "at": "sup"},
        }

        def run():
            cfg = parse_config(json.dumps(doc))
            assert run_experiment(cfg) == 0
            return ((out / "results.csv").read_bytes(),
                    (out / "manifest.json").read_bytes())

        csv_a, man_a = run()
        shutil.rmtree(out)
        csv_b, man_b = run()
        elapsed = time.monotonic() - t0
        report("reproducibility: identical config and seed give identical bytes",
               csv_a == csv_b and man_a == man_b,
               f"{len(csv_a)} csv bytes, {elapsed:.1f}s")
