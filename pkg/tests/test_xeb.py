import math

import numpy as np
import pytest

import oracles
from rcslab.circuit import Circuit, build_grid_rcs
from rcslab.simulator import Estimate, NoiseModel, SampleSet, probabilities, sample, simulate
from rcslab.xeb import (
    DecayCurve, DegenerateFitError, Ensemble, PhasePoint, classify_phase_point, crossover_eps_n,
    estimate_xeb, extrapolate_fidelity, fit_decay, ideal_xeb, positive_prefix, read_curves_csv,
    spoof_blocks, spoof_probabilities, spoof_samples, spoof_state, trajectory_profile,
    write_curves_csv, xeb_decay_sweep,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _cut_oracle(c, block):
    """Distribution of ``c`` with crossing gates removed, via the dense oracle."""
    block = set(block)
    layers = [[g for g in layer if all(q in block for q in g.qubits) or not any(q in block for q in g.qubits)]
              for layer in c.layers]
    cut = Circuit(c.n_qubits, layers)
    return np.abs(oracles.statevector(cut)) ** 2


class TestEstimateXeb:
    def test_uniform_samples_give_zero(self):
        c = build_grid_rcs(2, 3, 6, seed=1)
        ss = SampleSet(6, _rng(1).integers(0, 64, 100_000))
        r = estimate_xeb(ss, c)
        assert abs(r.chi) <= 3 * r.std_error

    def test_ideal_samples_match_collision_value(self):
        c = build_grid_rcs(2, 3, 6, seed=1)
        p = np.abs(oracles.statevector(c)) ** 2
        expected = oracles.linear_xeb_expectation(p, p)
        r = estimate_xeb(sample(simulate(c), 200_000, _rng(2)), c)
        assert abs(r.chi - expected) <= 4 * r.std_error
        assert ideal_xeb(c) == pytest.approx(expected, rel=1e-10)

    def test_width_mismatch(self):
        c = build_grid_rcs(2, 3, 2)
        with pytest.raises(ValueError):
            estimate_xeb(SampleSet(5, [0, 1]), c)

    def test_porter_thomas_second_moment(self):
        # deep 3x4 circuits: mean of (2^n p)^2 approaches 2 for exponential statistics
        vals = [ideal_xeb(build_grid_rcs(3, 4, 12, seed=s)) for s in range(10)]
        assert np.mean(vals) == pytest.approx(1.0, abs=0.1)


class TestSweep:
    def test_profile_matches_kraus_oracle(self):
        c = build_grid_rcs(2, 2, 3, seed=3)
        prof = trajectory_profile(c, NoiseModel(0.05), 20_000, _rng(4), [2, 6])
        for d in (2, 6):
            p = np.abs(oracles.statevector(c.prefix(d))) ** 2
            q = np.real(np.diag(oracles.noisy_density(c, 0.05, d)))
            xeb_vals, fid_vals = prof[d]
            se = xeb_vals.std(ddof=1) / math.sqrt(len(xeb_vals))
            assert abs(xeb_vals.mean() - oracles.linear_xeb_expectation(p, q)) <= 4 * se + 1e-12

    def test_sampled_and_exact_xeb_agree(self):
        c = build_grid_rcs(2, 3, 3, seed=3)
        exact = trajectory_profile(c, NoiseModel(0.02), 3000, _rng(5), [6])[6][0]
        sampled = trajectory_profile(c, NoiseModel(0.02), 3000, _rng(6), [6], samples_per_traj=5)[6][0]
        se = math.hypot(exact.std(ddof=1), sampled.std(ddof=1)) / math.sqrt(3000)
        assert abs(exact.mean() - sampled.mean()) <= 4 * se

    def test_engines_agree(self):
        ens = Ensemble("grid", 2, 2)
        xt, ft = xeb_decay_sweep(ens, 0.05, [2, 4, 6], 2, 20_000, _rng(7))
        xd, fd = xeb_decay_sweep(ens, 0.05, [2, 4, 6], 2, 0, _rng(7), engine="density")
        for a, b, s in zip(xt.means, xd.means, xt.std_errors):
            assert abs(a - b) <= 4 * s + 1e-12
        for a, b, s in zip(ft.means, fd.means, ft.std_errors):
            assert abs(a - b) <= 4 * s + 1e-12

    def test_density_engine_matches_oracle(self):
        ens = Ensemble("grid", 2, 2)
        xd, fd = xeb_decay_sweep(ens, 0.1, [3, 5], 1, 0, _rng(8), engine="density")
        seed = int(_rng(8).integers(0, 2**63 - 1, size=1)[0])
        c = ens.build(5, seed)
        for i, d in enumerate([3, 5]):
            psi = oracles.statevector(c.prefix(d))
            rho = oracles.noisy_density(c, 0.1, d)
            assert fd.means[i] == pytest.approx(oracles.fidelity(psi, rho), abs=1e-12)
            q = np.real(np.diag(rho))
            assert xd.means[i] == pytest.approx(oracles.linear_xeb_expectation(np.abs(psi) ** 2, q), abs=1e-10)

    def test_unknown_engine(self):
        with pytest.raises(ValueError):
            xeb_decay_sweep(Ensemble(), 0.01, [2], 1, 2, _rng(), engine="mps")

    def test_ensemble_prefix_property(self):
        ens = Ensemble("grid", 2, 3)
        assert ens.build(4, 11).layers == ens.build(8, 11).layers[:4]
        assert Ensemble.grid_for(12).rows == 3
        rr = Ensemble("rr", n_qubits=6, degree=3)
        assert rr.build(7, 1).depth == 7


class TestCurves:
    def test_depths_must_increase(self):
        with pytest.raises(ValueError):
            DecayCurve("xeb", [4, 4], [1, 1], [0, 0])

    def test_csv_round_trip(self, tmp_path):
        a = DecayCurve("xeb", [2, 4, 6], [0.9, 0.5, 0.25], [0.01, 0.02, 0.03], 10, 0.01, 3, 100, 7)
        b = DecayCurve("fidelity", [2, 4, 6], [0.8, 0.6, 0.4], [0.0, 0.0, 0.0], 10, 0.01, 3, 100, 7)
        write_curves_csv([a, b], tmp_path / "c.csv")
        back = {c.quantity: c for c in read_curves_csv(tmp_path / "c.csv")}
        for orig in (a, b):
            got = back[orig.quantity]
            assert got.depths == orig.depths and got.means == orig.means
            assert got.std_errors == orig.std_errors and got.n == 10 and got.seed == 7

    def test_fit_recovers_rate(self):
        d = [2, 4, 6, 8]
        curve = DecayCurve("xeb", d, [0.7 * math.exp(-0.13 * x) for x in d], [0.0] * 4)
        rate, se = fit_decay(curve)
        assert rate == pytest.approx(0.13, rel=1e-12)
        assert se == 0.0

    def test_fit_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_decay(DecayCurve("xeb", [1, 2], [0.5, 0.2], [0, 0]))
        with pytest.raises(DegenerateFitError):
            fit_decay(DecayCurve("xeb", [1, 2, 3], [0.5, -0.1, 0.2], [0, 0, 0]))

    def test_positive_prefix_trajectory_rule(self):
        c = DecayCurve("xeb", [1, 2, 3, 4], [0.5, 0.2, 0.01, 0.3], [0.01, 0.01, 0.01, 0.01], n_traj=100)
        assert positive_prefix(c).depths == [1, 2]

    def test_positive_prefix_exact_rule(self):
        c = DecayCurve("xeb", [1, 2, 3, 4], [0.5, 0.2, 1e-6, -1e-9], [0.4, 0.4, 0.4, 0.4], n_traj=0)
        assert positive_prefix(c).depths == [1, 2, 3]


class TestPhase:
    @pytest.mark.parametrize("rate,phase", [(0.1, "weak"), (0.081, "weak"), (0.07, "boundary"),
                                            (0.05, "strong"), (0.01, "strong")])
    def test_classification(self, rate, phase):
        assert classify_phase_point(10, 0.01, rate).phase == phase

    def test_crossover_interpolates(self):
        pts = [PhasePoint(10, 0.01, 0.1, 0.1, "weak"), PhasePoint(10, 0.1, 0.5, 1.0, "strong")]
        # ratio 1.0 -> 0.5 crosses the 0.65 midpoint at t = 0.7 in log eps
        expected = math.exp(math.log(0.01) + 0.7 * math.log(10)) * 10
        assert crossover_eps_n(pts) == pytest.approx(expected)

    def test_crossover_missing(self):
        with pytest.raises(DegenerateFitError):
            crossover_eps_n([PhasePoint(10, 0.01, 0.1, 0.1, "weak")])


class TestSpoof:
    def test_blocks_drop_crossing_gates(self):
        c = build_grid_rcs(2, 2, 3, seed=1)
        a, ca, b, cb = spoof_blocks(c, [0, 2])
        assert a == [0, 2] and b == [1, 3]
        crossing = sum(1 for g in c.gates() if len(g.qubits) == 2 and (g.qubits[0] in a) != (g.qubits[1] in a))
        kept = sum(1 for g in ca.gates()) + sum(1 for g in cb.gates())
        assert kept == sum(1 for _ in c.gates()) - crossing

    def test_distribution_matches_cut_oracle(self):
        c = build_grid_rcs(2, 3, 4, seed=5)
        block = [0, 1, 3]
        assert np.allclose(spoof_probabilities(c, block), _cut_oracle(c, block), atol=1e-12)
        assert np.allclose(np.abs(spoof_state(c, block)) ** 2, _cut_oracle(c, block), atol=1e-12)

    def test_no_cross_gates_reproduces_ideal(self):
        prod = Circuit(4, [[g for g in layer if len(g.qubits) == 1] for layer in build_grid_rcs(2, 2, 3).layers])
        assert np.allclose(spoof_probabilities(prod, [0, 1]), probabilities(prod), atol=1e-12)
        ss = spoof_samples(prod, [0, 1], 50_000, _rng(3))
        r = estimate_xeb(ss, prod)
        assert abs(r.chi - ideal_xeb(prod)) <= 4 * r.std_error + 1e-12

    def test_sample_frequencies(self):
        c = build_grid_rcs(2, 2, 3, seed=2)
        p = spoof_probabilities(c, [0, 1])
        ss = spoof_samples(c, [0, 1], 100_000, _rng(4))
        freq = np.bincount(ss.outcomes, minlength=16) / 100_000
        assert np.all(np.abs(freq - p) <= 5 * np.sqrt(p * (1 - p) / 100_000) + 1e-12)

    @pytest.mark.parametrize("block", [[], [0, 1, 2, 3], [7]])
    def test_trivial_bipartition(self, block):
        with pytest.raises(ValueError):
            spoof_samples(build_grid_rcs(2, 2, 1), block, 10, _rng())


class TestExtrapolation:
    def test_exact_exponential(self):
        pts = [(n, math.exp(-0.1 * n)) for n in (4, 6, 8)]
        pred = extrapolate_fidelity(pts, 12)
        assert pred.value == pytest.approx(math.exp(-1.2), rel=1e-12)

    def test_weighted_errors_propagate(self):
        pts = [(n, Estimate(math.exp(-0.1 * n), 0.01, 100)) for n in (4, 6, 8)]
        pred = extrapolate_fidelity(pts, 12)
        assert pred.value == pytest.approx(math.exp(-1.2), rel=1e-9)
        assert pred.std_error > 0

    def test_needs_three_points(self):
        with pytest.raises(DegenerateFitError):
            extrapolate_fidelity([(4, 0.5), (6, 0.3)], 8)

    def test_non_positive_rejected(self):
        with pytest.raises(DegenerateFitError):
            extrapolate_fidelity([(4, 0.5), (6, 0.0), (8, 0.1)], 10)
