"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear inline) or
``python tests/test_acceptance.py`` for the lines alone.
"""
import math
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from gen import ALL_GATES, random_gate_circuit  # noqa: E402
from rcslab.circuit import GraphSpec, build_grid_rcs, build_rotated_graph_state  # noqa: E402
from rcslab.protocol import ChallengeSpec, ProverConfig, run_verifier, serve_prover, transcript_leaks  # noqa: E402
from rcslab.simulator import (  # noqa: E402
    NoiseModel, SampleSet, estimate_fidelity, fidelity_profile, probabilities, sample, simulate,
)
from rcslab.verification import bell_sample, estimate_fidelity_graph, fidelity_from_bell  # noqa: E402
from rcslab.xeb import (  # noqa: E402
    DecayCurve, Ensemble, estimate_xeb, extrapolate_fidelity, fit_decay, positive_prefix,
    spoof_probabilities, spoof_state, xeb_decay_sweep,
)

pytestmark = pytest.mark.acceptance

_print_hook = None


def report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    if _print_hook is not None:
        _print_hook(line)
    else:
        print(line, flush=True)
    assert ok, line


@pytest.fixture(autouse=True)
def _visible(capsys):
    global _print_hook

    def show(line):
        with capsys.disabled():
            print("\n" + line, flush=True)

    _print_hook = show
    yield
    _print_hook = None


def _rng(seed):
    return np.random.default_rng(seed)


# 1. XEB normalization --------------------------------------------------------

def test_1_xeb_normalization():
    t0 = time.time()
    rng = _rng(101)
    zero_ok, parts = True, []
    for n in (4, 8, 12):
        c = Ensemble.grid_for(n).build(14, int(rng.integers(2**31)))
        r = estimate_xeb(SampleSet(n, rng.integers(0, 1 << n, 100_000)), c)
        zero_ok &= abs(r.chi) <= 3 * r.std_error
        parts.append(f"uniform n={n}: {r.chi:+.4f}+-{r.std_error:.4f}")
    # chi = 1 holds for the ensemble: 20 circuits, 5000 ideal samples each
    vals = []
    for i in range(20):
        c = build_grid_rcs(3, 4, 14, seed=1000 + i)  # 14 cycles
        r = estimate_xeb(sample(simulate(c), 5000, rng), c)
        vals.append(r.chi)
    chi = float(np.mean(vals))
    ideal_ok = abs(chi - 1) <= 0.05
    parts.append(f"ideal n=12 d=14 cycles: {chi:.4f} over 10^5 samples (tol 0.05)")
    dt = time.time() - t0
    report(1, zero_ok and ideal_ok and dt <= 120, "; ".join(parts) + f" ({dt:.0f}s)")


# 2. Fidelity decay -----------------------------------------------------------

def test_2_fidelity_decay():
    t0 = time.time()
    eps, n = 0.01, 10
    depths = list(range(4, 17))
    c = Ensemble.grid_for(n).build(16, 7)
    prof = fidelity_profile(c, NoiseModel(eps), 2000, _rng(2), depths)
    curve = DecayCurve("fidelity", depths, [e.value for e in prof], [e.std_error for e in prof])
    rate, se = fit_decay(curve)
    rel = abs(rate - eps * n) / (eps * n)
    dt = time.time() - t0
    report(2, rel <= 0.15 and dt <= 600,
           f"rate {rate:.4f}+-{se:.4f} vs eps*n {eps * n:.3f} (off {rel:.1%}, tol 15%) ({dt:.0f}s)")


# 3. Phase transition ---------------------------------------------------------

def test_3_phase_transition():
    t0 = time.time()
    n = 10
    ens = Ensemble.grid_for(n)
    ok, parts = True, []
    for eps in (0.005, 0.01):
        xc, _ = xeb_decay_sweep(ens, eps, range(12, 41, 4), 4, 300, _rng(30))
        rate, _ = fit_decay(positive_prefix(xc))
        rel = abs(rate - eps * n) / (eps * n)
        ok &= rel <= 0.25
        parts.append(f"weak eps={eps}: rate {rate:.4f} vs {eps * n:.3f} (off {rel:.0%})")
    for eps in (0.3, 0.5):
        xc, _ = xeb_decay_sweep(ens, eps, range(4, 17, 2), 3, 0, _rng(31), engine="density")
        pref = positive_prefix(xc)
        rate, _ = fit_decay(pref)
        ratio = rate / (eps * n)
        ok &= ratio <= 0.5
        parts.append(f"strong eps={eps}: rate {rate:.3f} = {ratio:.2f} eps*n over d<={pref.depths[-1]}")
    dt = time.time() - t0
    report(3, ok and dt <= 1800, "; ".join(parts) + f" ({dt:.0f}s)")


# 4. Spoofer gap --------------------------------------------------------------

def test_4_spoofer_gap():
    t0 = time.time()
    block = [0, 1, 4, 5, 8, 9]  # left half of the 3x4 grid
    depths = list(range(6, 17, 2))
    chis = {d: [] for d in depths}
    fids = {d: [] for d in depths}
    for s in range(40):
        full = build_grid_rcs(3, 4, 8, seed=4000 + s)
        for d in depths:
            c = full.prefix(d)
            p = probabilities(c)
            q = spoof_probabilities(c, block)
            chis[d].append(4096 * float(p @ q) - 1)
            fids[d].append(abs(np.vdot(simulate(c).amplitudes, spoof_state(c, block))) ** 2)
    mean_chi = [float(np.mean(chis[d])) for d in depths]
    se_chi = [float(np.std(chis[d], ddof=1) / math.sqrt(40)) for d in depths]
    mean_f = [float(np.mean(fids[d])) for d in depths]
    ratios = [x / f for x, f in zip(mean_chi, mean_f)]
    best = int(np.argmax(ratios))
    rate, se = fit_decay(DecayCurve("xeb", depths, mean_chi, se_chi))
    fit_ok = rate > 0 and rate > 3 * se
    dt = time.time() - t0
    report(4, max(ratios) >= 10 and fit_ok and dt <= 600,
           f"max chi/F {ratios[best]:.0f}x at d={depths[best]} (chi {mean_chi[best]:.3f}, F {mean_f[best]:.1e}); "
           f"exp(-cd) fit c={rate:.3f}+-{se:.3f} ({dt:.0f}s)")


# 5. Bell sampling ------------------------------------------------------------

def test_5_bell_sampling():
    t0 = time.time()
    c = build_grid_rcs(2, 4, 4, seed=5)  # 8 layers
    noise = NoiseModel(0.005)
    f_bell = fidelity_from_bell(bell_sample(c, noise, 100_000, _rng(50)))
    f_traj = estimate_fidelity(c, noise, 20_000, _rng(51))
    rel = abs(f_bell.value - f_traj.value) / f_traj.value
    dt = time.time() - t0
    report(5, rel <= 0.05 and dt <= 600,
           f"sqrt(P) {f_bell.value:.4f}+-{f_bell.std_error:.4f} vs F {f_traj.value:.4f}+-{f_traj.std_error:.4f} "
           f"(off {rel:.1%}, tol 5%) ({dt:.0f}s)")


# 6. Graph-state verification -------------------------------------------------

def test_6_graph_state():
    t0 = time.time()
    rng = _rng(60)
    eps = 0.02
    parts, ok = [], True
    g6 = GraphSpec(6, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)), tuple(rng.uniform(0, 2 * np.pi, 6)))
    c6 = build_rotated_graph_state(g6)
    exact = oracles.fidelity(oracles.statevector(c6), oracles.noisy_density(c6, eps))
    est6 = estimate_fidelity_graph(g6, NoiseModel(eps), 2000, 50, rng)
    ok &= abs(est6.value - exact) <= 0.02
    parts.append(f"n=6: {est6.value:.4f} vs density {exact:.4f}")
    edges8 = tuple((i, (i + 1) % 8) for i in range(8)) + ((0, 4), (2, 6))
    g8 = GraphSpec(8, edges8, tuple(rng.uniform(0, 2 * np.pi, 8)))
    est8 = estimate_fidelity_graph(g8, NoiseModel(eps), 2000, 50, rng)
    traj = estimate_fidelity(build_rotated_graph_state(g8), NoiseModel(eps), 20_000, rng)
    ok &= abs(est8.value - traj.value) <= 0.02
    parts.append(f"n=8: {est8.value:.4f} vs trajectories {traj.value:.4f}")
    dt = time.time() - t0
    report(6, ok and dt <= 300, "; ".join(parts) + f" (tol 0.02) ({dt:.0f}s)")


# 7. Planted secret end to end --------------------------------------------------

def _sessions(strategy, count, seed):
    addr, ready = {}, threading.Event()

    def on_ready(a):
        addr["a"] = a
        ready.set()

    t = threading.Thread(target=serve_prover, args=(ProverConfig(strategy, seed=seed), "127.0.0.1:0"),
                         kwargs={"max_sessions": count, "ready": on_ready}, daemon=True)
    t.start()
    ready.wait(5)
    endpoint = f"127.0.0.1:{addr['a'][1]}"
    rng = _rng(seed)
    accepted, leaks = 0, 0
    for _ in range(count):
        transcript = []
        r = run_verifier(ChallengeSpec(n=10), endpoint, rng, transcript=transcript)
        accepted += r.verdict.accepted
        leaks += len(transcript_leaks(transcript, r.keys))
    t.join(10)
    return accepted, leaks


def test_7_planted_secret():
    t0 = time.time()
    honest, leak_h = _sessions("honest-simulator", 50, 70)
    uniform, leak_u = _sessions("uniform-random", 50, 71)
    dt = time.time() - t0
    ok = honest >= 49 and 50 - uniform >= 49 and leak_h + leak_u == 0
    report(7, ok and dt <= 900,
           f"honest accepted {honest}/50, uniform rejected {50 - uniform}/50, leaks {leak_h + leak_u} ({dt:.0f}s)")


# 8. Oracle equivalence ---------------------------------------------------------

def test_8_oracle_equivalence():
    t0 = time.time()
    rng = _rng(80)
    worst, seen = 0.0, set()
    for i in range(200):
        n = int(rng.integers(2, 7))
        must = [ALL_GATES[i % len(ALL_GATES)]]
        c = random_gate_circuit(n, int(rng.integers(1, 9)), rng, must_include=must)
        seen.update(g.name for g in c.gates())
        worst = max(worst, float(np.max(np.abs(simulate(c).amplitudes - oracles.statevector(c)))))
    dt = time.time() - t0
    covered = seen >= set(ALL_GATES)
    report(8, worst <= 1e-9 and covered and dt <= 120,
           f"200 circuits, max amplitude error {worst:.1e}, gate types {len(seen & set(ALL_GATES))}/{len(ALL_GATES)} "
           f"({dt:.0f}s)")


# 9. Extrapolation consistency --------------------------------------------------

def test_9_extrapolation():
    t0 = time.time()
    noise, depth, traj = NoiseModel(0.01), 12, 3000
    rng = _rng(90)
    points = {}
    for n in (6, 8, 10, 12):
        c = Ensemble.grid_for(n).build(depth, 900 + n)
        points[n] = estimate_fidelity(c, noise, traj, rng)
    pred = extrapolate_fidelity([(n, points[n]) for n in (6, 8, 10)], 12)
    meas = points[12]
    sigma = math.hypot(pred.std_error, meas.std_error)
    z = abs(pred.value - meas.value) / sigma
    # leave-one-out over the inner sizes, reported for context
    loo = []
    for held in (8, 10):
        rest = [(n, points[n]) for n in points if n != held]
        p = extrapolate_fidelity(rest, held)
        loo.append(abs(p.value - points[held].value) / math.hypot(p.std_error, points[held].std_error))
    dt = time.time() - t0
    report(9, z <= 3 and dt <= 600,
           f"predicted F(12) {pred.value:.4f}+-{pred.std_error:.4f} vs measured {meas.value:.4f}+-{meas.std_error:.4f} "
           f"({z:.1f} sigma); leave-one-out {', '.join(f'{v:.1f}' for v in loo)} sigma ({dt:.0f}s)")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
