"""Linear XEB, depth sweeps, phase classification, spoofing and extrapolation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuit import Circuit, CircuitError, build_grid_rcs, build_rr_graph_rcs
from .simulator import (
    Estimate,
    NoiseModel,
    SampleSet,
    _chunks,
    _evolve,
    _ops,
    check_cap,
    density_profile,
    draw_noise,
    flip_bits,
    probabilities,
    sample_probs,
    simulate,
    zero_batch,
)


class DegenerateFitError(ValueError):
    """Not enough usable points to fit an exponential decay."""


@dataclass(frozen=True)
class XebResult:
    chi: float
    std_error: float
    n_samples: int
    circuit_id: str = ""


def xeb_values(outcomes: np.ndarray, ideal_probs: np.ndarray, n: int) -> np.ndarray:
    return (2.0 ** n) * ideal_probs[outcomes] - 1.0


def estimate_xeb(samples: SampleSet, c: Circuit, ideal_probs: np.ndarray | None = None) -> XebResult:
    """``chi = 2^n * mean_x p_C(x) - 1`` over the given samples.

    ``ideal_probs`` may be passed to skip re-simulating ``c``.
    """
    if samples.n_qubits != c.n_qubits:
        raise ValueError(f"samples have {samples.n_qubits} bits but the circuit has {c.n_qubits} qubits")
    if len(samples) < 1:
        raise ValueError("no samples")
    p = probabilities(c) if ideal_probs is None else ideal_probs
    est = Estimate.from_samples(xeb_values(samples.outcomes, p, c.n_qubits))
    return XebResult(est.value, est.std_error, est.n_samples, c.id)


def ideal_xeb(c: Circuit) -> float:
    """Expected XEB of perfect samples, ``2^n sum_x p(x)^2 - 1`` (2^n sum p^2 ~ 2 under Porter-Thomas)."""
    p = probabilities(c)
    return float((2.0 ** c.n_qubits) * np.sum(p * p) - 1.0)


# ----------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class Ensemble:
    """Recipe for random circuits of a given number of layers.

    ``kind`` is ``"grid"`` (uses ``rows``, ``cols``) or ``"rr"`` (uses
    ``n_qubits``, ``degree``). A circuit with ``d`` layers is the ``d``-layer
    prefix of a longer generated circuit, so shallower circuits in a sweep are
    prefixes of deeper ones with the same seed.
    """

    kind: str = "grid"
    rows: int = 2
    cols: int = 5
    n_qubits: int = 0
    degree: int = 3

    @property
    def n(self) -> int:
        return self.rows * self.cols if self.kind == "grid" else self.n_qubits

    def build(self, layers: int, seed: int) -> Circuit:
        if self.kind == "grid":
            c = build_grid_rcs(self.rows, self.cols, layers, seed=seed)
        elif self.kind == "rr":
            # every depth step contributes at least six layers
            c = build_rr_graph_rcs(self.n_qubits, self.degree, max(1, -(-layers // 6)), seed=seed)
        else:
            raise CircuitError(f"unknown ensemble kind {self.kind!r}")
        if c.depth < layers:
            raise CircuitError(f"{self.kind} ensemble cannot reach {layers} layers")
        return c.prefix(layers)

    @classmethod
    def grid_for(cls, n: int) -> "Ensemble":
        """Most square rows x cols grid with ``rows * cols == n``."""
        rows = max(r for r in range(1, int(math.isqrt(n)) + 1) if n % r == 0)
        return cls("grid", rows, n // rows)


@dataclass
class DecayCurve:
    quantity: str
    depths: list[int]
    means: list[float]
    std_errors: list[float]
    n: int = 0
    eps: float = 0.0
    n_circuits: int = 0
    n_traj: int = 0
    seed: int = 0
    per_circuit: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.means = [float(m) for m in self.means]
        self.std_errors = [float(e) for e in self.std_errors]
        if any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            raise ValueError("depths must be strictly increasing")

    @property
    def ln_means(self) -> list[float]:
        return [math.log(m) if m > 0 else float("nan") for m in self.means]

    def rows(self) -> Iterable[dict]:
        for d, m, s in zip(self.depths, self.means, self.std_errors):
            yield {
                "n": self.n, "eps": self.eps, "depth": d, "quantity": self.quantity,
                "mean": m, "stderr": s, "n_circuits": self.n_circuits,
                "n_traj": self.n_traj, "seed": self.seed,
            }


CSV_COLUMNS = ["n", "eps", "depth", "quantity", "mean", "stderr", "n_circuits", "n_traj", "seed"]


def write_curves_csv(curves: Sequence[DecayCurve], path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for curve in curves:
            for row in curve.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if own:
            fh.close()


def read_curves_csv(path) -> list[DecayCurve]:
    groups: dict[tuple, list[dict]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["n"]), float(row["eps"]), row["quantity"], int(row["seed"]),
                   int(row["n_circuits"]), int(row["n_traj"]))
            groups.setdefault(key, []).append(row)
    curves = []
    for (n, eps, q, seed, nc, nt), rows in groups.items():
        rows.sort(key=lambda r: int(r["depth"]))
        curves.append(DecayCurve(
            q, [int(r["depth"]) for r in rows], [float(r["mean"]) for r in rows],
            [float(r["stderr"]) for r in rows], n, eps, nc, nt, seed,
        ))
    return curves


def trajectory_profile(
    c: Circuit,
    noise: NoiseModel,
    n_traj: int,
    rng: np.random.Generator,
    depths: Sequence[int],
    samples_per_traj: int = 0,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-trajectory (XEB, fidelity) values for every prefix depth.

    With ``samples_per_traj == 0`` the XEB of a trajectory is its exact
    expectation ``2^n sum_x p_ideal(x) |psi(x)|^2 - 1``; otherwise it is the
    mean of ``2^n p_ideal(x) - 1`` over that many bitstrings drawn from the
    trajectory. Both are unbiased for the XEB of the noisy circuit.
    """
    n = c.n_qubits
    check_cap(n)
    depths = sorted(set(int(d) for d in depths))
    top = depths[-1]
    if top > c.depth:
        raise ValueError(f"depth {top} exceeds circuit depth {c.depth}")
    ops = _ops(c)[:top]
    ideal = zero_batch(n)
    ideals = {}
    for li in range(top + 1):
        if li in depths:
            ideals[li] = ideal[0].copy()
        if li < top:
            ideal = _evolve(ideal, ops[li:li + 1], n)
    probs = {d: np.abs(a) ** 2 for d, a in ideals.items()}
    choices = draw_noise(noise, n_traj, top, n, rng)
    xeb = {d: np.empty(n_traj) for d in depths}
    fid = {d: np.empty(n_traj) for d in depths}
    scale = 2.0 ** n
    for sl in _chunks(n_traj, n):
        psi = zero_batch(n, sl.stop - sl.start)
        for li in range(top + 1):
            if li in xeb:
                fid[li][sl] = np.abs(psi @ ideals[li].conj()) ** 2
                q = np.abs(psi) ** 2
                if samples_per_traj:
                    vals = np.empty(q.shape[0])
                    for r in range(q.shape[0]):
                        out = sample_probs(q[r], samples_per_traj, rng)
                        out = flip_bits(out, n, noise.flip, rng)
                        vals[r] = np.mean(scale * probs[li][out] - 1.0)
                    xeb[li][sl] = vals
                else:
                    xeb[li][sl] = scale * (q @ probs[li]) - 1.0
            if li < top:
                step = None if choices is None else choices[sl, li:li + 1]
                psi = _evolve(psi, ops[li:li + 1], n, step)
    return {d: (xeb[d], fid[d]) for d in depths}


def xeb_decay_sweep(
    ensemble: Ensemble,
    eps: float,
    depths: Sequence[int],
    n_circuits: int,
    n_traj: int,
    rng: np.random.Generator,
    samples_per_traj: int = 0,
    seed: int = 0,
    engine: str = "trajectory",
) -> tuple[DecayCurve, DecayCurve]:
    """XEB and fidelity decay curves averaged over ``n_circuits`` random circuits.

    ``depths`` count layers. Circuit seeds are drawn from ``rng``; ``seed`` is
    only recorded in the curves. ``engine="density"`` evolves the exact
    depolarized density matrix instead of trajectories, which resolves the
    tiny XEB values of the strong-noise regime; its standard errors then come
    from circuit-to-circuit spread only.
    """
    if engine == "density":
        return _density_sweep(ensemble, eps, depths, n_circuits, rng, seed)
    if engine != "trajectory":
        raise ValueError(f"unknown engine {engine!r}")
    depths = sorted(set(int(d) for d in depths))
    if not depths:
        raise ValueError("no depths given")
    if n_circuits < 1 or n_traj < 2:
        raise ValueError("need n_circuits >= 1 and n_traj >= 2")
    noise = NoiseModel(eps)
    circuit_seeds = rng.integers(0, 2**63 - 1, size=n_circuits)
    pooled_x = {d: [] for d in depths}
    pooled_f = {d: [] for d in depths}
    per_x, per_f = [], []
    for cs in circuit_seeds:
        c = ensemble.build(depths[-1], int(cs))
        prof = trajectory_profile(c, noise, n_traj, rng, depths, samples_per_traj)
        per_x.append([float(prof[d][0].mean()) for d in depths])
        per_f.append([float(prof[d][1].mean()) for d in depths])
        for d in depths:
            pooled_x[d].append(prof[d][0])
            pooled_f[d].append(prof[d][1])

    def curve(name, pooled, per):
        ests = [Estimate.from_samples(np.concatenate(pooled[d])) for d in depths]
        return DecayCurve(
            name, list(depths), [e.value for e in ests], [e.std_error for e in ests],
            ensemble.n, eps, n_circuits, n_traj, seed, per,
        )

    return curve("xeb", pooled_x, per_x), curve("fidelity", pooled_f, per_f)


def _density_sweep(ensemble, eps, depths, n_circuits, rng, seed):
    depths = sorted(set(int(d) for d in depths))
    if not depths or n_circuits < 1:
        raise ValueError("need depths and n_circuits >= 1")
    noise = NoiseModel(eps)
    n = ensemble.n
    per_x, per_f = [], []
    for cs in rng.integers(0, 2**63 - 1, size=n_circuits):
        c = ensemble.build(depths[-1], int(cs))
        rhos = density_profile(c, noise, depths)
        ideal = zero_batch(n)
        xs, fs = [], []
        for li in range(depths[-1] + 1):
            if li in rhos:
                amp = ideal[0]
                p = np.abs(amp) ** 2
                diag = np.real(np.diagonal(rhos[li]))
                xs.append(float((2.0 ** n) * (p @ (diag - 2.0 ** -n))))
                fs.append(float(np.real(amp.conj() @ rhos[li] @ amp)))
            if li < depths[-1]:
                ideal = _evolve(ideal, _ops(c)[li:li + 1], n)
        per_x.append(xs)
        per_f.append(fs)

    def curve(name, per):
        arr = np.array(per)
        se = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros(arr.shape[1])
        return DecayCurve(name, list(depths), list(arr.mean(axis=0)), list(se), n, eps, n_circuits, 0, seed, per)

    return curve("xeb", per_x), curve("fidelity", per_f)


def fit_decay(curve: DecayCurve) -> tuple[float, float]:
    """Least-squares fit of ln(mean) against depth; returns (rate, rate std error).

    The rate is minus the slope. Its error propagates each point's standard
    error through the log and assumes independent points.
    """
    d = np.asarray(curve.depths, dtype=float)
    m = np.asarray(curve.means, dtype=float)
    if d.size < 3:
        raise DegenerateFitError(f"need at least 3 depth points, got {d.size}")
    if np.any(m <= 0):
        raise DegenerateFitError("curve has non-positive means; decay rate undefined")
    y = np.log(m)
    dc = d - d.mean()
    sxx = float(dc @ dc)
    if sxx == 0:
        raise DegenerateFitError("all depths coincide")
    slope = float(dc @ (y - y.mean()) / sxx)
    sy = np.asarray(curve.std_errors, dtype=float) / m
    se = float(math.sqrt(np.sum((dc / sxx) ** 2 * sy ** 2)))
    return -slope, se


def fit_decay_rate(curve: DecayCurve) -> float:
    return fit_decay(curve)[0]


EXACT_FLOOR = 1e-8


def positive_prefix(curve: DecayCurve, n_sigma: float = 3.0) -> DecayCurve:
    """Leading run of points whose mean is resolved above zero.

    Trajectory curves need ``mean > n_sigma * stderr``. Exact density-matrix
    curves (``n_traj == 0``) carry only circuit-to-circuit spread, so they
    are cut where the value reaches the round-off floor instead.
    """
    keep = 0
    for m, s in zip(curve.means, curve.std_errors):
        floor = EXACT_FLOOR if curve.n_traj == 0 else n_sigma * s
        if m <= floor or m <= 0:
            break
        keep += 1
    return DecayCurve(
        curve.quantity, curve.depths[:keep], curve.means[:keep], curve.std_errors[:keep],
        curve.n, curve.eps, curve.n_circuits, curve.n_traj, curve.seed,
    )


# ----------------------------------------------------------- phase diagram

WEAK_FRACTION = 0.8
STRONG_FRACTION = 0.5


@dataclass(frozen=True)
class PhasePoint:
    n: int
    eps: float
    rate: float
    predicted_rate: float
    phase: str


def classify_phase_point(n: int, eps: float, rate: float) -> PhasePoint:
    """Weak if the XEB decays at >= 0.8 eps n per layer, strong if <= 0.5 eps n."""
    predicted = eps * n
    if rate >= WEAK_FRACTION * predicted:
        phase = "weak"
    elif rate <= STRONG_FRACTION * predicted:
        phase = "strong"
    else:
        phase = "boundary"
    return PhasePoint(n, eps, rate, predicted, phase)


def crossover_eps_n(points: Sequence[PhasePoint]) -> float:
    """Empirical ``eps * n`` where the rate ratio crosses the midpoint of the two thresholds.

    Interpolates ``rate / (eps n)`` linearly in ``log(eps)`` between the last
    point above and the first point below the midpoint.
    """
    pts = sorted(points, key=lambda p: p.eps)
    mid = 0.5 * (WEAK_FRACTION + STRONG_FRACTION)
    ratios = [p.rate / p.predicted_rate for p in pts]
    for (a, ra), (b, rb) in zip(zip(pts, ratios), zip(pts[1:], ratios[1:])):
        if ra >= mid > rb:
            t = (ra - mid) / (ra - rb)
            le = math.log(a.eps) + t * (math.log(b.eps) - math.log(a.eps))
            return math.exp(le) * a.n
    raise DegenerateFitError("ratios never cross the weak/strong midpoint")


# --------------------------------------------------------------- spoofing


def _block_circuit(c: Circuit, block: Sequence[int]) -> Circuit:
    index = {q: i for i, q in enumerate(block)}
    layers = []
    for layer in c.layers:
        kept = []
        for g in layer:
            if all(q in index for q in g.qubits):
                kept.append(type(g)(g.name, tuple(index[q] for q in g.qubits), g.params))
        layers.append(kept)
    return Circuit(len(block), layers, "custom", c.seed)


def _split(c: Circuit, block_a: Iterable[int]) -> tuple[list[int], list[int]]:
    a = sorted(set(int(q) for q in block_a))
    if not a or len(a) >= c.n_qubits or a[0] < 0 or a[-1] >= c.n_qubits:
        raise ValueError(f"bipartition {a} is not a proper nonempty subset of {c.n_qubits} qubits")
    b = [q for q in range(c.n_qubits) if q not in set(a)]
    return a, b


def spoof_blocks(c: Circuit, block_a: Iterable[int]) -> tuple[list[int], Circuit, list[int], Circuit]:
    """Both halves of ``c`` with every gate crossing the cut deleted."""
    a, b = _split(c, block_a)
    return a, _block_circuit(c, a), b, _block_circuit(c, b)


def _embed(outcomes: np.ndarray, block: Sequence[int], n: int) -> np.ndarray:
    k = len(block)
    out = np.zeros_like(outcomes)
    for i, q in enumerate(block):
        bit = (outcomes >> (k - 1 - i)) & 1
        out |= bit << (n - 1 - q)
    return out


def spoof_probabilities(c: Circuit, block_a: Iterable[int]) -> np.ndarray:
    """Full output distribution of the cut circuit (only for small n)."""
    a, ca, b, cb = spoof_blocks(c, block_a)
    n = c.n_qubits
    pa, pb = probabilities(ca), probabilities(cb)
    ia = _embed(np.arange(pa.size, dtype=np.int64), a, n)
    ib = _embed(np.arange(pb.size, dtype=np.int64), b, n)
    out = np.empty(1 << n)
    out[(ia[:, None] | ib[None, :]).reshape(-1)] = np.outer(pa, pb).reshape(-1)
    return out


def spoof_state(c: Circuit, block_a: Iterable[int]) -> np.ndarray:
    """Product statevector of the two independently simulated blocks."""
    a, ca, b, cb = spoof_blocks(c, block_a)
    n = c.n_qubits
    sa, sb = simulate(ca).amplitudes, simulate(cb).amplitudes
    ia = _embed(np.arange(sa.size, dtype=np.int64), a, n)
    ib = _embed(np.arange(sb.size, dtype=np.int64), b, n)
    out = np.empty(1 << n, dtype=complex)
    out[(ia[:, None] | ib[None, :]).reshape(-1)] = np.outer(sa, sb).reshape(-1)
    return out


def spoof_samples(c: Circuit, block_a: Iterable[int], k: int, rng: np.random.Generator) -> SampleSet:
    """Sample the cut circuit: each block is simulated and sampled on its own.

    Cost is exponential only in the larger block.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    a, ca, b, cb = spoof_blocks(c, block_a)
    xa = sample_probs(probabilities(ca), k, rng)
    xb = sample_probs(probabilities(cb), k, rng)
    out = _embed(xa, a, c.n_qubits) | _embed(xb, b, c.n_qubits)
    return SampleSet(c.n_qubits, out, c.id, {"spoof_block": a, "k": k})


# ------------------------------------------------------------ extrapolation


def extrapolate_fidelity(points: Sequence[tuple[float, object]], target: float) -> Estimate:
    """Fit ``ln F`` linearly in a size proxy and predict ``F`` at ``target``.

    Each point is ``(size, F)`` with ``F`` an :class:`Estimate`, a
    ``(value, std_error)`` pair or a bare float. When every point carries a
    positive error the fit is weighted and the prediction error comes from
    the fit covariance; otherwise residuals set the scale.
    """
    if len(points) < 3:
        raise DegenerateFitError(f"need at least 3 points, got {len(points)}")
    xs, vals, errs = [], [], []
    for size, f in points:
        if isinstance(f, Estimate):
            v, s = f.value, f.std_error
        elif isinstance(f, (tuple, list)):
            v, s = float(f[0]), float(f[1])
        else:
            v, s = float(f), 0.0
        if v <= 0:
            raise DegenerateFitError(f"non-positive fidelity {v} at size {size}")
        xs.append(float(size))
        vals.append(v)
        errs.append(s)
    x = np.array(xs)
    y = np.log(vals)
    if np.ptp(x) == 0:
        raise DegenerateFitError("all sizes coincide")
    A = np.column_stack([np.ones_like(x), x])
    sy = np.array(errs) / np.array(vals)
    if np.all(sy > 0):
        w = 1.0 / sy ** 2
        cov = np.linalg.inv(A.T @ (A * w[:, None]))
        coef = cov @ (A.T @ (w * y))
    else:
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        dof = max(len(x) - 2, 1)
        cov = np.linalg.inv(A.T @ A) * float(resid @ resid) / dof
    t = np.array([1.0, float(target)])
    ln_pred = float(t @ coef)
    ln_se = float(math.sqrt(max(t @ cov @ t, 0.0)))
    pred = math.exp(ln_pred)
    return Estimate(pred, pred * ln_se, len(x))
