"""Command-line entry point: ``rcslab <command> [options]``.

Every command is a thin wrapper over one library operation. Randomness comes
from a single ``--seed``; each command derives its own streams by hashing
``(seed, command, index)``, so adding commands never shifts existing outputs.
Files written with ``--out`` get a ``<out>.manifest.json`` sidecar.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import (
    CircuitError, GraphSpec, ParseError, build_grid_rcs, build_iqp, build_rotated_graph_state,
    build_rr_graph_rcs, parse, serialize,
)
from .protocol import (
    STRATEGIES, ChallengeSpec, ProtocolError, ProverConfig, run_verifier, serve_prover,
)
from .simulator import (
    NoiseModel, ResourceLimitError, check_cap, estimate_fidelity, loschmidt_echo, read_samples,
    sample_noisy, simulate, write_samples,
)
from .verification import (
    IndeterminateResultError, SecretKey, bell_sample, estimate_fidelity_graph, estimate_purity,
    fidelity_from_bell, plant_secret_iqp, random_iqp, random_secret, verify_planted,
    write_bell_samples,
)
from .xeb import (
    DegenerateFitError, Ensemble, classify_phase_point, estimate_xeb, extrapolate_fidelity,
    fit_decay, positive_prefix, spoof_samples, spoof_state, write_curves_csv, xeb_decay_sweep,
)

EXIT_USAGE = 2


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int
    version: str = __version__
    outputs: list[str] = field(default_factory=list)


def derive_seed(seed: int, command: str, index: int = 0) -> int:
    h = hashlib.sha256(f"{seed}:{command}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


def rng_for(args, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(args.seed, args.command_key, index))


def emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def write_manifest(args, *paths: str) -> None:
    for p in paths:
        m = RunManifest(args.command_key, args.argv, args.seed, outputs=list(paths))
        Path(p + ".manifest.json").write_text(json.dumps(asdict(m), indent=2) + "\n")


# ---------------------------------------------------------------- parsing

_ANGLE = re.compile(r"^\s*(-?[0-9.]*)\s*\*?\s*(pi)?\s*(?:/\s*([0-9.]+))?\s*$")


def parse_angle(text: str) -> float:
    """Accept plain floats and multiples of pi such as ``pi/4`` or ``3pi/8``."""
    try:
        return float(text)
    except ValueError:
        pass
    m = _ANGLE.match(text)
    if not m or not m.group(2):
        raise argparse.ArgumentTypeError(f"bad angle {text!r}")
    num = m.group(1)
    coef = -1.0 if num == "-" else float(num) if num else 1.0
    den = float(m.group(3)) if m.group(3) else 1.0
    return coef * math.pi / den


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_depths(text: str) -> list[int]:
    """``4,8,12`` or an inclusive range ``start:stop[:step]``."""
    if ":" in text:
        parts = [int(t) for t in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad depth range {text!r}")
        step = parts[2] if len(parts) == 3 else 1
        if step < 1:
            raise argparse.ArgumentTypeError("depth step must be positive")
        return list(range(parts[0], parts[1] + 1, step))
    return parse_int_list(text)


def parse_edges(text: str) -> list[tuple[int, int]]:
    out = []
    for tok in text.split(","):
        a, sep, b = tok.strip().partition("-")
        if not sep:
            raise argparse.ArgumentTypeError(f"edge {tok!r} must look like a-b")
        out.append((int(a), int(b)))
    return out


def parse_gates(text: str) -> list[tuple[float, str]]:
    """``pi/4:1011,pi/5:1100`` -> [(theta, mask), ...]."""
    out = []
    for tok in text.split(","):
        angle, sep, mask = tok.strip().rpartition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"gate {tok!r} must look like angle:mask")
        out.append((parse_angle(angle), mask))
    return out


def parse_cnots(text: str) -> list[list[tuple[int, int]]]:
    """Groups separated by ``;``, each a comma list of ``control-target``; group i follows gate i."""
    return [parse_edges(g) if g.strip() else [] for g in text.split(";")]


def load_circuit(path: str):
    try:
        return parse(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"circuit file not found: {path}") from None


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    rng = rng_for(args)
    seed = derive_seed(args.seed, args.command_key, 1)
    kind = args.ensemble
    key = None
    if kind == "grid":
        if args.depth is None:
            raise UsageError("grid needs --depth (cycles)")
        check_cap(args.rows * args.cols)
        c = build_grid_rcs(args.rows, args.cols, args.depth, seed=seed)
    elif kind == "rr":
        if args.n is None or args.depth is None:
            raise UsageError("rr needs --n and --depth")
        check_cap(args.n)
        c = build_rr_graph_rcs(args.n, args.degree, args.depth, seed=seed)
    elif kind == "iqp":
        if args.gates:
            n = args.n if args.n is not None else len(args.gates[0][1])
            c = build_iqp(n, args.gates, args.cnots, seed=seed)
        else:
            if args.n is None:
                raise UsageError("iqp needs --gates or --n")
            c = random_iqp(args.n, rng)
    elif kind == "graph":
        if args.edges is None or args.n is None:
            raise UsageError("graph needs --n and --edges")
        angles = args.angles if args.angles is not None else list(rng.uniform(0, 2 * math.pi, args.n))
        c = build_rotated_graph_state(GraphSpec(args.n, args.edges, angles), seed=seed)
    elif kind == "planted":
        if args.n is None:
            raise UsageError("planted needs --n")
        if not args.key_out:
            raise UsageError("planted needs --key-out for the secret key")
        check_cap(args.n)
        secret = args.secret or random_secret(args.n, rng)
        c, key = plant_secret_iqp(args.n, secret, rng)
    else:  # argparse choices make this unreachable
        raise UsageError(f"unknown ensemble {kind}")
    text = serialize(c) + "\n"
    outputs = []
    if args.out:
        Path(args.out).write_text(text)
        outputs.append(args.out)
    else:
        sys.stdout.write(text)
    if key is not None:
        Path(args.key_out).write_text(key.to_json() + "\n")
        outputs.append(args.key_out)
    write_manifest(args, *outputs)
    return 0


def cmd_sample(args) -> int:
    c = load_circuit(args.circuit)
    check_cap(c.n_qubits)
    shots = 1 if args.traj == 0 else max(1, math.ceil(args.samples / args.traj))
    ss = sample_noisy(c, NoiseModel(args.eps), args.samples, rng_for(args), shots_per_traj=shots)
    ss.meta["seed"] = args.seed
    if args.out:
        write_samples(ss, args.out)
        write_manifest(args, args.out)
    else:
        sys.stdout.write("\n".join(ss.bitstrings()) + "\n")
    return 0


def cmd_xeb(args) -> int:
    c = load_circuit(args.circuit)
    check_cap(c.n_qubits)
    r = estimate_xeb(read_samples(args.input), c)
    emit({"chi": r.chi, "std_error": r.std_error, "n_samples": r.n_samples, "circuit_id": r.circuit_id})
    return 0


def cmd_sweep(args) -> int:
    ens = Ensemble.grid_for(args.n) if args.ensemble == "grid" else Ensemble("rr", n_qubits=args.n)
    check_cap(2 * args.n if args.engine == "density" else args.n)
    curves = []
    for i, eps in enumerate(args.eps):
        xc, fc = xeb_decay_sweep(ens, eps, args.depths, args.circuits, args.traj, rng_for(args, i),
                                 seed=args.seed, engine=args.engine)
        curves += [xc, fc]
        row = {"eps": eps, "n": args.n}
        try:
            rate, se = fit_decay(positive_prefix(xc))
            pp = classify_phase_point(args.n, eps, rate)
            row.update(xeb_rate=rate, xeb_rate_se=se, eps_n=pp.predicted_rate,
                       ratio=rate / pp.predicted_rate if pp.predicted_rate else float("nan"),
                       phase=pp.phase)
        except DegenerateFitError as e:
            row.update(xeb_rate=None, phase="unresolved", note=str(e))
        try:
            row["fidelity_rate"] = fit_decay(positive_prefix(fc))[0]
        except DegenerateFitError:
            row["fidelity_rate"] = None
        emit(row)
    if args.out:
        write_curves_csv(curves, args.out)
        write_manifest(args, args.out)
    return 0


def cmd_spoof(args) -> int:
    c = load_circuit(args.circuit)
    block = args.block if args.block is not None else list(range(c.n_qubits // 2))
    ss = spoof_samples(c, block, args.samples, rng_for(args))
    r = estimate_xeb(ss, c)
    overlap = abs(np.vdot(simulate(c).amplitudes, spoof_state(c, block))) ** 2
    emit({"chi": r.chi, "std_error": r.std_error, "fidelity": float(overlap), "block": sorted(block)})
    if args.out:
        write_samples(ss, args.out)
        write_manifest(args, args.out)
    return 0


def cmd_echo(args) -> int:
    c = load_circuit(args.circuit)
    check_cap(c.n_qubits)
    e = loschmidt_echo(c, NoiseModel(args.eps), args.traj, rng_for(args))
    emit({"echo": e.value, "std_error": e.std_error, "n_traj": e.n_samples})
    return 0


def cmd_extrapolate(args) -> int:
    for n in args.sizes + [args.n]:
        check_cap(n)
    noise = NoiseModel(args.eps)
    rng = rng_for(args)
    points = []
    for n in args.sizes:
        c = Ensemble.grid_for(n).build(args.depth, derive_seed(args.seed, args.command_key, n))
        f = estimate_fidelity(c, noise, args.traj, rng)
        points.append((n, f))
        emit({"n": n, "fidelity": f.value, "std_error": f.std_error})
    pred = extrapolate_fidelity(points, args.n)
    emit({"n": args.n, "predicted_fidelity": pred.value, "std_error": pred.std_error})
    return 0


def cmd_verify(args) -> int:
    rng = rng_for(args)
    if args.scheme == "bell":
        c = load_circuit(args.circuit)
        check_cap(2 * c.n_qubits)
        b = bell_sample(c, NoiseModel(args.eps), args.samples, rng)
        p = estimate_purity(b)
        out = {"purity": p.value, "purity_se": p.std_error, "n_samples": p.n_samples}
        try:
            f = fidelity_from_bell(p)
            out.update(fidelity=f.value, fidelity_se=f.std_error)
        except IndeterminateResultError as e:
            out.update(fidelity=None, note=str(e))
        emit(out)
        if args.out:
            write_bell_samples(b, args.out, c.id)
            write_manifest(args, args.out)
        return 0
    if args.scheme == "graph":
        angles = args.angles if args.angles is not None else list(rng.uniform(0, 2 * math.pi, args.n))
        g = GraphSpec(args.n, args.edges, angles)
        check_cap(g.n_vertices)
        f = estimate_fidelity_graph(g, NoiseModel(args.eps), args.stabilizers, args.shots, rng)
        emit({"fidelity": f.value, "std_error": f.std_error, "n_samples": f.n_samples})
        return 0
    # planted
    try:
        key = SecretKey.from_json(Path(args.key).read_text())
    except FileNotFoundError:
        raise UsageError(f"key file not found: {args.key}") from None
    if args.threshold is not None:
        key = SecretKey(**{**asdict(key), "threshold": args.threshold})
    v = verify_planted(read_samples(args.input), key)
    emit({"accepted": v.accepted, "statistic": v.statistic, "threshold": v.threshold,
          "p_value": v.p_value, "n_samples": v.n_samples})
    return 0 if v.accepted else 1


def cmd_serve(args) -> int:
    cfg = ProverConfig(args.strategy, args.eps, args.traj, derive_seed(args.seed, args.command_key))

    def ready(addr):
        print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)

    serve_prover(cfg, args.endpoint, max_sessions=args.max_sessions, ready=ready)
    return 0


def cmd_challenge(args) -> int:
    spec = ChallengeSpec(n=args.n, count=args.circuits, samples=args.samples,
                         accept_fraction=args.threshold)
    check_cap(spec.n)
    r = run_verifier(spec, args.endpoint, rng_for(args), timeout=args.timeout)
    emit({"accepted": r.verdict.accepted, "n_accepted": sum(v.accepted for v in r.per_circuit),
          "n_circuits": len(r.per_circuit), "session": r.session})
    return r.exit_code


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcslab", description="Random circuit sampling lab.")
    p.add_argument("--version", action="version", version=f"rcslab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
        sp.set_defaults(func=fn, command_key=name)
        return sp

    g = add("generate", cmd_generate, "write a circuit file")
    g.add_argument("--ensemble", choices=["grid", "rr", "iqp", "graph", "planted"], required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--rows", type=int, default=3)
    g.add_argument("--cols", type=int, default=3)
    g.add_argument("--depth", type=int, help="cycles (grid) or steps (rr)")
    g.add_argument("--degree", type=int, default=3)
    g.add_argument("--gates", type=parse_gates, help="IQP phase gates, e.g. pi/4:1011,pi/5:1100")
    g.add_argument("--cnots", type=parse_cnots, help="CNOT groups after each gate, e.g. '0-1;2-3'")
    g.add_argument("--edges", type=parse_edges, help="graph edges, e.g. 0-1,1-2")
    g.add_argument("--angles", type=lambda s: [parse_angle(t) for t in s.split(",")])
    g.add_argument("--secret", help="planted secret bit string (default random)")
    g.add_argument("--key-out", help="where the planted secret key is written")
    g.add_argument("--out")

    s = add("sample", cmd_sample, "sample a circuit with optional noise")
    s.add_argument("--circuit", required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--traj", type=int, default=0, help="trajectory budget; 0 = one per sample")
    s.add_argument("--out")

    x = add("xeb", cmd_xeb, "linear XEB of a sample file")
    x.add_argument("--circuit", required=True)
    x.add_argument("--input", required=True, help="sample file")

    w = add("sweep", cmd_sweep, "XEB and fidelity decay sweep, CSV output")
    w.add_argument("--n", type=int, default=10)
    w.add_argument("--ensemble", choices=["grid", "rr"], default="grid")
    w.add_argument("--eps", type=lambda s: [float(t) for t in s.split(",")], default=[0.01])
    w.add_argument("--depths", type=parse_depths, default=parse_depths("4:16:2"),
                   help="layer counts: list or start:stop[:step]")
    w.add_argument("--circuits", type=int, default=4)
    w.add_argument("--traj", type=int, default=200)
    w.add_argument("--engine", choices=["trajectory", "density"], default="trajectory")
    w.add_argument("--out")

    sp = add("spoof", cmd_spoof, "bipartition spoofer samples and their XEB")
    sp.add_argument("--circuit", required=True)
    sp.add_argument("--block", type=parse_int_list, help="qubits of the first block (default first half)")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--out")

    e = add("echo", cmd_echo, "Loschmidt echo C then C-dagger")
    e.add_argument("--circuit", required=True)
    e.add_argument("--eps", type=float, default=0.0)
    e.add_argument("--traj", type=int, default=200)

    ex = add("extrapolate", cmd_extrapolate, "extrapolate ln F across system sizes")
    ex.add_argument("--sizes", type=parse_int_list, default=[6, 8, 10])
    ex.add_argument("--n", type=int, default=12, help="target size")
    ex.add_argument("--depth", type=int, default=12, help="layers")
    ex.add_argument("--eps", type=float, default=0.01)
    ex.add_argument("--traj", type=int, default=500)

    v = add("verify", cmd_verify, "verification schemes")
    v.add_argument("scheme", choices=["bell", "graph", "planted"])
    v.add_argument("--circuit")
    v.add_argument("--input", help="sample file (planted)")
    v.add_argument("--key", help="secret key file (planted)")
    v.add_argument("--threshold", type=float, help="override the bias threshold (planted)")
    v.add_argument("--eps", type=float, default=0.0)
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--n", type=int)
    v.add_argument("--edges", type=parse_edges)
    v.add_argument("--angles", type=lambda s: [parse_angle(t) for t in s.split(",")])
    v.add_argument("--stabilizers", type=int, default=200)
    v.add_argument("--shots", type=int, default=50)
    v.add_argument("--out")

    sv = add("serve", cmd_serve, "run a prover")
    sv.add_argument("--endpoint", default="127.0.0.1:7878")
    sv.add_argument("--strategy", choices=STRATEGIES, default="honest-simulator")
    sv.add_argument("--eps", type=float, default=0.0)
    sv.add_argument("--traj", type=int, default=0)
    sv.add_argument("--max-sessions", type=int)

    ch = add("challenge", cmd_challenge, "challenge a prover with planted-secret circuits")
    ch.add_argument("--endpoint", default="127.0.0.1:7878")
    ch.add_argument("--n", type=int, default=10)
    ch.add_argument("--circuits", type=int, default=5)
    ch.add_argument("--samples", type=int, default=10_000)
    ch.add_argument("--threshold", type=float, default=2 / 3, help="fraction of circuits that must pass")
    ch.add_argument("--timeout", type=float, default=60.0)
    return p


def _validate(p: argparse.ArgumentParser, args) -> None:
    for name in ("samples", "traj", "circuits", "stabilizers", "shots", "n", "depth"):
        val = getattr(args, name, None)
        floor = 0 if name == "traj" else 1
        if isinstance(val, int) and val < floor:
            p.error(f"--{name} must be >= {floor}")
    eps = getattr(args, "eps", None)
    for e in eps if isinstance(eps, list) else [eps]:
        if e is not None and not 0.0 <= e <= 1.0:
            p.error("--eps must lie in [0, 1]")
    if args.command == "verify":
        need = {"bell": ["circuit"], "graph": ["n", "edges"], "planted": ["key", "input"]}[args.scheme]
        for name in need:
            if getattr(args, name) is None:
                p.error(f"verify {args.scheme} needs --{name}")
    if args.command == "sweep" and args.traj < 2 and args.engine == "trajectory":
        p.error("--traj must be >= 2 for a trajectory sweep")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    p = build_parser()
    args = p.parse_args(argv)
    args.argv = argv
    _validate(p, args)
    try:
        return args.func(args)
    except UsageError as e:
        p.error(str(e))
    except ProtocolError as e:
        print(f"rcslab: protocol error {e.code}: {e}", file=sys.stderr)
        return e.code
    except (ResourceLimitError, CircuitError, ParseError, DegenerateFitError,
            IndeterminateResultError, ValueError) as e:
        print(f"rcslab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return 0  # unreachable; p.error exits


if __name__ == "__main__":
    sys.exit(main())
