"""Challenge-response harness between a classical verifier and a sampling prover.

Messages are single-line JSON documents ``{"v", "kind", "session", "payload"}``
over a TCP stream. The verifier keeps every planted secret to itself; only
circuits go out and only an accept/reject summary comes back.
"""
from __future__ import annotations

import json
import logging
import math
import socket
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .circuit import CircuitError, circuit_from_dict, circuit_to_dict
from .simulator import NoiseModel, ResourceLimitError, SampleSet, bitstring_to_int, sample_noisy
from .verification import SecretKey, Verdict, plant_secret_iqp, random_secret, verify_planted
from .xeb import spoof_samples

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
KINDS = ("hello", "challenge", "response", "verdict", "error")
MAX_LINE = 64 << 20

# exit / error codes: 0 accept, 1 reject, >= 2 protocol failure
ACCEPT, REJECT = 0, 1
E_TIMEOUT = 2
E_MALFORMED = 3
E_VERSION = 4
E_BAD_RESPONSE = 5
E_PROVER = 6
E_CONNECT = 7


class ProtocolError(RuntimeError):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


@dataclass
class Message:
    kind: str
    session: str
    payload: dict = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        doc = {"v": self.v, "kind": self.kind, "session": self.session, "payload": self.payload}
        return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode() + b"\n"

    @classmethod
    def decode(cls, line: bytes) -> "Message":
        try:
            doc = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ProtocolError(E_MALFORMED, f"undecodable message: {e}") from None
        if not isinstance(doc, dict) or set(doc) != {"v", "kind", "session", "payload"}:
            raise ProtocolError(E_MALFORMED, "message must have exactly v, kind, session, payload")
        if doc["v"] != PROTOCOL_VERSION:
            raise ProtocolError(E_VERSION, f"protocol version {doc['v']!r} != {PROTOCOL_VERSION}")
        if doc["kind"] not in KINDS:
            raise ProtocolError(E_MALFORMED, f"unknown message kind {doc['kind']!r}")
        if not isinstance(doc["session"], str) or not isinstance(doc["payload"], dict):
            raise ProtocolError(E_MALFORMED, "session must be a string and payload an object")
        msg = cls(doc["kind"], doc["session"], doc["payload"], doc["v"])
        _check_payload(msg)
        return msg


def _require(cond: bool, what: str) -> None:
    if not cond:
        raise ProtocolError(E_MALFORMED, what)


def _check_payload(m: Message) -> None:
    p = m.payload
    if m.kind == "hello":
        _require(isinstance(p.get("role"), str), "hello needs a role")
    elif m.kind == "challenge":
        _require(isinstance(p.get("circuits"), list) and p["circuits"], "challenge needs circuits")
        _require(isinstance(p.get("samples"), int) and p["samples"] > 0, "challenge needs samples > 0")
    elif m.kind == "response":
        sets = p.get("samplesets")
        _require(isinstance(sets, list), "response needs samplesets")
        for s in sets:
            _require(isinstance(s, dict) and isinstance(s.get("n"), int)
                     and isinstance(s.get("outcomes"), list), "malformed sample set")
    elif m.kind == "verdict":
        _require(isinstance(p.get("accepted"), bool), "verdict needs accepted")
    elif m.kind == "error":
        _require(isinstance(p.get("code"), int) and isinstance(p.get("message"), str), "error needs code and message")


class Channel:
    """Line-oriented framing over a socket, optionally recording every byte."""

    def __init__(self, sock: socket.socket, transcript: list[bytes] | None = None):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.transcript = transcript

    def send(self, msg: Message) -> None:
        data = msg.encode()
        if self.transcript is not None:
            self.transcript.append(data)
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise ProtocolError(E_TIMEOUT, f"send failed: {e}") from None

    def recv(self) -> Message:
        try:
            line = self.reader.readline(MAX_LINE + 1)
        except socket.timeout:
            raise ProtocolError(E_TIMEOUT, "timed out waiting for peer") from None
        except OSError as e:
            raise ProtocolError(E_TIMEOUT, f"connection lost: {e}") from None
        if not line:
            raise ProtocolError(E_TIMEOUT, "connection closed by peer")
        if len(line) > MAX_LINE or not line.endswith(b"\n"):
            raise ProtocolError(E_MALFORMED, "oversized or unterminated message")
        if self.transcript is not None:
            self.transcript.append(line)
        return Message.decode(line)

    def close(self) -> None:
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def sampleset_to_payload(ss: SampleSet) -> dict:
    return {"n": ss.n_qubits, "outcomes": ss.bitstrings()}


def sampleset_from_payload(p: dict, n_expected: int) -> SampleSet:
    if p["n"] != n_expected:
        raise ProtocolError(E_BAD_RESPONSE, f"sample width {p['n']} != circuit width {n_expected}")
    try:
        outs = [bitstring_to_int(s, n_expected) for s in p["outcomes"]]
    except (TypeError, ValueError) as e:
        raise ProtocolError(E_BAD_RESPONSE, f"bad outcome: {e}") from None
    return SampleSet(n_expected, outs)


# ------------------------------------------------------------------ prover

STRATEGIES = ("honest-simulator", "spoofer-bipartition", "uniform-random")


@dataclass(frozen=True)
class ProverConfig:
    strategy: str = "honest-simulator"
    eps: float = 0.0
    trajectories: int = 0  # honest: trajectories per challenge circuit; 0 = one per sample
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        if self.trajectories < 0:
            raise ValueError("trajectories must be >= 0")


def prover_samples(config: ProverConfig, circuit, k: int, rng: np.random.Generator) -> SampleSet:
    n = circuit.n_qubits
    if config.strategy == "uniform-random":
        return SampleSet(n, rng.integers(0, 1 << n, size=k, dtype=np.int64))
    if config.strategy == "spoofer-bipartition":
        return spoof_samples(circuit, range(n // 2), k, rng)
    shots = 1 if config.trajectories == 0 else max(1, math.ceil(k / config.trajectories))
    return sample_noisy(circuit, NoiseModel(config.eps), k, rng, shots_per_traj=shots)


def handle_session(ch: Channel, config: ProverConfig, rng: np.random.Generator) -> None:
    """Answer one verifier session on an open channel."""
    hello = ch.recv()
    if hello.kind != "hello":
        raise ProtocolError(E_MALFORMED, f"expected hello, got {hello.kind}")
    session = hello.session
    ch.send(Message("hello", session, {"role": "prover", "strategy": config.strategy}))
    msg = ch.recv()
    if msg.kind != "challenge":
        raise ProtocolError(E_MALFORMED, f"expected challenge, got {msg.kind}")
    try:
        circuits = [circuit_from_dict(d) for d in msg.payload["circuits"]]
    except CircuitError as e:
        ch.send(Message("error", session, {"code": E_MALFORMED, "message": str(e)}))
        return
    k = msg.payload["samples"]
    try:
        sets = [sampleset_to_payload(prover_samples(config, c, k, rng)) for c in circuits]
    except ResourceLimitError as e:
        ch.send(Message("error", session, {"code": E_PROVER, "message": str(e)}))
        return
    ch.send(Message("response", session, {"samplesets": sets}))
    try:
        ch.recv()  # verdict or error; the prover only logs it
    except ProtocolError:
        pass


def serve_prover(
    config: ProverConfig,
    endpoint: str,
    max_sessions: int | None = None,
    ready: Callable[[tuple[str, int]], None] | None = None,
    stop: threading.Event | None = None,
    timeout: float = 30.0,
) -> int:
    """Serve sessions one at a time until ``max_sessions`` or ``stop`` is set.

    Session ``i`` draws its randomness from ``SeedSequence([seed, i])``, so a
    prover answers the same sequence of challenges identically. Returns the
    number of sessions handled.
    """
    host, port = parse_endpoint(endpoint)
    srv = socket.create_server((host, port))
    srv.settimeout(0.2)
    if ready is not None:
        ready(srv.getsockname()[:2])
    handled = 0
    try:
        while max_sessions is None or handled < max_sessions:
            if stop is not None and stop.is_set():
                break
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            conn.settimeout(timeout)
            ch = Channel(conn)
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, handled]))
            try:
                handle_session(ch, config, rng)
            except ProtocolError as e:
                log.warning("session %d aborted: %s", handled, e)
            finally:
                ch.close()
            handled += 1
    finally:
        srv.close()
    return handled


# ---------------------------------------------------------------- verifier


def _key_tokens(key: SecretKey):
    return (
        ("secret", json.dumps(key.secret)),
        ("key", key.to_json()),
        ("beta_honest", repr(key.beta_honest)),
        ("threshold", repr(key.threshold)),
    )


def transcript_leaks(transcript: list[bytes], keys: list[SecretKey]) -> list[str]:
    """Secret material visible in a captured session; empty when clean.

    Looks for each key's secret (as a JSON string token), its serialized
    form, ``beta_honest`` and ``threshold``. Two places are exempt because
    n-bit strings turn up there by chance: sample outcomes in responses, and
    the masks of *other* circuits in a challenge (each circuit is scanned
    against its own key only).
    """
    found = []
    by_id = {k.circuit_id: k for k in keys}

    def scan(text, ks, where):
        for key in ks:
            for label, token in _key_tokens(key):
                if token in text:
                    found.append(f"{label} of circuit {key.circuit_id} in {where}")

    for raw in transcript:
        doc = json.loads(raw)
        kind = doc.get("kind")
        payload = doc.get("payload", {})
        if kind == "response":
            payload = {"samplesets": [{k: v for k, v in s.items() if k != "outcomes"}
                                      for s in payload.get("samplesets", [])]}
        elif kind == "challenge":
            for d in payload.get("circuits", []):
                own = by_id.get(circuit_from_dict(d).id)
                if own is not None:
                    scan(json.dumps(d), [own], "its challenge circuit")
            payload = {k: v for k, v in payload.items() if k != "circuits"}
        scan(json.dumps({**doc, "payload": payload}), keys, f"{kind} message")
    return found


@dataclass(frozen=True)
class ChallengeSpec:
    n: int = 10
    count: int = 5
    samples: int = 10_000
    accept_fraction: float = 2 / 3
    n_planted: int = 3
    planted_angle: float = math.pi / 8


@dataclass
class SessionResult:
    verdict: Verdict
    per_circuit: list[Verdict]
    keys: list[SecretKey]
    session: str

    @property
    def exit_code(self) -> int:
        return ACCEPT if self.verdict.accepted else REJECT


def make_challenge(spec: ChallengeSpec, rng: np.random.Generator):
    circuits, keys = [], []
    for _ in range(spec.count):
        c, key = plant_secret_iqp(
            spec.n, random_secret(spec.n, rng), rng,
            n_planted=spec.n_planted, planted_angle=spec.planted_angle,
        )
        circuits.append(c)
        keys.append(key)
    return circuits, keys


def aggregate(per_circuit: list[Verdict], fraction: float) -> Verdict:
    n_ok = sum(v.accepted for v in per_circuit)
    share = n_ok / len(per_circuit)
    return Verdict(
        share >= fraction - 1e-12, share, fraction,
        max(v.p_value for v in per_circuit), sum(v.n_samples for v in per_circuit),
    )


def run_verifier(
    spec: ChallengeSpec,
    endpoint: str,
    rng: np.random.Generator,
    timeout: float = 60.0,
    transcript: list[bytes] | None = None,
) -> SessionResult:
    """Run one challenge session against the prover at ``endpoint``.

    Raises :class:`ProtocolError` (no verdict) on timeouts, malformed or
    version-mismatched messages; a response of the wrong shape is answered
    with an error message before raising.
    """
    circuits, keys = make_challenge(spec, rng)
    session = uuid.UUID(int=int(rng.integers(0, 2**63)) << 64 | int(rng.integers(0, 2**63))).hex
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise ProtocolError(E_CONNECT, f"cannot reach {endpoint}: {e}") from None
    sock.settimeout(timeout)
    ch = Channel(sock, transcript)
    try:
        ch.send(Message("hello", session, {"role": "verifier"}))
        hello = ch.recv()
        if hello.kind != "hello":
            raise ProtocolError(E_MALFORMED, f"expected hello, got {hello.kind}")
        ch.send(Message("challenge", session, {
            "circuits": [circuit_to_dict(c) for c in circuits], "samples": spec.samples,
        }))
        reply = ch.recv()
        if reply.kind == "error":
            raise ProtocolError(E_PROVER, f"prover error {reply.payload['code']}: {reply.payload['message']}")
        if reply.kind != "response":
            raise ProtocolError(E_MALFORMED, f"expected response, got {reply.kind}")
        try:
            sets = reply.payload["samplesets"]
            if len(sets) != len(circuits):
                raise ProtocolError(E_BAD_RESPONSE, f"{len(sets)} sample sets for {len(circuits)} circuits")
            per = []
            for c, key, p in zip(circuits, keys, sets):
                ss = sampleset_from_payload(p, c.n_qubits)
                if len(ss) < max(spec.samples, key.min_samples):
                    raise ProtocolError(E_BAD_RESPONSE, f"only {len(ss)} samples returned")
                per.append(verify_planted(ss, key))
        except ProtocolError as e:
            ch.send(Message("error", session, {"code": e.code, "message": str(e)}))
            raise
        verdict = aggregate(per, spec.accept_fraction)
        ch.send(Message("verdict", session, {
            "accepted": verdict.accepted,
            "n_accepted": sum(v.accepted for v in per),
            "n_circuits": len(per),
        }))
        return SessionResult(verdict, per, keys, session)
    finally:
        ch.close()
