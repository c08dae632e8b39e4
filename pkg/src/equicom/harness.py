"""Scenario runner, golden-report diffing, and the bench metrics.

Scenario node ids are labels (``0`` is allowed); the communicator for label
``k`` runs with node id ``k + 1`` since node id 0 is reserved.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from equicom.communicator import Communicator, CommunicatorConfig, Delivery, Message
from equicom.membership import MembershipConfig
from equicom.routing import InvalidDirective, Mechanism, RoutingDirective
from equicom.transport import SimNet, TcpTransport

log = logging.getLogger(__name__)

BUNDLED = Path(__file__).parent / "scenarios"

# Socket count for the FIG2 topology built from Mangos pattern sockets, as
# published in the comparison this package is measured against (not measured here).
MANGOS_FIG2_SOCKETS = 12


class ParseError(Exception):
    pass


class ValidationError(Exception):
    pass


class ConvergenceTimeout(Exception):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: int
    subscribe: tuple[str, ...] = ()


@dataclass(frozen=True)
class AwaitConvergence:
    pass


@dataclass(frozen=True)
class Quiesce:
    pass


@dataclass(frozen=True)
class SendEvent:
    node: int
    directives: tuple[RoutingDirective, ...]
    payload: str


Event = Union[AwaitConvergence, Quiesce, SendEvent]


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    events: tuple = ()
    name: str = ""

    @property
    def sends(self) -> list[SendEvent]:
        return [e for e in self.events if isinstance(e, SendEvent)]


@dataclass
class GoldenReport:
    deliveries: dict[str, list[dict]]
    diagnostics: dict[str, dict] = field(default_factory=dict)
    scenario: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {"scenario": self.scenario, "deliveries": self.deliveries, "diagnostics": self.diagnostics},
            indent=2, sort_keys=True,
        )

    def payloads(self, node) -> list[str]:
        return [d["payload"] for d in self.deliveries.get(str(node), [])]


@dataclass
class MetricsReport:
    mode: str
    object_count: int = 0
    connections_per_window: int = 0
    transfer_ms: dict[str, float] = field(default_factory=dict)
    deliveries: dict[str, int] = field(default_factory=dict)
    baseline: Optional[dict] = None
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def summary(self) -> str:
        if self.mode == "objects":
            line = f"objects: {self.object_count} communicators"
            if self.baseline:
                line += (f" (Mangos baseline for the same scenario: {self.baseline['sockets']} sockets,"
                         f" {self.baseline['source']})")
            return line
        if self.mode == "connections":
            return f"connections: {self.connections_per_window} handshakes in {self.params.get('window_ms')} ms"
        parts = [f"{m}={ms:.1f}ms/{self.deliveries.get(m, 0)}" for m, ms in self.transfer_ms.items()]
        return "transfer: " + " ".join(parts)


# -- loading -----------------------------------------------------------------


def resolve_path(path: Union[str, Path]) -> Path:
    """A filesystem path, or the name of a bundled scenario / golden file."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (BUNDLED / p.name, BUNDLED / f"{p.name}.json"):
        if candidate.exists():
            return candidate
    return p


def _require(obj: dict, key: str, where: str, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ValidationError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise ValidationError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return value


def parse_directive(obj, where: str) -> RoutingDirective:
    mech = _require(obj, "mech", where, str)
    try:
        mechanism = Mechanism.parse(mech)
    except ValueError:
        raise ValidationError(f"{where}.mech: bad mechanism name {mech!r}") from None
    tag = obj.get("tag", "")
    if not isinstance(tag, str):
        raise ValidationError(f"{where}.tag: expected str")
    try:
        return RoutingDirective(mechanism, tag)
    except InvalidDirective as exc:
        raise ValidationError(f"{where}: {exc}") from None


def parse_scenario(doc, name: str = "") -> Scenario:
    if not isinstance(doc, dict):
        raise ValidationError("scenario must be a JSON object")
    raw_nodes = _require(doc, "nodes", "scenario", list)
    nodes = []
    for i, n in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        nid = _require(n, "id", where, int)
        if not 0 <= nid < (1 << 64) - 1:
            raise ValidationError(f"{where}.id: out of range")
        subs = n.get("subscribe", [])
        if not isinstance(subs, list) or not all(isinstance(t, str) for t in subs):
            raise ValidationError(f"{where}.subscribe: expected list of strings")
        nodes.append(NodeSpec(nid, tuple(subs)))
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValidationError("nodes: duplicate node id")

    events: list = []
    for i, ev in enumerate(doc.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(ev, dict) or len(ev) != 1:
            raise ValidationError(f"{where}: expected exactly one of await_convergence, send, quiesce")
        if "await_convergence" in ev:
            events.append(AwaitConvergence())
        elif "quiesce" in ev:
            events.append(Quiesce())
        elif "send" in ev:
            body = ev["send"]
            w = f"{where}.send"
            node = _require(body, "node", w, int)
            if node not in ids:
                raise ValidationError(f"{w}.node: unknown node {node}")
            raw_dirs = _require(body, "directives", w, list)
            if not raw_dirs:
                raise ValidationError(f"{w}.directives: must not be empty")
            dirs = tuple(parse_directive(d, f"{w}.directives[{j}]") for j, d in enumerate(raw_dirs))
            events.append(SendEvent(node, dirs, _require(body, "payload", w, str)))
        else:
            raise ValidationError(f"{where}: unknown event {next(iter(ev))!r}")
    return Scenario(tuple(nodes), tuple(events), name)


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = resolve_path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_scenario(doc, p.stem)


# -- running -----------------------------------------------------------------


def _entry(d: Delivery) -> dict:
    return {"mech": d.mechanism.label, "tag": d.tag, "payload": d.text}


class ScenarioRun:
    """Live communicators for one scenario; drives them over sim or tcp."""

    def __init__(self, scenario: Scenario, seed: int = 0, transport: str = "sim",
                 seed_node: Optional[int] = None, membership: Optional[MembershipConfig] = None,
                 latency: tuple[int, int] = (1, 5), convergence_timeout_ms: int = 60_000):
        if transport not in ("sim", "tcp"):
            raise ValueError(f"unknown transport {transport!r}")
        self.scenario = scenario
        self.kind = transport
        self.net = SimNet(seed, latency) if transport == "sim" else None
        self.membership = membership or MembershipConfig()
        self.convergence_timeout_ms = convergence_timeout_ms
        self.comms: dict[int, Communicator] = {}
        self.received: dict[int, list[Delivery]] = {n.id: [] for n in scenario.nodes}
        self.transports: list = []
        labels = [n.id for n in scenario.nodes]
        if seed_node is None and labels:
            seed_node = labels[0]
        if labels and seed_node not in labels:
            raise ValidationError(f"seed node {seed_node} is not in the scenario")
        order = sorted(scenario.nodes, key=lambda n: (n.id != seed_node, n.id))
        for spec in order:
            self._start_node(spec, None if spec.id == seed_node else self.comms[seed_node].address)

    @property
    def communicators_created(self) -> int:
        return len(self.comms)

    @property
    def listen_calls(self) -> int:
        if self.net is not None:
            return len(self.net.listen_calls)
        return sum(len(t.listen_calls) for t in self.transports)

    def _start_node(self, spec: NodeSpec, bootstrap: Optional[str]) -> None:
        if self.net is not None:
            transport, listen = self.net, f"sim:{spec.id}"
        else:
            transport, listen = TcpTransport(), "tcp:127.0.0.1:0"
            self.transports.append(transport)
        cfg = CommunicatorConfig(
            listen=listen,
            node_id=spec.id + 1,
            bootstrap=(bootstrap,) if bootstrap else (),
            membership=self.membership,
        )
        comm = Communicator(cfg, transport)
        for tag in spec.subscribe:
            comm.subscribe(tag)
        self.comms[spec.id] = comm

    def converged(self) -> bool:
        everyone = {c.id: c.subscriptions for c in self.comms.values()}
        for comm in self.comms.values():
            others = {i for i in everyone if i != comm.id}
            table = comm.peers()
            if set(table) != others or comm.connected() != others:
                return False
            if any(rec.subscriptions != everyone[i] for i, rec in table.items()):
                return False
        return True

    def await_convergence(self) -> None:
        if self.net is not None:
            ok = self.net.run_until(self.converged, self.convergence_timeout_ms)
        else:
            deadline = time.monotonic() + self.convergence_timeout_ms / 1000
            while not (ok := self.converged()) and time.monotonic() < deadline:
                time.sleep(0.01)
        if not ok:
            raise ConvergenceTimeout(f"overlay did not form within {self.convergence_timeout_ms} ms")

    def drain(self) -> int:
        got = 0
        for label, comm in self.comms.items():
            while (d := comm.try_recv()) is not None:
                self.received[label].append(d)
                got += 1
        return got

    def quiesce(self, idle_ms: int = 300, limit_s: float = 10.0) -> None:
        if self.net is not None:
            while True:
                self.net.settle()
                if not self.drain() and self.net.in_flight == 0:
                    return
        deadline = time.monotonic() + limit_s
        quiet_since = time.monotonic()
        while time.monotonic() < deadline:
            if self.drain():
                quiet_since = time.monotonic()
            elif (time.monotonic() - quiet_since) * 1000 >= idle_ms:
                return
            time.sleep(0.01)

    def send(self, ev: SendEvent):
        receipt = self.comms[ev.node].send(Message(ev.payload, ev.directives))
        self.drain()
        return receipt

    def play(self) -> "GoldenReport":
        for ev in self.scenario.events:
            if isinstance(ev, AwaitConvergence):
                self.await_convergence()
            elif isinstance(ev, Quiesce):
                self.quiesce()
            else:
                self.send(ev)
        self.quiesce()
        return self.report()

    def report(self) -> GoldenReport:
        label_of = {c.id: label for label, c in self.comms.items()}
        deliveries = {}
        for label in sorted(self.received):
            ds = sorted(self.received[label], key=lambda d: label_of.get(d.sender, d.sender))
            deliveries[str(label)] = [_entry(d) for d in ds]
        diagnostics = {str(label): asdict(self.comms[label].diagnostics()) for label in sorted(self.comms)}
        return GoldenReport(deliveries, diagnostics, self.scenario.name)

    def close(self) -> None:
        for comm in self.comms.values():
            comm.shutdown()
        if self.net is not None:
            self.net.settle()

    def __enter__(self) -> "ScenarioRun":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_scenario(scenario: Scenario, seed: int = 0, transport: str = "sim", **kwargs) -> GoldenReport:
    with ScenarioRun(scenario, seed, transport, **kwargs) as run:
        return run.play()


# -- golden diffing ----------------------------------------------------------


@dataclass(frozen=True)
class DiffResult:
    ok: bool
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def load_golden(path: Union[str, Path]) -> dict:
    p = resolve_path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("deliveries"), dict):
        raise ParseError(f"{p}: missing 'deliveries' object")
    return doc


def diff_golden(actual: GoldenReport, expected: Union[str, Path, dict]) -> DiffResult:
    """Compare per-node delivery lists; report the first divergence."""
    doc = expected if isinstance(expected, dict) else load_golden(expected)
    want = doc["deliveries"]
    got = actual.deliveries
    for node in sorted(set(want) | set(got), key=lambda k: (len(k), k)):
        w, g = want.get(node, []), got.get(node, [])
        for i in range(max(len(w), len(g))):
            if i >= len(w):
                return DiffResult(False, f"node {node}: surplus delivery at index {i}: {g[i]}")
            if i >= len(g):
                return DiffResult(False, f"node {node}: missing delivery at index {i}: {w[i]}")
            if w[i] != g[i]:
                return DiffResult(False, f"node {node}, index {i}: expected {w[i]}, got {g[i]}")
    return DiffResult(True)


# -- bench -------------------------------------------------------------------


def _bench_objects(scenario: Scenario, transport: str) -> MetricsReport:
    with ScenarioRun(scenario, 0, transport) as run:
        count = run.communicators_created
    baseline = None
    if scenario.name == "fig2":
        baseline = {"system": "Mangos", "sockets": MANGOS_FIG2_SOCKETS, "source": "published figure, not measured"}
    return MetricsReport("objects", object_count=count, baseline=baseline,
                         params={"scenario": scenario.name, "transport": transport})


def _bench_connections(window_ms: int) -> MetricsReport:
    from equicom.wire import Bye, FrameDecoder, Hello, HelloAck, encode_frame

    listener = Communicator(CommunicatorConfig("tcp:127.0.0.1:0", node_id=1 << 63))
    transport = TcpTransport()
    count = 0
    deadline = time.monotonic() + window_ms / 1000
    try:
        while time.monotonic() < deadline:
            conn = transport.dial(listener.address)
            conn.send_bytes(encode_frame(Hello(count + 1, "tcp:127.0.0.1:1", ())))
            dec = FrameDecoder()
            frames: list = []
            while not frames:
                chunk = conn.recv_bytes()
                if not chunk:
                    break
                frames = dec.feed(chunk)
            if frames and isinstance(frames[0], HelloAck):
                count += 1
            conn.send_bytes(encode_frame(Bye()))
            conn.close()
    finally:
        listener.shutdown()
    return MetricsReport("connections", connections_per_window=count,
                         params={"window_ms": window_ms, "transport": "tcp"})


def _bench_transfer(n: int, transport: str, mechanisms=None) -> MetricsReport:
    plan = {
        Mechanism.PRIVATE: RoutingDirective(Mechanism.PRIVATE, "inbox1"),
        Mechanism.BROADCAST: RoutingDirective(Mechanism.BROADCAST),
        Mechanism.GROUP_BROADCAST: RoutingDirective(Mechanism.GROUP_BROADCAST, "bench"),
        Mechanism.BALANCE: RoutingDirective(Mechanism.BALANCE, "bench"),
    }
    nodes = (NodeSpec(0), NodeSpec(1, ("inbox1", "bench")), NodeSpec(2, ("bench",)), NodeSpec(3, ("bench",)))
    report = MetricsReport("transfer", params={"n": n, "transport": transport})
    for mech in mechanisms or list(plan):
        directive = plan[mech]
        with ScenarioRun(Scenario(nodes, name="transfer"), 0, transport) as run:
            run.await_convergence()
            t0 = time.perf_counter()
            for i in range(n):
                run.comms[0].send(Message(f"m{i}", (directive,)))
            run.quiesce(idle_ms=100)
            elapsed = (time.perf_counter() - t0) * 1000
            report.transfer_ms[mech.label] = round(elapsed, 3)
            report.deliveries[mech.label] = sum(len(v) for v in run.received.values())
    return report


def bench(mode: str, scenario: Optional[Scenario] = None, n: int = 1000, window_ms: int = 1000,
          transport: str = "sim", mechanisms=None) -> MetricsReport:
    if mode == "objects":
        if scenario is None:
            scenario = load_scenario("fig2")
        return _bench_objects(scenario, transport)
    if mode == "connections":
        return _bench_connections(window_ms)
    if mode == "transfer":
        return _bench_transfer(n, transport, mechanisms)
    raise ValueError(f"unknown bench mode {mode!r}")
