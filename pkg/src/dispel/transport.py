"""TCP deployment: a name registry and peer-to-peer line connections.

The registry only resolves names; agent traffic goes directly between peers
over one connection per ordered pair. Both use the line format of
:mod:`dispel.protocol`.

Registry exchange (one request line, one reply line)::

    V1|REG|A|*|0|127.0.0.1;7001      ->  V1|ADDR|A|A|0|127.0.0.1;7001
    V1|LOOKUP|B|*|0|A                 ->  V1|ADDR|A|B|0|127.0.0.1;7001
                                          or V1|NOTFOUND|A|*|0|
    duplicate REG of a live name      ->  V1|NOTFOUND|A|dup|0|
"""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .model import AgentConfig, parse_hostport
from .protocol import BROADCAST, Kind, Message, ProtocolError, decode, encode

log = logging.getLogger(__name__)

CONNECT_TIMEOUT_S = 1.0
SEND_RETRIES = 3
OUTBOX_LIMIT = 10_000


class TransportError(RuntimeError):
    pass


class RegistryUnavailable(TransportError):
    pass


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    host: str
    port: int


def _reachable(host: str, port: int, timeout: float = 0.3) -> bool:
    try:
        with socket.create_connection((host, port), timeout=timeout):
            return True
    except OSError:
        return False


class _RegistryHandler(socketserver.StreamRequestHandler):
    server: "RegistryServer"

    def handle(self) -> None:
        for raw in self.rfile:
            try:
                msg = decode(raw)
            except ProtocolError as exc:
                log.warning("registry: malformed request from %s: %s", self.client_address, exc)
                continue
            reply = self.server.answer(msg)
            if reply is not None:
                self.wfile.write(encode(reply))
                self.wfile.flush()


class RegistryServer(socketserver.ThreadingTCPServer):
    """Name registry. ``serve_forever`` runs it; ``shutdown`` stops it."""

    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, listen_addr: tuple[str, int]):
        self.entries: dict[str, RegistryEntry] = {}
        self._lock = threading.Lock()
        super().__init__(listen_addr, _RegistryHandler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def answer(self, msg: Message) -> Message | None:
        if msg.kind is Kind.REG:
            host, port = msg.address
            return self.register(RegistryEntry(msg.sender, host, port))
        if msg.kind is Kind.LOOKUP:
            target = msg.payload[0]
            with self._lock:
                entry = self.entries.get(target)
            if entry is None:
                return Message(Kind.NOTFOUND, target, BROADCAST, 0)
            return Message(Kind.ADDR, target, msg.sender, 0, (entry.host, str(entry.port)))
        log.warning("registry: ignoring %s record from %s", msg.kind.value, msg.sender)
        return None

    def register(self, entry: RegistryEntry) -> Message:
        with self._lock:
            old = self.entries.get(entry.name)
        if old is not None and (old.host, old.port) != (entry.host, entry.port):
            # a name is only taken over once its previous holder has gone away
            if _reachable(old.host, old.port):
                log.warning("registry: rejecting duplicate registration of %s", entry.name)
                return Message(Kind.NOTFOUND, entry.name, "dup", 0)
        with self._lock:
            self.entries[entry.name] = entry
        log.info("registry: %s at %s:%d", entry.name, entry.host, entry.port)
        return Message(Kind.ADDR, entry.name, entry.name, 0, (entry.host, str(entry.port)))


def registry_serve(listen_addr: str | tuple[str, int]) -> RegistryServer:
    """Bind a registry and return it; the caller runs ``serve_forever``.

    Raises ``OSError`` when the address cannot be bound.
    """
    if isinstance(listen_addr, str):
        listen_addr = parse_hostport(listen_addr)
    return RegistryServer(listen_addr)


def registry_request(registry: tuple[str, int], msg: Message, timeout: float = 2.0) -> Message:
    """Send one record to the registry and return its reply."""
    try:
        with socket.create_connection(registry, timeout=timeout) as sock:
            sock.sendall(encode(msg))
            with sock.makefile("rb") as f:
                line = f.readline()
    except OSError as exc:
        raise RegistryUnavailable(
            f"cannot reach the registry at {registry[0]}:{registry[1]} ({exc}); "
            "start it first with 'dispel registry --listen HOST:PORT'"
        ) from None
    if not line:
        raise RegistryUnavailable(f"registry at {registry[0]}:{registry[1]} closed the connection")
    return decode(line)


class LinkState(Enum):
    UNCONNECTED = "unconnected"
    CONNECTED = "connected"
    FAILED = "failed"


@dataclass
class PeerEndpoint:
    name: str
    host: str
    port: int
    state: LinkState = LinkState.UNCONNECTED
    resolved_at: float = field(default_factory=time.monotonic)
    failures: int = 0


class _PeerLink:
    """Outgoing connection to one peer, written by its own thread."""

    def __init__(self, endpoint: PeerEndpoint):
        self.endpoint = endpoint
        self.outbox: queue.Queue[bytes | None] = queue.Queue(OUTBOX_LIMIT)
        self.sock: socket.socket | None = None
        self.thread = threading.Thread(target=self._run, name=f"link-{endpoint.name}", daemon=True)
        self.thread.start()

    def _connect(self) -> socket.socket:
        ep = self.endpoint
        sock = socket.create_connection((ep.host, ep.port), timeout=CONNECT_TIMEOUT_S)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        return sock

    def _write(self, line: bytes) -> bool:
        ep = self.endpoint
        for attempt in range(SEND_RETRIES):
            try:
                if self.sock is None:
                    self.sock = self._connect()
                    ep.state = LinkState.CONNECTED
                self.sock.sendall(line)
                return True
            except OSError as exc:
                log.debug("send to %s failed (attempt %d): %s", ep.name, attempt + 1, exc)
                self._close()
                time.sleep(0.05 * 2**attempt)
        ep.state = LinkState.FAILED
        ep.failures += 1
        log.warning("peer %s unreachable at %s:%d", ep.name, ep.host, ep.port)
        return False

    def _close(self) -> None:
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
            self.sock = None

    def _run(self) -> None:
        while True:
            line = self.outbox.get()
            if line is None:
                break
            self._write(line)
        self._close()

    def stop(self, timeout: float) -> None:
        try:
            self.outbox.put(None, timeout=timeout)
        except queue.Full:
            pass
        self.thread.join(timeout)


class _InboundHandler(socketserver.StreamRequestHandler):
    server: "_InboundServer"

    def handle(self) -> None:
        for raw in self.rfile:
            try:
                msg = decode(raw)
            except ProtocolError as exc:
                self.server.malformed += 1
                log.debug("dropping malformed line: %s", exc)
                continue
            self.server.inbox.put(msg)


class _InboundServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr: tuple[str, int], inbox: queue.Queue):
        self.inbox = inbox
        self.malformed = 0
        super().__init__(addr, _InboundHandler)


class PeerTransport:
    """Inbound listener plus cached outgoing links, for one agent.

    Background threads accept connections and read lines into a queue;
    the engine thread only calls :meth:`send` and :meth:`receive_until`.
    """

    def __init__(self, name: str, listen_addr: str | tuple[str, int]):
        if isinstance(listen_addr, str):
            listen_addr = parse_hostport(listen_addr)
        self.name = name
        self.inbox: queue.Queue[Message] = queue.Queue()
        self._server = _InboundServer(listen_addr, self.inbox)
        self._thread = threading.Thread(
            target=self._server.serve_forever, args=(0.05,), name=f"listen-{name}", daemon=True
        )
        self._thread.start()
        self.endpoints: dict[str, PeerEndpoint] = {}
        self._links: dict[str, _PeerLink] = {}
        self.send_failures = 0

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def malformed(self) -> int:
        return self._server.malformed

    def add_endpoint(self, endpoint: PeerEndpoint) -> None:
        self.endpoints[endpoint.name] = endpoint

    def send(self, msg: Message) -> bool:
        """Queue ``msg`` for its recipient. Never blocks; False means not delivered."""
        ep = self.endpoints.get(msg.recipient)
        if ep is None:
            self.send_failures += 1
            log.debug("no endpoint for %s", msg.recipient)
            return False
        link = self._links.get(ep.name)
        if link is None:
            link = self._links[ep.name] = _PeerLink(ep)
        try:
            link.outbox.put_nowait(encode(msg))
        except queue.Full:
            self.send_failures += 1
            return False
        if ep.state is LinkState.FAILED:
            # still queued so the link can recover, but report the known failure
            self.send_failures += 1
            return False
        return True

    def receive_until(
        self, deadline: float, done: Callable[[list[Message]], bool] | None = None
    ) -> list[Message]:
        """Messages that arrive before ``deadline`` (monotonic seconds).

        Returns early once ``done(messages)`` is true.
        """
        out: list[Message] = []
        while True:
            while True:
                try:
                    out.append(self.inbox.get_nowait())
                except queue.Empty:
                    break
            if done is not None and done(out):
                return out
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return out
            try:
                out.append(self.inbox.get(timeout=remaining))
            except queue.Empty:
                return out

    def close(self, flush_timeout: float = 2.0) -> None:
        end = time.monotonic() + flush_timeout
        for link in self._links.values():
            link.stop(max(0.0, end - time.monotonic()))
        self._server.shutdown()
        self._server.server_close()


def register_and_resolve(
    config: AgentConfig,
    listen: tuple[str, int],
    deadline: float,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, PeerEndpoint]:
    """Register ``config.name`` at ``listen`` and resolve every neighbour.

    Lookups are retried with backoff until ``deadline`` (monotonic seconds).
    Neighbours still unknown then are left out of the result. Raises
    :class:`RegistryUnavailable` if the registry cannot be reached at all and
    :class:`TransportError` if the name is already held by a live agent.
    """
    registry = parse_hostport(config.registry_addr)
    host, port = listen
    reply = registry_request(registry, Message(Kind.REG, config.name, BROADCAST, 0, (host, str(port))))
    if reply.kind is Kind.NOTFOUND and reply.recipient == "dup":
        raise TransportError(f"name {config.name!r} is already registered by a running agent")
    if reply.kind is not Kind.ADDR:
        raise TransportError(f"unexpected registry reply {reply.kind.value}")

    pending = list(config.neighbours)
    found: dict[str, PeerEndpoint] = {}
    delay = 0.05
    while pending:
        for name in list(pending):
            try:
                answer = registry_request(registry, Message(Kind.LOOKUP, config.name, BROADCAST, 0, (name,)))
            except RegistryUnavailable:
                if found or time.monotonic() < deadline:
                    answer = None
                else:
                    raise
            if answer is not None and answer.kind is Kind.ADDR:
                h, p = answer.address
                found[name] = PeerEndpoint(name, h, p)
                pending.remove(name)
        if not pending or time.monotonic() >= deadline:
            break
        sleep(min(delay, max(0.0, deadline - time.monotonic())))
        delay = min(delay * 2, 1.0)
    for name in pending:
        log.warning("%s: neighbour %s not registered by the startup deadline", config.name, name)
    return found
