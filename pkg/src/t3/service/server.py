"""TCP front end and block ingest loop."""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from pathlib import Path
from typing import Optional, Tuple, Union

from t3.chain.source import FileChainSource
from t3.enclave.attestation import AttestationServer, measure
from t3.enclave.channel import Session
from t3.errors import BadEncoding, T3Error
from t3.service import protocol as P
from t3.store import StoreConfig, TwoTreeStore

log = logging.getLogger(__name__)

SERVICE_FILE = "service.json"


def init_state(chain_dir: Union[str, Path], config: StoreConfig, state_dir: Union[str, Path],
               root_key: bytes, measurement: Optional[bytes] = None,
               seed: Optional[int] = None) -> TwoTreeStore:
    """Replay every available block into a fresh store, sync once, persist."""
    measurement = measurement or measure()
    source = FileChainSource(chain_dir)
    store = TwoTreeStore.create(config, seed=seed)
    top = source.get_block_count()
    for h in range(top + 1):
        try:
            store.ingest_block(source.get_block(h), sync=False)
        except T3Error as e:
            raise type(e)(f"block {h}: {e}") from e
    store.synchronize()
    d = Path(state_dir)
    store.save(d, root_key, measurement)
    (d / SERVICE_FILE).write_text(json.dumps({"chain": str(Path(chain_dir).resolve())}, indent=1))
    return store


def parse_addr(addr: str) -> Tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class _Handler(socketserver.BaseRequestHandler):
    server: "_TCPServer"

    def handle(self) -> None:
        svc = self.server.service
        sock: socket.socket = self.request
        try:
            session = svc.handshake(sock)
            if session is None:
                return
            while True:
                frame = P.recv_frame(sock)
                sock.sendall(svc.handle_frame(session, frame))
        except (P.ConnectionClosed, ConnectionError, OSError):
            pass
        except T3Error as e:  # unrecoverable transport error
            log.info("closing connection: %s", e)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    service: "T3Service"


class T3Service:
    def __init__(self, store: TwoTreeStore, root_key: bytes, measurement: Optional[bytes] = None,
                 readers: int = 4, source: Optional[FileChainSource] = None,
                 state_dir: Optional[Union[str, Path]] = None, poll: float = 1.0):
        self.store = store
        self.root_key = root_key
        self.measurement = measurement or measure()
        self.attestation = AttestationServer(root_key, self.measurement)
        self.readers = threading.BoundedSemaphore(readers)
        self.source = source
        self.state_dir = Path(state_dir) if state_dir else None
        self.poll = poll
        self.resp_size = P.response_size(store.config.max_out)
        self._tcp: Optional[_TCPServer] = None
        self._threads: list = []
        self._stop = threading.Event()
        self.ingest_errors = 0

    # -- per-connection protocol ---------------------------------------------------

    def handshake(self, sock: socket.socket) -> Optional[Session]:
        t, body = P.parse_plain(P.recv_frame(sock))
        try:
            if t != P.ATTEST_REQ or len(body) != 64:
                raise BadEncoding("expected ATTEST_REQ")
            quote, session = self.attestation.respond(body[:32], body[32:])
        except T3Error as e:
            sock.sendall(P.plain_frame(P.ERROR, P.encode_error(e.code)[1:]))
            return None
        sock.sendall(P.plain_frame(P.ATTEST_RESP, quote.encode()))
        return session

    def handle_frame(self, session: Session, frame: bytes) -> bytes:
        try:
            pt = session.unseal(frame)
        except T3Error as e:
            return session.seal(P.encode_error(e.code, self.resp_size))
        try:
            if not pt:
                raise BadEncoding("empty message")
            if pt[0] == P.QUERY:
                return session.seal(self._query(session, pt))
            if pt[0] == P.HEADERS_REQ:
                start = P.decode_headers_req(pt)
                body = b"".join(h.serialize() for h in self.store.chain.headers[start:])
                return session.seal(bytes([P.HEADERS_RESP]) + body)
            raise BadEncoding(f"unknown message type {pt[0]:#04x}")
        except T3Error as e:
            return session.seal(P.encode_error(e.code, self.resp_size))
        except Exception:
            log.exception("internal error")
            return session.seal(P.encode_error(T3Error.code, self.resp_size))

    def _query(self, session: Session, pt: bytes) -> bytes:
        proof, delta = P.decode_query(pt)
        with self.readers:
            resp = self.store.serve_read(proof.pkh, proof, session.session_id, delta)
        return P.encode_response(list(resp.records), resp.interval, resp.height)

    # -- ingest ----------------------------------------------------------------------

    def ingest_once(self) -> int:
        """Pull and apply every new block; returns how many were applied."""
        if self.source is None:
            return 0
        n = 0
        top = self.source.get_block_count()
        while self.store.chain.height < top and not self._stop.is_set():
            h = self.store.chain.height + 1
            try:
                summary = self.store.ingest_block(self.source.get_block(h))
            except T3Error as e:
                self.ingest_errors += 1
                log.error("rejected block %d: %s", h, e)
                break
            n += 1
            st = self.store.stats
            print(f"[t3d] height={h} interval={summary.interval} creates={summary.creates} "
                  f"spends={summary.spends} block_full={summary.block_full} "
                  f"evictions={summary.evictions} reads={st.reads} parked={st.parked_total}",
                  flush=True)
            if self.state_dir is not None:
                self.store.save(self.state_dir, self.root_key, self.measurement)
        return n

    def _ingest_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self.ingest_once()
            except Exception:
                log.exception("ingest loop error")
            self._stop.wait(self.poll)

    # -- lifecycle ---------------------------------------------------------------------

    def start(self, listen: str = "127.0.0.1:0", ingest: bool = True) -> Tuple[str, int]:
        self._tcp = _TCPServer(parse_addr(listen), _Handler)
        self._tcp.service = self
        t = threading.Thread(target=self._tcp.serve_forever, name="t3-acceptor", daemon=True)
        t.start()
        self._threads.append(t)
        self.store.start_evictor()
        if ingest and self.source is not None:
            t = threading.Thread(target=self._ingest_loop, name="t3-ingest", daemon=True)
            t.start()
            self._threads.append(t)
        return self._tcp.server_address[:2]

    def stop(self) -> None:
        self._stop.set()
        if self._tcp is not None:
            self._tcp.shutdown()
            self._tcp.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self.store.stop_evictor()

    def serve_forever(self, listen: str) -> None:
        host, port = self.start(listen)
        print(f"[t3d] listening on {host}:{port}", flush=True)
        try:
            self._stop.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()


def open_service(state_dir: Union[str, Path], root_key: bytes, readers: int = 4,
                 poll: float = 1.0, chain_dir: Optional[Union[str, Path]] = None) -> T3Service:
    d = Path(state_dir)
    measurement = measure()
    store = TwoTreeStore.load(d, root_key, measurement)
    if chain_dir is None and (d / SERVICE_FILE).exists():
        chain_dir = json.loads((d / SERVICE_FILE).read_text()).get("chain")
    source = FileChainSource(chain_dir) if chain_dir else None
    return T3Service(store, root_key, measurement, readers, source, d, poll)
