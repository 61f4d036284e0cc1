"""Wire protocol and connection hub.

Every frame is one UTF-8 JSON object: ``{"v": 1, "type": ..., "seq": ...,
"ts": ..., "payload": {...}}``. Sequence numbers are per connection and per
direction, starting at 1 and gapless. A connection must introduce itself
with ``hello`` before anything else; message kinds are role-gated (only the
operator steers interventions, only the robot reports sensors). Every
accepted non-ack client message is acked; rejected ones get an ``error``
with a machine-readable code and the connection stays open, except a
missing hello, which closes it.

The in-repo simulated robot client stands in for the physical platform:
it connects as the robot, acknowledges behavior batches, records every
command it receives and plays back a scheduled list of sensor events.
"""

from __future__ import annotations

import asyncio
import http
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from websockets.asyncio.client import connect
from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from .behavior import SensorEvent
from .engine import Effect, Engine

PROTOCOL_VERSION = 1
WS_PATH = "/ws"
TOKEN_ENV_VAR = "DYADBOT_TOKEN"

KIND_HELLO = "hello"
KIND_SENSOR_EVENT = "sensor_event"
KIND_BEHAVIOR_COMMAND_BATCH = "behavior_command_batch"
KIND_AUDIO_CHUNK = "audio_chunk"
KIND_SPEAK_DONE = "speak_done"
KIND_TRANSCRIPT_UPDATE = "transcript_update"
KIND_INTERVENTION_COMMAND = "intervention_command"
KIND_STATE_UPDATE = "state_update"
KIND_TIMER_UPDATE = "timer_update"
KIND_PHASE_COMMAND = "phase_command"
KIND_ANNOTATE_SPEAKER = "annotate_speaker"
KIND_ACK = "ack"
KIND_ERROR = "error"

ALL_KINDS = (
    KIND_HELLO,
    KIND_SENSOR_EVENT,
    KIND_BEHAVIOR_COMMAND_BATCH,
    KIND_AUDIO_CHUNK,
    KIND_SPEAK_DONE,
    KIND_TRANSCRIPT_UPDATE,
    KIND_INTERVENTION_COMMAND,
    KIND_STATE_UPDATE,
    KIND_TIMER_UPDATE,
    KIND_PHASE_COMMAND,
    KIND_ANNOTATE_SPEAKER,
    KIND_ACK,
    KIND_ERROR,
)

ROLE_ROBOT = "robot"
ROLE_OPERATOR = "operator"
CLIENT_ROLES = (ROLE_ROBOT, ROLE_OPERATOR)

#: Which client roles may send each kind. Kinds absent here are
#: server-to-client only and are always denied inbound.
CLIENT_SEND_ROLES: dict[str, tuple[str, ...]] = {
    KIND_HELLO: (ROLE_ROBOT, ROLE_OPERATOR),
    KIND_SENSOR_EVENT: (ROLE_ROBOT,),
    KIND_AUDIO_CHUNK: (ROLE_ROBOT,),
    KIND_SPEAK_DONE: (ROLE_ROBOT,),
    KIND_INTERVENTION_COMMAND: (ROLE_OPERATOR,),
    KIND_PHASE_COMMAND: (ROLE_OPERATOR,),
    KIND_ANNOTATE_SPEAKER: (ROLE_OPERATOR,),
    KIND_ACK: (ROLE_ROBOT, ROLE_OPERATOR),
    KIND_ERROR: (ROLE_ROBOT, ROLE_OPERATOR),
}

ERR_BAD_MESSAGE = "bad_message"
ERR_BAD_SEQ = "bad_seq"
ERR_NO_HELLO = "no_hello"
ERR_FORBIDDEN = "forbidden"
ERR_REJECTED = "rejected"


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class Envelope:
    type: str
    seq: int
    ts: int
    payload: dict[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION


def encode(message: Envelope) -> str:
    """One compact JSON object per WebSocket text frame."""
    return json.dumps(
        {"v": message.v, "type": message.type, "seq": message.seq, "ts": message.ts, "payload": message.payload},
        ensure_ascii=False,
        separators=(",", ":"),
    )


def decode(data: str | bytes) -> Envelope:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(ERR_BAD_MESSAGE, f"not UTF-8: {e}") from e
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as e:
        raise ProtocolError(ERR_BAD_MESSAGE, f"not JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(ERR_BAD_MESSAGE, "frame must be a JSON object")
    v = obj.get("v")
    if v != PROTOCOL_VERSION:
        raise ProtocolError(ERR_BAD_MESSAGE, f"unsupported protocol version {v!r}")
    kind = obj.get("type")
    if kind not in ALL_KINDS:
        raise ProtocolError(ERR_BAD_MESSAGE, f"unknown type {kind!r}")
    seq = obj.get("seq")
    ts = obj.get("ts")
    if not isinstance(seq, int) or seq < 1:
        raise ProtocolError(ERR_BAD_MESSAGE, f"seq must be a positive integer, got {seq!r}")
    if not isinstance(ts, int):
        raise ProtocolError(ERR_BAD_MESSAGE, f"ts must be an integer, got {ts!r}")
    payload = obj.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError(ERR_BAD_MESSAGE, "payload must be an object")
    if kind == KIND_HELLO and payload.get("role") not in CLIENT_ROLES:
        raise ProtocolError(ERR_BAD_MESSAGE, f"hello role must be one of {CLIENT_ROLES}")
    return Envelope(type=kind, seq=seq, ts=ts, payload=payload, v=v)


def authorize(role: Optional[str], kind: str) -> bool:
    """Role gate for client-to-server messages. Requires a completed hello."""
    if role is None:
        return kind == KIND_HELLO
    return role in CLIENT_SEND_ROLES.get(kind, ())


class _Connection:
    def __init__(self, ws, conn_id: int):
        self.ws = ws
        self.id = conn_id
        self.role: Optional[str] = None
        self.last_seq_in = 0
        self.seq_out = 0
        self.send_lock = asyncio.Lock()

    async def send(self, kind: str, payload: dict[str, Any], ts: int) -> None:
        async with self.send_lock:
            self.seq_out += 1
            env = Envelope(type=kind, seq=self.seq_out, ts=ts, payload=payload)
        try:
            await self.ws.send(encode(env))
        except ConnectionClosed:
            pass


class GatewayServer:
    """WebSocket hub wiring connections to one session engine.

    One reader task per connection; all inbound application messages funnel
    into a single ordered queue consumed by the engine worker, which also
    fires the engine's internal deadlines. ``time_scale`` compresses session
    time relative to wall time (for fast tests).
    """

    def __init__(
        self,
        engine: Engine,
        host: str = "127.0.0.1",
        port: int = 0,
        token: Optional[str] = None,
        time_scale: float = 1.0,
    ):
        self.engine = engine
        self.host = host
        self.port = port
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self.time_scale = time_scale
        self._server = None
        self._worker: Optional[asyncio.Task] = None
        self._queue: asyncio.Queue = asyncio.Queue()
        self._connections: dict[int, _Connection] = {}
        self._next_conn_id = 1
        self._t0: Optional[float] = None

    # ------------------------------------------------------------- lifecycle

    async def start(self) -> None:
        self._t0 = time.monotonic()
        self._server = await serve(
            self._handle, self.host, self.port, process_request=self._process_request
        )
        self.port = self._server.sockets[0].getsockname()[1]
        self._worker = asyncio.create_task(self._engine_worker())

    async def stop(self) -> None:
        if self._worker:
            self._worker.cancel()
            try:
                await self._worker
            except asyncio.CancelledError:
                pass
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}{WS_PATH}"

    def now_ms(self) -> int:
        assert self._t0 is not None
        return int((time.monotonic() - self._t0) * 1000.0 * self.time_scale)

    # --------------------------------------------------------------- serving

    def _process_request(self, connection, request):
        path = request.path.split("?", 1)[0]
        if path != WS_PATH:
            return connection.respond(http.HTTPStatus.NOT_FOUND, "not found\n")
        if self.token:
            query = request.path.partition("?")[2]
            params = dict(p.split("=", 1) for p in query.split("&") if "=" in p)
            auth_header = request.headers.get("Authorization", "")
            bearer = auth_header.removeprefix("Bearer ").strip()
            if params.get("token") != self.token and bearer != self.token:
                return connection.respond(http.HTTPStatus.UNAUTHORIZED, "bad token\n")
        return None

    async def _handle(self, ws) -> None:
        conn = _Connection(ws, self._next_conn_id)
        self._next_conn_id += 1
        self._connections[conn.id] = conn
        try:
            async for raw in ws:
                try:
                    env = decode(raw)
                except ProtocolError as e:
                    await conn.send(KIND_ERROR, {"code": e.code, "detail": e.detail}, self.now_ms())
                    continue
                if env.seq != conn.last_seq_in + 1:
                    await conn.send(
                        KIND_ERROR,
                        {"code": ERR_BAD_SEQ, "detail": f"expected seq {conn.last_seq_in + 1}, got {env.seq}"},
                        self.now_ms(),
                    )
                    continue
                conn.last_seq_in = env.seq

                if conn.role is None and env.type != KIND_HELLO:
                    await conn.send(
                        KIND_ERROR, {"code": ERR_NO_HELLO, "detail": "hello required first"}, self.now_ms()
                    )
                    await ws.close(code=4401, reason="no hello")
                    break
                if env.type == KIND_HELLO:
                    if conn.role is not None:
                        await conn.send(
                            KIND_ERROR, {"code": ERR_BAD_MESSAGE, "detail": "duplicate hello"}, self.now_ms()
                        )
                        continue
                    conn.role = env.payload["role"]
                    await conn.send(KIND_ACK, {"seq": env.seq}, self.now_ms())
                    await self._resync(conn)
                    continue
                if not authorize(conn.role, env.type):
                    await conn.send(
                        KIND_ERROR,
                        {"code": ERR_FORBIDDEN, "detail": f"role {conn.role} may not send {env.type}"},
                        self.now_ms(),
                    )
                    continue
                if env.type in (KIND_ACK, KIND_ERROR):
                    continue  # client acks and error reports need no response
                await self._queue.put((conn, env))
        finally:
            self._connections.pop(conn.id, None)

    async def _resync(self, conn: _Connection) -> None:
        """Push the full current state to a newly-identified connection."""
        now = self.now_ms()
        await conn.send(KIND_STATE_UPDATE, self.engine.state_payload(), now)
        if self.engine.timer is not None:
            await conn.send(
                KIND_TIMER_UPDATE,
                {"remaining_ms": self.engine.timer.remaining(self.engine.now), "paused": self.engine.timer.paused},
                now,
            )
        for entry_id in sorted(self.engine.transcript):
            await conn.send(
                KIND_TRANSCRIPT_UPDATE, {"entry": self.engine.transcript[entry_id].to_dict()}, now
            )

    # ---------------------------------------------------------- engine worker

    async def _engine_worker(self) -> None:
        while True:
            now = self.now_ms()
            deadline = self.engine.next_deadline()
            timeout: Optional[float] = None
            if deadline is not None:
                timeout = max(0.0, (deadline - now) / 1000.0 / self.time_scale)
            try:
                if timeout is None:
                    item = await self._queue.get()
                else:
                    item = await asyncio.wait_for(self._queue.get(), timeout)
            except asyncio.TimeoutError:
                self.engine.advance_to(max(self.now_ms(), deadline or 0))
                await self._fan_out(self.engine.drain_effects())
                continue
            conn, env = item
            now = max(self.now_ms(), self.engine.now)
            try:
                effects = self._apply(conn, env, now)
            except Exception as e:  # bad payloads must not kill the session
                await conn.send(KIND_ERROR, {"code": ERR_REJECTED, "detail": str(e)}, self.now_ms())
                continue
            # engine warnings addressed to the sender replace the ack
            to_sender = [e for e in effects if e.target == "sender"]
            if to_sender:
                for effect in to_sender:
                    await conn.send(effect.kind, effect.payload, self.now_ms())
            else:
                await conn.send(KIND_ACK, {"seq": env.seq}, self.now_ms())
            await self._fan_out([e for e in effects if e.target != "sender"])

    def _apply(self, conn: _Connection, env: Envelope, now: int) -> list[Effect]:
        engine = self.engine
        p = env.payload
        if env.type == KIND_INTERVENTION_COMMAND:
            if "reassign_addressee" in p:
                return engine.operator_reassign_addressee(now, int(p["reassign_addressee"]))
            command = p["command"]
            if command == "end":
                return engine.operator_end(now)
            return engine.operator_trigger(now, command)
        if env.type == KIND_PHASE_COMMAND:
            if not p.get("advance"):
                raise ValueError("phase_command supports only {advance: true}")
            return engine.operator_advance_phase(now)
        if env.type == KIND_ANNOTATE_SPEAKER:
            return engine.operator_annotate(now, int(p["entry_id"]), str(p["role"]))
        if env.type == KIND_SENSOR_EVENT:
            return engine.sensor_event(now, SensorEvent.from_dict(p))
        if env.type == KIND_AUDIO_CHUNK:
            from .backends import b64_to_pcm

            return engine.audio_chunk(now, b64_to_pcm(p["pcm_b64"]), channel=int(p.get("channel", 0)))
        if env.type == KIND_SPEAK_DONE:
            return engine.speak_done(now)
        raise ValueError(f"unroutable message type {env.type}")

    async def _fan_out(self, effects: list[Effect]) -> None:
        now = self.now_ms()
        for effect in effects:
            for conn in list(self._connections.values()):
                if conn.role is None:
                    continue
                if effect.target == "robot" and conn.role != ROLE_ROBOT:
                    continue
                if effect.target == "operators" and conn.role != ROLE_OPERATOR:
                    continue
                await conn.send(effect.kind, effect.payload, now)


# --------------------------------------------------------------- robot client


class ScheduleError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"schedule line {line_number}: {message}")
        self.line_number = line_number


def load_sensor_schedule(path: str) -> list[tuple[int, SensorEvent]]:
    """JSONL of {at_ms, kind, region?|bearing_deg?}; errors carry line numbers."""
    out: list[tuple[int, SensorEvent]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                d = json.loads(stripped)
                at = int(d["at_ms"])
                event = SensorEvent.from_dict({**d, "ts": at})
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ScheduleError(line_number, str(e)) from e
            out.append((at, event))
    out.sort(key=lambda pair: pair[0])
    return out


class SimulatedRobot:
    """Stand-in robot client: scheduled sensors out, commands logged in."""

    def __init__(
        self,
        url: str,
        schedule: Optional[list[tuple[int, SensorEvent]]] = None,
        compression: float = 1.0,
        command_log_path: Optional[str] = None,
        token: Optional[str] = None,
    ):
        self.url = url
        self.schedule = schedule or []
        self.compression = compression
        self.command_log_path = command_log_path
        self.token = token
        self.received: list[Envelope] = []
        self._seq = 0
        self._log_fh = None

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    async def run(self) -> None:
        url = self.url
        if self.token:
            sep = "&" if "?" in url else "?"
            url = f"{url}{sep}token={self.token}"
        if self.command_log_path:
            Path(self.command_log_path).parent.mkdir(parents=True, exist_ok=True)
            self._log_fh = open(self.command_log_path, "w", encoding="utf-8")
        try:
            async with connect(url) as ws:
                await ws.send(encode(Envelope(KIND_HELLO, self._next_seq(), 0, {"role": ROLE_ROBOT})))
                reader = asyncio.create_task(self._read_loop(ws))
                t0 = time.monotonic()
                for at_ms, event in self.schedule:
                    target = at_ms / self.compression / 1000.0
                    delay = target - (time.monotonic() - t0)
                    if delay > 0:
                        await asyncio.sleep(delay)
                    await ws.send(
                        encode(Envelope(KIND_SENSOR_EVENT, self._next_seq(), at_ms, event.to_dict()))
                    )
                await reader
        finally:
            if self._log_fh:
                self._log_fh.close()

    async def _read_loop(self, ws) -> None:
        try:
            async for raw in ws:
                env = decode(raw)
                self.received.append(env)
                if self._log_fh and env.type in (KIND_BEHAVIOR_COMMAND_BATCH, KIND_AUDIO_CHUNK):
                    self._log_fh.write(encode(env) + "\n")
                    self._log_fh.flush()
                if env.type == KIND_BEHAVIOR_COMMAND_BATCH:
                    await ws.send(encode(Envelope(KIND_ACK, self._next_seq(), env.ts, {"seq": env.seq})))
        except ConnectionClosed:
            pass
