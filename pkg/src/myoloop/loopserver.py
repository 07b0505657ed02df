"""Live 30 Hz closed-loop engine behind a websocket wire protocol at /ws.

A human (or scripted client) supplies intended DOF values; the server
synthesizes EMG from the surrogate participant, decodes it, and streams
per-tick state frames back. One controlling client at a time; later
connections are read-only observers.

Two logical activities share nothing but queues: the tick loop (sole owner
of the engine state) and connection handling. The tick loop is clocked at
33.3 ms; a trial started with "paced": true instead consumes exactly one
intent message per tick, which lets a scripted client replay a recorded
intent sequence bit-exactly against the batch path.
"""

from __future__ import annotations

import asyncio
import json
import threading

import numpy as np

from .kalman import KalmanParams
from .nnet.models import Decoder
from .synthem import N_DOF, ParticipantModel, SleevePlacement
from .taskbench import (
    OnlineDecodeLoop,
    TICK_RATE_HZ,
    TRIAL_TICKS,
    TargetSpec,
    trial_seeds,
)

TICK_PERIOD_S = 1.0 / TICK_RATE_HZ


class _Trial:
    def __init__(self, spec: TargetSpec, seed: int, paced: bool, pipeline: OnlineDecodeLoop):
        self.spec = spec
        self.seed = seed
        self.paced = paced
        self.pipeline = pipeline
        self.tick = 0
        self.current_run = 0
        self.best_run = 0


class LoopEngine:
    """Socket-free core: one tick = one decode + trial bookkeeping."""

    def __init__(
        self,
        decoder: Decoder,
        participant: ParticipantModel,
        placement: SleevePlacement,
        kalman: KalmanParams | None = None,
        idle_seed: int = 0,
    ):
        self.decoder = decoder
        self.participant = participant
        self.placement = placement
        self.kalman = kalman if kalman is not None else getattr(decoder, "kalman", None)
        self.tick_index = 0
        self.trial: _Trial | None = None
        self._idle = OnlineDecodeLoop(
            decoder, participant, placement, seed=idle_seed, kalman=self.kalman
        )

    def start_trial(self, spec: TargetSpec, seed: int, paced: bool = False):
        _, emg_seed = trial_seeds(seed)
        pipeline = OnlineDecodeLoop(
            self.decoder, self.participant, self.placement, seed=emg_seed, kalman=self.kalman
        )
        self.trial = _Trial(spec, seed, paced, pipeline)

    def stop_trial(self) -> dict | None:
        if self.trial is None:
            return None
        done = self._trial_done_frame(partial=self.trial.tick < TRIAL_TICKS)
        self.trial = None
        return done

    def _trial_done_frame(self, partial: bool) -> dict:
        return {
            "type": "trial_done",
            "hold_duration_s": self.trial.best_run / TICK_RATE_HZ,
            "partial": partial,
        }

    def tick(self, intent: np.ndarray) -> tuple[dict, dict | None]:
        """Advance one tick; returns (state frame, trial_done frame or None)."""
        intent = np.clip(np.asarray(intent, dtype=np.float64), -1.0, 1.0)
        trial = self.trial
        pipeline = trial.pipeline if trial is not None else self._idle
        decoded = pipeline.step(intent)
        self.tick_index += 1

        target = np.zeros(N_DOF)
        in_window = False
        hold_ms = 0.0
        trial_ms = 0.0
        done = None
        if trial is not None:
            target = trial.spec.target
            in_window = bool(np.all(np.abs(decoded - target) <= trial.spec.half_width))
            trial.current_run = trial.current_run + 1 if in_window else 0
            trial.best_run = max(trial.best_run, trial.current_run)
            trial.tick += 1
            hold_ms = trial.current_run / TICK_RATE_HZ * 1000.0
            trial_ms = trial.tick / TICK_RATE_HZ * 1000.0
            if trial.tick >= TRIAL_TICKS:
                done = self._trial_done_frame(partial=False)
                self.trial = None
        state = {
            "type": "state",
            "tick": self.tick_index,
            "decoded": decoded.tolist(),
            "intent": intent.tolist(),
            "target": target.tolist(),
            "in_window": in_window,
            "hold_ms": hold_ms,
            "trial_ms": trial_ms,
        }
        return state, done


def _parse_start_trial(msg: dict) -> tuple[TargetSpec, int, bool]:
    spec = TargetSpec(tuple(msg["selected_dofs"]), np.asarray(msg["target"], dtype=np.float64))
    return spec, int(msg.get("seed", 0)), bool(msg.get("paced", False))


class LoopServer:
    """Websocket front over a LoopEngine; start()/stop() for embedding."""

    def __init__(
        self,
        decoder: Decoder,
        participant: ParticipantModel,
        placement: SleevePlacement,
        port: int = 8765,
        host: str = "127.0.0.1",
        verbose: bool = False,
    ):
        self.engine = LoopEngine(decoder, participant, placement)
        self.requested_port = port
        self.host = host
        self.verbose = verbose
        self.port: int | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._ready = threading.Event()
        self._stop_event: asyncio.Event | None = None
        self._connections: set = set()
        self._controller = None
        self._latest_intent = np.zeros(N_DOF)
        self._paced_queue: asyncio.Queue | None = None

    # -- connection handling ------------------------------------------------

    async def _handler(self, websocket):
        path = getattr(getattr(websocket, "request", None), "path", "/ws")
        if path.split("?")[0] not in ("/ws", "/"):
            await websocket.close(code=4004, reason="unknown path; use /ws")
            return
        role = "controller" if self._controller is None else "observer"
        if role == "controller":
            self._controller = websocket
        self._connections.add(websocket)
        try:
            await websocket.send(
                json.dumps(
                    {
                        "type": "hello",
                        "channels": 32,
                        "tick_hz": TICK_RATE_HZ,
                        "role": role,
                    }
                )
            )
            async for raw in websocket:
                await self._on_message(websocket, raw)
        except Exception:
            pass
        finally:
            self._connections.discard(websocket)
            if self._controller is websocket:
                self._controller = None

    async def _send_error(self, websocket, message: str):
        try:
            await websocket.send(json.dumps({"type": "error", "message": message}))
        except Exception:
            pass

    async def _on_message(self, websocket, raw):
        try:
            msg = json.loads(raw)
            kind = msg.get("type")
        except (json.JSONDecodeError, AttributeError):
            await self._send_error(websocket, "malformed JSON frame")
            return
        if websocket is not self._controller:
            await self._send_error(websocket, "read-only observer; a controller is connected")
            return
        if kind == "intent":
            try:
                intent = np.clip(np.asarray(msg["dof"], dtype=np.float64), -1.0, 1.0)
                if intent.shape != (N_DOF,):
                    raise ValueError
            except (KeyError, TypeError, ValueError):
                await self._send_error(websocket, f"intent needs a {N_DOF}-element dof array")
                return
            self._latest_intent = intent
            if self.engine.trial is not None and self.engine.trial.paced:
                await self._paced_queue.put(intent)
        elif kind == "start_trial":
            try:
                spec, seed, paced = _parse_start_trial(msg)
            except (KeyError, TypeError, ValueError) as exc:
                await self._send_error(websocket, f"bad start_trial: {exc}")
                return
            done = self.engine.stop_trial()
            if done is not None:
                await self._broadcast(done)
            self._drain_paced_queue()
            self.engine.start_trial(spec, seed, paced)
        elif kind == "stop":
            done = self.engine.stop_trial()
            self._drain_paced_queue()
            if done is not None:
                await self._broadcast(done)
        else:
            await self._send_error(websocket, f"unknown message type {kind!r}")

    def _drain_paced_queue(self):
        while self._paced_queue and not self._paced_queue.empty():
            self._paced_queue.get_nowait()

    async def _broadcast(self, frame: dict):
        if not self._connections:
            return
        raw = json.dumps(frame)
        for websocket in list(self._connections):
            try:
                await websocket.send(raw)
            except Exception:
                self._connections.discard(websocket)

    # -- tick loop ------------------------------------------------------------

    async def _tick_loop(self):
        loop = asyncio.get_running_loop()
        deadline = loop.time() + TICK_PERIOD_S
        while True:
            trial = self.engine.trial
            if trial is not None and trial.paced:
                intent = await self._paced_queue.get()
                state, done = self.engine.tick(intent)
                await self._broadcast(state)
                if done is not None:
                    await self._broadcast(done)
                deadline = loop.time() + TICK_PERIOD_S
                continue
            now = loop.time()
            if now < deadline:
                await asyncio.sleep(deadline - now)
            trial = self.engine.trial
            if trial is not None and trial.paced:
                # a paced trial started while this iteration slept: its first
                # tick must come from the paced queue, not the mailbox
                continue
            overrun = loop.time() > deadline + TICK_PERIOD_S
            deadline += TICK_PERIOD_S
            state, done = self.engine.tick(self._latest_intent)
            # on overrun the state still advanced; only the send is skipped
            if not overrun:
                await self._broadcast(state)
            if done is not None:
                await self._broadcast(done)

    async def _run(self):
        import websockets

        self._stop_event = asyncio.Event()
        self._paced_queue = asyncio.Queue()
        async with websockets.serve(self._handler, self.host, self.requested_port) as server:
            self.port = server.sockets[0].getsockname()[1]
            if self.verbose or self.requested_port == 0:
                print(f"listening on ws://{self.host}:{self.port}/ws", flush=True)
            ticker = asyncio.create_task(self._tick_loop())
            self._ready.set()
            try:
                await self._stop_event.wait()
            finally:
                ticker.cancel()

    def start(self, timeout: float = 10.0):
        self._loop = asyncio.new_event_loop()

        def runner():
            asyncio.set_event_loop(self._loop)
            try:
                self._loop.run_until_complete(self._run())
            finally:
                self._loop.close()

        self._thread = threading.Thread(target=runner, daemon=True)
        self._thread.start()
        if not self._ready.wait(timeout):
            raise RuntimeError("loop server failed to start")
        return self

    def stop(self):
        if self._loop and self._stop_event:
            self._loop.call_soon_threadsafe(self._stop_event.set)
        if self._thread:
            self._thread.join(timeout=5)


def serve(
    decoder: Decoder,
    participant: ParticipantModel,
    placement: SleevePlacement,
    port: int = 8765,
    host: str = "127.0.0.1",
    verbose: bool = False,
):
    """Blocking entry point for the CLI; Ctrl-C exits cleanly."""
    server = LoopServer(decoder, participant, placement, port=port, host=host, verbose=verbose)
    server.start()
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
