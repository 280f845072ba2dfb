"""Realtime control service.

One WebSocket endpoint drives one synthesis session per connection:
the client sends a start message picking a skeleton and a seed clip,
then the server free-runs the model at the tick rate, applying queued
keyboard-style control events to the predicted direction control each
tick and streaming one frame message per tick.

Wire format (JSON text frames):

  client -> server
    {"kind": "start", "skeleton_id": str, "seed_clip": str, "seed": int?}
    {"kind": "control", "event": "turn_left" | "turn_right" | "faster"
                                 | "slower" | "set_type", "value": int?}
  server -> client
    {"kind": "frame", "t": int, "joints": [[x,y,z] * J],
     "contacts": [bool, bool], "dir_dots": [[x,z] * 6],
     "type": [10 floats], "gap": int?}
    {"kind": "error", "message": str}

Frame t is strictly increasing. When a client reads too slowly the
server drops frames rather than stalling the stepper; the next frame
that does get through carries "gap": <dropped count>. All sessions
share one immutable params dict; each owns its stepper, rng and world
state, so concurrent sessions are independent.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .controls import (
    InteractiveState,
    _from_local,
    control_velocity,
    interactive_update,
    one_hot,
)
from .network import CCNetConfig, receptive_field
from .representation import MotionClip
from .skeleton import fk
from .synthesis import Session, SynthesisError

log = logging.getLogger("ccmotion.server")

FASTER_RATIO = 1.25
SLOWER_RATIO = 0.8
CLOSE_BAD_MESSAGE = 1008

_EVENTS = {"turn_left", "turn_right", "faster", "slower", "set_type"}


class ProtocolError(ValueError):
    pass


def parse_start(msg: dict) -> tuple[str, str, int | None]:
    if not isinstance(msg, dict) or msg.get("kind") != "start":
        raise ProtocolError("first message must have kind \"start\"")
    try:
        skeleton_id = str(msg["skeleton_id"])
        seed_clip = str(msg["seed_clip"])
    except KeyError as exc:
        raise ProtocolError(f"start message missing {exc.args[0]}") from None
    seed = msg.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ProtocolError("seed must be an integer")
    return skeleton_id, seed_clip, seed


def parse_control(msg: dict):
    """Returns an event token usable by interactive_update."""
    if not isinstance(msg, dict) or msg.get("kind") != "control":
        raise ProtocolError("expected kind \"control\"")
    ev = msg.get("event")
    if ev not in _EVENTS:
        raise ProtocolError(f"unknown control event {ev!r}")
    if ev == "set_type":
        v = msg.get("value")
        if not isinstance(v, int) or not 0 <= v < 10:
            raise ProtocolError("set_type needs an integer value in 0..9")
        return ("set_type", v)
    return ev


def offer_frame(queue: asyncio.Queue, msg: dict, dropped: int) -> int:
    """Best-effort enqueue: a full queue drops the frame and the next
    delivered one carries the accumulated gap count."""
    if dropped:
        msg = dict(msg, gap=dropped)
    try:
        queue.put_nowait(msg)
    except asyncio.QueueFull:
        return dropped + 1
    return 0


def _dots_to_world(dir12: np.ndarray, root_xz: np.ndarray,
                   heading: float) -> np.ndarray:
    """Direction control points are in the root frame (+Z = heading);
    the stream carries them as world-ground positions."""
    return _from_local(dir12.reshape(6, 2), root_xz, heading)


class _LiveSession:
    """Server-side state wrapped around one synthesis Session."""

    def __init__(self, params, config, clip: MotionClip, rng_seed: int,
                 root_height: float):
        self.session = Session(params, config, clip.skeleton,
                               fps=clip.fps,
                               rng=np.random.default_rng(rng_seed))
        self.session.seed(clip)
        rf = receptive_field(config)
        if self.session.history < rf:
            raise SynthesisError(
                f"seed clip has {len(clip)} frames, the receptive field "
                f"needs {rf}")
        start_type = int(clip.type_labels[-1]) if len(clip) else 0
        self.state = InteractiveState(type_vec=one_hot(start_type),
                                      type_target=start_type)
        self.root_height = root_height
        self.v_target = None
        self.t = 0

    def tick(self, events: list) -> dict:
        """Apply events, step once, return the frame message."""
        s = self.session
        if s.pred_direction is None:
            # nothing predicted yet: run the first step on the model's
            # own (control-free) dynamics and show its fresh prediction
            vec = s.step()
            dir12 = s.pred_direction
            root_xz, heading = s.world_state()
        else:
            pred = s.pred_direction
            v_cur = control_velocity(pred)
            if self.v_target is None:
                self.v_target = v_cur
            for ev in events:
                if ev == "faster":
                    self.v_target = v_cur * FASTER_RATIO
                elif ev == "slower":
                    self.v_target = v_cur * SLOWER_RATIO
            dir12, type10, _flags = interactive_update(
                pred, events, self.root_height, v_cur, self.v_target,
                self.state)
            # the control lives in the input frame's root coordinates,
            # which is the world state before this step
            root_xz, heading = s.world_state()
            d13 = np.concatenate([dir12, [control_velocity(dir12)]])
            vec = s.step(d13, type10)
        dots = _dots_to_world(dir12, root_xz, heading)
        pos, _rot = fk(s.skeleton, s.world_pose)
        dm = s.config.d_motion
        msg = {
            "kind": "frame",
            "t": self.t,
            "joints": np.round(pos, 2).tolist(),
            "contacts": [bool(vec[dm] > 0.5), bool(vec[dm + 1] > 0.5)],
            "dir_dots": np.round(dots, 2).tolist(),
            "type": np.round(self.state.type_vec, 6).tolist(),
        }
        self.t += 1
        return msg


def create_app(params, config: CCNetConfig, seed_clips: list[MotionClip], *,
               tick_hz: float = 60.0, queue_size: int = 8) -> FastAPI:
    """Build the service around one immutable params snapshot.

    seed_clips double as the skeleton catalogue: both ids in the start
    message index into this list (as str(index) or a unique subject
    name)."""
    if not seed_clips:
        raise ValueError("at least one seed clip required")
    if tick_hz <= 0:
        raise ValueError("tick_hz must be positive")
    period = 1.0 / tick_hz

    by_id: dict[str, int] = {}
    for i, clip in enumerate(seed_clips):
        by_id[str(i)] = i
        # a subject name addresses its first clip; ambiguity keeps the
        # earliest so numeric ids stay the precise spelling
        by_id.setdefault(clip.subject, i)

    app = FastAPI(title="ccmotion")
    app.state.sessions_active = 0
    seed_counter = itertools.count(1)

    def resolve(key: str) -> MotionClip:
        if key not in by_id:
            raise ProtocolError(f"unknown clip id {key!r}")
        return seed_clips[by_id[key]]

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": app.state.sessions_active}

    @app.get("/skeletons")
    def skeletons():
        return {"skeletons": [
            {"id": str(i), "subject": c.subject,
             "joints": c.skeleton.n_joints, "frames": len(c)}
            for i, c in enumerate(seed_clips)]}

    async def send_error(ws: WebSocket, message: str):
        try:
            await ws.send_text(json.dumps({"kind": "error",
                                           "message": message}))
            await ws.close(code=CLOSE_BAD_MESSAGE)
        except Exception:  # noqa: BLE001 - already tearing down
            pass

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        try:
            first = json.loads(await ws.receive_text())
            skeleton_id, seed_clip_id, seed = parse_start(first)
            skel_clip = resolve(skeleton_id)
            seed_clip = resolve(seed_clip_id)
            if skel_clip.skeleton.n_joints != seed_clip.skeleton.n_joints:
                raise ProtocolError("skeleton and seed clip joint counts differ")
            if seed is None:
                seed = next(seed_counter)
            tp = skel_clip.skeleton.t_pose()
            live = _LiveSession(params, config, seed_clip, seed,
                                root_height=float(tp[0, 1]))
        except WebSocketDisconnect:
            return
        except (ProtocolError, SynthesisError, json.JSONDecodeError) as exc:
            await send_error(ws, str(exc))
            return

        app.state.sessions_active += 1
        outbox: asyncio.Queue = asyncio.Queue(maxsize=queue_size)
        events: list = []
        failure: list[str] = []
        stop = asyncio.Event()

        async def receiver():
            while True:
                try:
                    raw = await ws.receive_text()
                    events.append(parse_control(json.loads(raw)))
                except WebSocketDisconnect:
                    stop.set()
                    return
                except (ProtocolError, json.JSONDecodeError) as exc:
                    failure.append(str(exc))
                    stop.set()
                    return

        async def sender():
            while True:
                msg = await outbox.get()
                await ws.send_text(json.dumps(msg))

        recv_task = asyncio.create_task(receiver())
        send_task = asyncio.create_task(sender())
        dropped = 0
        loop = asyncio.get_running_loop()
        deadline = loop.time()
        try:
            while not stop.is_set():
                pending, events[:] = events[:], []
                msg = await asyncio.to_thread(live.tick, pending)
                dropped = offer_frame(outbox, msg, dropped)
                deadline += period
                delay = deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                elif delay < -5 * period:
                    deadline = loop.time()  # too far behind: skip, don't spiral
        except Exception as exc:  # noqa: BLE001 - report, then close
            log.exception("session failed")
            failure.append(f"internal error: {exc}")
        finally:
            app.state.sessions_active -= 1
            recv_task.cancel()
            send_task.cancel()
            if failure:
                await send_error(ws, failure[0])
            else:
                try:
                    await ws.close()
                except Exception:  # noqa: BLE001
                    pass

    return app
