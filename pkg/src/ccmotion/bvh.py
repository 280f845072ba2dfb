"""BVH motion-capture file parsing and writing.

The parser handles the common dialect: a single ROOT, nested JOINT
blocks, End Sites (imported as joints named <parent>End so they carry
offsets), per-joint CHANNELS with any rotation order, and a MOTION
section. Rotation channels compose left to right (channel list "Z X Y"
means R = Rz @ Rx @ Ry). Non-root position channels are consumed but
ignored; bone lengths come from OFFSET lines. All parse errors carry
the 1-based source line number.

``scale`` multiplies file length units into millimetres (e.g. 10.0 for
centimetre files).
"""

from __future__ import annotations

import numpy as np

from . import quat
from .skeleton import GlobalPose, Joint, Skeleton


class BvhError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


_ROT_AXIS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for ln, raw in enumerate(text.splitlines(), start=1):
            for tok in raw.split():
                self.items.append((tok, ln))
        self.pos = 0

    def peek(self) -> tuple[str, int]:
        if self.pos >= len(self.items):
            last = self.items[-1][1] if self.items else 1
            raise BvhError(last, "unexpected end of file")
        return self.items[self.pos]

    def next(self) -> tuple[str, int]:
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, want: str) -> int:
        tok, ln = self.next()
        if tok != want:
            raise BvhError(ln, f"expected {want!r}, got {tok!r}")
        return ln

    def floats(self, n: int) -> list[float]:
        out = []
        for _ in range(n):
            tok, ln = self.next()
            try:
                out.append(float(tok))
            except ValueError:
                raise BvhError(ln, f"expected a number, got {tok!r}") from None
        return out

    def exhausted(self) -> bool:
        return self.pos >= len(self.items)


def _parse_joint(toks: _Tokens, name: str, parent: int, scale: float,
                 joints: list[Joint], channels: list[tuple[int, list[str]]],
                 names_seen: set) -> None:
    ln = toks.expect("{")
    if name in names_seen:
        base, k = name, 2
        while name in names_seen:
            name = f"{base}_{k}"
            k += 1
    names_seen.add(name)
    toks.expect("OFFSET")
    off = tuple(v * scale for v in toks.floats(3))
    idx = len(joints)
    joints.append(Joint(name, parent, off))

    tok, ln = toks.peek()
    if tok == "CHANNELS":
        toks.next()
        ntok, nln = toks.next()
        try:
            n = int(ntok)
        except ValueError:
            raise BvhError(nln, f"bad channel count {ntok!r}") from None
        chans = []
        for _ in range(n):
            ctok, cln = toks.next()
            if ctok not in _ROT_AXIS and ctok not in _POS:
                raise BvhError(cln, f"unknown channel {ctok!r}")
            chans.append(ctok)
        channels.append((idx, chans))

    while True:
        tok, ln = toks.peek()
        if tok == "JOINT":
            toks.next()
            child, _ = toks.next()
            _parse_joint(toks, child, idx, scale, joints, channels, names_seen)
        elif tok == "End":
            toks.next()
            stok, sln = toks.next()
            if stok != "Site":
                raise BvhError(sln, f"expected 'Site' after 'End', got {stok!r}")
            toks.expect("{")
            toks.expect("OFFSET")
            eoff = tuple(v * scale for v in toks.floats(3))
            ename = joints[idx].name + "End"
            base, k = ename, 2
            while ename in names_seen:
                ename = f"{base}_{k}"
                k += 1
            names_seen.add(ename)
            joints.append(Joint(ename, idx, eoff))
            toks.expect("}")
        elif tok == "}":
            toks.next()
            return
        else:
            raise BvhError(ln, f"unexpected token {tok!r} in joint block")


def parse_bvh(text: str, scale: float = 1.0) -> tuple[Skeleton, list[GlobalPose], float]:
    """Parse BVH text into (skeleton, poses, fps). Lengths scaled to mm."""
    toks = _Tokens(text)
    toks.expect("HIERARCHY")
    toks.expect("ROOT")
    root_name, _ = toks.next()
    joints: list[Joint] = []
    channels: list[tuple[int, list[str]]] = []
    _parse_joint(toks, root_name, -1, scale, joints, channels, set())
    skel = Skeleton(joints)

    toks.expect("MOTION")
    toks.expect("Frames:")
    ftok, fln = toks.next()
    try:
        n_frames = int(ftok)
    except ValueError:
        raise BvhError(fln, f"bad frame count {ftok!r}") from None
    if n_frames < 0:
        raise BvhError(fln, f"negative frame count {n_frames}")
    t1, ln1 = toks.next()
    if t1 == "Frame" :
        t2, ln2 = toks.next()
        if t2 != "Time:":
            raise BvhError(ln2, f"expected 'Time:' after 'Frame', got {t2!r}")
    else:
        raise BvhError(ln1, f"expected 'Frame Time:', got {t1!r}")
    dttok, dtln = toks.next()
    try:
        dt = float(dttok)
    except ValueError:
        raise BvhError(dtln, f"bad frame time {dttok!r}") from None
    if dt <= 0:
        raise BvhError(dtln, f"frame time must be positive, got {dt}")
    fps = 1.0 / dt

    per_frame = sum(len(ch) for _, ch in channels)
    poses: list[GlobalPose] = []
    for fi in range(n_frames):
        if toks.exhausted():
            last = toks.items[-1][1]
            raise BvhError(last, f"motion data ends early: frame {fi} of {n_frames}")
        vals = toks.floats(per_frame)
        rot = np.zeros((skel.n_joints, 4))
        rot[:, 0] = 1.0
        root_pos = np.zeros(3)
        at = 0
        for jidx, chans in channels:
            order = ""
            angles = []
            for ch in chans:
                v = vals[at]
                at += 1
                if ch in _POS:
                    if jidx == 0:
                        root_pos[_POS[ch]] = v * scale
                elif ch in _ROT_AXIS:
                    order += _ROT_AXIS[ch]
                    angles.append(v)
            if order:
                rot[jidx] = quat.from_euler(np.array(angles), order)
        poses.append(GlobalPose(root_pos, rot))
    if not toks.exhausted():
        tok, ln = toks.peek()
        raise BvhError(ln, f"trailing data after {n_frames} frames: {tok!r}")
    return skel, poses, fps


def _euler_zxy(q: np.ndarray) -> tuple[float, float, float]:
    """Angles (z, x, y) in degrees with R = Rz @ Rx @ Ry."""
    m = quat.to_matrix(q)
    sx = np.clip(m[2, 1], -1.0, 1.0)
    x = np.arcsin(sx)
    if abs(sx) < 1.0 - 1e-9:
        y = np.arctan2(-m[2, 0], m[2, 2])
        z = np.arctan2(-m[0, 1], m[1, 1])
    else:
        # gimbal: y and z are degenerate, park y at zero
        y = 0.0
        z = np.arctan2(m[1, 0], m[0, 0])
    return float(np.rad2deg(z)), float(np.rad2deg(x)), float(np.rad2deg(y))


def write_bvh(skel: Skeleton, poses: list[GlobalPose], fps: float,
              scale: float = 1.0) -> str:
    """Serialize to BVH text (ZXY rotation order, leaves as End Sites).

    ``scale`` divides millimetres back into file units.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    children: list[list[int]] = [[] for _ in range(skel.n_joints)]
    for i, j in enumerate(skel.joints):
        if j.parent >= 0:
            children[j.parent].append(i)
    lines: list[str] = ["HIERARCHY"]
    channel_joints: list[int] = []

    def emit(idx: int, depth: int) -> None:
        j = skel.joints[idx]
        pad = "  " * depth
        off = np.asarray(j.offset) / scale
        if idx == 0:
            lines.append(f"{pad}ROOT {j.name}")
        elif children[idx]:
            lines.append(f"{pad}JOINT {j.name}")
        else:
            lines.append(f"{pad}End Site")
            lines.append(f"{pad}{{")
            lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
            lines.append(f"{pad}}}")
            return
        lines.append(f"{pad}{{")
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if idx == 0:
            lines.append(f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                         "Zrotation Xrotation Yrotation")
        else:
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        channel_joints.append(idx)
        for c in children[idx]:
            emit(c, depth + 1)
        lines.append(f"{pad}}}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {len(poses)}")
    lines.append(f"Frame Time: {1.0 / fps:.8f}")
    for pose in poses:
        vals: list[float] = []
        for idx in channel_joints:
            if idx == 0:
                p = np.asarray(pose.root_position) / scale
                vals.extend([p[0], p[1], p[2]])
            z, x, y = _euler_zxy(pose.rotations[idx])
            vals.extend([z, x, y])
        lines.append(" ".join(f"{v:.6f}" for v in vals))
    return "\n".join(lines) + "\n"
