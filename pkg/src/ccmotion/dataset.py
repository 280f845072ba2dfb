"""Clip collections and the line-delimited JSON dataset format.

One clip per line: {"skeleton": {...}, "fps": 60, "frames": [[...]],
"type_labels": [...], "subject": "..."} with each frame flattened in
the representation's native order (orientations, angular velocities,
positions, velocities, contacts).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .controls import control_velocity, direction_track, motion_type_track, skeleton_config
from .representation import MotionClip
from .skeleton import Skeleton


class DatasetError(ValueError):
    pass


def clip_to_record(clip: MotionClip) -> dict:
    return {
        "skeleton": clip.skeleton.to_dict(),
        "fps": clip.fps,
        "frames": clip.data.tolist(),
        "type_labels": clip.type_labels.tolist(),
        "subject": clip.subject,
    }


def clip_from_record(rec: dict) -> MotionClip:
    try:
        skel = Skeleton.from_dict(rec["skeleton"])
        data = np.asarray(rec["frames"], dtype=np.float64)
        if data.ndim == 1:  # zero-frame clip serializes to []
            data = data.reshape(0, 12 * skel.n_joints + 2)
        labels = np.asarray(rec.get("type_labels", []), dtype=np.int64)
        if labels.size == 0:
            labels = np.zeros(data.shape[0], dtype=np.int64)
        return MotionClip(skel, float(rec["fps"]), data, labels,
                          rec.get("subject", ""))
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed clip record: {exc}") from exc


def save_jsonl(clips: list[MotionClip], path: str) -> None:
    with open(path, "w") as fh:
        for clip in clips:
            fh.write(json.dumps(clip_to_record(clip)) + "\n")


def load_jsonl(path: str) -> list[MotionClip]:
    clips = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {ln}: invalid JSON: {exc}") from exc
            clips.append(clip_from_record(rec))
    return clips


@dataclass
class ClipControls:
    """Precomputed per-frame control tracks for one clip."""

    direction: np.ndarray  # (N,12)
    velocity: np.ndarray   # (N,)
    mtype: np.ndarray      # (N,10)
    skeleton: np.ndarray   # (82,) for the stock rig


class MotionDataset:
    """A list of clips with lazily cached control tracks."""

    def __init__(self, clips: list[MotionClip]):
        if not clips:
            raise DatasetError("dataset needs at least one clip")
        self.clips = clips
        self._controls: dict[int, ClipControls] = {}

    def __len__(self):
        return len(self.clips)

    @property
    def total_frames(self) -> int:
        return sum(c.data.shape[0] for c in self.clips)

    def controls(self, i: int) -> ClipControls:
        if i not in self._controls:
            clip = self.clips[i]
            dirs = direction_track(clip)
            vel = np.array([control_velocity(d) for d in dirs])
            self._controls[i] = ClipControls(
                direction=dirs,
                velocity=vel,
                mtype=motion_type_track(clip.type_labels, clip.f),
                skeleton=skeleton_config(clip.skeleton),
            )
        return self._controls[i]
