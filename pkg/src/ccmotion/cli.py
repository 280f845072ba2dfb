"""Command-line surface: data plumbing, training, synthesis, evaluation
and the realtime service.

Every subcommand that takes --seed is reproducible byte-for-byte in the
artifacts it writes. Exit code 0 on success; errors print one message
to stderr and exit 1 (argparse usage errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bvh import BvhError, parse_bvh, write_bvh
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .controls import ControlError, TrajectorySpec, skeleton_config
from .dataset import DatasetError, MotionDataset, load_jsonl, save_jsonl
from .ik import ik_foot_cleanup
from .network import (
    CCNetConfig,
    NetworkError,
    param_count,
    receptive_field,
)
from .representation import (
    MotionClip,
    RepresentationError,
    augment_noise,
    from_representation,
    root_track,
    to_representation,
)
from .synthesis import (
    Session,
    SynthesisError,
    complete,
    denoise,
    generate_random,
    rel_pose_diff,
    synthesize_controlled,
    trajectory_distance,
)
from .synthgen import Segment, SynthItem, SynthError, synth_dataset
from .training import TrainConfig, TrainError, TrainingDiverged, fine_tune, train

log = logging.getLogger("ccmotion")

_ERRORS = (BvhError, CheckpointError, ControlError, DatasetError,
           NetworkError, RepresentationError, SynthesisError, SynthError,
           TrainError, TrainingDiverged, OSError, ValueError)


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared helpers


def _load_clip(path: str, index: int = 0) -> MotionClip:
    clips = load_jsonl(path)
    if not clips:
        raise CliError(f"{path}: no clips")
    if not 0 <= index < len(clips):
        raise CliError(f"{path}: clip index {index} outside 0..{len(clips) - 1}")
    return clips[index]


def _save_clip(clip: MotionClip, path: str) -> None:
    """JSONL by default; a .bvh suffix writes a viewer-ready file."""
    if path.endswith(".bvh"):
        poses = from_representation(clip)
        Path(path).write_text(write_bvh(clip.skeleton, poses, clip.fps))
    else:
        save_jsonl([clip], path)


def _net_config_for(clip: MotionClip, overrides: dict) -> CCNetConfig:
    fields = {
        "d_motion": clip.d_motion,
        "skeleton_dim": len(skeleton_config(clip.skeleton)),
    }
    fields.update(overrides)
    return CCNetConfig(**fields)


def _read_config_file(path: str | None) -> tuple[dict, dict]:
    """Optional JSON file with {"network": {...}, "training": {...}}."""
    if path is None:
        return {}, {}
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise CliError(f"{path}: expected a JSON object")
    unknown = set(raw) - {"network", "training"}
    if unknown:
        raise CliError(f"{path}: unknown config sections {sorted(unknown)}")
    return dict(raw.get("network", {})), dict(raw.get("training", {}))


def _train_config(args, t_over: dict) -> TrainConfig:
    fields = dict(t_over)
    for name, key in (("epochs", "epochs"), ("steps", "steps_per_epoch"),
                      ("batch", "batch_size"), ("window", "window"),
                      ("lr", "lr"), ("noise_std", "noise_std")):
        v = getattr(args, name, None)
        if v is not None:
            fields[key] = v
    fields["seed"] = args.seed
    return TrainConfig(**fields)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    paths = []
    for raw in args.inputs:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.bvh")))
        else:
            paths.append(p)
    if not paths:
        raise CliError("no input files")
    clips = []
    for p in paths:
        skel, poses, fps = parse_bvh(p.read_text(), scale=args.scale)
        types = np.full(len(poses), args.type, dtype=np.int64)
        subject = args.subject if args.subject else p.stem
        clips.append(to_representation(skel, poses, fps, types, subject))
        log.info("ingested %s: %d frames at %.1f fps", p, len(poses), fps)
    save_jsonl(clips, args.out)
    print(f"wrote {len(clips)} clips to {args.out}")
    return 0


def _synth_items(n_clips: int, frames: int, subjects: int) -> list[SynthItem]:
    # deterministic recipe table; per-clip variety comes from the index,
    # randomness only through synth_dataset's seeded rng
    recipes = [
        [Segment(0, frames, speed=1100.0)],
        [Segment(0, frames, speed=1300.0, turn_rate=0.35)],
        [Segment(1, frames, speed=2600.0)],
        [Segment(0, frames // 2, speed=1100.0),
         Segment(1, frames - frames // 2, speed=2500.0)],
        [Segment(0, frames, speed=900.0, turn_rate=-0.3)],
        [Segment(1, frames, speed=2800.0, turn_rate=0.25)],
    ]
    items = []
    for i in range(n_clips):
        style = {"cadence_scale": 1.0 + 0.06 * (i % 3 - 1)}
        items.append(SynthItem(
            segments=recipes[i % len(recipes)],
            subject=f"synth-{i % max(1, subjects)}",
            meander=0.05 if i % 2 else 0.0,
            style=style))
    return items


def cmd_synth_data(args) -> int:
    items = _synth_items(args.clips, args.frames, args.subjects)
    clips = synth_dataset(items, args.seed)
    save_jsonl(clips, args.out)
    total = sum(len(c) for c in clips)
    print(f"wrote {len(clips)} clips ({total} frames) to {args.out}")
    return 0


def cmd_train(args) -> int:
    clips = load_jsonl(args.dataset)
    if not clips:
        raise CliError(f"{args.dataset}: no clips")
    dataset = MotionDataset(clips)
    n_over, t_over = _read_config_file(args.config)
    nconf = _net_config_for(clips[0], n_over)
    tconf = _train_config(args, t_over)
    val = MotionDataset(load_jsonl(args.val)) if args.val else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, _history = train(
        dataset, nconf, tconf, val_dataset=val, out_dir=str(out_dir),
        csv_path=str(out_dir / "history.csv"), log=print)
    final = out_dir / "model.ccn"
    save_checkpoint(params, nconf, str(final))
    print(f"trained {param_count(params)} parameters, saved {final}")
    return 0


def cmd_finetune(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    clips = load_jsonl(args.dataset)
    if not clips:
        raise CliError(f"{args.dataset}: no clips")
    dataset = MotionDataset(clips)
    _, t_over = _read_config_file(args.config)
    tconf = _train_config(args, t_over)
    val = MotionDataset(load_jsonl(args.val)) if args.val else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, _history = fine_tune(
        params, nconf, dataset, tconf, val_dataset=val, out_dir=str(out_dir),
        csv_path=str(out_dir / "history.csv"), log=print)
    final = out_dir / "model.ccn"
    save_checkpoint(params, nconf, str(final))
    print(f"fine-tuned, saved {final}")
    return 0


def _make_session(args, params, nconf) -> Session:
    seed_clip = _load_clip(args.seed_clip, args.clip_index)
    rf = receptive_field(nconf)
    if len(seed_clip) < rf:
        raise CliError(
            f"seed clip has {len(seed_clip)} frames, the receptive field "
            f"needs {rf}")
    session = Session(params, nconf, seed_clip.skeleton,
                      fps=seed_clip.fps,
                      rng=np.random.default_rng(args.seed),
                      sample=not args.mean)
    session.seed(seed_clip, use_controls=args.use_controls)
    return session


def cmd_generate(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    session = _make_session(args, params, nconf)
    clip = generate_random(session, args.frames)
    if args.ik_cleanup:
        clip = ik_foot_cleanup(clip)
    _save_clip(clip, args.out)
    print(f"generated {len(clip)} frames to {args.out}")
    return 0


def cmd_control(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    spec = TrajectorySpec.from_json(Path(args.trajectory).read_text())
    session = _make_session(args, params, nconf)
    clip, _applied = synthesize_controlled(session, spec, args.frames)
    if args.ik_cleanup:
        clip = ik_foot_cleanup(clip)
    _save_clip(clip, args.out)
    xz, _ = root_track(clip)
    if len(xz):
        print(f"trajectory distance: {trajectory_distance(xz, spec):.3f} mm")
    print(f"generated {len(clip)} frames to {args.out}")
    return 0


def cmd_denoise(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    clip = _load_clip(args.input, args.clip_index)
    if args.noise_std > 0:
        rng = np.random.default_rng(args.seed)
        noisy = clip.copy()
        noisy.data = augment_noise(noisy.data, args.noise_std, rng,
                                   d_motion=clip.d_motion)
        clip = noisy
    out = denoise(params, nconf, clip)
    _save_clip(out, args.out)
    print(f"denoised {len(out)} frames to {args.out}")
    return 0


def _load_mask(path: str, clip: MotionClip) -> np.ndarray:
    """Mask JSON: {"joints": [name-or-index, ...],
    "start": first frame (default 0), "end": one past last (default N)}."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict) or "joints" not in raw:
        raise CliError(f"{path}: mask needs a \"joints\" list")
    names = clip.skeleton.names
    cols = []
    for j in raw["joints"]:
        if isinstance(j, str):
            if j not in names:
                raise CliError(f"{path}: unknown joint {j!r}")
            cols.append(names.index(j))
        else:
            k = int(j)
            if not 0 <= k < clip.n_joints:
                raise CliError(f"{path}: joint index {k} outside skeleton")
            cols.append(k)
    n = len(clip)
    start = int(raw.get("start", 0))
    end = raw.get("end")
    end = n if end is None else int(end)
    if not 0 <= start <= end <= n:
        raise CliError(f"{path}: frame range [{start}, {end}) outside 0..{n}")
    mask = np.zeros((n, clip.n_joints), dtype=bool)
    mask[start:end, cols] = True
    return mask


def cmd_complete(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    clip = _load_clip(args.input, args.clip_index)
    mask = _load_mask(args.mask, clip)
    out = complete(params, nconf, clip, mask)
    _save_clip(out, args.out)
    print(f"completed {int(mask.sum())} masked joint-frames to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    did_something = False
    if args.generated and args.reference:
        gen = load_jsonl(args.generated)
        ref = load_jsonl(args.reference)
        if len(gen) != len(ref):
            raise CliError(
                f"{len(gen)} generated vs {len(ref)} reference clips")
        means = []
        print("clip  subject               rel_p_mean  rel_p_std")
        for i, (g, r) in enumerate(zip(gen, ref)):
            m, s = rel_pose_diff(g, r)
            means.append(m)
            print(f"{i:4d}  {g.subject:<20s}  {m:10.6f}  {s:9.6f}")
        print(f"rel_p {float(np.mean(means)):.6f}")
        did_something = True
    if args.generated and args.trajectory:
        spec = TrajectorySpec.from_json(Path(args.trajectory).read_text())
        dists = []
        for i, g in enumerate(load_jsonl(args.generated)):
            xz, _ = root_track(g)
            d = trajectory_distance(xz, spec)
            dists.append(d)
            print(f"clip {i}: trajectory distance {d:.3f} mm")
        print(f"trajectory_distance {float(np.mean(dists)):.3f} mm")
        did_something = True
    if args.checkpoint and args.dataset:
        params, nconf = load_checkpoint(args.checkpoint)
        stds = [float(s) for s in args.noise_std.split(",")] \
            if isinstance(args.noise_std, str) else [args.noise_std]
        clips = load_jsonl(args.dataset)
        rng = np.random.default_rng(args.seed)
        print("noise_std  input_err  denoised_err")
        for std in stds:
            in_errs, out_errs = [], []
            for clip in clips:
                noisy = clip.copy()
                noisy.data = augment_noise(noisy.data, std, rng,
                                           d_motion=clip.d_motion)
                cleaned = denoise(params, nconf, noisy)
                in_errs.append(rel_pose_diff(noisy, clip)[0])
                out_errs.append(rel_pose_diff(cleaned, clip)[0])
            print(f"{std:9.4f}  {float(np.mean(in_errs)):9.6f}  "
                  f"{float(np.mean(out_errs)):12.6f}")
        did_something = True
    if not did_something:
        raise CliError(
            "nothing to evaluate: pass --generated with --reference and/or "
            "--trajectory, or --checkpoint with --dataset for denoising error")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    params, nconf = load_checkpoint(args.checkpoint)
    clips = load_jsonl(args.dataset)
    if not clips:
        raise CliError(f"{args.dataset}: no seed clips")
    app = create_app(params, nconf, clips, tick_hz=args.tick_hz)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise CliError(f"--bind wants host:port, got {args.bind!r}")
    level = os.environ.get("CCNET_LOG", "warning").lower()
    uvicorn.run(app, host=host, port=int(port), log_level=level)
    return 0


def cmd_inspect(args) -> int:
    params, nconf = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    for name in ("d_motion", "residual_channels", "skip_channels", "n_blocks",
                 "kernel", "skeleton_dim", "direction_dim", "type_dim"):
        print(f"{name}: {getattr(nconf, name)}")
    dil = nconf.dilations if nconf.dilations else (2,) * nconf.n_blocks
    print(f"dilations: {','.join(str(d) for d in dil)}")
    print(f"parameters: {param_count(params)}")
    print(f"receptive_field: {receptive_field(nconf)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="ccmotion",
        description="causal convolutional motion engine")
    sub = top.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("ingest", cmd_ingest, "convert BVH files to a clip dataset")
    p.add_argument("inputs", nargs="+", help="BVH files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0,
                   help="unit multiplier applied to BVH lengths")
    p.add_argument("--type", type=int, default=0,
                   help="motion type label for every frame")
    p.add_argument("--subject", default=None)

    p = add("synth-data", cmd_synth_data, "generate a synthetic clip dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=6)
    p.add_argument("--frames", type=int, default=480)
    p.add_argument("--subjects", type=int, default=2)

    for name, fn, help_ in (("train", cmd_train, "train a model"),
                            ("finetune", cmd_finetune,
                             "adapt a checkpoint to new clips")):
        p = add(name, fn, help_)
        if name == "finetune":
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON with network/training overrides")
        p.add_argument("--val", default=None, help="validation dataset")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--window", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--noise-std", type=float, default=None)

    for name, fn, help_ in (("generate", cmd_generate,
                             "free-run a model from a seed clip"),
                            ("control", cmd_control,
                             "synthesize along a trajectory spec")):
        p = add(name, fn, help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--seed-clip", required=True,
                       help="dataset file providing the warmup frames")
        p.add_argument("--clip-index", type=int, default=0)
        p.add_argument("--frames", type=int, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--mean", action="store_true",
                       help="roll out means instead of sampling")
        p.add_argument("--use-controls", action="store_true",
                       help="feed the seed clip's controls during warmup")
        p.add_argument("--ik-cleanup", action="store_true",
                       help="pin contact feet after synthesis")
        if name == "control":
            p.add_argument("--trajectory", required=True,
                           help="trajectory spec JSON")

    p = add("denoise", cmd_denoise, "reconstruct a clip through the model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--clip-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-std", type=float, default=0.0,
                   help="corrupt the input first (0 = leave as is)")
    p.add_argument("--seed", type=int, default=0)

    p = add("complete", cmd_complete, "fill masked joints from the model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--clip-index", type=int, default=0)
    p.add_argument("--mask", required=True, help="mask JSON file")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "metric tables")
    p.add_argument("--generated", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--noise-std", default="0.03,0.05,0.1",
                   help="comma-separated stds for the denoising table")
    p.add_argument("--seed", type=int, default=0)

    p = add("serve", cmd_serve, "run the realtime websocket service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="seed clip dataset")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--tick-hz", type=float, default=60.0)

    p = add("inspect", cmd_inspect, "print a checkpoint summary")
    p.add_argument("--checkpoint", required=True)

    return top


def main(argv=None) -> int:
    level = os.environ.get("CCNET_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, *_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
