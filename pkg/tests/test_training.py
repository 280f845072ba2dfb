import csv
import math
import os

import numpy as np
import pytest

from ccmotion.dataset import MotionDataset
from ccmotion.network import CCNetConfig, init, receptive_field
from ccmotion.optim import TrainingDiverged
from ccmotion.synthgen import Segment, SynthItem, synth_clip
from ccmotion.training import (
    Batch,
    TrainConfig,
    TrainError,
    fine_tune,
    sample_batch,
    train,
    validate,
)


def walk_clip(frames=160, seed=0, speed=900.0):
    item = SynthItem(segments=[Segment(0, frames, speed=speed)])
    return synth_clip(item, np.random.default_rng(seed))


def small_dataset(n=2, frames=160):
    return MotionDataset([walk_clip(frames=frames, seed=s) for s in range(n)])


def tiny_net(dm):
    return CCNetConfig(d_motion=dm, residual_channels=4, skip_channels=8,
                       n_blocks=2)


def tiny_train(**kw):
    base = dict(batch_size=2, window=16, noise_std=0.0, control_drop=0.5,
                epochs=1, steps_per_epoch=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_window_must_cover_field(self):
        nconf = tiny_net(12)
        rf = receptive_field(nconf)
        with pytest.raises(TrainError):
            tiny_train(window=rf).validate(nconf)
        tiny_train(window=rf + 1).validate(nconf)

    def test_lambdas_positive(self):
        with pytest.raises(TrainError):
            tiny_train(lambdas=(0.0, 2.0, 1.0)).validate(tiny_net(12))

    def test_drop_range(self):
        with pytest.raises(TrainError):
            tiny_train(control_drop=1.5).validate(tiny_net(12))


class TestSampleBatch:
    def setup_method(self):
        self.ds = small_dataset()
        self.dm = self.ds.clips[0].d_motion
        self.nconf = tiny_net(self.dm)

    def test_deterministic(self):
        tc = tiny_train()
        a = sample_batch(self.ds, np.random.default_rng(9), tc, self.nconf)
        b = sample_batch(self.ds, np.random.default_rng(9), tc, self.nconf)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.target_cont, b.target_cont)
        assert np.array_equal(a.controls.dir_mask, b.controls.dir_mask)

    def test_targets_are_shifted_inputs(self):
        tc = tiny_train(noise_std=0.0)
        b = sample_batch(self.ds, np.random.default_rng(1), tc, self.nconf)
        # noiseless: frame t+1 of the input block is frame t of the target
        assert np.array_equal(b.inputs[:, :self.dm, 1:],
                              b.target_cont[:, :, :-1])
        assert np.array_equal(b.inputs[:, self.dm:, 1:],
                              b.target_contacts[:, :, :-1])

    def test_windows_walk_one_frame(self):
        tc = tiny_train(batch_size=4, noise_std=0.0)
        b = sample_batch(self.ds, np.random.default_rng(2), tc, self.nconf)
        # consecutive sequences overlap on all but one frame unless the
        # start index wrapped
        hits = sum(
            np.array_equal(b.inputs[i, :, 1:], b.inputs[i + 1, :, :-1])
            for i in range(3))
        assert hits >= 2

    def test_single_window_clip(self):
        clip = walk_clip(frames=16)
        ds = MotionDataset([clip])
        tc = tiny_train(batch_size=3, noise_std=0.0)
        b = sample_batch(ds, np.random.default_rng(3), tc, self.nconf)
        for i in range(1, 3):
            assert np.array_equal(b.inputs[0], b.inputs[i])
        assert np.array_equal(b.inputs[0], clip.data[:15].T)

    def test_noise_variance(self):
        tc = tiny_train(batch_size=4, window=60, noise_std=0.03)
        b = sample_batch(self.ds, np.random.default_rng(4), tc, self.nconf)
        offset = b.inputs[:, :self.dm, 1:] - b.target_cont[:, :, :-1]
        assert np.isclose(np.mean(offset ** 2), 0.0009, rtol=0.05)

    def test_drop_extremes(self):
        b = sample_batch(self.ds, np.random.default_rng(5),
                         tiny_train(control_drop=0.0), self.nconf)
        assert np.all(b.controls.dir_mask == 1.0)
        b = sample_batch(self.ds, np.random.default_rng(5),
                         tiny_train(control_drop=1.0), self.nconf)
        assert np.all(b.controls.dir_mask == 0.0)

    def test_all_clips_too_short(self):
        ds = small_dataset(frames=8)
        with pytest.raises(TrainError):
            sample_batch(ds, np.random.default_rng(6), tiny_train(),
                         self.nconf)

    def test_width_mismatch(self):
        with pytest.raises(TrainError):
            sample_batch(self.ds, np.random.default_rng(7), tiny_train(),
                         tiny_net(self.dm + 12))


class TestTrainLoop:
    def setup_method(self):
        self.ds = small_dataset()
        self.nconf = tiny_net(self.ds.clips[0].d_motion)

    def test_smoke_and_artifacts(self, tmp_path):
        tc = tiny_train(epochs=2, steps_per_epoch=2)
        csv_path = str(tmp_path / "metrics.csv")
        params, history = train(self.ds, self.nconf, tc,
                                out_dir=str(tmp_path), csv_path=csv_path)
        assert len(history) == 2
        assert all(math.isfinite(h.total) for h in history)
        assert os.path.exists(tmp_path / "epoch_0.ccn")
        assert os.path.exists(tmp_path / "epoch_1.ccn")
        assert os.path.exists(tmp_path / "latest.ccn")
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "epoch"
        assert len(rows) == 3

    def test_deterministic_per_seed(self):
        tc = tiny_train(epochs=1, steps_per_epoch=3, noise_std=0.03)
        _, h1 = train(self.ds, self.nconf, tc)
        _, h2 = train(self.ds, self.nconf, tc)
        assert h1[0].total == h2[0].total

    def test_params_actually_move(self):
        tc = tiny_train(epochs=1, steps_per_epoch=1)
        before = init(self.nconf, tc.seed)
        after, _ = train(self.ds, self.nconf, tc)
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_caller_params_not_mutated(self):
        tc = tiny_train(epochs=1, steps_per_epoch=1)
        start = init(self.nconf, 5)
        frozen = {k: v.copy() for k, v in start.items()}
        train(self.ds, self.nconf, tc, params=start)
        for k in start:
            assert np.array_equal(start[k], frozen[k])

    def test_nan_aborts_with_snapshot(self, tmp_path):
        tc = tiny_train(epochs=1, steps_per_epoch=1)
        bad = init(self.nconf, 0)
        bad["enc1.w"] = bad["enc1.w"] * np.inf
        with pytest.raises((TrainingDiverged, ValueError)):
            train(self.ds, self.nconf, tc, params=bad,
                  out_dir=str(tmp_path))

    def test_overfit_trend(self):
        # short but real: loss after 60 steps should sit below the
        # first-step level on a two-clip corpus
        tc = tiny_train(epochs=6, steps_per_epoch=10, batch_size=2,
                        noise_std=0.01, control_drop=0.5)
        _, history = train(self.ds, self.nconf, tc)
        assert history[-1].total < history[0].total


class TestFineTune:
    def setup_method(self):
        self.ds = small_dataset()
        self.nconf = tiny_net(self.ds.clips[0].d_motion)
        self.params = init(self.nconf, 1)

    def test_zero_steps_identity(self):
        tc = tiny_train(epochs=0)
        out, history = fine_tune(self.params, self.nconf, self.ds, tc)
        assert history == []
        assert out is not self.params
        for k in self.params:
            assert np.array_equal(out[k], self.params[k])

    def test_skeleton_width_mismatch(self):
        from ccmotion.skeleton import Joint, Skeleton

        # a 2-joint rig gives a 7-dim configuration signal, not 82
        sk = Skeleton([Joint("Hips", -1, (0.0, 900.0, 0.0)),
                       Joint("Toe", 0, (0.0, -80.0, 0.0))])
        data = np.zeros((40, 12 * 2 + 2))
        from ccmotion.representation import MotionClip

        with pytest.warns(UserWarning):
            clip = MotionClip(skeleton=sk, fps=60.0, data=data)
            ds = MotionDataset([clip])
            with pytest.raises(TrainError):
                fine_tune(self.params, self.nconf, ds, tiny_train())


class TestValidate:
    def setup_method(self):
        self.ds = small_dataset(n=1, frames=60)
        self.nconf = tiny_net(self.ds.clips[0].d_motion)

    def test_reports_transform(self):
        params = init(self.nconf, 2)
        rep = validate(params, self.nconf, self.ds)
        assert not rep["raw_only"]
        assert np.isclose(rep["transformed"],
                          math.log10(rep["loss"] + 320.0), rtol=1e-12)

    def test_raw_only_when_too_negative(self):
        # zero weights, log-std bias at -20: the NLL's log-sigma term
        # drags the total far below -320 on an all-zero clip
        params = {k: np.zeros_like(v)
                  for k, v in init(self.nconf, 0).items()}
        dm = self.nconf.d_motion
        params["dec2.b"][dm:2 * dm] = -20.0
        zero = self.ds.clips[0]
        from ccmotion.representation import MotionClip

        silent = MotionClip(skeleton=zero.skeleton, fps=60.0,
                            data=np.zeros_like(zero.data))
        rep = validate(params, self.nconf, MotionDataset([silent]))
        assert rep["raw_only"]
        assert rep["transformed"] is None
        assert rep["loss"] < -320.0

    def test_needs_two_frames(self):
        clip = self.ds.clips[0]
        from ccmotion.representation import MotionClip

        short = MotionClip(skeleton=clip.skeleton, fps=60.0,
                           data=clip.data[:1])
        with pytest.raises(TrainError):
            validate(init(self.nconf, 0), self.nconf,
                     MotionDataset([short]))
