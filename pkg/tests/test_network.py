import numpy as np
import pytest

from ccmotion import autodiff as ad
from ccmotion.network import (
    CCNetConfig,
    ControlBundle,
    IncrementalNet,
    NetworkError,
    forward,
    init,
    param_count,
    receptive_field,
    split_output,
)


def tiny_config(**kw):
    base = dict(d_motion=6, residual_channels=4, skip_channels=8,
                n_blocks=3, dilations=(1, 2, 4), skeleton_dim=5,
                direction_dim=4, type_dim=3)
    base.update(kw)
    return CCNetConfig(**base)


def bundle_for(config, batch, T, rng=None, dir_on=False, type_on=False):
    rng = rng or np.random.default_rng(0)
    return ControlBundle(
        skeleton=rng.normal(size=(batch, config.skeleton_dim)),
        direction=rng.normal(size=(batch, config.direction_dim, T)) if dir_on else None,
        mtype=rng.normal(size=(batch, config.type_dim, T)) if type_on else None,
        dir_on=dir_on, type_on=type_on)


class TestReceptiveField:
    def test_stock_depth_is_41(self):
        cfg = CCNetConfig(d_motion=336)
        assert receptive_field(cfg) == 41

    def test_single_block(self):
        cfg = CCNetConfig(d_motion=8, n_blocks=1, dilations=(2,))
        assert receptive_field(cfg) == 3

    def test_alternating_dilations_give_31(self):
        cfg = CCNetConfig(d_motion=8, dilations=(1, 2) * 10)
        assert receptive_field(cfg) == 31


class TestInit:
    def test_deterministic(self):
        cfg = tiny_config()
        a, b = init(cfg, 7), init(cfg, 7)
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])
        c = init(cfg, 8)
        assert not np.array_equal(a["enc1.w"], c["enc1.w"])

    def test_bound_and_zero_bias(self):
        cfg = CCNetConfig(d_motion=30)
        params = init(cfg, 0)
        w = params["enc2.w"]  # 32 -> 32, kernel 1: fan_in 32
        bound = np.sqrt(1.0 / 32)
        assert bound == pytest.approx(0.17678, abs=1e-5)
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.9 * bound  # actually fills the range
        for k, v in params.items():
            if k.endswith(".b"):
                assert np.all(v == 0.0)

    def test_stock_param_count_near_reference(self):
        cfg = CCNetConfig(d_motion=336)
        n = param_count(init(cfg, 0))
        assert 1_044_000 <= n <= 1_276_000
        # independent arithmetic on the layer shapes
        rc, sc, din, dout = 32, 512, 338, 687
        enc = (din * rc + rc) + (rc * rc + rc)
        block = 2 * (rc * rc * 2 + rc) \
            + 2 * (82 * rc + rc) + 2 * (13 * rc + rc) + 2 * (10 * rc + rc) \
            + (rc * rc + rc) + (rc * sc + sc)
        dec = (sc * sc + sc) + (sc * dout + dout)
        assert n == enc + 20 * block + dec

    def test_param_count_trivia(self):
        assert param_count({}) == 0
        assert param_count({"w": np.zeros((512, 32, 1)),
                            "b": np.zeros(512)}) == 32 * 512 + 512


class TestForward:
    def test_output_shape(self):
        cfg = tiny_config()
        params = init(cfg, 1)
        x = np.random.default_rng(2).normal(size=(2, cfg.input_width, 20))
        fwd = forward(params, x, bundle_for(cfg, 2, 20), cfg)
        assert fwd.out.data.shape == (2, cfg.output_width, 20)
        assert np.all(np.isfinite(fwd.out.data))

    def test_zero_weights_give_standard_gaussian(self):
        cfg = tiny_config()
        params = {k: np.zeros_like(v) for k, v in init(cfg, 0).items()}
        x = np.random.default_rng(3).normal(size=(1, cfg.input_width, 5))
        fwd = forward(params, x, bundle_for(cfg, 1, 5), cfg)
        sl = split_output(fwd.out, cfg)
        assert np.all(sl.mean.data == 0.0)
        assert np.all(np.exp(sl.log_std.data) == 1.0)

    def test_causality_exact(self):
        cfg = tiny_config()
        params = init(cfg, 4)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, cfg.input_width, 30))
        ctl = bundle_for(cfg, 1, 30)
        base = forward(params, x, ctl, cfg).out.data
        x2 = x.copy()
        x2[0, :, 17] += rng.normal(size=cfg.input_width)
        pert = forward(params, x2, ctl, cfg).out.data
        assert np.array_equal(base[..., :17], pert[..., :17])
        assert not np.allclose(base[..., 17], pert[..., 17])

    def test_receptive_field_boundary(self):
        # depth of the stock net, tiny channels: field must be exactly 41
        cfg = CCNetConfig(d_motion=6, residual_channels=8, skip_channels=8,
                          skeleton_dim=5, direction_dim=4, type_dim=3)
        assert receptive_field(cfg) == 41
        t = 44
        for seed in range(3):
            # the earliest in-field frame reaches t only through every
            # block's dilated tap, so its influence is the product of 20
            # per-hop gains.  Stock-scale weights attenuate that to below
            # float64 resolution; doubling the weights puts the gain near
            # one while a missing tap would still give exactly zero.
            params = {k: (v * 2.0 if v.ndim > 1 else v)
                      for k, v in init(cfg, seed).items()}
            rng = np.random.default_rng(100 + seed)
            x = rng.normal(size=(1, cfg.input_width, 48)) * 0.1
            ctl = bundle_for(cfg, 1, 48)
            ctl.skeleton = ctl.skeleton * 0.1
            base = forward(params, x, ctl, cfg).out.data
            far = x.copy()
            far[0, :, t - 41] += 1.0
            assert np.array_equal(
                forward(params, far, ctl, cfg).out.data[..., t],
                base[..., t])
            near = x.copy()
            near[0, :, t - 40] += 1.0
            assert not np.array_equal(
                forward(params, near, ctl, cfg).out.data[..., t],
                base[..., t])

    def test_off_control_equals_zero_mask(self):
        cfg = tiny_config()
        params = init(cfg, 6)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, cfg.input_width, 12))
        on = bundle_for(cfg, 2, 12, rng=np.random.default_rng(8),
                        dir_on=True, type_on=True)
        on.dir_mask = np.zeros(2)
        on.type_mask = np.zeros(2)
        off = ControlBundle(skeleton=on.skeleton)
        a = forward(params, x, on, cfg).out.data
        b = forward(params, x, off, cfg).out.data
        assert np.array_equal(a, b)

    def test_per_sequence_mask_is_selective(self):
        cfg = tiny_config()
        params = init(cfg, 9)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, cfg.input_width, 12))
        ctl = bundle_for(cfg, 2, 12, rng=np.random.default_rng(11), dir_on=True)
        ctl.dir_mask = np.array([1.0, 0.0])
        with_dir = forward(params, x, ctl, cfg).out.data
        ctl_off = ControlBundle(skeleton=ctl.skeleton)
        no_dir = forward(params, x, ctl_off, cfg).out.data
        assert not np.allclose(with_dir[0], no_dir[0])
        assert np.array_equal(with_dir[1], no_dir[1])

    def test_inference_ignores_rng(self):
        cfg = tiny_config()
        params = init(cfg, 12)
        x = np.random.default_rng(13).normal(size=(1, cfg.input_width, 8))
        ctl = bundle_for(cfg, 1, 8)
        a = forward(params, x, ctl, cfg, rng=np.random.default_rng(1)).out.data
        b = forward(params, x, ctl, cfg, rng=np.random.default_rng(2)).out.data
        assert np.array_equal(a, b)

    def test_train_mode_dropout(self):
        cfg = tiny_config()
        params = init(cfg, 14)
        x = np.random.default_rng(15).normal(size=(1, cfg.input_width, 8))
        ctl = bundle_for(cfg, 1, 8)
        a = forward(params, x, ctl, cfg, train_mode=True,
                    rng=np.random.default_rng(1)).out.data
        b = forward(params, x, ctl, cfg, train_mode=True,
                    rng=np.random.default_rng(1)).out.data
        c = forward(params, x, ctl, cfg, train_mode=True,
                    rng=np.random.default_rng(2)).out.data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        with pytest.raises(NetworkError):
            forward(params, x, ctl, cfg, train_mode=True)

    def test_time_shift_equivariance(self):
        cfg = tiny_config()  # receptive field (2-1)*(1+1+2+4)=8
        rf = receptive_field(cfg)
        params = init(cfg, 16)
        rng = np.random.default_rng(17)
        T, s = 40, 5
        x = rng.normal(size=(1, cfg.input_width, T))
        ctl = bundle_for(cfg, 1, T)
        full = forward(params, x, ctl, cfg).out.data
        ctl2 = ControlBundle(skeleton=ctl.skeleton)
        shifted = forward(params, x[:, :, s:], ctl2, cfg).out.data
        assert np.allclose(shifted[..., rf:], full[..., s + rf:], atol=1e-12)

    def test_shape_errors(self):
        cfg = tiny_config()
        params = init(cfg, 18)
        ctl = bundle_for(cfg, 1, 4)
        with pytest.raises(NetworkError):
            forward(params, np.zeros((1, cfg.input_width + 1, 4)), ctl, cfg)
        with pytest.raises(NetworkError):
            forward(params, np.zeros((1, cfg.input_width, 0)), ctl, cfg)
        bad = ControlBundle(skeleton=np.zeros((1, cfg.skeleton_dim + 1)))
        with pytest.raises(NetworkError):
            forward(params, np.zeros((1, cfg.input_width, 4)), bad, cfg)
        lying = ControlBundle(skeleton=np.zeros((1, cfg.skeleton_dim)),
                              dir_on=True)
        with pytest.raises(NetworkError):
            forward(params, np.zeros((1, cfg.input_width, 4)), lying, cfg)


class TestSplitOutput:
    def test_widths_and_coverage(self):
        cfg = tiny_config()
        params = init(cfg, 19)
        x = np.random.default_rng(20).normal(size=(1, cfg.input_width, 6))
        out = forward(params, x, bundle_for(cfg, 1, 6), cfg).out
        sl = split_output(out, cfg)
        widths = [sl.mean, sl.log_std, sl.foot, sl.direction, sl.velocity]
        assert [v.data.shape[1] for v in widths] == [6, 6, 2, 12, 1]
        stacked = np.concatenate([v.data for v in widths], axis=1)
        assert np.array_equal(stacked, out.data)


class TestIncrementalEquivalence:
    def test_matches_full_forward(self):
        cfg = tiny_config()
        params = init(cfg, 21)
        rng = np.random.default_rng(22)
        T = 100
        x = rng.normal(size=(1, cfg.input_width, T))
        ctl = bundle_for(cfg, 1, T, rng=np.random.default_rng(23),
                         dir_on=True, type_on=True)
        full = forward(params, x, ctl, cfg).out.data[0]
        stepper = IncrementalNet(params, cfg)
        for t in range(T):
            out_t = stepper.step(x[0, :, t], ctl.skeleton[0],
                                 ctl.direction[0, :, t], ctl.mtype[0, :, t])
            assert np.abs(out_t - full[:, t]).max() < 1e-10, f"frame {t}"

    def test_reset_replays_identically(self):
        cfg = tiny_config()
        params = init(cfg, 24)
        rng = np.random.default_rng(25)
        xs = rng.normal(size=(10, cfg.input_width))
        skel = rng.normal(size=cfg.skeleton_dim)
        stepper = IncrementalNet(params, cfg)
        first = [stepper.step(x, skel).copy() for x in xs]
        stepper.reset()
        second = [stepper.step(x, skel).copy() for x in xs]
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_gradients_flow_through_forward(self):
        cfg = tiny_config()
        params = init(cfg, 26)
        tape = ad.Tape()
        rng = np.random.default_rng(27)
        x = rng.normal(size=(1, cfg.input_width, 6))
        ctl = bundle_for(cfg, 1, 6, rng=np.random.default_rng(28), dir_on=True)
        fwd = forward(params, x, ctl, cfg, tape=tape)
        loss = ad.vsum(ad.square(fwd.out))
        grads = ad.backward(tape, loss, fwd.param_vars)
        assert np.abs(grads["enc1.w"]).max() > 0
        assert np.abs(grads["block0.dir_f.w"]).max() > 0

    def test_off_controls_get_zero_gradients(self):
        cfg = tiny_config()
        params = init(cfg, 29)
        tape = ad.Tape()
        x = np.random.default_rng(30).normal(size=(1, cfg.input_width, 6))
        ctl = bundle_for(cfg, 1, 6)
        fwd = forward(params, x, ctl, cfg, tape=tape)
        loss = ad.vsum(ad.square(fwd.out))
        grads = ad.backward(tape, loss, fwd.param_vars)
        # dir/type convs never entered the graph: gradient exactly zero
        assert "block0.dir_f.w" not in fwd.param_vars
        assert np.all(grads.get("block0.dir_f.w", np.zeros(1)) == 0.0)
        assert np.abs(grads["block0.skel_f.w"]).max() > 0


class TestConfig:
    def test_dilation_default_and_validation(self):
        cfg = CCNetConfig(d_motion=10)
        assert cfg.dilations == (2,) * 20
        with pytest.raises(NetworkError):
            CCNetConfig(d_motion=10, dilations=(1, 2))
        with pytest.raises(NetworkError):
            CCNetConfig(d_motion=0)
        with pytest.raises(NetworkError):
            CCNetConfig(d_motion=4, precision="float32")

    def test_dict_round_trip(self):
        cfg = tiny_config()
        again = CCNetConfig.from_dict(cfg.to_dict())
        assert again == cfg
