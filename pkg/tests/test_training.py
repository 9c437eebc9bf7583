import numpy as np
import pytest

from stymam.checkpoint import (
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    load_checkpoint,
    save_checkpoint,
)
from stymam.generator import GeneratorConfig, generator_forward
from stymam.tensor import ConfigurationError, Tensor
from stymam.training import (
    Adam,
    DatasetError,
    TrainAbort,
    adam_update,
    discriminator_step,
    generator_step,
    init_train_state,
    load_config,
    load_generator,
    load_image_dir,
    parse_config,
    train,
    train_step,
    training_checkpoint_named,
    TrainConfig,
    _draw_batch,
)


def make_cfg(image_dirs, tmp_path, **kw):
    content, style = image_dirs
    base = dict(
        content_dir=str(content),
        style_dir=str(style),
        out_dir=str(tmp_path / "out"),
        max_steps=3,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def snapshot(named):
    return {k: v.data.copy() for k, v in named.items()}


def assert_unchanged(named, snap):
    for k, v in named.items():
        assert np.array_equal(v.data, snap[k]), k


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def test_adam_first_step_moves_by_learning_rate(rng):
    # Bias correction makes the very first step lr * g/(|g| + eps): never more
    # than lr, and essentially lr once the gradient clears the eps floor.
    for g in (1e-6, 0.5, 3.0, 1e4):
        value, m, v = adam_update(np.array(10.0), np.array(g), np.zeros(()), np.zeros(()), 1, 0.1)
        step = 10.0 - value
        assert 0.0 < step <= 0.1 + 1e-15
        if g >= 0.5:
            assert abs(step - 0.1) < 1e-6


def test_adam_constant_gradient_trace():
    # Constant gradients keep both corrected moments exactly at one, so the
    # parameter walks down in even lr-sized steps.
    value = np.array(1.0)
    m = v = np.zeros(())
    seen = []
    for t in range(1, 4):
        value, m, v = adam_update(value, np.array(1.0), m, v, t, 0.1, beta1=0.9, beta2=0.999)
        seen.append(float(value))
    for got, want in zip(seen, (0.9, 0.8, 0.7)):
        assert abs(got - want) < 1e-7


def test_adam_matches_inline_oracle(rng):
    g = rng.standard_normal(5)
    value = rng.standard_normal(5)
    m = v = np.zeros(5)
    got, gm, gv = adam_update(value.copy(), g, m.copy(), v.copy(), 3, 0.01, 0.5, 0.999, 1e-8)
    om = 0.5 * m + (1.0 - 0.5) * g
    ov = 0.999 * v + (1.0 - 0.999) * g * g
    want = value - 0.01 * (om / (1 - 0.5**3)) / (np.sqrt(ov / (1 - 0.999**3)) + 1e-8)
    assert np.max(np.abs(got - want)) < 1e-15
    assert np.array_equal(gm, om) and np.array_equal(gv, ov)


def test_adam_class_skips_missing_grads(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    q = Tensor(rng.standard_normal(4), requires_grad=True)
    q.grad = np.ones(4)
    opt = Adam({"p": p, "q": q}, lr=0.05)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)  # no gradient, no movement
    assert not np.array_equal(q.data, before)
    assert opt.t == 1


def test_zero_learning_rate_changes_nothing(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path, lr_g=0.0, lr_d=0.0))
    gen_snap, disc_snap = snapshot(state.gen.named()), snapshot(state.disc.named())
    rows = [train_step(state) for _ in range(2)]
    assert_unchanged(state.gen.named(), gen_snap)
    assert_unchanged(state.disc.named(), disc_snap)
    assert all(np.isfinite(list(r.values())).all() for r in rows)


# ---------------------------------------------------------------------------
# Step mechanics
# ---------------------------------------------------------------------------

def test_discriminator_step_leaves_generator_alone(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path))
    _draw_batch(state)
    gen_snap = snapshot(state.gen.named())
    disc_snap = snapshot(state.disc.named())
    loss_d = discriminator_step(state)
    assert np.isfinite(loss_d)
    assert_unchanged(state.gen.named(), gen_snap)
    with pytest.raises(AssertionError):
        assert_unchanged(state.disc.named(), disc_snap)  # it did train


def test_generator_step_leaves_discriminator_alone(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path))
    _draw_batch(state)
    disc_snap = snapshot(state.disc.named())
    gen_snap = snapshot(state.gen.named())
    loss_g, loss_c, loss_total = generator_step(state)
    assert np.isfinite([loss_g, loss_c, loss_total]).all()
    assert_unchanged(state.disc.named(), disc_snap)
    with pytest.raises(AssertionError):
        assert_unchanged(state.gen.named(), gen_snap)


def test_feature_extractor_survives_training(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path))
    phi_snap = snapshot(state.phi.named())
    train_step(state)
    train_step(state)
    assert_unchanged(state.phi.named(), phi_snap)


def test_content_only_mode_skips_discriminator(image_dirs, tmp_path):
    cfg = make_cfg(image_dirs, tmp_path, lambda_adv=0.0, style_dir=str(tmp_path / "nowhere"))
    state = init_train_state(cfg)
    assert state.disc is None and state.opt_d is None and state.styles == []
    metrics = train_step(state)
    assert metrics["loss_d"] == 0.0 and metrics["loss_g"] == 0.0
    assert metrics["loss_total"] == pytest.approx(metrics["loss_c"] * cfg.lambda_c)


def test_nan_weight_aborts_with_tensor_name(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path, lr_g=0.0, lr_d=0.0))
    state.gen.embed_w1.data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainAbort) as err:
        train_step(state)
    assert "not finite" in str(err.value) and "step 1" in str(err.value)


def test_batch_drawing_is_seed_deterministic(image_dirs, tmp_path):
    a = init_train_state(make_cfg(image_dirs, tmp_path, seed=9))
    b = init_train_state(make_cfg(image_dirs, tmp_path, seed=9))
    _draw_batch(a)
    _draw_batch(b)
    for (ca, sa), (cb, sb) in zip(a.batch, b.batch):
        assert np.array_equal(ca, cb) and np.array_equal(sa, sb)


# ---------------------------------------------------------------------------
# Full loop
# ---------------------------------------------------------------------------

def test_train_writes_metrics_and_final_checkpoint(image_dirs, tmp_path):
    cfg = make_cfg(image_dirs, tmp_path, max_steps=2)
    train(cfg)
    out = tmp_path / "out"
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "step,loss_d,loss_g,loss_c,loss_total"
    assert len(lines) == 3
    assert (out / "ckpt_final.stymam").exists()


def test_checkpoint_every_writes_intermediates(image_dirs, tmp_path):
    cfg = make_cfg(image_dirs, tmp_path, max_steps=4, checkpoint_every=2)
    train(cfg)
    out = tmp_path / "out"
    assert (out / "ckpt_step2.stymam").exists() and (out / "ckpt_step4.stymam").exists()


def test_same_seed_runs_are_identical(image_dirs, tmp_path):
    cfg_a = make_cfg(image_dirs, tmp_path, out_dir=str(tmp_path / "a"), max_steps=3, seed=11)
    cfg_b = make_cfg(image_dirs, tmp_path, out_dir=str(tmp_path / "b"), max_steps=3, seed=11)
    train(cfg_a)
    train(cfg_b)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "ckpt_final.stymam").read_bytes() == (
        tmp_path / "b" / "ckpt_final.stymam"
    ).read_bytes()


def test_different_seeds_diverge(image_dirs, tmp_path):
    cfg_a = make_cfg(image_dirs, tmp_path, out_dir=str(tmp_path / "a"), max_steps=2, seed=1)
    cfg_b = make_cfg(image_dirs, tmp_path, out_dir=str(tmp_path / "b"), max_steps=2, seed=2)
    train(cfg_a)
    train(cfg_b)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_is_byte_identical(tmp_path, rng):
    named = {
        "alpha": Tensor(rng.standard_normal(())),
        "w": Tensor(rng.standard_normal((3, 4))),
        "deep.name.with.dots": Tensor(rng.standard_normal((2, 2, 2))),
    }
    p1, p2 = tmp_path / "one.stymam", tmp_path / "two.stymam"
    save_checkpoint(named, p1)
    loaded = load_checkpoint(p1)
    assert set(loaded) == set(named)
    for k in named:
        assert np.array_equal(loaded[k], np.asarray(named[k].data))
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.stymam"
    path.write_bytes(b"NOTMINE0" + b"\x00" * 64)
    with pytest.raises(CheckpointMagicError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path, rng):
    path = tmp_path / "cut.stymam"
    save_checkpoint({"w": Tensor(rng.standard_normal((8, 8)))}, path)
    raw = path.read_bytes()
    for cut in (10, len(raw) // 2, len(raw) - 3):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)


def test_load_generator_via_metadata(image_dirs, tmp_path, rng):
    cfg = make_cfg(image_dirs, tmp_path, max_steps=1)
    state = train(cfg)
    path = tmp_path / "out" / "ckpt_final.stymam"
    gw = load_generator(path)
    img = Tensor(rng.uniform(-1.0, 1.0, (32, 32, 3)))
    want = generator_forward(img, state.gen, state.paths).data
    assert np.array_equal(generator_forward(img, gw).data, want)


def test_load_generator_shape_mismatch_names_tensor(image_dirs, tmp_path):
    cfg = make_cfg(image_dirs, tmp_path, max_steps=1)
    train(cfg)
    path = tmp_path / "out" / "ckpt_final.stymam"
    wide = GeneratorConfig(channels=16, state_dim=4, num_groups=1, blocks_per_group=2)
    with pytest.raises(CheckpointShapeError) as err:
        load_generator(path, config=wide)
    assert "gen." in str(err.value)


def test_load_generator_without_metadata(tmp_path, rng):
    save_checkpoint({"gen.embed.conv1.w": Tensor(rng.standard_normal((3, 3, 3, 8)))}, tmp_path / "x.stymam")
    with pytest.raises(CheckpointShapeError):
        load_generator(tmp_path / "x.stymam")


def test_training_checkpoint_carries_architecture(image_dirs, tmp_path):
    state = init_train_state(make_cfg(image_dirs, tmp_path))
    named = training_checkpoint_named(state)
    assert named["meta.gen.channels"] == 8.0
    assert named["meta.disc.num_scales"] == 2.0
    assert any(k.startswith("gen.groups.0.1.") for k in named)


# ---------------------------------------------------------------------------
# Config and data loading
# ---------------------------------------------------------------------------

def test_parse_config_full_round(tmp_path):
    text = """
    # training run
    content_dir = /data/content
    style_dir = /data/style   # inline comment
    lr_g = 1e-3
    max_steps = 42
    profile = desk
    """
    cfg = parse_config(text)
    assert cfg.content_dir == "/data/content"
    assert cfg.style_dir == "/data/style"
    assert cfg.lr_g == 1e-3 and cfg.max_steps == 42


def test_parse_config_unknown_key_names_line():
    with pytest.raises(ConfigurationError) as err:
        parse_config("momentum = 0.9", source="run.cfg")
    assert "run.cfg:1" in str(err.value) and "momentum" in str(err.value)


def test_parse_config_bad_value():
    with pytest.raises(ConfigurationError):
        parse_config("max_steps = soon")


def test_parse_config_requires_assignment():
    with pytest.raises(ConfigurationError):
        parse_config("just some words")


def test_parse_config_validates_profile_and_mode():
    with pytest.raises(ConfigurationError):
        parse_config("profile = datacenter")
    with pytest.raises(ConfigurationError):
        parse_config("adv_mode = hinge")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.cfg")


def test_load_image_dir_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_image_dir(tmp_path / "missing", 32)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DatasetError):
        load_image_dir(empty, 32)


def test_load_image_dir_normalizes_and_resizes(image_dirs):
    content, _ = image_dirs
    images = load_image_dir(content, 16)
    assert len(images) == 4
    for img in images:
        assert img.shape == (16, 16, 3)
        assert img.min() >= -1.0 and img.max() <= 1.0


def test_image_size_must_divide_by_four(image_dirs, tmp_path):
    with pytest.raises(ConfigurationError):
        init_train_state(make_cfg(image_dirs, tmp_path, image_size=30))
