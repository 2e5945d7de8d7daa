"""End-to-end acceptance suite.

Each test covers one numbered acceptance criterion; the conftest summary
hook prints one PASS/FAIL line per criterion at the end of the run.
"""
import numpy as np
import pytest
import torch

from braingen.conditioning import CrossAttentionWeights, FusionMode, attention_rows
from braingen.embeddings import synthetic_index
from braingen.errors import DataError
from braingen.evaluator import (
    CrossSubjectMatrix,
    MetricReport,
    mse,
    pcc,
    round_half_up,
    strategy_comparison,
    strategy_table_csv,
)
from braingen.sampler import generate
from braingen.schedule import build_linear_schedule, forward_step, q_sample
from braingen.store import average_repetitions, compute_stats, normalize, open_archive
from braingen.substrate import finite_diff_check, softmax_rows
from braingen.synth import make_synthetic_dataset
from braingen.trainer import (
    AdamWState,
    TrainConfig,
    adamw_step,
    diffusion_loss,
    diffusion_loss_given,
    draw_timesteps_noise,
    train,
)
from braingen.unet import DenoiserConfig, build_denoiser, named_params, pad_to_grid

F64 = torch.float64


def test_01_schedule_consistency():
    """Iterated forward steps match the closed-form marginal within 2%."""
    sched = build_linear_schedule(1000, 1e-4, 0.02)
    n = 10_000
    y0 = 1.3
    rng = np.random.default_rng(3)
    y = np.full(n, y0)
    for t in range(1, 1001):
        y = forward_step(y, t, rng.standard_normal(n), sched)
        if t in (1, 100, 1000):
            abar = sched.alpha_bar(t)
            mean, var = np.sqrt(abar) * y0, 1.0 - abar
            assert abs(y.mean() - mean) <= 0.02 * (abs(mean) + np.sqrt(var))
            assert abs(y.var() - var) <= 0.02 * var
    # the closed form itself agrees with the same marginal moments
    rng = np.random.default_rng(106)
    for t in (1, 100, 1000):
        abar = sched.alpha_bar(t)
        sample = q_sample(np.full(n, y0), t, rng.standard_normal(n), sched)
        mean, var = np.sqrt(abar) * y0, 1.0 - abar
        assert abs(sample.mean() - mean) <= 0.02 * (abs(mean) + np.sqrt(var))
        assert abs(sample.var() - var) <= 0.02 * var


def _fd_setup():
    cfg = DenoiserConfig(sample_shape=(8, 16), level_channels=(8, 8, 8, 8),
                         heads=1, cross_attn_dim=16, time_embed_dim=8)
    model = build_denoiser(cfg, seed=1)
    sched = build_linear_schedule(100, 1e-3, 0.2)
    gen = torch.Generator().manual_seed(0)
    y0 = torch.randn(4, 1, 8, 16, dtype=F64, generator=gen)
    tok = torch.randn(4, 1, 16, dtype=F64, generator=gen)
    return model, sched, gen, y0, tok


def test_02_gradient_correctness():
    """Backprop gradients of the training loss match central differences.

    The check runs at a briefly-trained parameter point: the seed state has a
    zeroed output projection (gradients vanish identically there), and a few
    optimizer steps put every block at a realistically-scaled operating point.
    """
    model, sched, gen, y0, tok = _fd_setup()
    params = named_params(model)
    state = AdamWState(params)
    for _ in range(30):
        loss = diffusion_loss(model, y0, tok, sched, gen)
        for p in params:
            p.value.grad = None
        loss.backward()
        adamw_step(params, state, 1e-3, 0.0)
    t, eps = draw_timesteps_noise(y0.shape, sched, gen)
    err = finite_diff_check(
        lambda: diffusion_loss_given(model, y0, tok, t, eps, sched),
        params, eps=1e-5, sample_count=120, seed=7,
    )
    assert err < 1e-3


def test_03_zero_network_loss_sanity():
    """A network predicting exactly zero noise scores a loss of ~1."""
    cfg = DenoiserConfig(sample_shape=(8, 16), level_channels=(8, 8, 8, 8),
                         heads=1, cross_attn_dim=16, time_embed_dim=8)
    model = build_denoiser(cfg, seed=0)  # fresh: output conv is zeroed
    sched = build_linear_schedule(1000, 1e-4, 0.02)
    gen = torch.Generator().manual_seed(5)
    y0 = torch.randn(100, 1, 8, 16, dtype=F64, generator=gen)
    assert y0.numel() >= 10_000
    tok = torch.randn(100, 1, 16, dtype=F64, generator=gen)
    loss = diffusion_loss(model, y0, tok, sched, gen)
    assert loss.item() == pytest.approx(1.0, abs=0.05)


def test_04_overfits_small_set(tmp_path):
    """Training memorizes 8 trials; averaged generations correlate > 0.5."""
    arch_path, _, _ = make_synthetic_dataset(
        tmp_path, n_images=8, n_train_trials=8, test_reps=1,
        n_channels=8, n_timepoints=32, noise_std=0.02, seed=3)
    archive = open_archive(arch_path)
    ids = sorted({r.image_id for r in archive.index})
    provider = synthetic_index(3, ids, 768)
    cfg = DenoiserConfig(sample_shape=(8, 32), level_channels=(16, 16, 16, 16),
                         heads=1, cross_attn_dim=768, time_embed_dim=16)
    model = build_denoiser(cfg, seed=3)
    sched = build_linear_schedule(100, 1e-3, 0.2)
    tc = TrainConfig(learning_rate=2e-3, weight_decay=0.0, epochs=500,
                     batch_size=8, seed=3, max_steps=500,
                     checkpoint_every=10 ** 9)
    _, trace = train(tc, model, archive, provider, sched, tmp_path / "run", "s01")
    losses = trace.losses
    initial = float(np.mean(losses[:10]))
    final = float(np.mean(losses[-10:]))
    assert final < 0.3 * initial

    stats = compute_stats(archive, "s01", "train")
    targets, _ = average_repetitions(archive, "s01", "train")
    pccs = []
    for image_id in ids:
        samples = generate(model, provider.get(image_id), sched, seed=3,
                           n_samples=16, view="normalized")
        pccs.append(pcc(np.mean(samples, axis=0),
                        normalize(targets[image_id], stats)))
    assert float(np.mean(pccs)) > 0.5


def test_05_cross_attention_properties():
    gen = torch.Generator().manual_seed(0)

    def mk(*shape):
        return torch.randn(*shape, generator=gen, dtype=F64)

    for _ in range(100):
        w = CrossAttentionWeights(w_q=mk(6, 6), w_k=mk(4, 6), w_v=mk(4, 6),
                                  w_out=mk(6, 6), heads=2)
        h = mk(3, 6)
        tokens = mk(5, 4)
        logits = (h @ w.w_q) @ (tokens @ w.w_k).T
        rows = softmax_rows(logits)
        assert torch.all((rows.sum(dim=-1) - 1.0).abs() < 1e-6)
        # convexity: outputs bounded by value-column extremes
        out = attention_rows(h, tokens, w)
        v = tokens @ w.w_v
        assert torch.all(out >= v.min(dim=0).values - 1e-9)
        assert torch.all(out <= v.max(dim=0).values + 1e-9)
        # permutation invariance
        perm = torch.randperm(5, generator=gen)
        assert torch.all((out - attention_rows(h, tokens[perm], w)).abs() < 1e-6)

    # single key: the value row is returned exactly
    w = CrossAttentionWeights(w_q=mk(6, 6), w_k=mk(4, 6), w_v=mk(4, 6),
                              w_out=mk(6, 6), heads=1)
    token = mk(1, 4)
    h = mk(5, 6)
    assert torch.equal(attention_rows(h, token, w),
                       (token @ w.w_v).expand(5, 6))


def test_06_train_and_generate_are_bit_reproducible(tmp_path):
    import yaml

    from braingen.cli import main

    assert main(["synth-data", "--out", str(tmp_path / "data"), "--images", "2",
                 "--channels", "8", "--timepoints", "16", "--trials", "4",
                 "--seed", "6"]) == 0
    cfg = {
        "archive": str(tmp_path / "data" / "archive"),
        "embeddings": str(tmp_path / "data" / "embeddings.f32"),
        "seed": 6,
        "model": {"level_channels": [8, 8, 8, 8], "heads": 1,
                  "time_embed_dim": 8},
        "schedule": {"T": 5, "beta_start": 1e-3, "beta_end": 0.2},
        "train": {"epochs": 1, "batch_size": 4, "learning_rate": 1e-3,
                  "max_steps": 2},
    }
    blobs = []
    for run in ("a", "b"):
        cfg["out_dir"] = str(tmp_path / run)
        path = tmp_path / f"{run}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        assert main(["train", "--config", str(path)]) == 0
        assert main(["generate", "--config", str(path)]) == 0
        root = tmp_path / run
        blobs.append((
            (root / "train" / "s01" / "checkpoint_final.bgck").read_bytes(),
            (root / "generated" / "s01" / "trials.f32").read_bytes(),
        ))
    assert blobs[0][0] == blobs[1][0]
    assert blobs[0][1] == blobs[1][1]


# Printed per-cell values from the published within- and cross-subject tables.
EEG_MSE = {f"{i+1}": v for i, v in enumerate(
    [0.178, 0.212, 0.189, 0.225, 0.269, 0.247, 0.213, 0.200, 0.204, 0.234])}
EEG_PCC = {f"{i+1}": v for i, v in enumerate(
    [0.228, 0.191, 0.216, 0.173, 0.139, 0.159, 0.186, 0.231, 0.140, 0.213])}
MEG_MSE = {f"{i+1}": v for i, v in enumerate([0.607, 0.856, 0.964, 0.623])}
MEG_PCC = {f"{i+1}": v for i, v in enumerate([0.128, 0.198, 0.061, 0.099])}

EEG_CROSS_MSE_ROWS = [
    [None, 0.204, 0.191, 0.202, 0.195, 0.193, 0.192, 0.193, 0.193, 0.195],
    [0.216, None, 0.217, 0.220, 0.218, 0.213, 0.221, 0.215, 0.213, 0.220],
    [0.206, 0.220, None, 0.216, 0.203, 0.204, 0.215, 0.210, 0.205, 0.209],
    [0.231, 0.241, 0.229, None, 0.229, 0.230, 0.233, 0.230, 0.224, 0.237],
    [0.285, 0.296, 0.279, 0.288, None, 0.279, 0.289, 0.280, 0.278, 0.288],
    [0.270, 0.280, 0.266, 0.275, 0.263, None, 0.270, 0.265, 0.259, 0.270],
    [0.224, 0.240, 0.229, 0.230, 0.226, 0.224, None, 0.227, 0.217, 0.233],
    [0.217, 0.225, 0.217, 0.225, 0.214, 0.209, 0.219, None, 0.215, 0.221],
    [0.224, 0.235, 0.223, 0.228, 0.222, 0.216, 0.221, 0.225, None, 0.230],
    [0.243, 0.253, 0.239, 0.253, 0.244, 0.242, 0.251, 0.245, 0.244, None],
]


def test_07_table_aggregation_oracle():
    """The report builders reproduce every printed average at 3 decimals."""
    eeg = MetricReport(mse_per_subject=EEG_MSE, pcc_per_subject=EEG_PCC)
    assert round_half_up(eeg.mse_average) == 0.217
    assert round_half_up(eeg.pcc_average) == 0.188
    meg = MetricReport(mse_per_subject=MEG_MSE, pcc_per_subject=MEG_PCC)
    assert round_half_up(meg.mse_average) == 0.763
    assert round_half_up(meg.pcc_average) == 0.122

    subjects = [f"{i+1}" for i in range(10)]
    values = {
        s: {t: cell for t, cell in zip(subjects, row) if cell is not None}
        for s, row in zip(subjects, EEG_CROSS_MSE_ROWS)
    }
    mat = CrossSubjectMatrix(values, subjects)
    mean, std = mat.source_stats("1")
    assert round_half_up(mean) == 0.195
    assert round_half_up(std) == 0.005
    assert round_half_up(mat.target_stats("1")[0]) == 0.235

    # rendered rows carry the same rounded numbers
    csv = mat.to_csv().splitlines()
    assert csv[1].endswith(",0.195,0.005")
    assert csv[-2].split(",")[1] == "0.235"


def test_08_metric_properties():
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal(128), rng.standard_normal(128)
    assert abs(pcc(2.5 * x + 4.0, y) - pcc(x, y)) < 1e-9
    assert pcc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pcc(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert mse(x + 3.0, y + 3.0) == mse(x, y)
    assert pcc([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)


PRESET_SHAPES = {
    "eeg": ((63, 250), (64, 256)),
    "meg": ((271, 200), (272, 200)),
}


def test_09_preset_shapes():
    from braingen.conditioning import ConditionEmbedding

    eeg_emitted = None
    for name, (sample, padded) in PRESET_SHAPES.items():
        cfg = DenoiserConfig(sample_shape=sample)  # published architecture
        assert cfg.padded_shape == padded
        probe = torch.zeros(1, 1, *sample, dtype=F64)
        yp, spec = pad_to_grid(probe)
        assert yp.shape[-2:] == padded

        model = build_denoiser(cfg, seed=0)
        sched = build_linear_schedule(1, 0.01, 0.01)
        cond = ConditionEmbedding(np.zeros(768))
        out = generate(model, cond, sched, seed=0, n_samples=1,
                       view="normalized")[0]
        assert out.shape == sample
        if name == "eeg":
            eeg_emitted = out.shape
        del model

    # swapping the fusion strategy changes no shapes
    sample, padded = PRESET_SHAPES["eeg"]
    tok = torch.zeros(1, 1, 768, dtype=F64)
    y = torch.zeros(1, 1, *padded, dtype=F64)
    for mode in (FusionMode.ADDITION, FusionMode.CONCATENATION):
        cfg = DenoiserConfig(sample_shape=sample, fusion=mode)
        assert cfg.padded_shape == padded
        model = build_denoiser(cfg, seed=0)
        with torch.no_grad():
            out = model(y, torch.tensor([1.0], dtype=F64), tok)
        assert out.shape == y.shape
        del model
    assert eeg_emitted == (63, 250)


def test_10_topography(tmp_path):
    from braingen.topoviz import disk_montage, interpolate_scalp, render_comparison, topo_series

    names = [f"ch{i:02d}" for i in range(63)]
    montage = disk_montage(names)

    # constant field interpolates to a constant inside the disk
    grid = interpolate_scalp(np.full(63, 2.5), montage, grid_res=33)
    assert np.all(np.abs(grid[np.isfinite(grid)] - 2.5) < 1e-9)

    rng = np.random.default_rng(10)
    signal = rng.standard_normal((63, 250))
    series = topo_series(signal, montage, names, window_ms=100.0, rate_hz=250.0,
                         grid_res=17)
    assert len(series.frames) == 10

    # identical train/test inputs: the difference row is exactly zero
    diff = signal - signal
    diff_series = topo_series(diff, montage, names, window_ms=100.0,
                              rate_hz=250.0, grid_res=17)
    for _, _, vals, frame in diff_series.frames:
        assert np.all(vals == 0.0)
        assert np.all(frame[np.isfinite(frame)] == 0.0)

    out = render_comparison(signal, signal, signal, montage, names,
                            window_ms=100.0, rate_hz=250.0,
                            out_path=tmp_path / "t.png", grid_res=12)
    assert out.read_bytes()[:4] == b"\x89PNG"


def test_11_strategy_comparison_harness(tmp_path):
    arch_path, emb_path, _ = make_synthetic_dataset(
        tmp_path / "data", n_images=2, n_train_trials=4, test_reps=1,
        n_channels=8, n_timepoints=16, seed=11)
    archive = open_archive(arch_path)
    ids = sorted({r.image_id for r in archive.index})
    provider = synthetic_index(11, ids, 768)
    model_cfg = DenoiserConfig(sample_shape=(8, 16), level_channels=(8, 8, 8, 8),
                               heads=1, cross_attn_dim=768, time_embed_dim=8)
    train_cfg = TrainConfig(learning_rate=1e-3, weight_decay=0.0, epochs=1,
                            batch_size=4, seed=11, max_steps=2)
    sched = build_linear_schedule(5, 1e-3, 0.2)
    results = strategy_comparison(model_cfg, train_cfg, archive, provider,
                                  sched, ["s01"], tmp_path / "runs")
    assert set(results) == set(FusionMode)
    for report in results.values():
        assert np.isfinite(report.mse_average)
        assert np.isfinite(report.pcc_average)
    table = strategy_table_csv(results, "mse").strip().splitlines()
    assert len(table) == 4  # header + one row per fusion mode
    assert {line.split(",")[0] for line in table[1:]} == \
        {"cross_attention", "addition", "concatenation"}
