import numpy as np
import pytest

from densewf.densee import (
    GATE,
    ConfigMismatchError,
    DenseeModel,
    PatchSource,
    TrainConfig,
    detect_corners,
    evaluate_heads,
    extract_sinogram_wavefront,
    extract_wavefront,
    image_source,
    load_model,
    make_training_set,
    save_model,
    sinogram_source,
    sinogram_system_config,
    train,
)
from densewf.metrics import head_scores, mean_accuracy
from densewf.neuralnet import patch_architecture
from densewf.phantoms import PhantomSpec, analytic_wavefront, ellipse, rasterize, sample_phantom
from densewf.radon import radon
from densewf.shearlet import ShearletConfig, build_system

SMALL = dict(widths=(4, 4, 8, 8), hidden=16)


def _disk_phantom(center, radius, M=64):
    return PhantomSpec((ellipse(center, (radius, radius)),), M)


@pytest.fixture(scope="module")
def disk_sources(system64):
    specs = [sample_phantom(seed, 64) for seed in range(4)]
    return [image_source(rasterize(s), system64, analytic_wavefront(s)) for s in specs]


@pytest.fixture(scope="module")
def small_model(disk_sources):
    data = make_training_set(disk_sources, [0, 90, GATE], 40, seed=0)
    model = DenseeModel.create(ShearletConfig(64), seed=0, **SMALL)
    return train(model, data, TrainConfig(batch_size=16, steps=30, lr=0.05, seed=0))


# --- labels ----------------------------------------------------------------------------


def test_labels_match_wavefront(disk_sources):
    data = make_training_set(disk_sources, [0, 45, GATE], 30, seed=1)
    for h in data.heads:
        rows, y = data.head_data(h)
        for r, t in zip(rows, y):
            s, m1, m2 = data.index[r]
            lab = disk_sources[s].labels[m1 - 1, m2 - 1]
            want = not lab.any() if h == GATE else lab[[(h - 1) % 180, h, (h + 1) % 180]].any()
            assert bool(t) == want


def test_smooth_and_boundary_examples(system64):
    spec = _disk_phantom((31.0, 31.0), 12)
    wf = analytic_wavefront(spec)
    src = image_source(rasterize(spec), system64, wf)
    # centre of the disk is smooth: gate label only
    assert not src.labels[31, 31].any()
    # the lowest boundary pixel of the middle column has normal angle 0
    bottom = int(np.nonzero(wf[:, 31].any(axis=-1))[0].max())
    assert np.nonzero(wf[bottom, 31])[0].tolist() == [0]
    data = make_training_set([src], [0, GATE], 400, seed=0)
    cells = {h: {tuple(data.index[r, 1:]) for r, t in zip(*data.head_data(h)) if t} for h in (0, GATE)}
    assert (bottom + 1, 32) in cells[0]
    assert (32, 32) in cells[GATE] or not wf[31, 31].any()


def test_balance(disk_sources):
    data = make_training_set(disk_sources, [0, 30, GATE], 50, seed=2)
    for h in data.heads:
        _, y = data.head_data(h)
        assert abs(int(y.sum()) - (len(y) - int(y.sum()))) <= 1
        assert len(y) <= 50 * len(disk_sources)


def test_training_set_errors(system64, disk_sources):
    img = rasterize(_disk_phantom((31.5, 31.5), 6))
    with pytest.raises(ValueError):
        image_source(img, system64, np.zeros((63, 64, 180), np.uint8))
    blank = image_source(np.zeros((64, 64)), system64, np.zeros((64, 64, 180), np.uint8))
    with pytest.raises(ValueError):
        make_training_set([blank], [0], 10, seed=0)
    with pytest.raises(ValueError):
        make_training_set(disk_sources, [181], 10, seed=0)


# --- training ----------------------------------------------------------------------------


def test_zero_steps_keeps_initialization(disk_sources):
    data = make_training_set(disk_sources, [0], 20, seed=0)
    model = DenseeModel.create(ShearletConfig(64), seed=3, **SMALL)
    init = [t.copy() for t in model.head(0).tensors()]
    train(model, data, TrainConfig(batch_size=8, steps=0))
    assert all(np.array_equal(a, b) for a, b in zip(init, model.head(0).tensors()))
    assert 0 not in model.trained


def test_separable_toy_reaches_99_percent():
    rng = np.random.default_rng(5)
    # the label is the sign of channel 0 at the patch centre
    sources = []
    for _ in range(20):
        n = 40
        values = 0.3 * rng.standard_normal((n, n, 3)).astype(np.float32)
        labels = np.zeros((n, n, 180), np.uint8)
        pos = rng.random((n, n)) < 0.5
        labels[pos, 0] = 1
        values[..., 0] += np.where(pos, 1.0, -1.0)
        mask = np.zeros((n, n), bool)
        mask[10 : n - 10, 10 : n - 10] = True
        sources.append(PatchSource(values, labels, 0, mask))
    data = make_training_set(sources, [0], 20, seed=0)
    model = DenseeModel(ShearletConfig(32), patch_architecture(3, **SMALL), seed=0)
    train(model, data, TrainConfig(batch_size=32, steps=500, lr=0.05, seed=0, augment=False))
    acc = mean_accuracy(list(head_scores(evaluate_heads(model, data)).values()))
    assert acc >= 0.99


def test_training_is_deterministic(disk_sources):
    data = make_training_set(disk_sources, [0, GATE], 20, seed=0)
    runs = []
    for _ in range(2):
        model = DenseeModel.create(ShearletConfig(64), seed=1, **SMALL)
        train(model, data, TrainConfig(batch_size=8, steps=5, seed=4))
        runs.append([t for h in (0, GATE) for t in model.head(h).tensors()])
    assert all(np.array_equal(a, b) for a, b in zip(*runs))


def test_head_independence(disk_sources):
    data = make_training_set(disk_sources, [0, 90, GATE], 20, seed=0)
    cfg = TrainConfig(batch_size=8, steps=4, seed=0)
    alone = train(DenseeModel.create(ShearletConfig(64), seed=2, **SMALL), data, cfg, heads=[90])
    model = train(DenseeModel.create(ShearletConfig(64), seed=2, **SMALL), data, cfg)
    ref = [t.copy() for t in model.head(90).tensors()]
    assert all(np.array_equal(a, b) for a, b in zip(ref, alone.head(90).tensors()))
    # retraining head 0 leaves head 90 untouched
    train(model, data, TrainConfig(batch_size=8, steps=6, seed=7), heads=[0])
    assert all(np.array_equal(a, b) for a, b in zip(ref, model.head(90).tensors()))


def test_train_requires_covered_heads(disk_sources):
    data = make_training_set(disk_sources, [0], 20, seed=0)
    with pytest.raises(ValueError):
        train(DenseeModel.create(ShearletConfig(64), seed=0, **SMALL), data, TrainConfig(steps=1), heads=[5])
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


# --- extraction ---------------------------------------------------------------------------


def test_border_is_empty(small_model, rng):
    wf = extract_wavefront(rng.random((64, 64)), small_model, 0.01, tau_gate=0.99)
    assert wf.any()
    inner = np.zeros((64, 64), bool)
    inner[10:54, 10:54] = True
    assert not wf[~inner].any()


def test_tau_limits_and_monotonicity(small_model):
    img = rasterize(_disk_phantom((31.5, 31.5), 12))
    assert not extract_wavefront(img, small_model, 1 - 1e-12).any()
    prev = None
    for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
        wf = extract_wavefront(img, small_model, tau, tau_gate=0.5)
        if prev is not None:
            assert not (wf & ~prev).any()
        prev = wf
    with pytest.raises(ValueError):
        extract_wavefront(img, small_model, 1.0)


def test_only_trained_heads_fire(small_model, rng):
    wf = extract_wavefront(rng.random((64, 64)), small_model, 0.01, tau_gate=0.99)
    fired = set(np.nonzero(wf.any(axis=(0, 1)))[0].tolist())
    assert fired <= {0, 90}


def test_translation_covariance(small_model):
    img = rasterize(_disk_phantom((30.2, 32.7), 11.5))
    wf = extract_wavefront(img, small_model, 0.5)
    sh = extract_wavefront(np.roll(img, (2, -1), axis=(0, 1)), small_model, 0.5)
    assert wf[10:52, 11:54].any()
    # compare where both the original and the shifted centre are admissible
    assert np.array_equal(wf[10:52, 11:54], sh[12:54, 10:53])


def test_extract_shape_errors(small_model, system32):
    with pytest.raises(ValueError):
        extract_wavefront(np.zeros((32, 32)), small_model)
    with pytest.raises(ConfigMismatchError):
        extract_wavefront(np.zeros((64, 64)), small_model, system=system32)


def test_sinogram_extraction_columns():
    N = 32
    config = sinogram_system_config(N)
    system = build_system(config)
    spec = _disk_phantom((12.0, 18.0), 5, M=32)
    sino = radon(rasterize(spec), angles=np.arange(0, 180, 3.0), origin="corner")
    src = sinogram_source(sino, system, np.zeros((N, 180, 180), np.uint8))
    assert src.values.shape == (N + 20, 200, config.channel_count)
    model = DenseeModel.create(config, seed=0, **SMALL)
    model.trained.update({3, 40})
    Y = extract_sinogram_wavefront(sino, model, 0.01, angles=[0, 60, 120], system=system)
    assert Y.shape == (N, 180, 180)
    assert set(np.nonzero(Y.any(axis=(0, 2)))[0].tolist()) <= {0, 60, 120}
    assert set(np.nonzero(Y.any(axis=(0, 1)))[0].tolist()) <= {3, 40}


# --- corners ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "bins,corner",
    [([0, 5], False), ([0, 90], True), ([175, 3], False), ([0, 10], False), ([0, 11], True), ([10], False), ([], False)],
)
def test_corner_truth_table(bins, corner):
    wf = np.zeros((3, 3, 180), np.uint8)
    wf[1, 2, bins] = 1
    assert detect_corners(wf) == ([(1, 2)] if corner else [])


# --- persistence --------------------------------------------------------------------------


def test_save_load_round_trip(small_model, tmp_path, system32):
    path = tmp_path / "model.wfm"
    save_model(small_model, path)
    back = load_model(path)
    assert back.trained == small_model.trained
    for h in small_model.trained:
        assert all(np.array_equal(a, b) for a, b in zip(small_model.head(h).tensors(), back.head(h).tensors()))
    assert np.array_equal(back.channel_scale, small_model.channel_scale)
    img = rasterize(_disk_phantom((31.5, 31.5), 12))
    assert np.array_equal(extract_wavefront(img, back), extract_wavefront(img, small_model))
    with pytest.raises(ConfigMismatchError):
        load_model(path, system=system32)
