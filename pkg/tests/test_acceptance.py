"""Numbered acceptance criteria. Criteria 5 to 8 train desk-scale models and take a while."""
import io
import time

import numpy as np
import pytest

import test_neuralnet
import test_radon
from densewf import desk
from densewf.densee import (
    GATE,
    DenseeModel,
    TrainConfig,
    build_system_cached,
    detect_corners,
    evaluate_heads,
    make_training_set,
    sinogram_system_config,
    train,
)
from densewf.metrics import (
    bins_to_directions,
    hausdorff_direction_distance,
    head_scores,
    logistic_baseline,
    mean_accuracy,
    mf_score,
    restrict_bins,
    wf_mismatch,
)
from densewf.neuralnet import (
    MAXPOOL2,
    RELU,
    SOFTMAX,
    batchnorm,
    conv,
    dense,
    init_network,
    loss_and_gradients,
    patch_architecture,
)
from densewf.phantoms import analytic_wavefront
from densewf.radon import canonical_map, fbp, inverse_canonical_map, radon
from densewf.shearlet import ShearletConfig, build_system, transform
from densewf.tensorio import read_tensor_stream, tensor_bytes

pytestmark = pytest.mark.acceptance

# desk-scale experiment settings
M = 64
TRAIN_SEEDS = range(200)
TEST_SEEDS = range(10_000, 10_050)
CENTERS_PER_IMAGE = 10  # 200 images x 10 = 2000 balanced patches per head
HEADS = desk.DESK_HEADS + [GATE]
TRAIN = TrainConfig(batch_size=86, steps=1000, lr=0.05, seed=0)
TOMO_TRAIN_SEEDS = range(20_000, 20_200)
TOMO_TEST_SEEDS = range(30_000, 30_020)
SPARSE_ANGLES = np.arange(0, 180, 3.0)  # 60 of 180
TOMO_BINS = list(range(0, 180, 21))  # measured columns, one every 21 degrees
SINOGRAM_STEPS = 200  # per lambda head


def _fit(sources, heads, steps=TRAIN.steps, seed=0):
    config = ShearletConfig(M) if sources[0].offset == 0 else sinogram_system_config(M)
    data = make_training_set(sources, heads, CENTERS_PER_IMAGE, seed=1)
    model = DenseeModel.create(config, seed)
    train(model, data, TrainConfig(TRAIN.batch_size, steps, TRAIN.lr, TRAIN.seed))
    return model, data


def _held_out(sources):
    # plain stratified sampling: negatives drawn uniformly from all negative cells
    return make_training_set(sources, HEADS, CENTERS_PER_IMAGE, seed=2, hard_fraction=0.0)


@pytest.fixture(scope="module")
def system():
    return build_system_cached(ShearletConfig(M))


@pytest.fixture(scope="module")
def jump_run(system):
    t0 = time.time()
    train_src = desk.image_sources(desk.phantom_specs(TRAIN_SEEDS, M), system)
    test_src = desk.image_sources(desk.phantom_specs(TEST_SEEDS, M), system)
    model, data = _fit(train_src, HEADS)
    test = _held_out(test_src)
    scores = head_scores(evaluate_heads(model, test))
    return dict(model=model, train=data, test=test, scores=scores, seconds=time.time() - t0)


# --- 1 ---------------------------------------------------------------------------------


def test_criterion_1_frame_identity(criterion):
    t0 = time.time()
    system = build_system(ShearletConfig(M))
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        img = rng.standard_normal((M, M))
        c = transform(img, system).values
        worst = max(worst, abs((c**2).sum() - (img**2).sum()) / (img**2).sum())
    seconds = time.time() - t0
    ok = worst < 1e-8 and system.channel_count == 49 and seconds < 60
    criterion(1, ok, f"max relative energy error {worst:.2e}, {system.channel_count} channels, {seconds:.1f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------------------


def test_criterion_2_gradients(criterion):
    t0 = time.time()
    rng = np.random.default_rng(2)
    cases = [
        (conv(2, 3, 3, bias=True), (2, 5, 4, 2)),
        (MAXPOOL2, (2, 5, 4, 3)),
        (RELU, (3, 7)),
        (batchnorm(3), (4, 3, 3, 3)),
        (dense(12, 5), (3, 2, 2, 3)),
        (SOFTMAX, (4, 2)),
    ]
    for spec, shape in cases:
        p = init_network([spec], seed=3).params[0]
        for k in p:
            p[k] = p[k] + 0.3 * rng.standard_normal(p[k].shape)
        test_neuralnet._check_layer(spec, p, rng.standard_normal(shape), rng)
    net = init_network(patch_architecture(3, widths=(2, 2, 3, 3), hidden=6), seed=5)
    x = rng.standard_normal((4, 21, 21, 3))
    y = np.array([0, 1, 1, 0])
    _, grads, _ = loss_and_gradients(net, x, y)
    worst = 0.0
    eps = test_neuralnet.EPS
    for p, g in zip(net.params, grads):
        for k, v in p.items():
            fd = np.zeros_like(v)
            for idx in np.ndindex(v.shape):
                old = v[idx]
                v[idx] = old + eps
                up = loss_and_gradients(net, x, y)[0]
                v[idx] = old - eps
                down = loss_and_gradients(net, x, y)[0]
                v[idx] = old
                fd[idx] = (up - down) / (2 * eps)
            worst = max(worst, test_neuralnet._rel(g[k], fd))
    seconds = time.time() - t0
    ok = worst < 1e-4 and seconds < 120
    criterion(2, ok, f"all layer kinds pass; full network max relative error {worst:.2e}, {seconds:.1f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------------------


def test_criterion_3_radon_oracle(criterion):
    t0 = time.time()
    r = 20
    sino = radon(test_radon._disk(M, r), angles=np.arange(0, 180, 10))
    chord = 2 * np.sqrt(np.clip(r * r - sino.offsets**2, 0, None))
    chord_err = max(np.linalg.norm(col - chord) / np.linalg.norm(chord) for col in sino.values.T)
    disk = test_radon._disk(256, 80)
    fbp_err = np.linalg.norm(fbp(radon(disk), 256) - disk) / np.linalg.norm(disk)
    seconds = time.time() - t0
    ok = chord_err < 0.02 and fbp_err < 0.10 and seconds < 60
    criterion(3, ok, f"chord error {chord_err:.4f}, FBP error at N=256 {fbp_err:.4f}, {seconds:.1f}s")
    assert ok


# --- 4 ---------------------------------------------------------------------------------


def test_criterion_4_canonical_map(criterion):
    t0 = time.time()
    X = np.zeros((100, 100, 180), np.uint8)
    X[50, 50, 90] = 1
    hand = np.argwhere(canonical_map(X)).tolist()
    test_radon.test_canonical_hand_cases()
    test_radon.test_canonical_formula_random_entries(np.random.default_rng(4))
    test_radon.test_inverse_formula_single_entry()
    test_radon.test_round_trip_brute_force_n32()
    seconds = time.time() - t0
    ok = hand == [[50, 90, 26]] and seconds < 60
    criterion(4, ok, f"(50,50,90) -> {tuple(hand[0])}; N=32 round trip within one bin; {seconds:.1f}s")
    assert ok


# --- 5 and 6 --------------------------------------------------------------------------------


def test_criterion_5_desk_densee(jump_run, criterion):
    scores = jump_run["scores"]
    mf = mf_score(list(scores.values()))
    acc = {h: s.accuracy for h, s in scores.items()}
    low = min(acc.values())
    seconds = jump_run["seconds"]
    ok = low >= 0.85 and mf >= 0.85 and seconds < 30 * 60
    per_head = " ".join(f"{h}:{a:.3f}" for h, a in sorted(acc.items()))
    criterion(5, ok, f"MF {mf:.3f}, mean accuracy {mean_accuracy(list(scores.values())):.3f}, "
                     f"min head accuracy {low:.3f} ({per_head}), {seconds / 60:.1f} min")
    assert ok


def test_criterion_6_logistic_baseline(jump_run, criterion):
    dense_mf = mf_score(list(jump_run["scores"].values()))
    lr_mf = mf_score(list(logistic_baseline(jump_run["train"], jump_run["test"]).values()))
    ok = lr_mf <= dense_mf - 0.05
    criterion(6, ok, f"logistic MF {lr_mf:.3f} vs DeNSE MF {dense_mf:.3f}")
    assert ok


# --- 7 ---------------------------------------------------------------------------------


def test_criterion_7_higher_order(system, criterion):
    t0 = time.time()
    train_src = desk.image_sources(desk.phantom_specs(TRAIN_SEEDS, M), system, higher_order=True)
    test_src = desk.image_sources(desk.phantom_specs(TEST_SEEDS, M), system, higher_order=True)
    model, _ = _fit(train_src, HEADS)
    scores = head_scores(evaluate_heads(model, _held_out(test_src)))
    mf = mf_score(list(scores.values()))
    ok = mf >= 0.75
    criterion(7, ok, f"MF {mf:.3f} against jump labels, mean accuracy "
                     f"{mean_accuracy(list(scores.values())):.3f}, {(time.time() - t0) / 60:.1f} min")
    assert ok


# --- 8 ---------------------------------------------------------------------------------


def test_criterion_8_canonical_route(criterion):
    t0 = time.time()
    train_specs = desk.tomo_specs(TOMO_TRAIN_SEEDS, M)
    test_specs = desk.tomo_specs(TOMO_TEST_SEEDS, M)

    image_model, _ = _fit(desk.fbp_sources(train_specs, build_system_cached(ShearletConfig(M)), SPARSE_ANGLES),
                          TOMO_BINS + [GATE])

    sino_src = desk.sinogram_sources(train_specs, build_system_cached(sinogram_system_config(M)), SPARSE_ANGLES)
    counts = sum(s.labels[s.mask].sum(axis=0, dtype=np.int64) for s in sino_src)
    lambdas = [int(b) for b in np.nonzero(counts >= 50)[0]]
    sino_model, _ = _fit(sino_src, lambdas + [GATE], steps=SINOGRAM_STEPS)

    truth = [restrict_bins(analytic_wavefront(sp), TOMO_BINS) for sp in test_specs]
    fbp_pred = desk.fbp_route(test_specs, image_model, SPARSE_ANGLES)
    can_pred = desk.canonical_route(test_specs, sino_model, SPARSE_ANGLES, TOMO_BINS)
    fbp_mm, can_mm = wf_mismatch(fbp_pred, truth), wf_mismatch(can_pred, truth)
    minutes = (time.time() - t0) / 60
    ok = can_mm < fbp_mm and minutes < 45
    criterion(8, ok, f"mean mismatch canonical {can_mm:.1f} vs FBP {fbp_mm:.1f} over bins {TOMO_BINS} "
                     f"({len(lambdas)} lambda heads), {minutes:.1f} min")
    assert ok


# --- 9 ---------------------------------------------------------------------------------


def test_criterion_9_property_suites(criterion):
    rng = np.random.default_rng(9)
    failures = []

    system = build_system(ShearletConfig(32))
    for _ in range(20):
        img = rng.standard_normal((32, 32))
        s = tuple(int(v) for v in rng.integers(-16, 16, 2))
        a = transform(np.roll(img, s, axis=(0, 1)), system).values
        b = np.roll(transform(img, system).values, s, axis=(0, 1))
        if np.abs(a - b).max() >= 1e-10:
            failures.append("shearlet translation covariance")
            break

    for _ in range(20):
        A, B = ((rng.random((24, 24, 180)) < 0.002).astype(np.uint8) for _ in range(2))
        C, D = ((rng.random((24, 180, 180)) < 0.002).astype(np.uint8) for _ in range(2))
        if not (np.array_equal(canonical_map(A | B), canonical_map(A) | canonical_map(B))
                and np.array_equal(inverse_canonical_map(C | D), inverse_canonical_map(C) | inverse_canonical_map(D))):
            failures.append("canonical union morphism")
            break

    for _ in range(300):
        a, b, c = (bins_to_directions(rng.choice(180, rng.integers(1, 8), replace=False)) for _ in range(3))
        dab, dba = hausdorff_direction_distance(a, b), hausdorff_direction_distance(b, a)
        tri = hausdorff_direction_distance(a, c) + hausdorff_direction_distance(c, b)
        if abs(dab - dba) > 1e-10 or hausdorff_direction_distance(a, a) != 0.0 or dab > tri + 1e-10:
            failures.append("Hausdorff metric axioms")
            break

    table = {(0, 5): False, (0, 90): True, (175, 3): False, (0, 10): False, (0, 11): True, (170, 5): True}
    for bins, want in table.items():
        wf = np.zeros((1, 1, 180), np.uint8)
        wf[0, 0, list(bins)] = 1
        if bool(detect_corners(wf)) != want:
            failures.append(f"corner rule {bins}")

    for dt in (np.uint8, np.float32, np.float64):
        arr = (rng.random(tuple(rng.integers(0, 6, rng.integers(0, 4)))) * 200).astype(dt)
        back = read_tensor_stream(io.BytesIO(tensor_bytes(arr)))
        if back.dtype != arr.dtype or back.shape != arr.shape or back.tobytes() != arr.tobytes():
            failures.append(f"tensor round trip {np.dtype(dt)}")

    ok = not failures
    criterion(9, ok, "all property suites hold" if ok else "failed: " + ", ".join(failures))
    assert ok
