"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The training-based checks (6-8, 10) take tens of minutes on one core and are
marked ``slow``; deselect with ``-m "not slow"``.
"""

import time

import numpy as np
import pytest

from thermogyro import evaluation as E
from thermogyro import loss as L
from thermogyro import model as M
from thermogyro.cli import EXIT_OK, main
from thermogyro.dataset import NormalizationSpec
from thermogyro.simulator import SimConfig, simulate_environment, simulate_run
from thermogyro.training import TrainConfig, predict, train


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


# ---------------------------------------------------------------- 1. gradients

def _pipeline_loss(model, frames, y_gy, y, c):
    tr = M.forward(model, frames)
    return float(np.mean(L.berhu(M.fuse(tr.y_th, tr.k_g, y_gy) - y, c)))


def test_01_gradients(verdict):
    start = time.perf_counter()
    worst = 0.0
    config = M.ModelConfig(2, 3, "fusion")  # 8x10 input
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = M.build_model(config, seed)
        # a non-zero gain head so every layer carries gradient
        model.params["kg_out.w"][...] = rng.uniform(-0.3, 0.3, model.params["kg_out.w"].shape)
        frames = rng.uniform(-2, 2, (3, 2, 8, 10))
        y_gy, y = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        tr = M.forward(model, frames)
        pred = M.fuse(tr.y_th, tr.k_g, y_gy)
        c = L.adaptive_c(pred, y)
        _, d_pred = L.batch_loss(pred, y)
        grad = M.backward(model, tr, *M.fusion_upstream(tr, y_gy, d_pred))
        offset = 0
        for name, arr in model.params.items():
            flat = arr.reshape(-1)
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                keep = flat[i]
                flat[i] = keep + 1e-6
                up = _pipeline_loss(model, frames, y_gy, y, c)
                flat[i] = keep - 1e-6
                down = _pipeline_loss(model, frames, y_gy, y, c)
                flat[i] = keep
                num[j] = (up - down) / 2e-6
            ana = grad[offset + idx]
            offset += flat.size
            rel = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
            worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 60, f"worst rel err {worst:.2e} over 10 seeds, {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. berHu

def test_02_loss_properties(verdict):
    rng = np.random.default_rng(0)
    c = rng.uniform(1e-3, 2.0, 10_000)
    e = rng.uniform(-3, 3, 10_000) * c
    val = np.array([L.berhu(ei, ci) for ei, ci in zip(e, c)])
    inside = np.abs(e) <= c
    dominates = np.all(val >= np.abs(e))
    equality = np.all(val[inside] == np.abs(e[inside])) and np.all(val[~inside] > np.abs(e[~inside]))
    gaps = []
    for cc in (0.01, 0.2, 1.0, 7.5):
        for sign in (-1.0, 1.0):
            at = sign * cc
            gaps.append(abs(L.berhu(at, cc) - abs(at)))
            # one-sided slopes from the quadratic branch meet the linear branch's sign
            gaps.append(abs(L.berhu_grad(at, cc) - sign))
            gaps.append(abs(L.berhu_grad(np.nextafter(at, 2 * at), cc) - sign))
    gap = max(gaps)
    verdict(2, dominates and equality and gap <= 1e-12,
            f"10^4 pairs: bound {dominates}, equality iff |e|<=c {equality}; C1 gap {gap:.1e}")


# ---------------------------------------------------------------- 3. fusion

def test_03_fusion_identities(verdict):
    rng = np.random.default_rng(1)
    y_th, y_gy, k = rng.uniform(-1, 1, 10_000), rng.uniform(-1, 1, 10_000), rng.uniform(0, 1, 10_000)
    ones = np.all(M.fuse(y_th, np.ones_like(k), y_gy) == y_th)
    zeros = np.all(M.fuse(y_th, np.zeros_like(k), y_gy) == y_gy)
    out = M.fuse(y_th, k, y_gy)
    bound = np.all((out >= np.minimum(y_th, y_gy) - 1e-12) & (out <= np.maximum(y_th, y_gy) + 1e-12))
    verdict(3, ones and zeros and bound, f"K_g=1 {ones}, K_g=0 {zeros}, convex bound over 10^4 {bound}")


# ---------------------------------------------------------------- 4. complexity

def test_04_complexity(verdict, tmp_path):
    code = main(["complexity", "--out", str(tmp_path), "--nf", "2,3,4", "--nr", "1,2,3"])
    rows = [line.split(",") for line in (tmp_path / "complexity.csv").read_text().splitlines()[1:]]
    table = {(int(r[0]), int(r[1])): (int(r[3]), int(r[4])) for r in rows}
    params = [table[(3, nr)][0] for nr in (1, 2, 3)]
    dec_nr = all(table[(nf, 1)][1] > table[(nf, 2)][1] > table[(nf, 3)][1] for nf in (2, 3, 4))
    inc_nf = all(table[(2, nr)][1] < table[(3, nr)][1] < table[(4, nr)][1] for nr in (1, 2, 3))
    ok = code == EXIT_OK and params == [750_274, 197_314, 89_794] and dec_nr and inc_nf
    verdict(4, ok, f"params {params}; FLOPs decreasing in N_r {dec_nr}, increasing in N_f {inc_nf}")


# ---------------------------------------------------------------- 5. overfit

def test_05_overfit_one_sample(verdict):
    start = time.perf_counter()
    acq = simulate_run(SimConfig(n_segments=3, segment_seconds=2.0), 0)
    one = E.windows_for([acq], 2, 3, NormalizationSpec()).subset([0])
    model = M.build_model(M.ModelConfig(2, 3, "thermal_only"), 0)
    _, history = train(model, one, TrainConfig(lr=1e-4, epochs=200, batch=1))  # 200 steps
    best = min(history)
    elapsed = time.perf_counter() - start
    verdict(5, best < 1e-3 and elapsed < 60,
            f"loss {history[0]:.2e} -> {best:.2e} (step {int(np.argmin(history)) + 1}/200), {elapsed:.1f} s")


# ---------------------------------------------------------------- 6-8. synthetic end-to-end

@pytest.fixture(scope="module")
def garden():
    return simulate_environment(SimConfig())


@pytest.fixture(scope="module")
def low_res_folds(garden):
    fusion, models = E.kfold(garden, "garden", TrainConfig(), 3, 3, "fusion", keep_models=True)
    thermal = E.kfold(garden, "garden", TrainConfig(), 3, 3, "thermal_only")
    return fusion, thermal, models


@pytest.mark.slow
def test_06_end_to_end(verdict, garden):
    start = time.perf_counter()
    report = E.kfold(garden, "garden", TrainConfig(), 3, 1, "fusion")
    elapsed = time.perf_counter() - start
    verdict(6, report.median < 0.02,
            f"6-fold N_f=3 N_r=1 fusion median MSE {report.median:.3e} (IQR {report.iqr:.2e}), {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_07_fusion_beats_thermal_at_low_resolution(verdict, low_res_folds):
    fusion, thermal, _ = low_res_folds
    ok = fusion.median <= thermal.median and fusion.iqr <= thermal.iqr
    verdict(7, ok, f"N_r=3 median/IQR fusion {fusion.median:.3e}/{fusion.iqr:.2e} "
                   f"vs thermal {thermal.median:.3e}/{thermal.iqr:.2e}")


@pytest.mark.slow
def test_08_drift(verdict, low_res_folds):
    _, _, models = low_res_folds
    run = simulate_run(SimConfig(), 100, n_segments=15)  # 60 s, never used for training
    errors = [E.drift_trace(m, run).terminal_errors() for m in models]
    gyro = errors[0][0]
    fused = [f for _, f in errors]
    ok = abs(gyro - 120.0) <= 5.0 and max(fused) < 30.0
    verdict(8, ok, f"gyro {gyro:.1f} deg; fusion over {len(fused)} fold models "
                   f"{min(fused):.1f}-{max(fused):.1f} deg")


# ---------------------------------------------------------------- 9. determinism

def test_09_determinism(verdict, tmp_path):
    out = tmp_path / "run"

    def run():
        sim = ["simulate", "--out", str(out / "data"), "--n-acq", "3", "--segments", "2", "--segment-seconds", "1.5"]
        fold = ["kfold", "--data", str(out / "data"), "--out", str(out / "kfold"), "--nr", "3", "--epochs", "2"]
        assert main(sim) == EXIT_OK and main(fold) == EXIT_OK
        return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    # identical flags, so the second run writes over the first
    a = run()
    b = run()
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    verdict(9, same, f"{len(a)} report and data files compared byte for byte")


# ---------------------------------------------------------------- 10. gain behaviour

@pytest.mark.slow
def test_10_gain(verdict):
    config = M.ModelConfig(3, 3, "fusion")
    data = E.windows_for(simulate_environment(SimConfig(n_acquisitions=2)), 3, 3, NormalizationSpec())
    counts, edges = E.kg_histogram(M.build_model(config, 0), data, 20)
    (occupied,) = np.flatnonzero(counts)
    point_mass = edges[occupied] == 0.5
    means = {}
    for seed in range(3):
        for noise in (0.3, 3.0):
            # a noisier gyro than the default so the gain has a real trade-off to learn
            acqs = simulate_environment(SimConfig(n_acquisitions=4, gyro_noise=30.0, pixel_noise=noise, seed=seed))
            samples = E.windows_for(acqs, 3, 3, NormalizationSpec())
            model = M.build_model(config, seed)
            train(model, samples, TrainConfig(seed=seed))
            means[seed, noise] = float(predict(model, samples).k_g.mean())
    lower = all(means[s, 3.0] < means[s, 0.3] for s in range(3))
    detail = ", ".join(f"seed {s}: {means[s, 0.3]:.2f} -> {means[s, 3.0]:.2f}" for s in range(3))
    verdict(10, point_mass and lower, f"untrained point mass at 0.5 {point_mass}; mean K_g low->high noise {detail}")
