"""The ten acceptance criteria, one test each.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary. Criteria 6 to 8 share one
training run (about 20 minutes on one core).
"""
import json
import time

import numpy as np
import pytest

from oracles import kernel_attention_direct, poisson_dense
from saot import tensor as T
from saot.analysis import bench_mixers, energy_spectrum
from saot.attention import FourierAttentionParams, fourier_attention, linear_attention
from saot.cli import main
from saot.darcy import GridSample, darcy_residual, generate_samples, sample_coefficient, solve_darcy
from saot.gradcheck import grad_check
from saot.io import read_dataset, write_dataset
from saot.model import ModelConfig, SAOTModel, relative_l2
from saot.nn import ParameterStore
from saot.spectral import fft2, fwt_haar, ifft2, ifwt_haar
from saot.training import checkpoint_from_model, load_checkpoint, save_checkpoint

ABLATION_CONFIG = """\
# scaled-down ablation: 64 train / 16 test samples at 32x32
n_train = 64
n_test = 16
resolution = 32
reference_resolution = 128
test_resolutions = [16, 32, 64]
n_layers = 2
width = 24
fa_blocks = 4
epochs = 200
batch_size = 8
seed = 0
"""


def _csv_rows(path):
    lines = [line for line in open(path) if not line.startswith("#")]
    return [line.strip().split(",") for line in lines]


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = root / "ablation.cfg"
    cfg.write_text(ABLATION_CONFIG)
    t0 = time.perf_counter()
    gen = main(["generate", "--config", str(cfg), "--out", str(root / "data")])
    codes = {"generate": gen}
    if gen == 0:
        codes["ablation"] = main(["ablation", "--config", str(cfg), "--data", str(root / "data"),
                                  "--out", str(root / "runs")])
    return {"root": root, "codes": codes, "seconds": time.perf_counter() - t0}


@pytest.mark.criterion(1, "transform exactness")
def test_criterion_1_transforms(record_property):
    t0 = time.perf_counter()
    worst = {"haar": 0.0, "fft": 0.0, "haar_energy": 0.0, "parseval": 0.0}
    for seed in range(5):
        x = np.random.default_rng(seed).standard_normal((64, 64, 8))
        sub = fwt_haar(x)
        worst["haar"] = max(worst["haar"], np.abs(ifwt_haar(sub).data - x).max())
        s = fft2(x)
        worst["fft"] = max(worst["fft"], np.abs(ifft2(s).data - x).max())
        energy = float(np.sum(x * x))
        bands = sum(float(np.sum(b.data**2)) for b in (sub.ll, sub.lh, sub.hl, sub.hh))
        worst["haar_energy"] = max(worst["haar_energy"], abs(bands - energy) / energy)
        modal = float(np.sum(s.real.data**2 + s.imag.data**2)) / (64 * 64)
        worst["parseval"] = max(worst["parseval"], abs(modal - energy) / energy)
    elapsed = time.perf_counter() - t0
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    record_property("detail", f"{elapsed:.2f} s")
    assert worst["haar"] < 1e-10 and worst["fft"] < 1e-10
    assert worst["haar_energy"] < 1e-10 and worst["parseval"] < 1e-10
    assert elapsed < 5


@pytest.mark.criterion(2, "linear attention equals the direct kernel evaluation")
def test_criterion_2_attention_oracle(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (1, 7, 64, 256):
        for d in (4, 16):
            for seed in range(20):
                rng = np.random.default_rng(seed)
                q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
                got = linear_attention(q, k, v).data
                ref = kernel_attention_direct(q, k, v)
                worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300))))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max relative error {worst:.1e}, {elapsed:.2f} s")
    assert worst < 1e-8
    assert elapsed < 30


@pytest.mark.criterion(3, "Fourier attention identities")
def test_criterion_3_fourier_identities(record_property):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16, 16))

    store = ParameterStore(0)
    p = FourierAttentionParams.init(store, "fa", 16, blocks=4, activation="identity")
    eye = np.broadcast_to(np.eye(4), p.w1_real.shape)
    for w in (p.w1_real, p.w2_real):
        w.data[...] = eye
    for w in (p.w1_imag, p.w2_imag):
        w.data[...] = 0.0
    doubled = np.abs(fourier_attention(x, p).data - 2 * x).max()

    p0 = FourierAttentionParams.init(ParameterStore(1), "fa", 16, blocks=4)
    for w in (p0.w1_real, p0.w1_imag, p0.w2_real, p0.w2_imag):
        w.data[...] = 0.0
    residual_only = np.array_equal(fourier_attention(x, p0).data, x)

    p1 = FourierAttentionParams.init(ParameterStore(2), "fa", 16, blocks=4)
    p1.gate_bias.data[...] = rng.standard_normal(p1.gate_bias.shape)
    base = fourier_attention(x, p1).data
    shift_err = max(
        np.abs(fourier_attention(np.roll(x, s, axis=(0, 1)), p1).data
               - np.roll(base, s, axis=(0, 1))).max()
        for s in [(1, 0), (0, 5), (3, 7), (-6, 2)]
    )
    record_property("detail", f"identity {doubled:.1e}, zero exact {residual_only}, "
                              f"shift {shift_err:.1e}")
    assert doubled < 1e-8
    assert residual_only
    assert shift_err < 1e-8


@pytest.mark.criterion(4, "end-to-end gradient check, every variant and parameter")
def test_criterion_4_gradients(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    a = rng.standard_normal((8, 8, 1))
    u = rng.standard_normal((8, 8, 1))
    worst = {}
    for variant in ("fa", "wa", "sa"):
        m = SAOTModel(ModelConfig(variant=variant, n_layers=1, width=8, fa_blocks=2, seed=3))
        rep = grad_check(lambda s: relative_l2(m.forward(a), u), m.params)
        assert set(rep.errors) == set(m.params.names())
        worst[variant] = rep.max_error
    elapsed = time.perf_counter() - t0
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                    + f", {elapsed:.1f} s")
    assert max(worst.values()) < 1e-4
    assert elapsed < 300


@pytest.mark.criterion(5, "Darcy solver against its oracles")
def test_criterion_5_darcy(record_property):
    res = solve_darcy(np.ones((33, 33)))
    direct = np.linalg.solve(poisson_dense(33), np.ones(31 * 31))
    dense_err = np.abs(res.values[1:-1, 1:-1, 0].ravel() - direct).max() / np.abs(direct).max()

    sym_err, min_u = 0.0, np.inf
    for seed in range(20):
        a = sample_coefficient(seed, 32, 32).values[..., 0]
        a = np.concatenate([a[:, :16], a[:, :16][:, ::-1]], axis=1)
        u = solve_darcy(a).values[..., 0]
        sym_err = max(sym_err, np.abs(u - u[:, ::-1]).max() / np.abs(u).max())
        min_u = min(min_u, u.min())

    residuals = []
    samples = generate_samples(20, seed=7, resolutions=[32], reference_resolution=64,
                               residuals=residuals)[32]
    assert len(samples) == len(residuals) == 20
    # independent recomputation of ||A u - f|| / ||f|| on each reference solve
    recomputed = []
    seeds = np.random.SeedSequence(7).spawn(20)
    from saot.darcy import RandomFourierField, threshold_field
    for ss in seeds[:5]:
        a = threshold_field(RandomFourierField.draw(ss).evaluate(64, 64))
        recomputed.append(darcy_residual(a, solve_darcy(a).values))
    record_property("detail", f"dense {dense_err:.1e}, mirror {sym_err:.1e}, min u {min_u:.1e}, "
                              f"max residual {max(residuals + recomputed):.1e}")
    assert dense_err < 1e-8
    assert sym_err < 1e-8
    assert min_u >= 0
    assert max(residuals) < 1e-10 and max(recomputed) < 1e-10


@pytest.mark.criterion(6, "training sanity and three-row ablation table")
def test_criterion_6_training(ablation, record_property):
    assert ablation["codes"] == {"generate": 0, "ablation": 0}
    runs = ablation["root"] / "runs"
    rows = _csv_rows(runs / "ablation.csv")
    assert rows[0] == ["variant", "parameters", "final_train_rel_l2", "best_test_rel_l2"]
    assert [r[0] for r in rows[1:]] == ["fa", "wa", "sa"]
    ratios = {}
    for variant, params, final, best in rows[1:]:
        ck = load_checkpoint(runs / f"model_{variant}.saotck")
        initial = ck.extra["initial_train_rel_l2"]
        assert len(ck.history) == 200
        assert int(params) > 0 and np.isfinite(float(best))
        ratios[variant] = float(final) / initial
        record_property("detail", f"{variant} params {params} train {float(final):.4f} "
                                  f"(initial {initial:.3f}) test {float(best):.4f}")
    record_property("detail", f"generate+ablation {ablation['seconds'] / 60:.1f} min")
    assert all(r < 0.5 for r in ratios.values()), ratios
    assert ablation["seconds"] < 30 * 60


@pytest.mark.criterion(7, "super-resolution U-shape with minimum at the training grid")
def test_criterion_7_sweep(ablation, record_property, tmp_path):
    assert ablation["codes"].get("ablation") == 0
    root = ablation["root"]
    out = tmp_path / "sweep.csv"
    t0 = time.perf_counter()
    code = main(["sweep", str(root / "runs" / "model_sa.saotck"), "--data", str(root / "data"),
                 "--resolutions", "16", "32", "64", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    rows = [(int(r), float(e), int(m)) for r, e, m in _csv_rows(out)[1:]]
    record_property("detail", ", ".join(f"{r}: {e:.4f}" for r, e, _ in rows)
                    + f", {elapsed:.1f} s")
    errors = {r: e for r, e, _ in rows}
    assert [m for _, _, m in rows] == [0, 1, 0]
    assert min(errors, key=errors.get) == 32
    assert elapsed < 300


@pytest.mark.criterion(8, "energy spectrum tooling and three-series comparison")
def test_criterion_8_spectrum(ablation, record_property, tmp_path):
    n = 32
    x = np.arange(n) / n
    harmonic = np.cos(2 * np.pi * 3 * x)[:, None] * np.ones((1, n))
    e = energy_spectrum(harmonic).series["field"]
    share = e[3] / e[1:].sum()
    assert share >= 0.99

    assert ablation["codes"].get("ablation") == 0
    root = ablation["root"]
    out = tmp_path / "spectrum.csv"
    code = main(["spectrum", str(root / "data" / "test_32.saotds"),
                 "--checkpoint", str(root / "runs" / "model_fa.saotck"),
                 "--checkpoint", str(root / "runs" / "model_wa.saotck"),
                 "--index", "0", "--out", str(out)])
    assert code == 0
    rows = _csv_rows(out)
    assert rows[0] == ["k", "E_gt", "E_fa", "E_wa"]
    stats = json.loads(out.with_suffix(".json").read_text())
    assert set(stats["parseval_residual"]) == {"gt", "fa", "wa"}
    assert max(stats["parseval_residual"].values()) <= 1e-8
    ratio = stats["high_shell_energy_ratio"]
    record_property("detail", f"k=3 share {share:.4f}; high-shell energy / GT "
                              f"(k >= {stats['high_shell_k_min']}, not gated): "
                              f"fa {ratio['fa']:.3f}, wa {ratio['wa']:.3f}")


@pytest.mark.criterion(9, "linear attention time per doubling of n")
def test_criterion_9_scaling(record_property):
    t0 = time.perf_counter()
    lin, four = bench_mixers([1024, 2048, 4096, 8192], width=64, repeats=5)
    elapsed = time.perf_counter() - t0
    ratios = lin.doubling_ratios()
    record_property("detail", "linear " + ", ".join(f"{r:.2f}" for r in ratios)
                    + "; fourier " + ", ".join(f"{r:.2f}" for r in four.doubling_ratios())
                    + f"; {elapsed:.1f} s")
    assert max(ratios) <= 2.5
    for t in (lin, four):
        assert all(b >= a for a, b in zip(t.seconds, t.seconds[1:])), t.name
    assert elapsed < 120


@pytest.mark.criterion(10, "bit-exact serialization and corrupted-file exit codes")
def test_criterion_10_serialization(record_property, tmp_path):
    rng = np.random.default_rng(0)
    samples = [GridSample(rng.standard_normal((8, 8, 1)), rng.standard_normal((8, 8, 1)))
               for _ in range(3)]
    ds = tmp_path / "test_8.saotds"
    write_dataset(samples, ds)
    for s, b in zip(samples, read_dataset(ds)):
        assert np.array_equal(s.a, b.a) and np.array_equal(s.u, b.u)

    model = SAOTModel(ModelConfig(n_layers=1, width=8, fa_blocks=2))
    ck = tmp_path / "model.saotck"
    save_checkpoint(checkpoint_from_model(model), ck)
    a = np.stack([s.a for s in samples])
    assert np.array_equal(load_checkpoint(ck).build_model().predict(a), model.predict(a))
    assert main(["eval", str(ck), str(ds)]) == 0

    codes = {}
    raw = bytearray(ds.read_bytes())
    raw[60] ^= 0xFF
    bad_ds = tmp_path / "bad.saotds"
    bad_ds.write_bytes(bytes(raw))
    codes["corrupt dataset"] = main(["eval", str(ck), str(bad_ds)])
    raw = ck.read_bytes()
    bad_ck = tmp_path / "bad.saotck"
    bad_ck.write_bytes(raw[:-10])
    codes["truncated checkpoint"] = main(["eval", str(bad_ck), str(ds)])
    flipped = bytearray(raw)
    flipped[-40] ^= 0x01
    bad_ck.write_bytes(bytes(flipped))
    codes["corrupt checkpoint"] = main(["eval", str(bad_ck), str(ds)])
    record_property("detail", ", ".join(f"{k} -> {v}" for k, v in codes.items()))
    assert set(codes.values()) == {2}


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
