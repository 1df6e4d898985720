"""Acceptance suite: one test and one PASS/FAIL line per criterion."""
import json
import os
import shutil
import time

import numpy as np
import pytest

from conftest import blurred_step, record_acceptance
from test_analysis import ecdf_oracle, exact_permutation_p, naive_local_variance
from test_classify import brute_auc, delong_double_loop
from test_defocus import matting_fixture, matting_laplacian_dense
from test_imgcore import box_mean_naive
from defocuskit import alignment, analysis, classify, cli, defocus, imgcore, io
from defocuskit.defocus import DefocusParams, SparseBlurEstimate


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    """Default corpus (100/100, seed 42) pushed through synth -> analyze -> train."""
    root = tmp_path_factory.mktemp("experiment")
    t0 = time.perf_counter()
    codes = [
        run("synth", "--n-real", 100, "--n-fake", 100, "--seed", 42, "--out-dir", root / "corpus"),
        run("analyze", "--manifest", root / "corpus" / "manifest.jsonl", "--out-dir", root / "analysis"),
        run("train", "--features", root / "analysis" / "features.csv", "--out-dir", root / "model"),
    ]
    return root, codes, time.perf_counter() - t0


def test_criterion_01_ratio_inversion():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    s1 = rng.uniform(0.2, 4.0, 1000)
    s2 = s1 + rng.uniform(0.05, 4.0, 1000)
    sigma = rng.uniform(0.05, 6.0, 1000)
    ratio = np.sqrt((sigma ** 2 + s2 ** 2) / (sigma ** 2 + s1 ** 2))
    # exact inversion needs the regularizer switched off
    est = np.array([defocus.sigma_from_ratio(r, a, b, epsilon=0.0) for r, a, b in zip(ratio, s1, s2)])
    elapsed = time.perf_counter() - t0
    worst = float(np.max(np.abs(est - sigma) / sigma))
    ok = worst < 1e-9 and elapsed < 1.0
    record_acceptance(1, "ratio inversion", ok, f"max rel err {worst:.2e}, {elapsed:.3f} s")
    assert ok


def test_criterion_02_step_edge_oracle():
    t0 = time.perf_counter()
    medians, ok = {}, True
    for s in (0.5, 1.0, 2.0, 3.0):
        img = blurred_step(s)
        mask = defocus.detect_edges(img)
        med = float(np.median(defocus.sparse_blur(img, mask).sigma_at_edges[mask]))
        medians[s] = med
        ok &= abs(med - s) <= 0.15 if s < 1.0 else abs(med - s) / s <= 0.10
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 10.0
    detail = ", ".join(f"{s}->{m:.3f}" for s, m in medians.items())
    record_acceptance(2, "step-edge estimation", ok, f"{detail}; {elapsed:.2f} s")
    assert ok


def test_criterion_03_propagation_oracles():
    rng = np.random.default_rng(3)
    params = DefocusParams(propagation="matting-laplacian")
    worst_matting = 0.0
    for _ in range(5):
        est, guide = matting_fixture(rng)
        m = est.mask.ravel().astype(float)
        lam = params.matting_lambda
        a = matting_laplacian_dense(guide, defocus.MATTING_EPS) + np.diag(lam * m)
        dense = np.clip(np.linalg.solve(a, lam * m * est.sigma_at_edges.ravel()).reshape(8, 8), 0, params.sigma_max)
        worst_matting = max(worst_matting, float(np.max(np.abs(defocus.propagate(est, guide, params).sigma - dense))))
    worst_gf = 0.0
    for _ in range(5):
        p = rng.random((12, 12))
        r = int(rng.integers(1, 4))
        # a constant guide zeroes the slope, leaving the box mean of the box mean
        expected = box_mean_naive(box_mean_naive(p, r), r)
        got = imgcore.guided_filter(p, np.full(p.shape, 0.3), r, 1e-3)
        worst_gf = max(worst_gf, float(np.max(np.abs(got - expected))))
    ok = worst_matting < 1e-4 and worst_gf < 1e-6
    record_acceptance(3, "propagation oracles", ok,
                      f"matting vs dense {worst_matting:.2e}, constant-guide GF vs box mean {worst_gf:.2e}")
    assert ok


def test_criterion_04_analysis_oracles():
    rng = np.random.default_rng(4)
    worst_var = 0.0
    for _ in range(50):
        h, w = rng.integers(3, 17, 2)
        x = rng.random((h, w))
        win = int(rng.choice([3, 5, 7]))
        worst_var = max(worst_var, float(np.max(np.abs(analysis.local_variance(x, win) - naive_local_variance(x, win)))))
    d_exact = all(
        analysis.ks_statistic(x, y) == ecdf_oracle(x, y)
        for x, y in ((list(rng.integers(0, 6, rng.integers(1, 9))), list(rng.integers(0, 6, rng.integers(1, 9))))
                     for _ in range(20)))
    worst_p = 0.0
    for n1 in range(3, 9):
        for n2 in range(3, 9):
            x, y = rng.normal(size=n1), rng.normal(rng.uniform(0, 2), size=n2)
            worst_p = max(worst_p, abs(analysis.ks_two_sample(x, y).p_value - exact_permutation_p(x, y)))
    ok = worst_var < 1e-7 and d_exact and worst_p <= 0.08
    record_acceptance(4, "analysis oracles", ok,
                      f"variance err {worst_var:.1e}, KS D exact={d_exact}, "
                      f"asymptotic vs permutation p max gap {worst_p:.3f} (limit 0.08)")
    assert ok


def test_criterion_05_alignment_identities():
    rng = np.random.default_rng(5)
    worst_a = worst_kl = 0.0
    for _ in range(100):
        p = rng.random(int(rng.integers(2, 40)))
        p /= p.sum()
        worst_a = max(worst_a, abs(alignment.alignment_score(p, p) - 1.0))
        worst_kl = max(worst_kl, alignment.kl_divergence(p, p))
    worked = alignment.alignment_score(np.array([0.5, 0.5, 0.0]), np.array([0.25, 0.25, 0.5]))
    kl = alignment.kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    ok = worst_a <= 1e-9 and worst_kl <= 1e-12 and worked == 0.5 and abs(kl - np.log(2)) < 1e-6
    record_acceptance(5, "alignment identities", ok,
                      f"|A(p,p)-1| {worst_a:.1e}, KL(p||p) {worst_kl:.1e}, worked {worked}, KL ln2 err {abs(kl - np.log(2)):.1e}")
    assert ok


def test_criterion_06_end_to_end(experiment):
    root, codes, elapsed = experiment
    ev = json.loads((root / "model" / "eval.json").read_text())
    ks = json.loads((root / "analysis" / "ks.json").read_text())
    lo = ev["auc_ci_95"][0]
    ok = (codes == [0, 0, 0] and ev["auc"] >= 0.95 and lo >= 0.85 and ks["p_value"] < 0.01
          and elapsed < 300)
    record_acceptance(6, "end-to-end corpus experiment", ok,
                      f"test AUC {ev['auc']:.4f}, CI low {lo:.4f}, KS D {ks['d_statistic']:.3f} "
                      f"p {ks['p_value']:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_07_bench_protocol(experiment):
    root, _, _ = experiment
    out = root / "bench"
    code = run("bench", root / "corpus" / "images", "--out-dir", out)
    b = json.loads((out / "bench.json").read_text())
    names = [s["stage"] for s in b["stages"]]
    ok = (code == 0 and names == list(defocus.STAGES) and b["warmup"] == 5 and b["reps_measured"] == 30
          and b["largest_stage"] == "edge_map")
    ms = ", ".join(f"{s['stage']} {s['ms']:.2f}" for s in b["stages"])
    record_acceptance(7, "bench protocol", ok, f"5/{b['reps_measured']} runs; {ms} ms; largest {b['largest_stage']}")
    assert ok


def test_criterion_08_auc_correctness():
    rng = np.random.default_rng(8)
    auc_exact = True
    for _ in range(500):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 20, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        auc_exact &= classify.roc_auc(scores, labels) == brute_auc(scores, labels)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(6, 60))
        labels = np.r_[np.zeros(n // 2), np.ones(n - n // 2)].astype(int)
        scores = rng.integers(0, 8, n) + 0.5 * labels
        _, _, var = delong_double_loop(scores, labels)
        worst = max(worst, abs(classify.delong_variance(scores, labels) - var))
    ok = auc_exact and worst <= 1e-10
    record_acceptance(8, "AUC correctness", ok, f"500 AUCs exact={auc_exact}, DeLong variance max err {worst:.1e}")
    assert ok


def _outputs(folder):
    keep = {}
    for root, _, files in os.walk(folder):
        for name in files:
            if name.endswith((".fmap", ".json", ".jsonl", ".csv")) and name not in ("timings.json", "bench.json"):
                path = os.path.join(root, name)
                with open(path, "rb") as fh:
                    keep[os.path.relpath(path, folder)] = fh.read()
    return keep


def _run_all_commands(base):
    corpus = base / "corpus"
    codes = [run("synth", "--n-real", 30, "--n-fake", 30, "--size", 48, "--seed", 9, "--out-dir", corpus),
             run("estimate", corpus / "images", "--out-dir", base / "est"),
             run("analyze", "--manifest", corpus / "manifest.jsonl", "--out-dir", base / "ana")]
    real = sorted((corpus / "images").glob("real_*.png"))[:3]
    for d in ("r", "f", "s"):
        (base / "pairs" / d).mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(real):
        stem = p.stem
        fake_map = io.read_fmap(base / "est" / f"{stem}.fmap")
        io.write_fmap(base / "pairs" / "r" / f"x{i}.fmap", io.read_fmap(corpus / "gt" / f"{stem}.fmap"))
        io.write_fmap(base / "pairs" / "f" / f"x{i}.fmap", fake_map)
        io.write_fmap(base / "pairs" / "s" / f"x{i}.fmap", fake_map[::-1])
    codes += [run("analyze", "--real-dir", base / "pairs" / "r", "--fake-dir", base / "pairs" / "f",
                  "--out-dir", base / "sweep"),
              run("align", "--real-dir", base / "pairs" / "r", "--fake-dir", base / "pairs" / "f",
                  "--saliency-dir", base / "pairs" / "s", "--out-dir", base / "align"),
              run("train", "--features", base / "ana" / "features.csv", "--out-dir", base / "model"),
              run("eval", "--model", base / "model" / "model.json", "--features", base / "ana" / "features.csv",
                  "--out-dir", base / "eval")]
    return codes


def test_criterion_09_determinism_and_formats(tmp_path):
    # both runs share one base path so the echoed config is identical
    base = tmp_path / "run"
    codes1 = _run_all_commands(base)
    first = _outputs(base)
    shutil.rmtree(base)
    codes2 = _run_all_commands(base)
    second = _outputs(base)
    identical = first == second and len(first) > 0
    rng = np.random.default_rng(9)
    fuzz_ok = True
    specials = np.array([0.0, -0.0, 1e-45, -1e-40, 1.5, 3e38, -7.25], dtype=np.float32)
    for _ in range(1000):
        h, w = rng.integers(1, 33, 2)
        bits = rng.integers(0, 2 ** 32, (h, w), dtype=np.uint64).astype(np.uint32)
        m = bits.view(np.float32)
        m = np.where(np.isfinite(m), m, np.float32(1.0))
        m.ravel()[: min(m.size, len(specials))] = specials[: m.size]
        fuzz_ok &= io.decode_fmap(io.encode_fmap(m)).tobytes() == m.astype("<f4").tobytes()
    ok = identical and fuzz_ok and set(codes1) == {0} and codes1 == codes2
    record_acceptance(9, "determinism and formats", ok,
                      f"exit codes {codes1}, {len(first)} output files byte-identical={identical}, "
                      f"1000-map FMAP fuzz bit-exact={fuzz_ok}")
    assert ok


def test_criterion_10_gradient_check():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(50, 6))
    y = (rng.random(50) < 0.5).astype(float)
    worst = 0.0
    h = 1e-6
    for _ in range(5):
        w, b = rng.normal(size=6), float(rng.normal())
        _, gw, gb = classify.loss_and_grad(w, b, x, y, 1e-3)
        num = np.zeros(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            num[i] = (classify.loss_and_grad(w + e, b, x, y, 1e-3)[0]
                      - classify.loss_and_grad(w - e, b, x, y, 1e-3)[0]) / (2 * h)
        num_b = (classify.loss_and_grad(w, b + h, x, y, 1e-3)[0] - classify.loss_and_grad(w, b - h, x, y, 1e-3)[0]) / (2 * h)
        analytic = np.r_[gw, gb]
        numeric = np.r_[num, num_b]
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8))))
    ok = worst < 1e-4
    record_acceptance(10, "gradient check", ok, f"max rel err {worst:.1e}")
    assert ok
