"""Release gates for the whole toolkit.

Each test exercises one end-to-end guarantee at its stated tolerance and
prints a single verdict line; a red gate here blocks release.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from numpy.random import default_rng

from cirgest import channel_sim, cli, dataset, llm, receiver, retrieval, signal
from cirgest import eval as evaluation
from cirgest.config import RunConfig, SignalConfig, default_scene
from cirgest.labels import ALL_LABELS, CATEGORIES
from cirgest.llm import ProviderConfig

FS = 48000.0
FRAME = 600
LETTERS = CATEGORIES["letters"]


@pytest.fixture()
def verdict(capfd):
    def _emit(num, ok, detail=""):
        tail = f" ({detail})" if detail else ""
        with capfd.disabled():
            print(f"criterion {num}: {'PASS' if ok else 'FAIL'}{tail}")
    return _emit


# ------------------------------------------------------------ 1: LS recovery


def test_c01_least_squares_channel_recovery(verdict):
    cfg = SignalConfig()
    t01 = receiver.minmax01(np.real(receiver.loopback_template(cfg)))
    t0 = time.monotonic()
    worst = 0.0
    for trial in range(100):
        rng = default_rng(1000 + trial)
        h = rng.normal(size=16) + 1j * rng.normal(size=16)
        y = np.zeros(FRAME, dtype=complex)
        for k in range(16):
            y[k:] += h[k] * t01[: FRAME - k]
        est, _ = receiver.estimate_cir(y, t01, tap_count=16)
        worst = max(worst, float(np.linalg.norm(est - h) / np.linalg.norm(h)))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-6 and elapsed < 10.0
    verdict(1, ok, f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert worst < 1e-6
    assert elapsed < 10.0


# -------------------------------------------------------- 2: synchronization


def test_c02_synchronization_under_noise(verdict):
    cfg = SignalConfig()
    tpl = receiver.loopback_template(cfg)
    base = signal.sounding_passband(cfg, repeats=12)
    grid_phase = receiver.template_phase(cfg) % FRAME
    noise_power = np.mean(base**2) / 10.0  # 10 dB on the sounding segment
    t0 = time.monotonic()
    exact = 0
    trials = 200
    for trial in range(trials):
        rng = default_rng(5000 + trial)
        offset = int(rng.integers(0, 10 * FRAME))
        rx = np.concatenate([np.zeros(offset), base])
        rx = rx + rng.normal(scale=np.sqrt(noise_power), size=len(rx))
        sync = receiver.synchronize(signal.downconvert(rx, cfg), tpl, 0.5)
        first = int(sync.frame_start_indices[0])
        exact += (first - offset) % FRAME == grid_phase
    elapsed = time.monotonic() - t0
    rate = exact / trials
    ok = rate >= 0.99 and elapsed < 30.0
    verdict(2, ok, f"{exact}/{trials} exact, {elapsed:.1f} s")
    assert rate >= 0.99
    assert elapsed < 30.0


# ------------------------------------------------------------- 3: dCIR null


def test_c03_stationary_scene_nulls_dcir(verdict):
    cfg = SignalConfig()
    pb = signal.sounding_passband(cfg, repeats=82)
    worst = 0.0
    for seed in range(20):
        rx = channel_sim.simulate(pb, default_scene(20.0, seed), None)
        cir, _ = receiver.extract_cir(rx, cfg)
        ratio = float(np.abs(receiver.dcir(cir)).max() / np.abs(cir).max())
        worst = max(worst, ratio)
    ok = worst < 0.05
    verdict(3, ok, f"max ratio {worst:.4f}")
    assert ok


# ------------------------------------------------- 4: dCIR ridge tracking


def _inject(out, x, delay_samples, gain):
    # linear-interp fractional delay, zero before signal onset
    n = np.arange(len(x))
    d = np.floor(delay_samples).astype(int)
    frac = delay_samples - d
    i0 = n - d
    i1 = i0 - 1
    v0 = np.where(i0 >= 0, x[np.clip(i0, 0, None)], 0.0)
    v1 = np.where(i1 >= 0, x[np.clip(i1, 0, None)], 0.0)
    out += gain * ((1.0 - frac) * v0 + frac * v1)


def _triangle(n, lo=24.0, hi=54.0, taps_per_frame=1.0):
    frames = np.arange(n) / (FS / 80.0)
    span = hi - lo
    period = 2.0 * span / taps_per_frame
    phase = np.mod(frames * taps_per_frame, period)
    return lo + np.where(phase <= span, phase, period - phase)


def test_c04_dcir_ridge_tracks_moving_reflector(verdict):
    cfg = SignalConfig()
    pb = signal.sounding_passband(cfg, repeats=82)
    clean = channel_sim.simulate(pb, default_scene(float("inf"), 0), None)
    direct_delay = 0.05 / 343.0 * FS
    delay_abs = direct_delay + _triangle(len(pb))
    swept = clean.copy()
    _inject(swept, pb, delay_abs, 1.8)
    noise_power = np.mean(swept**2) / 10.0**2  # 20 dB
    sample_grid = np.arange(len(delay_abs), dtype=float)
    worst = 1.0
    for seed in range(20):
        rng = default_rng(10_000 + seed)
        work = swept + rng.normal(scale=np.sqrt(noise_power), size=len(swept))
        cir, starts = receiver.extract_cir(work, cfg)
        mags = np.abs(receiver.dcir(cir))
        anchor = (int(starts[0]) - receiver.template_stream_offset(cfg)) % FRAME
        argmax_taps = mags.argmax(axis=0)
        hits = 0
        for j in range(mags.shape[1]):
            mid = 0.5 * (starts[j] + starts[j + 1]) + FRAME / 2.0
            expected = np.interp(mid, sample_grid, delay_abs) - anchor
            hits += abs(argmax_taps[j] - expected) <= 1.01
        worst = min(worst, hits / mags.shape[1])
    ok = worst >= 0.90
    verdict(4, ok, f"min column hit rate {worst:.4f}")
    assert ok


# --------------------------------------------- 5: features and retrieval


def test_c05_feature_vectors_and_exact_retrieval(verdict):
    rng = default_rng(77)
    for _ in range(5):
        raster = rng.integers(0, 256, size=(64, 90), dtype=np.uint8)
        vec = dataset.extract_features(raster)
        assert vec.shape == (4096,)
        assert vec.min() >= 0.0 and vec.max() <= 1.0
    lib = dataset.VectorLibrary(category="letters", labels=LETTERS)
    for label in LETTERS:
        lib.vectors[label] = rng.normal(size=(8, 4096)).astype(np.float32)
        lib.sample_ids[label] = [f"letters_{label}_{i:03d}" for i in range(8)]
    mismatches = 0
    for _ in range(50):
        query = rng.normal(size=4096)
        got = retrieval.retrieve_per_class(query, lib)
        for sample in got:
            vecs = np.asarray(lib.vectors[sample.gesture_label], np.float64)
            dists = np.sqrt(np.sum((vecs - query) ** 2, axis=1))
            order = sorted(zip(dists, lib.sample_ids[sample.gesture_label]))
            if (sample.distance, sample.sample_id) != order[0]:
                mismatches += 1
    ok = mismatches == 0
    verdict(5, ok, f"{mismatches} mismatches over 50 queries")
    assert ok


# ------------------------------------------------------- 6: metrics oracle


def test_c06_weighted_metrics_oracle(verdict):
    cm = evaluation.confusion(["A", "A", "A", "B"], ["A", "A", "B", "B"],
                              ("A", "B"))
    m = evaluation.weighted_metrics(cm)
    err = abs(m.weighted_f1 - 11.0 / 15.0)
    diag = evaluation.confusion(list("AABBBCC"), list("AABBBCC"),
                                ("A", "B", "C"))
    md = evaluation.weighted_metrics(diag)
    exact_one = (md.weighted_precision == 1.0 and md.weighted_recall == 1.0
                 and md.weighted_f1 == 1.0)
    ok = err <= 1e-9 and exact_one
    verdict(6, ok, f"fixture err {err:.1e}, diagonal exact: {exact_one}")
    assert err <= 1e-9
    assert exact_one


# ------------------------------------------- 7: synthetic end-to-end run


def test_c07_synthetic_end_to_end(verdict, tmp_path):
    assert len(ALL_LABELS) == 15
    cfg = RunConfig(knn_k=1)
    t0 = time.monotonic()
    rows, _ = cli.simulate_dataset(cfg, ALL_LABELS, 20, 0, 20.0, 1.5,
                                   tmp_path / "rec", 1)
    image_rows, _ = cli.extract_images(cfg, rows, tmp_path / "rec",
                                       tmp_path / "img", 1)
    f1 = {}
    for cat in CATEGORIES:
        lib, _, split_info, test_manifest = cli.build_category_library(
            cfg, image_rows, tmp_path / "img", cat, tmp_path / "lib")
        cat_rows = [r for r in image_rows if r["category"] == cat]
        named = []
        for kind in ("knn", "svm", "rf"):
            _, res = cli.run_baseline(cfg, kind, cat_rows, tmp_path / "img",
                                      split_info, 0)
            named.append((kind, res))
        test_rows = dataset.read_manifest(test_manifest)
        llm_res = cli.run_llm_classify(test_rows, tmp_path / "img", lib,
                                       ProviderConfig(name="mock:nearest"),
                                       concurrency=1)
        named.append(("llm", llm_res))
        entries = cli.evaluate_results(named, cfg, tmp_path / f"rep_{cat}")
        for entry in entries:
            f1[(cat, entry["model"])] = entry["metrics"].weighted_f1
    elapsed = time.monotonic() - t0
    floor = min(f1[(cat, kind)] for cat in CATEGORIES
                for kind in ("knn", "svm", "rf"))
    equal = all(f1[(cat, "llm")] == f1[(cat, "knn")] for cat in CATEGORIES)
    ok = floor >= 0.80 and equal and elapsed < 600.0
    verdict(7, ok,
            f"min baseline F1 {floor:.4f}, nearest-provider == 1-NN: {equal}, "
            f"{elapsed:.0f} s")
    assert floor >= 0.80
    assert equal
    assert elapsed < 600.0


# ------------------------------------------- 8: prompt and answer protocol


def test_c08_prompt_and_answer_protocol(verdict):
    rng = default_rng(3)
    distances = [1.5, 2.25, 3.125, 4.0625, 5.03125]
    retrieved = [retrieval.RetrievedSample(f"letters_{lab}_000", lab, d)
                 for lab, d in zip(LETTERS, distances)]
    exemplars = [rng.integers(0, 256, size=(64, 80), dtype=np.uint8)
                 for _ in LETTERS]
    bundle = llm.build_prompt(
        rng.integers(0, 256, size=(64, 90), dtype=np.uint8),
        retrieved, "letters", exemplar_images=exemplars)
    text = bundle.user_text
    conforms = "**Your Task**" in text and "<answer>" in text
    for lab, d in zip(LETTERS, distances):
        conforms = conforms and lab in text and llm.format_distance(d) in text

    tagged = [
        ("<answer>C</answer> because the ridge slopes upward.", "C"),
        ("Verdict follows. <ANSWER>  b </ANSWER> Thank you.", "B"),
        ("<answer>A</answer> but also <answer>E</answer>", "A"),
    ]
    parses = all(llm.parse_answer(t, LETTERS)[0] == want for t, want in tagged)

    fuzzed = [
        "", "   ", "no tag at all", "<answer>", "</answer>",
        "<answer></answer>", "<answer> </answer>", "<answer>zebra</answer>",
        "<answer>AB</answer>", "<answer><answer>", "answer: A",
        "[answer]A[/answer]", "<ANSWER", "A</answer>", "<answer/>A",
        "\x00<answer\x00>", "<answer>\n", "{\"answer\": \"A\"}",
        "<asnwer>A</asnwer>", "<answer >A</answer >", "<<answer>>",
        "respond with <answer>LABEL</answer>", "<answer>6</answer>",
        "éè<answer>é</answer>",
    ]
    assert len(fuzzed) >= 20
    survived = 0
    for t in fuzzed:
        label, reasoning = llm.parse_answer(t, LETTERS)
        survived += label is None and isinstance(reasoning, str)
    ok = conforms and parses and survived == len(fuzzed)
    verdict(8, ok, f"conforms: {conforms}, tagged parses: {parses}, "
                   f"{survived}/{len(fuzzed)} malformed rejected")
    assert ok


# ------------------------------------------------------- 9: determinism


def test_c09_pipeline_determinism(verdict, tmp_path):
    runner = CliRunner()
    for name in ("one", "two"):
        result = runner.invoke(
            cli.main,
            ["pipeline", "--category", "letters", "--samples", "5",
             "--duration", "0.8", "--seed", "3", "--out",
             str(tmp_path / name)],
            catch_exceptions=False)
        assert result.exit_code == 0
    a, b = tmp_path / "one", tmp_path / "two"
    rel_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    rel_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    diffs = ["file sets differ"] if rel_a != rel_b else [
        str(rel) for rel in rel_a
        if (a / rel).read_bytes() != (b / rel).read_bytes()
    ]
    ok = not diffs
    verdict(9, ok, f"{len(rel_a)} artifacts byte-compared")
    assert ok, diffs


# ----------------------------------------------- 10: live provider smoke


def test_c10_live_provider_smoke(verdict, tmp_path, capfd):
    endpoint = os.environ.get("CIR_LLM_ENDPOINT", "")
    api_key = os.environ.get(llm.DEFAULT_API_KEY_ENV, "")
    if not endpoint or not api_key:
        with capfd.disabled():
            print("criterion 10: SKIP (no live endpoint configured)")
        pytest.skip("live endpoint not configured")
    cfg = RunConfig()
    rows, _ = cli.simulate_dataset(cfg, list(LETTERS), 5, 0, 20.0, 0.8,
                                   tmp_path / "rec", 1)
    image_rows, _ = cli.extract_images(cfg, rows, tmp_path / "rec",
                                       tmp_path / "img", 1)
    lib, _, _, test_manifest = cli.build_category_library(
        cfg, image_rows, tmp_path / "img", "letters", tmp_path / "lib")
    test_rows = dataset.read_manifest(test_manifest)[:5]
    provider = ProviderConfig(
        name="http", endpoint_url=endpoint,
        model_name=os.environ.get("CIR_LLM_MODEL", ""))
    results = cli.run_llm_classify(test_rows, tmp_path / "img", lib, provider,
                                   concurrency=1)
    ok_count = sum(r["status"] == "ok" for r in results)
    labels_valid = all(r["predicted"] in LETTERS
                       for r in results if r["status"] == "ok")
    ok = ok_count >= 1 and labels_valid
    verdict(10, ok, f"{ok_count}/{len(results)} ok, labels valid: {labels_valid}")
    assert ok
