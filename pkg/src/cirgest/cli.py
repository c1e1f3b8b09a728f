"""Command-line driver for the full workflow: synthesize, simulate,
extract, build libraries, train baselines, classify, evaluate.

Exit codes: 0 ok, 2 usage, 3 data, 4 provider, 5 internal. All artifacts
embed the canonical config hash; reruns with the same config and seed are
byte-identical.
"""

import dataclasses
import functools
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .baselines import classify as model_classify, save_model, train
from .channel_sim import (
    dataset_labels,
    derive_seed,
    make_trajectory,
    recording_seeds,
    simulate,
)
from .config import RunConfig, config_hash, load_config
from .dataset import (
    extract_features,
    build_library,
    load_library,
    read_image,
    read_manifest,
    save_library,
    split,
    write_manifest,
)
from .eval import (
    REPORT_CSV_HEADER,
    group_results_by_category,
    read_results,
    report,
    score_results,
    write_results,
)
from .labels import CATEGORIES, category_of
from .llm import ProviderConfig, ProviderError, build_prompt, classify_batch
from .receiver import extract_dcir_image
from .retrieval import retrieve_per_class
from .signal import read_wav, sounding_passband, write_wav

_DATA_ERRORS = (ValueError, OSError, KeyError, json.JSONDecodeError)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ProviderError as exc:
            _fail(4, str(exc))
        except _DATA_ERRORS as exc:
            _fail(3, str(exc))
        except Exception as exc:  # noqa: BLE001 - last-resort mapping
            traceback.print_exc()
            _fail(5, f"internal error: {exc}")

    return wrapper


def _positive(ctx, param, value):
    if value is not None and value <= 0:
        raise click.BadParameter("must be positive")
    return value


def _log(ctx, stage: str, message: str, **extra):
    if ctx.obj and ctx.obj.get("verbose"):
        rec = {"stage": stage, "message": message}
        rec.update(extra)
        click.echo(json.dumps(rec, sort_keys=True), err=True)
    else:
        click.echo(f"[{stage}] {message}", err=True)


def _load_cfg(config_path, **overrides) -> RunConfig:
    if config_path:
        return load_config(config_path, **overrides)
    cfg = RunConfig()
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


@click.group()
@click.version_option(version=__version__, prog_name="cirgest")
@click.option("--verbose", is_flag=True, help="JSON-lines logs on stderr.")
@click.pass_context
def main(ctx, verbose):
    """Acoustic gesture recognition pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


# ---------------------------------------------------------------- synth


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seconds", type=float, default=2.0, callback=_positive,
              help="Duration of the emitted waveform.")
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def synth(ctx, config_path, seconds, out):
    """Write the looping sounding waveform as WAV."""
    cfg = _load_cfg(config_path)
    sig = cfg.signal
    n_frames = int(round(seconds * sig.frame_rate_hz))
    if n_frames < 1:
        raise click.BadParameter("duration shorter than one frame", param_hint="--seconds")
    wave = sounding_passband(sig, repeats=n_frames)
    write_wav(out, wave, sig.sample_rate_hz)
    _log(ctx, "synth", f"wrote {len(wave)} samples ({n_frames} frames) to {out}",
         samples=len(wave), frames=n_frames)


# ---------------------------------------------------------------- simulate


def _simulate_one(task):
    (cfg, label, sample_id, traj_seed, noise_seed, duration_s, snr_db, wav_path) = task
    sig = cfg.signal
    traj = make_trajectory(
        label,
        duration_s=duration_s,
        scale_m=cfg.trajectory.stroke_halfwidth_m,
        center=(0.0, cfg.trajectory.center_depth_m, cfg.trajectory.plane_height_m),
        seed=traj_seed,
        frame_rate_hz=sig.frame_rate_hz,
        jitter_frac=cfg.trajectory.jitter_frac,
    )
    scene = dataclasses.replace(cfg.scene, snr_db=snr_db, noise_seed=noise_seed)
    n_frames = int(round(duration_s * sig.frame_rate_hz))
    passband = _passband_cached(sig, n_frames)
    rx = simulate(passband, scene, traj, sample_rate_hz=sig.sample_rate_hz)
    write_wav(wav_path, rx, sig.sample_rate_hz)
    return sample_id


@functools.lru_cache(maxsize=4)
def _passband_cached(sig, n_frames):
    return sounding_passband(sig, repeats=n_frames)


def _run_tasks(tasks, worker, jobs: int):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks, chunksize=1))


def simulate_dataset(cfg: RunConfig, labels, samples_per_label: int, seed: int,
                     snr_db: float, duration_s: float, out_dir: Path, jobs: int = 1):
    """Synthesize one recording per (label, sample index); returns manifest rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    tasks, rows = [], []
    for label in labels:
        for i in range(samples_per_label):
            traj_seed, noise_seed = recording_seeds(label, i, seed)
            sample_id = f"{category_of(label)}_{label}_{i:03d}"
            wav_name = f"{sample_id}.wav"
            tasks.append((cfg, label, sample_id, traj_seed, noise_seed,
                          duration_s, snr_db, str(out_dir / wav_name)))
            rows.append({
                "sample_id": sample_id,
                "gesture_label": label,
                "category": category_of(label),
                "seed": seed,
                "sample_index": i,
                "traj_seed": traj_seed,
                "noise_seed": noise_seed,
                "snr_db": snr_db,
                "duration_s": duration_s,
                "wav": wav_name,
                "config_hash": h,
            })
    _run_tasks(tasks, _simulate_one, jobs)
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, rows)
    return rows, manifest_path


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--category", type=click.Choice(sorted(CATEGORIES)), default=None,
              help="Restrict to one gesture category.")
@click.option("--label", "only_labels", multiple=True, help="Explicit label(s).")
@click.option("--samples", type=int, default=10, callback=_positive,
              help="Recordings per label.")
@click.option("--seed", type=int, default=0)
@click.option("--snr-db", type=float, default=20.0)
@click.option("--duration", type=float, default=1.5, callback=_positive)
@click.option("--jobs", type=int, default=1, callback=_positive)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def simulate_cmd(ctx, config_path, category, only_labels, samples, seed, snr_db,
                 duration, jobs, out):
    """Simulate gesture recordings and write a manifest."""
    cfg = _load_cfg(config_path)
    labels = list(only_labels) if only_labels else dataset_labels(category)
    if not labels:
        raise click.UsageError("no labels selected")
    unknown = [l for l in labels if category_of(l) is None]
    if unknown:
        raise click.UsageError(f"unknown labels: {unknown}")
    rows, manifest_path = simulate_dataset(
        cfg, labels, samples, seed, snr_db, duration, Path(out), jobs
    )
    _log(ctx, "simulate", f"wrote {len(rows)} recordings to {out}", count=len(rows))


main.add_command(simulate_cmd, name="simulate")


# ---------------------------------------------------------------- extract


def _extract_one(task):
    cfg, wav_path, png_path = task
    rx, _ = read_wav(wav_path, expected_rate=cfg.signal.sample_rate_hz)
    image = extract_dcir_image(rx, cfg.signal, tap_count=cfg.tap_count)
    from .dataset import write_image

    write_image(png_path, image)
    return image.shape


def extract_images(cfg: RunConfig, manifest_rows, recordings_dir: Path,
                   out_dir: Path, jobs: int = 1):
    out_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    tasks, rows = [], []
    for row in manifest_rows:
        png_name = f"{row['sample_id']}.png"
        tasks.append((cfg, str(recordings_dir / row["wav"]), str(out_dir / png_name)))
        rows.append({
            "sample_id": row["sample_id"],
            "gesture_label": row["gesture_label"],
            "category": row["category"],
            "image_path": png_name,
            "config_hash": h,
        })
    _run_tasks(tasks, _extract_one, jobs)
    manifest_path = out_dir / "images.jsonl"
    write_manifest(manifest_path, rows)
    return rows, manifest_path


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--jobs", type=int, default=1, callback=_positive)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def extract(ctx, config_path, manifest, jobs, out):
    """Extract a dCIR image per recording."""
    cfg = _load_cfg(config_path)
    rows = read_manifest(manifest)
    if not rows:
        raise click.UsageError("manifest is empty")
    out_rows, _ = extract_images(cfg, rows, Path(manifest).parent, Path(out), jobs)
    _log(ctx, "extract", f"wrote {len(out_rows)} images to {out}", count=len(out_rows))


# ---------------------------------------------------------------- library


def build_category_library(cfg: RunConfig, image_rows, images_dir: Path,
                           category: str, out_dir: Path):
    rows = [r for r in image_rows if r["category"] == category]
    if not rows:
        raise ValueError(f"no image rows for category {category!r}")
    tagged = split(rows, cfg.split_ratio, cfg.split_seed)
    train_rows = [r for r in tagged if r["split"] == "train"]
    test_rows = [r for r in tagged if r["split"] == "test"]
    lib = build_library(train_rows, category, str(images_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    lib_path = out_dir / f"library_{category}.bin"
    save_library(lib, lib_path)
    split_info = {
        "category": category,
        "train": sorted(r["sample_id"] for r in train_rows),
        "test": sorted(r["sample_id"] for r in test_rows),
        "split_ratio": cfg.split_ratio,
        "split_seed": cfg.split_seed,
        "config_hash": config_hash(cfg),
    }
    split_path = out_dir / f"split_{category}.json"
    with open(split_path, "w", encoding="utf-8") as f:
        json.dump(split_info, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    test_manifest = out_dir / f"test_{category}.jsonl"
    write_manifest(test_manifest, [r for r in rows
                                   if r["sample_id"] in set(split_info["test"])])
    return lib, lib_path, split_info, test_manifest


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--images", "images_manifest", type=click.Path(exists=True), required=True)
@click.option("--category", type=click.Choice(sorted(CATEGORIES)), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def library(ctx, config_path, images_manifest, category, out):
    """Split one category and build its train-side vector library."""
    cfg = _load_cfg(config_path)
    image_rows = read_manifest(images_manifest)
    lib, lib_path, split_info, test_manifest = build_category_library(
        cfg, image_rows, Path(images_manifest).parent, category, Path(out)
    )
    _log(ctx, "library",
         f"{category}: {lib.size()} train vectors -> {lib_path.name}, "
         f"{len(split_info['test'])} test ids -> {test_manifest.name}",
         train=lib.size(), test=len(split_info["test"]))


# ---------------------------------------------------------------- retrieve


@main.command()
@click.option("--lib", "lib_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
@guarded
def retrieve(ctx, lib_path, image_path, out):
    """Per-class nearest neighbors for one dCIR image."""
    lib = load_library(lib_path)
    vec = extract_features(read_image(image_path))
    results = [
        {"sample_id": r.sample_id, "gesture_label": r.gesture_label,
         "distance": float(r.distance)}
        for r in retrieve_per_class(vec, lib)
    ]
    text = json.dumps({"category": lib.category, "results": results},
                      sort_keys=True, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


# ---------------------------------------------------------------- baseline


def _feature_matrix(rows, images_dir: Path):
    vectors, labels, ids = [], [], []
    for r in sorted(rows, key=lambda x: x["sample_id"]):
        vec = extract_features(read_image(str(images_dir / r["image_path"])))
        vectors.append(vec.astype(np.float32))
        labels.append(r["gesture_label"])
        ids.append(r["sample_id"])
    return np.array(vectors, dtype=np.float32), labels, ids


def _hyperparams(cfg: RunConfig, kind: str) -> dict:
    if kind == "knn":
        return {"k": cfg.knn_k}
    if kind == "svm":
        return {"lambda": cfg.svm_lambda, "epochs": cfg.svm_epochs}
    return {"n_trees": cfg.rf_trees, "max_depth": cfg.rf_max_depth,
            "min_leaf": cfg.rf_min_leaf}


def run_baseline(cfg: RunConfig, kind: str, image_rows, images_dir: Path,
                 split_info: dict, seed: int):
    ids_train = set(split_info["train"])
    ids_test = set(split_info["test"])
    rows_by_id = {r["sample_id"]: r for r in image_rows}
    train_rows = [rows_by_id[i] for i in sorted(ids_train)]
    test_rows = [rows_by_id[i] for i in sorted(ids_test)]
    x_train, y_train, train_ids = _feature_matrix(train_rows, images_dir)
    model = train(kind, x_train, y_train, _hyperparams(cfg, kind),
                  seed=derive_seed("train", kind, split_info["category"], seed),
                  sample_ids=train_ids)
    results = []
    for r in test_rows:
        vec = extract_features(read_image(str(images_dir / r["image_path"])))
        label, _score = model_classify(model, vec)
        results.append({
            "sample_id": r["sample_id"],
            "truth": r["gesture_label"],
            "predicted": label,
            "status": "ok",
            "reasoning": "",
        })
    return model, results


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--kind", type=click.Choice(["knn", "svm", "rf"]), required=True)
@click.option("--images", "images_manifest", type=click.Path(exists=True), required=True)
@click.option("--split", "split_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--model-out", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def baseline(ctx, config_path, kind, images_manifest, split_path, seed, model_out, out):
    """Train a classical baseline on the train split and score the test split."""
    cfg = _load_cfg(config_path)
    image_rows = read_manifest(images_manifest)
    with open(split_path, encoding="utf-8") as f:
        split_info = json.load(f)
    model, results = run_baseline(cfg, kind, image_rows,
                                  Path(images_manifest).parent, split_info, seed)
    if model_out:
        save_model(model, model_out)
    write_results(out, results)
    correct = sum(r["predicted"] == r["truth"] for r in results)
    _log(ctx, "baseline", f"{kind}: {correct}/{len(results)} correct -> {out}",
         kind=kind, correct=correct, total=len(results))


# ---------------------------------------------------------------- classify


def run_llm_classify(test_rows, images_dir: Path, lib, provider: ProviderConfig,
                     concurrency: int = 4):
    bundles = []
    for r in test_rows:
        raster = read_image(str(images_dir / r["image_path"]))
        vec = extract_features(raster)
        retrieved = retrieve_per_class(vec, lib)
        exemplars = [read_image(str(images_dir / f"{s.sample_id}.png"))
                     for s in retrieved]
        bundles.append(build_prompt(raster, retrieved, lib.category,
                                    exemplar_images=exemplars))
    outcomes = classify_batch(bundles, provider, concurrency=concurrency)
    results = []
    for r, o in zip(test_rows, outcomes):
        results.append({
            "sample_id": r["sample_id"],
            "truth": r["gesture_label"],
            "predicted": o.predicted_label,
            "status": o.status,
            "reasoning": o.reasoning_text,
        })
    return results


@main.command("classify")
@click.option("--lib", "lib_path", type=click.Path(exists=True), required=True)
@click.option("--test-manifest", type=click.Path(exists=True), required=True)
@click.option("--images-root", type=click.Path(exists=True), default=None,
              help="Directory with the PNG images (default: manifest directory).")
@click.option("--provider", default="mock:nearest", show_default=True)
@click.option("--jobs", type=int, default=4, callback=_positive,
              help="Concurrent provider requests.")
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def classify_command(ctx, lib_path, test_manifest, images_root, provider, jobs, out):
    """Classify test images via retrieval-augmented prompting."""
    lib = load_library(lib_path)
    test_rows = read_manifest(test_manifest)
    if not test_rows:
        raise click.UsageError("test manifest is empty")
    images_dir = Path(images_root) if images_root else Path(test_manifest).parent
    pc = ProviderConfig(name=provider)
    results = run_llm_classify(test_rows, images_dir, lib, pc, concurrency=jobs)
    write_results(out, results)
    ok = sum(r["status"] == "ok" for r in results)
    _log(ctx, "classify", f"{ok}/{len(results)} ok outcomes -> {out}",
         ok=ok, total=len(results))


# ---------------------------------------------------------------- evaluate


def evaluate_results(named_results: list, cfg: RunConfig, out_dir: Path,
                     seeds=None):
    """named_results: list of (model_name, rows). Returns report entry list."""
    entries = []
    for cat in CATEGORIES:
        for model_name, rows in named_results:
            cat_rows = group_results_by_category(rows).get(cat)
            if not cat_rows:
                continue
            cm, metrics = score_results(cat_rows, CATEGORIES[cat])
            entries.append({
                "category": cat,
                "model": model_name,
                "metrics": metrics,
                "excluded_count": cm.excluded_count,
            })
    if not entries:
        raise ValueError("no results to evaluate")
    out_dir.mkdir(parents=True, exist_ok=True)
    report(entries, out_dir / "report.csv", out_dir / "report.txt",
           config_hash=config_hash(cfg), seeds=seeds)
    return entries


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--results", "results_specs", multiple=True, required=True,
              help="model=path/to/results.jsonl (repeatable).")
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def evaluate(ctx, config_path, results_specs, out):
    """Score results files into report.csv and report.txt."""
    cfg = _load_cfg(config_path)
    named = []
    for spec_item in results_specs:
        if "=" not in spec_item:
            raise click.UsageError("--results expects model=path")
        name, path = spec_item.split("=", 1)
        named.append((name, read_results(path)))
    entries = evaluate_results(named, cfg, Path(out))
    _log(ctx, "evaluate", f"{len(entries)} model x category entries -> {out}",
         entries=len(entries))


# ---------------------------------------------------------------- pipeline


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--category", type=click.Choice(sorted(CATEGORIES)), default=None)
@click.option("--samples", type=int, default=10, callback=_positive)
@click.option("--seed", type=int, default=0)
@click.option("--snr-db", type=float, default=20.0)
@click.option("--duration", type=float, default=1.5, callback=_positive)
@click.option("--provider", default="mock:nearest", show_default=True)
@click.option("--jobs", type=int, default=1, callback=_positive)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
@guarded
def pipeline(ctx, config_path, category, samples, seed, snr_db, duration,
             provider, jobs, out):
    """End-to-end run: simulate, extract, libraries, baselines, LLM, report."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = dataset_labels(category)
    categories = [category] if category else list(CATEGORIES)

    provider_cfg = ProviderConfig(name=provider)
    if provider == "http":  # surface missing key/endpoint before simulation work
        from .llm import make_provider

        make_provider(provider_cfg)

    _log(ctx, "pipeline", f"simulating {len(labels)} labels x {samples} samples")
    manifest_rows, _ = simulate_dataset(
        cfg, labels, samples, seed, snr_db, duration, out_dir / "recordings", jobs
    )
    _log(ctx, "pipeline", "extracting dCIR images")
    image_rows, _ = extract_images(
        cfg, manifest_rows, out_dir / "recordings", out_dir / "images", jobs
    )

    named_results = []
    models_dir = out_dir / "models"
    results_dir = out_dir / "results"
    models_dir.mkdir(exist_ok=True)
    results_dir.mkdir(exist_ok=True)
    collected = {name: [] for name in ("knn", "svm", "rf", "llm")}
    for cat in categories:
        _log(ctx, "pipeline", f"library + split for {cat}")
        lib, lib_path, split_info, test_manifest = build_category_library(
            cfg, image_rows, out_dir / "images", cat, out_dir / "libraries"
        )
        cat_rows = [r for r in image_rows if r["category"] == cat]
        for kind in ("knn", "svm", "rf"):
            _log(ctx, "pipeline", f"baseline {kind} on {cat}")
            model, results = run_baseline(
                cfg, kind, cat_rows, out_dir / "images", split_info, seed
            )
            save_model(model, models_dir / f"{cat}_{kind}.model")
            write_results(results_dir / f"{cat}_{kind}.results.jsonl", results)
            collected[kind].extend(results)
        _log(ctx, "pipeline", f"prompt classification on {cat}")
        test_rows = read_manifest(test_manifest)
        llm_results = run_llm_classify(
            test_rows, out_dir / "images", lib, provider_cfg, concurrency=jobs
        )
        write_results(results_dir / f"{cat}_llm.results.jsonl", llm_results)
        collected["llm"].extend(llm_results)

    for name, rows in collected.items():
        write_results(results_dir / f"{name}.results.jsonl", rows)
        named_results.append((name, rows))
    _log(ctx, "pipeline", "writing report")
    evaluate_results(named_results, cfg, out_dir, seeds=[seed])
    click.echo((out_dir / "report.txt").read_text(encoding="utf-8"))


# ---------------------------------------------------------------- serve


@main.command()
@click.option("--libraries", "lib_dir", type=click.Path(exists=True), required=True,
              help="Directory containing library_<category>.bin files.")
@click.option("--images-root", type=click.Path(exists=True), required=True)
@click.option("--provider", default="mock:nearest", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.pass_context
@guarded
def serve(ctx, lib_dir, images_root, provider, config_path, host, port):
    """Serve retrieval and classification over HTTP."""
    import uvicorn

    from .service import create_app

    cfg = _load_cfg(config_path)
    libs = {}
    for path in sorted(Path(lib_dir).glob("library_*.bin")):
        lib = load_library(path)
        libs[lib.category] = lib
    if not libs:
        raise click.UsageError(f"no library_*.bin files in {lib_dir}")
    app = create_app(libs, image_root=images_root,
                     provider=ProviderConfig(name=provider),
                     config_hash=config_hash(cfg))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
