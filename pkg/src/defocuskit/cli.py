"""Batch command line: estimate, synth, analyze, align, train, eval, bench.

Exit codes: 0 success, 1 failure of every input, 2 usage error or no inputs.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import alignment, analysis, classify, defocus, io, synthcam
from .config import SCHEMA_VERSION, RunConfig
from .defocus import DefocusMap, DefocusParams

log = logging.getLogger("defocuskit")

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _envelope(cfg: RunConfig, **payload) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), **payload}


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def collect_inputs(paths) -> list[tuple[str, str | None]]:
    """Expand files, directories and manifests into ``(path, label)`` pairs."""
    items = []
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                if name.lower().endswith(IMAGE_EXTS):
                    items.append((os.path.join(p, name), None))
        elif p.endswith(".jsonl"):
            items.extend((r["image"], r.get("label")) for r in synthcam.read_manifest(p))
        else:
            items.append((p, None))
    return items


def _map_pool(fn, args_list, jobs: int):
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args_list))


def load_defocus_map(path, sigma_max: float) -> DefocusMap:
    """FMAP holds sigma in pixels; a PNG is read as an already normalized map."""
    if str(path).lower().endswith(".fmap"):
        return DefocusMap(io.read_fmap(path).astype(np.float64), sigma_max)
    return DefocusMap.from_normalized(io.read_map(path), sigma_max)


def load_saliency(path, png_signed: bool = False) -> np.ndarray:
    values = io.read_map(path)
    if png_signed and not str(path).lower().endswith(".fmap"):
        values = values - 0.5
    return values


def _format_table(rows, headers) -> str:
    cells = [headers] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def mean_stage_timings(runs, warmup: int) -> tuple[list[dict], int]:
    """Per-stage mean over ``runs`` after dropping the first ``warmup``.

    When there are no more runs than ``warmup``, nothing is dropped.
    """
    drop = warmup if len(runs) > warmup else 0
    kept = runs[drop:]
    out = []
    for stage in defocus.STAGES:
        ms = [t["ms"] for run in kept for t in run if t["stage"] == stage]
        peaks = [t["peak_mb"] for run in kept for t in run if t["stage"] == stage and t["peak_mb"] is not None]
        out.append({"stage": stage, "ms": float(np.mean(ms)) if ms else 0.0,
                    "peak_mb": float(max(peaks)) if peaks else None})
    return out, drop


# -- estimate ------------------------------------------------------------------

def _estimate_one(args):
    path, params_dict, out_dir = args
    params = DefocusParams.from_dict(params_dict)
    stem = _stem(path)
    try:
        img = io.read_image(path)
        diag = defocus.Diagnostics()
        dmap, timings = defocus.estimate_defocus(img, params, diagnostics=diag)
    except Exception as exc:  # noqa: BLE001 - recorded per file
        return {"input": path, "ok": False, "error": f"{type(exc).__name__}: {exc}"}, None
    io.write_fmap(os.path.join(out_dir, f"{stem}.fmap"), dmap.sigma)
    io.write_png(os.path.join(out_dir, f"{stem}_preview.png"), dmap.normalized)
    rec = {"input": path, "ok": True, "fmap": f"{stem}.fmap", "preview": f"{stem}_preview.png",
           "mean_normalized": float(dmap.normalized.mean()),
           "degenerate_ratio_pixels": diag.degenerate_ratio_pixels,
           "empty_edge_mask": diag.empty_edge_mask}
    return rec, [t.to_dict() for t in timings]


def cmd_estimate(args, cfg: RunConfig) -> int:
    items = collect_inputs(args.inputs)
    if not items:
        print("no inputs", file=sys.stderr)
        return EXIT_USAGE
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    params = cfg["defocus"]
    results = _map_pool(_estimate_one, [(p, params, out_dir) for p, _ in items], cfg["jobs"])
    records = [r for r, _ in results]
    runs = [t for _, t in results if t is not None]
    warmup = cfg.get("estimate.warmup")
    stages, dropped = mean_stage_timings(runs, warmup)
    io.write_json(os.path.join(out_dir, "timings.json"), stages)
    io.write_json(os.path.join(out_dir, "estimate_report.json"),
                  _envelope(cfg, items=records, warmup_discarded=dropped))
    failed = [r for r in records if not r["ok"]]
    for r in failed:
        log.error("%s: %s", r["input"], r["error"])
    print(f"estimated {len(records) - len(failed)}/{len(records)} images -> {out_dir}")
    return EXIT_FAILED if len(failed) == len(records) else EXIT_OK


# -- synth ---------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    cam = cfg.camera
    s = cfg["synth"]
    out_dir = cfg["out_dir"]
    records = synthcam.make_corpus(cfg["seed"], s["n_real"], s["n_fake"], cam, out_dir,
                                   size=s["size"], layers=s["layers"])
    gt_means = {}
    for rec in records:
        gt = io.read_fmap(os.path.join(out_dir, rec["gt_blur"]))
        gt_means.setdefault(rec["label"], []).append(float(gt.mean(dtype=np.float64)))
    summary = _envelope(cfg, n_items=len(records),
                        mean_gt_sigma={k: float(np.mean(v)) for k, v in sorted(gt_means.items())},
                        kinds={k: sum(r["kind"] == k for r in records)
                               for k in sorted({r["kind"] for r in records})})
    io.write_json(os.path.join(out_dir, "synth.json"), summary)
    print(f"wrote {len(records)} items -> {os.path.join(out_dir, 'manifest.jsonl')}")
    return EXIT_OK


# -- analyze -------------------------------------------------------------------

def _analyze_item(args):
    rec, params_dict, window, normalization, out_dir = args
    params = DefocusParams.from_dict(params_dict)
    try:
        dmap, _ = defocus.estimate_defocus(io.read_image(rec["image"]), params)
    except Exception as exc:  # noqa: BLE001 - recorded per item
        return {"id": rec["id"], "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    var = analysis.local_variance(dmap, window, normalization)
    feats = analysis.extract_features(dmap, var, normalization=normalization)
    io.write_fmap(os.path.join(out_dir, "defocus", f"{rec['id']}.fmap"), dmap.sigma)
    io.write_fmap(os.path.join(out_dir, "variance", f"{rec['id']}.fmap"), var)
    peak = float(var.max())
    io.write_png(os.path.join(out_dir, "variance", f"{rec['id']}.png"), var / peak if peak > 0 else var)
    return {"id": rec["id"], "label": rec.get("label"), "ok": True,
            "features": feats.tolist(), "mean_local_variance": float(var.mean())}


def _write_features_csv(path, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label"] + analysis.FEATURE_NAMES)
    for r in rows:
        writer.writerow([r["id"], r["label"]] + [repr(float(v)) for v in r["features"]])
    io.atomic_write_text(path, buf.getvalue())


def read_features_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    ids = [r[0] for r in rows]
    labels = np.array([1 if r[1] == "fake" else 0 for r in rows], dtype=int)
    x = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64).reshape(len(rows), -1)
    return ids, labels, x, header[2:]


def _analyze_corpus(args, cfg):
    records = synthcam.read_manifest(args.manifest)
    if not records:
        print("no inputs", file=sys.stderr)
        return EXIT_USAGE
    a = cfg["analysis"]
    out_dir = cfg["out_dir"]
    jobs = [(r, cfg["defocus"], a["window"], a["normalization"], out_dir) for r in records]
    results = _map_pool(_analyze_item, jobs, cfg["jobs"])
    ok = [r for r in results if r["ok"]]
    failed = [r for r in results if not r["ok"]]
    _write_features_csv(os.path.join(out_dir, "features.csv"), ok)
    groups = {lab: [r["mean_local_variance"] for r in ok if r["label"] == lab] for lab in ("real", "fake")}
    ks = None
    if groups["real"] and groups["fake"]:
        ks = analysis.ks_two_sample(groups["real"], groups["fake"]).to_dict()
    group_stats = {lab: {"n": len(v), "mean": float(np.mean(v)) if v else None} for lab, v in groups.items()}
    io.write_json(os.path.join(out_dir, "ks.json"),
                  _envelope(cfg, statistic="mean_local_variance", groups=group_stats,
                            **(ks or {"d_statistic": None, "p_value": None})))
    io.write_json(os.path.join(out_dir, "analyze_report.json"),
                  _envelope(cfg, n_items=len(results), failed=failed))
    msg = f"analyzed {len(ok)}/{len(results)} items"
    if ks:
        msg += f"; KS D={ks['d_statistic']:.4f} p={ks['p_value']:.3g}"
    print(msg)
    if not ok:
        return EXIT_FAILED
    return EXIT_OK


def _maps_by_stem(folder):
    out = {}
    for name in sorted(os.listdir(folder)):
        if name.lower().endswith((".fmap",) + IMAGE_EXTS):
            out.setdefault(_stem(name), os.path.join(folder, name))
    return out


def _as_defocus_map(path, params: DefocusParams) -> DefocusMap:
    if path.lower().endswith(".fmap"):
        return load_defocus_map(path, params.sigma_max)
    dmap, _ = defocus.estimate_defocus(io.read_image(path), params)
    return dmap


def _paired(dirs: dict) -> tuple[list[str], dict]:
    """Match files across folders by stem; raise listing any unmatched stems."""
    by = {name: _maps_by_stem(d) for name, d in dirs.items()}
    all_stems = set().union(*(set(m) for m in by.values()))
    offenders = sorted(f"{s} (missing in {', '.join(n for n in by if s not in by[n])})"
                       for s in all_stems if any(s not in m for m in by.values()))
    if offenders:
        raise UsageError("unpaired inputs: " + "; ".join(offenders))
    return sorted(all_stems), by


def _analyze_pairs(args, cfg):
    stems, by = _paired({"real": args.real_dir, "fake": args.fake_dir})
    if not stems:
        print("no inputs", file=sys.stderr)
        return EXIT_USAGE
    a = cfg["analysis"]
    params = cfg.defocus
    out_dir = cfg["out_dir"]
    thresholds = a["thresholds"]
    per_pair = {}
    for stem in stems:
        real = _as_defocus_map(by["real"][stem], params)
        fake = _as_defocus_map(by["fake"][stem], params)
        mask = analysis.discrepancy_mask(real, fake, a["threshold"], a["normalization"])
        io.write_png(os.path.join(out_dir, "masks", f"{stem}.png"), mask.astype(np.float64))
        sweep = analysis.threshold_sweep(real, fake, thresholds, a["normalization"])
        per_pair[stem] = {"mask": f"masks/{stem}.png", "activated": int(mask.sum()),
                          "sweep": [{"threshold": t, "count": c} for t, c in sweep]}
    mean_counts = [{"threshold": float(t),
                    "mean_activated": float(np.mean([p["sweep"][i]["count"] for p in per_pair.values()]))}
                   for i, t in enumerate(thresholds)]
    io.write_json(os.path.join(out_dir, "sweep.json"), _envelope(cfg, pairs=per_pair, mean=mean_counts))
    print(f"analyzed {len(stems)} pairs -> {out_dir}")
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig) -> int:
    if args.manifest:
        return _analyze_corpus(args, cfg)
    if args.real_dir and args.fake_dir:
        return _analyze_pairs(args, cfg)
    raise UsageError("analyze needs --manifest or both --real-dir and --fake-dir")


# -- align ---------------------------------------------------------------------

def cmd_align(args, cfg: RunConfig) -> int:
    al = cfg["alignment"]
    sigma_max = cfg.defocus.sigma_max
    out_dir = cfg["out_dir"]
    n_bins, eps = al["n_bins"], al["epsilon"]

    def triple(real, fake, sal):
        return (load_defocus_map(real, sigma_max), load_defocus_map(fake, sigma_max),
                load_saliency(sal, al["png_signed"]))

    if args.real and args.fake and args.saliency:
        report = alignment.analyze_alignment(*triple(args.real, args.fake, args.saliency), n_bins, eps)
        payload = report.to_dict()
    elif args.real_dir and args.fake_dir and args.saliency_dir:
        stems, by = _paired({"real": args.real_dir, "fake": args.fake_dir, "saliency": args.saliency_dir})
        if not stems:
            print("no inputs", file=sys.stderr)
            return EXIT_USAGE
        triples = [triple(by["real"][s], by["fake"][s], by["saliency"][s]) for s in stems]
        if al["pooled"]:
            payload = alignment.analyze_pooled(triples, n_bins, eps).to_dict()
        else:
            reports = {s: alignment.analyze_alignment(*t, n_bins, eps).to_dict() for s, t in zip(stems, triples)}
            payload = {"schema_version": alignment.SCHEMA_VERSION, "n_bins": n_bins, "epsilon": eps,
                       "pairs": reports,
                       "mean_alignment": float(np.mean([r["alignment"] for r in reports.values()])),
                       "mean_kl": float(np.mean([r["kl"] for r in reports.values()]))}
    else:
        raise UsageError("align needs --real/--fake/--saliency or the three --*-dir options")
    payload["config"] = cfg.to_dict()
    io.write_json(os.path.join(out_dir, "alignment.json"), payload)
    if "alignment" in payload:
        print(f"alignment={payload['alignment']:.4f} kl={payload['kl']:.4f}")
    else:
        print(f"mean alignment={payload['mean_alignment']:.4f} over {len(payload['pairs'])} pairs")
    return EXIT_OK


# -- train / eval ----------------------------------------------------------------

def split_ids(ids, seed: int, fractions=(0.70, 0.15, 0.15)) -> dict:
    """Seeded shuffle of the sorted ids into train/val/test."""
    order = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(order))
    shuffled = [order[i] for i in perm]
    n = len(shuffled)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {"train": sorted(shuffled[:n_train]),
            "val": sorted(shuffled[n_train:n_train + n_val]),
            "test": sorted(shuffled[n_train + n_val:])}


def _subset(ids, labels, x, wanted):
    index = {k: i for i, k in enumerate(ids)}
    rows = [index[k] for k in wanted]
    return labels[rows], x[rows]


def cmd_train(args, cfg: RunConfig) -> int:
    c = cfg["classify"]
    ids, labels, x, names = read_features_csv(args.features)
    if not ids:
        print("no inputs", file=sys.stderr)
        return EXIT_USAGE
    split = split_ids(ids, c["split_seed"], tuple(c["split"]))
    label_of = dict(zip(ids, labels))
    for part, members in split.items():
        counts = [sum(int(label_of[k]) == c for k in members) for c in (0, 1)]
        # DeLong needs two samples per class in each scored split
        if min(counts) < 2:
            raise UsageError(f"split '{part}' has {counts[0]} real / {counts[1]} fake items; "
                             "each class needs at least 2, use a larger corpus")
    y_tr, x_tr = _subset(ids, labels, x, split["train"])
    model = classify.train_logistic(x_tr, y_tr, lr=c["lr"], epochs=c["epochs"], l2=c["l2"], feature_names=names)
    reports = {}
    for part in ("val", "test"):
        y_p, x_p = _subset(ids, labels, x, split[part])
        reports[part] = classify.evaluate(model, x_p, y_p, c["threshold"]).to_dict()
    out_dir = cfg["out_dir"]
    io.write_json(os.path.join(out_dir, "model.json"), _envelope(cfg, model=model.to_dict()))
    io.write_json(os.path.join(out_dir, "split.json"), _envelope(cfg, split_seed=c["split_seed"], **split))
    io.write_json(os.path.join(out_dir, "eval.json"),
                  _envelope(cfg, subset="test", **reports["test"], validation=reports["val"]))
    t = reports["test"]
    print(f"test AUC={t['auc']:.4f} CI95=[{t['auc_ci_95'][0]:.4f}, {t['auc_ci_95'][1]:.4f}] "
          f"acc={t['accuracy']:.4f} recall={t['recall']:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    with open(args.model) as fh:
        model = classify.LogisticModel.from_dict(json.load(fh)["model"])
    ids, labels, x, _ = read_features_csv(args.features)
    subset = "all"
    if args.split:
        with open(args.split) as fh:
            wanted = json.load(fh)[args.subset]
        labels, x = _subset(ids, labels, x, wanted)
        subset = args.subset
    report = classify.evaluate(model, x, labels, cfg.get("classify.threshold"))
    io.write_json(os.path.join(cfg["out_dir"], "eval.json"), _envelope(cfg, subset=subset, **report.to_dict()))
    print(f"AUC={report.auc:.4f} CI95=[{report.auc_ci_95[0]:.4f}, {report.auc_ci_95[1]:.4f}]")
    return EXIT_OK


# -- bench -----------------------------------------------------------------------

def run_bench(images, params: DefocusParams, warmup: int, reps: int) -> dict:
    """Time each stage over ``images[warmup:warmup+reps]`` after ``warmup`` untimed runs.

    Peak memory comes from one extra traced pass so tracing does not skew timings.
    """
    if len(images) < warmup + 1:
        raise UsageError(f"bench needs at least warmup+1 = {warmup + 1} inputs, got {len(images)}")
    measured = images[warmup:warmup + reps]
    runs, totals = [], []
    for img in images[:warmup]:
        defocus.estimate_defocus(img, params)
    for img in measured:
        t0 = time.perf_counter()
        _, timings = defocus.estimate_defocus(img, params)
        totals.append((time.perf_counter() - t0) * 1000.0)
        runs.append([t.to_dict() for t in timings])
    stages, _ = mean_stage_timings(runs, 0)
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        _, mem = defocus.estimate_defocus(measured[0], params, track_memory=True)
        for s, m in zip(stages, mem):
            s["peak_mb"] = m.peak_mb
    return {"warmup": warmup, "reps_requested": reps, "reps_measured": len(measured),
            "stages": stages, "total_ms": float(np.mean(totals)),
            "sum_of_stages_ms": float(sum(s["ms"] for s in stages)),
            "largest_stage": max(stages, key=lambda s: s["ms"])["stage"]}


def cmd_bench(args, cfg: RunConfig) -> int:
    items = collect_inputs(args.inputs)
    if not items:
        print("no inputs", file=sys.stderr)
        return EXIT_USAGE
    b = cfg["bench"]
    if cfg["jobs"] != 1:
        log.info("bench forces --jobs 1")
    needed = items[: b["warmup"] + b["reps"]]
    images = [io.read_image(p) for p, _ in needed]
    result = run_bench(images, cfg.defocus, b["warmup"], b["reps"])
    rows = [[s["stage"], f"{s['ms']:.3f}", "-" if s["peak_mb"] is None else f"{s['peak_mb']:.1f}"]
            for s in result["stages"]]
    rows.append(["total", f"{result['total_ms']:.3f}", "-"])
    table = _format_table(rows, ["stage", "avg_ms", "peak_mb"])
    out_dir = cfg["out_dir"]
    io.write_json(os.path.join(out_dir, "bench.json"), _envelope(cfg, **result))
    io.atomic_write_text(os.path.join(out_dir, "bench.txt"), table)
    print(table, end="")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

# CLI dest -> dotted config key
OVERRIDES = {
    "seed": "seed", "jobs": "jobs", "out_dir": "out_dir",
    "sigma1": "defocus.sigma1", "sigma2": "defocus.sigma2", "sigma_max": "defocus.sigma_max",
    "epsilon": "defocus.epsilon", "canny_low": "defocus.canny_low", "canny_high": "defocus.canny_high",
    "propagation": "defocus.propagation", "gf_radius": "defocus.gf_radius", "gf_eps": "defocus.gf_eps",
    "gf_subsample": "defocus.gf_subsample", "matting_lambda": "defocus.matting_lambda",
    "cg_tol": "defocus.cg_tol", "cg_max_iter": "defocus.cg_max_iter",
    "warmup_estimate": "estimate.warmup",
    "n_real": "synth.n_real", "n_fake": "synth.n_fake", "size": "synth.size", "layers": "synth.layers",
    "focal_length": "camera.focal_length", "f_number": "camera.f_number",
    "focus_distance": "camera.focus_distance", "pixel_pitch": "camera.pixel_pitch",
    "coc_to_sigma": "camera.coc_to_sigma",
    "window": "analysis.window", "threshold": "analysis.threshold", "thresholds": "analysis.thresholds",
    "normalization": "analysis.normalization",
    "n_bins": "alignment.n_bins", "align_epsilon": "alignment.epsilon",
    "pooled": "alignment.pooled", "png_signed": "alignment.png_signed",
    "lr": "classify.lr", "epochs": "classify.epochs", "l2": "classify.l2",
    "class_threshold": "classify.threshold", "split_seed": "classify.split_seed",
    "warmup": "bench.warmup", "reps": "bench.reps",
}


def _global_flags(parser, default):
    parser.add_argument("--config", default=default, help="JSON config file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--jobs", type=int, default=default)
    parser.add_argument("--out-dir", dest="out_dir", default=default)
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def _defocus_flags(p):
    g = p.add_argument_group("defocus estimation")
    g.add_argument("--sigma1", type=float)
    g.add_argument("--sigma2", type=float)
    g.add_argument("--sigma-max", dest="sigma_max", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--canny-low", dest="canny_low", type=float)
    g.add_argument("--canny-high", dest="canny_high", type=float)
    g.add_argument("--propagation", choices=defocus.PROPAGATION_MODES)
    g.add_argument("--gf-radius", dest="gf_radius", type=int)
    g.add_argument("--gf-eps", dest="gf_eps", type=float)
    g.add_argument("--gf-subsample", dest="gf_subsample", type=int)
    g.add_argument("--matting-lambda", dest="matting_lambda", type=float)
    g.add_argument("--cg-tol", dest="cg_tol", type=float)
    g.add_argument("--cg-max-iter", dest="cg_max_iter", type=int)


def _bool_flag(group, name, dest, help_text):
    group.add_argument(name, dest=dest, action="store_const", const=True, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defocuskit", description=__doc__.splitlines()[0])
    _global_flags(parser, None)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="estimate defocus maps")
    p.add_argument("inputs", nargs="*", help="images, folders or a manifest.jsonl")
    p.add_argument("--warmup", dest="warmup_estimate", type=int, help="items excluded from timings.json")
    _defocus_flags(p)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic depth-of-field corpus")
    p.add_argument("--n-real", dest="n_real", type=int)
    p.add_argument("--n-fake", dest="n_fake", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--focal-length", dest="focal_length", type=float, help="mm")
    p.add_argument("--f-number", dest="f_number", type=float)
    p.add_argument("--focus-distance", dest="focus_distance", type=float, help="mm")
    p.add_argument("--pixel-pitch", dest="pixel_pitch", type=float, help="mm per pixel")
    p.add_argument("--coc-to-sigma", dest="coc_to_sigma", type=float)

    p = sub.add_parser("analyze", parents=[common], help="masks, local variance, KS test, features")
    p.add_argument("--manifest", help="corpus manifest.jsonl")
    p.add_argument("--real-dir", dest="real_dir")
    p.add_argument("--fake-dir", dest="fake_dir")
    p.add_argument("--window", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--normalization", choices=("sigma_max", "minmax"))
    _defocus_flags(p)

    p = sub.add_parser("align", parents=[common], help="defocus-difference vs saliency alignment")
    p.add_argument("--real")
    p.add_argument("--fake")
    p.add_argument("--saliency")
    p.add_argument("--real-dir", dest="real_dir")
    p.add_argument("--fake-dir", dest="fake_dir")
    p.add_argument("--saliency-dir", dest="saliency_dir")
    p.add_argument("--n-bins", dest="n_bins", type=int)
    p.add_argument("--align-epsilon", dest="align_epsilon", type=float)
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    g = p.add_argument_group("modes")
    _bool_flag(g, "--pooled", "pooled", "pool histogram mass over all pairs")
    _bool_flag(g, "--png-signed", "png_signed", "shift PNG saliency by -0.5")

    p = sub.add_parser("train", parents=[common], help="train and test the logistic baseline")
    p.add_argument("--features", required=True, help="features.csv from analyze")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--threshold", dest="class_threshold", type=float)

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", help="split.json from train")
    p.add_argument("--subset", default="test", choices=("train", "val", "test"))
    p.add_argument("--threshold", dest="class_threshold", type=float)

    p = sub.add_parser("bench", parents=[common], help="per-stage timing")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--warmup", type=int)
    p.add_argument("--reps", type=int)
    _defocus_flags(p)
    return parser


COMMANDS = {"estimate": cmd_estimate, "synth": cmd_synth, "analyze": cmd_analyze, "align": cmd_align,
            "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}
    return RunConfig.load(getattr(args, "config", None), overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
