"""Command-line driver.

Subcommands: ``default-spec``, ``gen-synthetic``, ``split``, ``synth``,
``train`` and ``eval``.  Exit status is 0 on success, 1 on a runtime failure
and 2 on a usage or configuration error.  Every command leaves a
``run.json`` in its output directory that can be passed back as ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, bayes, curriculum, metrics, synthesis
from .config import RunConfig
from .errors import AnomSynthError, ConfigError, ContractError
from .frameio import SceneSpec, default_scene_doc, gen_scene, list_frames, read_image, read_video, write_mask, \
    write_video
from .motionmap import default_vicinity
from .seeding import derive_seed

log = logging.getLogger("anomsynth")

MODEL_FILE = "model.bin"
BASE_MODEL_FILE = "base.bin"


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_run(out: Path, command: str, argv, config: dict, **extra) -> None:
    doc = {"command": command, "argv": list(argv), "version": __version__, "config": config, **extra}
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_labels(path) -> dict[str, str]:
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"frame_id", "label"} <= set(reader.fieldnames):
            raise ContractError(f"{path}: expected a frame_id,label header")
        for row in reader:
            if row["label"] not in ("normal", "abnormal"):
                raise ContractError(f"{path}: bad label {row['label']!r} for {row['frame_id']}")
            labels[row["frame_id"]] = row["label"]
    return labels


def write_labels(path, ids, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "label"])
        w.writerows(zip(ids, labels))


def write_scores(path, ids, labels, stats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "label", "mu", "sigma", "p_prime"])
        for fid, lab, s in zip(ids, labels, stats):
            w.writerow([fid, lab, f"{s.mu:.6f}", f"{s.sigma:.6f}", f"{s.p_prime:.6f}"])


def _model_path(path) -> Path:
    path = Path(path)
    return path / MODEL_FILE if path.is_dir() else path


def score_frames(model: bayes.ClassifierModel, x: np.ndarray, ids, seed: int, M: int):
    """PosteriorStats per frame: MC sampling for Bayesian models, one plain pass otherwise."""
    if model.bayesian:
        return bayes.mc_predict_many(model, x, M, [derive_seed(seed, "eval", fid) for fid in ids])
    return [bayes.PosteriorStats.from_samples([p]) for p in bayes.predict_many(model, x)]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_default_spec(args) -> int:
    doc = default_scene_doc(args.length, args.anomaly_fraction, args.seed or 0)
    print(json.dumps(doc, indent=2))
    return 0


def cmd_gen_synthetic(args) -> int:
    spec_path = Path(args.spec)
    try:
        doc = json.loads(spec_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{spec_path}: invalid JSON ({exc})") from exc
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
    spec = SceneSpec.from_dict(doc, base_dir=spec_path.parent)
    scene = gen_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = write_video(scene.frames, out / "frames")
    write_labels(out / "labels.csv", ids, scene.labels)
    (out / "truth").mkdir(exist_ok=True)
    for fid, m in zip(ids, scene.sprite_truth):
        write_mask(m, out / "truth" / f"{fid}.pgm")
    _write_run(out, "gen-synthetic", args.argv, doc)
    log.info("wrote %d frames (%d abnormal) to %s", len(ids), scene.labels.count("abnormal"), out)
    return 0


def cmd_split(args) -> int:
    labels = read_labels(args.labels)
    paths = list_frames(args.frames)
    if not paths:
        raise ContractError(f"no frames in {args.frames}")
    missing = [p.stem for p in paths if p.stem not in labels]
    if missing:
        raise ContractError(f"frame {missing[0]} has no label")
    normal = [p for p in paths if labels[p.stem] == "normal"]
    abnormal = [p for p in paths if labels[p.stem] == "abnormal"]
    if not 0.0 <= args.test_normal_fraction <= 1.0:
        raise ConfigError("--test-normal-fraction must lie in [0, 1]")
    rng = np.random.default_rng(derive_seed(args.seed or 0, "split"))
    k = int(round(args.test_normal_fraction * len(normal)))
    picked = set(rng.choice(len(normal), size=k, replace=False).tolist()) if k else set()
    test = sorted([p for i, p in enumerate(normal) if i in picked] + abnormal)
    train = [p for i, p in enumerate(normal) if i not in picked]
    out = Path(args.out)
    for name, group in (("train", train), ("test", test)):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        for p in group:
            shutil.copyfile(p, d / p.name)
        write_labels(out / f"{name}_labels.csv", [p.stem for p in group], [labels[p.stem] for p in group])
    _write_run(out, "split", args.argv, {"seed": args.seed or 0,
                                            "test_normal_fraction": args.test_normal_fraction})
    log.info("split: %d train normals, %d test frames", len(train), len(test))
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.input is None:
        if not args.verify:
            raise ConfigError("synth needs --in (or --verify on an existing --out)")
        return _verify(out, None)
    cfg = _load_config(args)
    ids, frames = read_video(args.input)
    if not frames:
        raise ContractError(f"no frames in {args.input}")
    vicinity = cfg.motionmap.vicinity
    if vicinity is None:
        vicinity = default_vicinity(frames[0].width, frames[0].height)
    t0 = time.time()
    res = synthesis.run_synthesis(ids, frames, seed=cfg.stage_seed("synthesis"), vibe_params=cfg.vibe_params(),
                                  mask_cfg=cfg.mask_config(), synth_cfg=cfg.synthesis, seg_cfg=cfg.segmenter,
                                  vicinity=vicinity)
    settings = {"synthesis": asdict(cfg.synthesis), "maskops": asdict(cfg.maskops), "vicinity": vicinity}
    synthesis.write_dataset(res, ids, out, args.input, settings)
    cfg.paths = {"input": str(args.input), "output": str(out)}
    _write_run(out, "synth", args.argv, cfg.to_dict())
    log.info("synth: %d samples, %d skipped in %.1fs", len(res.samples), len(res.skipped), time.time() - t0)
    if args.verify:
        return _verify(out, args.input)
    return 0


def _verify(out: Path, input_dir) -> int:
    rep = synthesis.verify_dataset(out, input_dir)
    (out / "verify.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps({"records": rep.records, "replayed": rep.replayed, "ok": rep.ok}))
    return 0 if rep.ok else 1


def load_synth(synth_dir) -> tuple[list[str], list]:
    paths = synthesis.synth_image_paths(synth_dir)
    return [p.stem for p in paths], [read_image(p) for p in paths]


def cmd_train(args) -> int:
    from . import plotting

    cfg = _load_config(args)
    n_ids, normals = read_video(args.normals)
    if not normals:
        raise ContractError(f"no frames in {args.normals}")
    normals = curriculum.keep_every(normals, cfg.curriculum.normal_keep_every)
    s_ids, synth = load_synth(args.synth)
    if not synth:
        raise ContractError(f"no synthesized samples in {args.synth}")
    ccfg = cfg.curriculum_config()
    t0 = time.time()
    xn = bayes.preprocess(normals, ccfg.input_size)
    xs = bayes.preprocess(synth, ccfg.input_size)
    rep = curriculum.run_curriculum(xn, xs, ccfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"mc_samples": ccfg.mc_samples}
    rep.best_model.save(out / MODEL_FILE, {**meta, "best_t": rep.best_t})
    rep.base_model.save(out / BASE_MODEL_FILE, {**meta, "best_t": 1.0})
    rep.write_csv(out / "curriculum.csv")
    write_scores(out / "scores.csv", s_ids, ["abnormal"] * len(s_ids), rep.synth_stats)
    best = next(r for r in rep.records if r.t == rep.best_t)
    sidecar = {"best_t": rep.best_t, "auc": best.auc, "ap": best.ap, "selected": best.selected,
               "model": MODEL_FILE, "base_model": BASE_MODEL_FILE,
               "records": [asdict(r) for r in rep.records],
               "n_normal": len(normals), "n_synth": len(synth)}
    (out / "best.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    plotting.plot_curriculum(rep.records, out / "curriculum.png", rep.best_t)
    cfg.paths = {"normals": str(args.normals), "synth": str(args.synth), "output": str(out)}
    _write_run(out, "train", args.argv, cfg.to_dict())
    log.info("train: best t=%.2f val auc=%.4f in %.1fs", rep.best_t, best.auc, time.time() - t0)
    return 0


def cmd_eval(args) -> int:
    from . import plotting

    cfg = _load_config(args)
    model, meta = bayes.ClassifierModel.load(_model_path(args.model))
    labels = read_labels(args.labels)
    ids, frames = read_video(args.test)
    if not frames:
        raise ContractError(f"no frames in {args.test}")
    for fid in ids:
        if fid not in labels:
            raise ContractError(f"test frame {fid} has no label")
    truth = [labels[fid] for fid in ids]
    M = int(meta.get("mc_samples", bayes.DEFAULT_MC_SAMPLES))
    x = bayes.preprocess(frames, model.input_size)
    stats = score_frames(model, x, ids, cfg.seed, M)
    items = [metrics.ScoredItem(fid, t, 1.0 - s.mu) for fid, t, s in zip(ids, truth, stats)]
    report = metrics.evaluate(items)
    report.extra["mode"] = "mc" if model.bayesian else "plain"
    report.extra["mc_samples"] = M if model.bayesian else 1
    if args.synth:
        _, synth = load_synth(args.synth)
        f_syn = bayes.extract_features_many(model, bayes.preprocess(synth, model.input_size))
        f_test = bayes.extract_features_many(model, x)
        is_abn = np.array([t == "abnormal" for t in truth])
        seed = cfg.stage_seed("proxy_a")
        report.extra["d_A_synth_abnormal"] = metrics.proxy_a_distance(f_syn, f_test[is_abn], seed,
                                                                       cfg.metrics.pad_epochs)
        report.extra["d_A_synth_normal"] = metrics.proxy_a_distance(f_syn, f_test[~is_abn], seed,
                                                                     cfg.metrics.pad_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report_json(report, out / "report.json")
    metrics.write_pr_csv(report.pr_points, out / "pr.csv")
    metrics.render_pr_svg(report.pr_points, out / "pr.svg")
    plotting.plot_pr(report.pr_points, out / "pr.png", report.auc_pr, report.average_precision)
    write_scores(out / "scores.csv", ids, truth, stats)
    cfg.paths = {"model": str(args.model), "test": str(args.test), "labels": str(args.labels),
                 "output": str(out)}
    _write_run(out, "eval", args.argv, cfg.to_dict())
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "counts"}, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the global seed")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="anomsynth", description="Synthetic-anomaly training pipeline for video.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("default-spec", parents=[common], help="print the built-in scene spec")
    s.add_argument("--length", type=int, default=500)
    s.add_argument("--anomaly-fraction", type=float, default=0.1)
    s.set_defaults(func=cmd_default_spec)

    s = sub.add_parser("gen-synthetic", parents=[common], help="render a synthetic scene")
    s.add_argument("--spec", required=True, help="scene spec JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("split", parents=[common], help="build train/test frame directories")
    s.add_argument("--frames", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--test-normal-fraction", type=float, default=0.25)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("synth", parents=[common], help="synthesize abnormal frames from normal video")
    s.add_argument("--in", dest="input", default=None, help="directory of normal frames")
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--verify", action="store_true", help="replay and audit every manifest record")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="curriculum training of the discriminator")
    s.add_argument("--normals", required=True)
    s.add_argument("--synth", required=True, help="output directory of the synth command")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score held-out frames and report PR metrics")
    s.add_argument("--model", required=True, help="train output directory or model file")
    s.add_argument("--test", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--synth", default=None, help="synth directory for proxy A-distances")
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"anomsynth {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (AnomSynthError, OSError, KeyError) as exc:
        print(f"anomsynth {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
