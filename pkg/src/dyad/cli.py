"""Command-line entry point: one binary, one subcommand per pipeline stage.

Stages communicate through a work directory::

    dyad synth    --out data/
    dyad features --manifest data/manifest.json --work run/
    dyad pseudo   --work run/
    dyad train    --work run/
    dyad score    --work run/
    dyad eval     --work run/

``features`` stores the effective configuration in ``run/config.json``;
later stages start from it, then apply ``--config`` and flag overrides.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bagging import PseudoScore, form_bags, write_bags_csv
from .config import PSEUDO_SCORERS, SEED_ENV, ConfigError, PipelineConfig, config_from_dict, load_config
from .dynamicity import normalize_dynamicity
from .features import save_pca
from .ingest import (FormatError, SegmentView, _write_atomic, load_features, load_manifest, read_ground_truth,
                     store_features)
from .pipeline import Dataset, evaluate, load_dataset, pseudo_scorer_ablation, pseudo_scores, reduce_features, score_segments
from .pseudo_scoring import save_scorer
from .synth import SynthSpec, generate
from .trainer import load_ensemble, run_training, save_ensemble

SYNTH_DEFAULT_SEED = 7


class MissingArtifact(RuntimeError):
    pass


def _num(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    _write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _read_csv(path: Path, what: str) -> list[dict]:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def _read_segments(work: Path) -> list[SegmentView]:
    rows = _read_csv(work / "segments.csv", "segments")
    return [SegmentView(r["video_id"], int(r["index"]), int(r["start"]), int(r["end"])) for r in rows]


def _column(rows: list[dict], ids: list[str], key: str, what: str) -> np.ndarray:
    table = {r["segment_id"]: float(r[key]) for r in rows}
    if set(table) != set(ids) or len(rows) != len(ids):
        raise FormatError(f"{what} does not cover exactly the dataset's segments")
    return np.array([table[s] for s in ids])


# ----------------------------------------------------------------- config

def _overrides(args) -> dict:
    keys = ("seed", "passes", "iterations", "batch_size", "tau", "pca_k", "pseudo_scorer",
            "learning_rate", "iforest_trees", "iforest_subsample", "meb_epsilon", "use_dynamicity")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "manifest", None):
        out["manifest"] = str(Path(args.manifest).resolve())
    if getattr(args, "work", None):
        out["work_dir"] = str(Path(args.work).resolve())
    return {k: v for k, v in out.items() if v is not None}


def _effective_config(args) -> PipelineConfig:
    """work/config.json < --config file < DYAD_SEED (if no seed yet) < flags."""
    stored = Path(args.work) / "config.json" if getattr(args, "work", None) else None
    if args.config is None and stored is not None and stored.exists() and args.command != "features":
        base = config_from_dict(json.loads(stored.read_text(encoding="utf-8")))
        return config_from_dict(_overrides(args), base)
    return load_config(args.config, _overrides(args))


# ----------------------------------------------------------------- stages

def cmd_synth(args) -> str:
    seed = args.seed
    if seed is None:
        seed = int(os.environ[SEED_ENV]) if os.environ.get(SEED_ENV) else SYNTH_DEFAULT_SEED
    try:
        spec = SynthSpec(videos=args.videos, frames=args.frames, size=args.size, segments=args.segments,
                         anomaly_rate=args.anomaly_rate, nuisance_rate=args.nuisance_rate,
                         walker_rate=args.walker_rate, separation=args.separation,
                         motion_burst=args.motion_burst, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    try:
        manifest = generate(spec, out)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc.strerror or exc}") from exc
    n_anom = spec.anomalous_per_video * spec.videos
    return (f"synth: {len(manifest.entries)} videos x {spec.segments} segments, "
            f"{n_anom} anomalous segments -> {out / 'manifest.json'}")


def cmd_features(cfg: PipelineConfig, work: Path) -> str:
    if cfg.manifest is None:
        raise ConfigError("features needs --manifest (or 'manifest' in the config)")
    manifest = load_manifest(cfg.manifest)
    ds = reduce_features(load_dataset(manifest, cfg), cfg)
    work.mkdir(parents=True, exist_ok=True)
    _write_atomic(work / "config.json", cfg.dumps().encode("utf-8"))
    _write_csv(work / "segments.csv", ["segment_id", "video_id", "index", "start", "end"],
               [(v.segment_id, v.video_id, v.index, v.start, v.end) for v in ds.views])
    store_features(work / "appearance_raw.fv32", ds.raw_appearance)
    save_pca(work / "pca.pca1", ds.pca)
    store_features(work / "appearance.fv32", ds.appearance)
    store_features(work / "motion.fv32", ds.motion)
    y_d = normalize_dynamicity(ds.dynamicity)
    _write_csv(work / "dynamicity.csv", ["segment_id", "D_mean", "y_d_hat"],
               [(s, _num(d), _num(y)) for s, d, y in zip(ds.segment_ids, ds.dynamicity, y_d)])
    return (f"features: {len(ds.views)} segments, appearance {ds.raw_appearance.shape[1]}->{ds.pca.k} dims, "
            f"motion {ds.motion.shape[1]} dims")


def _load_stage_inputs(work: Path):
    views = _read_segments(work)
    ids = [v.segment_id for v in views]
    appearance = load_features(_require(work / "appearance.fv32", "appearance features")).astype(np.float64)
    motion = load_features(_require(work / "motion.fv32", "motion features")).astype(np.float64)
    if len(appearance) != len(ids) or len(motion) != len(ids):
        raise FormatError("feature files do not match segments.csv")
    return views, ids, appearance, motion


def cmd_pseudo(cfg: PipelineConfig, work: Path) -> str:
    _, ids, appearance, _ = _load_stage_inputs(work)
    dvals = _column(_read_csv(work / "dynamicity.csv", "dynamicity"), ids, "D_mean", "dynamicity.csv")
    res = pseudo_scores(appearance, dvals, cfg)
    save_scorer(work / "iforest.psm1", res.models["iforest"])
    sphere = work / "sphere.psm1"
    if "sphere" in res.models:
        save_scorer(sphere, res.models["sphere"])
    elif sphere.exists():
        sphere.unlink()
    _write_csv(work / "pseudo_scores.csv", ["segment_id", "y_s_hat"],
               [(s, _num(y)) for s, y in zip(ids, res.y_s_hat)])
    scores = res.scores(ids)
    if not cfg.use_dynamicity:
        scores = [replace(s, y_d_hat=1.0) for s in scores]
    bags = form_bags(scores, cfg.tau)
    write_bags_csv(work / "bags.csv", bags, ids)
    return f"pseudo: iforest+{cfg.pseudo_scorer}, bag A={len(bags.positive)} N={len(bags.negative)}"


def cmd_train(cfg: PipelineConfig, work: Path) -> str:
    _, ids, appearance, motion = _load_stage_inputs(work)
    y_s = _column(_read_csv(work / "pseudo_scores.csv", "pseudo scores"), ids, "y_s_hat", "pseudo_scores.csv")
    y_d = _column(_read_csv(work / "dynamicity.csv", "dynamicity"), ids, "y_d_hat", "dynamicity.csv")
    initial = [PseudoScore(s, float(a), float(d)) for s, a, d in zip(ids, y_s, y_d)]
    tcfg = cfg.trainer()
    ensemble = run_training(appearance, motion, ids, initial, tcfg)
    out = work / "ensemble"
    if out.exists():
        for stale in sorted(out.glob("pass_*")):
            if int(stale.name.split("_")[1]) > tcfg.passes:
                for f in stale.iterdir():
                    f.unlink()
                stale.rmdir()
    save_ensemble(out, ensemble, tcfg, ids)
    last = ensemble.passes[-1].bags_after
    return f"train: {ensemble.k} passes x {tcfg.iterations} iterations, final bag A={len(last.positive)} N={len(last.negative)}"


def cmd_score(cfg: PipelineConfig, work: Path) -> str:
    _, ids, appearance, motion = _load_stage_inputs(work)
    _require(work / "ensemble" / "manifest.json", "ensemble")
    ensemble, _ = load_ensemble(work / "ensemble")
    y_s, y_d, labels = score_segments(ensemble, appearance, motion, cfg.tau)
    _write_csv(work / "scores.csv", ["segment_id", "y_s", "y_d", "label"],
               [(s, _num(a), _num(d), int(lab)) for s, a, d, lab in zip(ids, y_s, y_d, labels)])
    return f"score: {len(ids)} segments, {int(labels.sum())} labeled anomalous (ensemble of {ensemble.k})"


def cmd_eval(cfg: PipelineConfig, work: Path) -> str:
    views = _read_segments(work)
    ids = [v.segment_id for v in views]
    rows = _read_csv(work / "scores.csv", "scores")
    y_s = _column(rows, ids, "y_s", "scores.csv")
    y_d = _column(rows, ids, "y_d", "scores.csv")
    if cfg.manifest is None:
        raise ConfigError("eval needs the dataset manifest for ground truth")
    manifest = load_manifest(cfg.manifest)
    labels = {e.video_id: read_ground_truth(manifest.resolve(e.ground_truth))
              for e in manifest.entries if e.ground_truth}
    empty = np.zeros((len(views), 0))
    ds = Dataset(views, empty, empty, np.zeros(len(views)), labels)
    ev = evaluate(ds, y_s, y_d, cfg.tau)
    _write_csv(work / "roc.csv", ["fpr", "tpr"], [(_num(f), _num(t)) for f, t in zip(ev.fpr, ev.tpr)])
    summary = json.dumps(ev.summary(), indent=2, sort_keys=True) + "\n"
    _write_atomic(work / "summary.json", summary.encode("utf-8"))
    frame_rows = []
    for vid, (fs, fd, gt) in ev.frames.items():
        frame_rows.extend((vid, t, _num(fs[t]), _num(fd[t]), int(gt[t])) for t in range(len(gt)))
    _write_csv(work / "frames.csv", ["video_id", "frame_index", "y_s", "y_d", "label"], frame_rows)
    return f"eval: frame AUC={ev.auc:.4f} FAR@{cfg.tau}={ev.far:.4f} over {len(ev.frames)} videos"


def cmd_ablate(cfg: PipelineConfig, work: Path, scorers) -> str:
    if cfg.manifest is None:
        raise ConfigError("ablate needs --manifest (or 'manifest' in the config)")
    ds = load_dataset(load_manifest(cfg.manifest), cfg)
    rows = pseudo_scorer_ablation(ds, cfg, scorers)
    work.mkdir(parents=True, exist_ok=True)
    _write_csv(work / "ablation.csv", ["scorer", "auc", "far", "initial_positive"],
               [(r["scorer"], _num(r["auc"]), _num(r["far"]), r["initial_positive"]) for r in rows])
    for r in rows:
        print(f"  {r['scorer']:<14} auc={r['auc']:.4f} far={r['far']:.4f} initial A={r['initial_positive']}")
    return f"ablate: {len(rows)} scorer pairs -> {work / 'ablation.csv'}"


# ----------------------------------------------------------------- parser

def _add_pipeline_options(p: argparse.ArgumentParser, needs_manifest: bool = False) -> None:
    p.add_argument("--work", required=True, help="work directory for stage artifacts")
    if needs_manifest:
        p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--seed", type=int)
    p.add_argument("--passes", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--tau", type=float)
    p.add_argument("--pca-k", type=int, dest="pca_k")
    p.add_argument("--pseudo-scorer", choices=PSEUDO_SCORERS, dest="pseudo_scorer")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--iforest-trees", type=int, dest="iforest_trees")
    p.add_argument("--iforest-subsample", type=int, dest="iforest_subsample")
    p.add_argument("--meb-epsilon", type=float, dest="meb_epsilon")
    p.add_argument("--no-dynamicity", action="store_const", const=False, dest="use_dynamicity",
                   help="appearance-only ablation: dynamicity scores fixed to 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyad", description="Self-trained video anomaly detection pipeline.")
    parser.add_argument("--version", action="version", version=f"dyad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    d = SynthSpec()
    s.add_argument("--videos", type=int, default=d.videos)
    s.add_argument("--frames", type=int, default=d.frames)
    s.add_argument("--size", type=int, default=d.size)
    s.add_argument("--segments", type=int, default=d.segments)
    s.add_argument("--anomaly-rate", type=float, default=d.anomaly_rate, dest="anomaly_rate")
    s.add_argument("--nuisance-rate", type=float, default=d.nuisance_rate, dest="nuisance_rate")
    s.add_argument("--walker-rate", type=float, default=d.walker_rate, dest="walker_rate")
    s.add_argument("--separation", type=float, default=d.separation)
    s.add_argument("--motion-burst", type=int, default=d.motion_burst, dest="motion_burst")
    s.add_argument("--seed", type=int, help=f"default: ${SEED_ENV}, else {SYNTH_DEFAULT_SEED}")

    _add_pipeline_options(sub.add_parser("features", help="segment features, PCA and dynamicity"), True)
    for name, text in (("pseudo", "pseudo anomaly scores and initial bags"),
                       ("train", "iterative training of both regressors"),
                       ("score", "ensemble scores per segment"),
                       ("eval", "frame-level ROC/AUC and FAR")):
        _add_pipeline_options(sub.add_parser(name, help=text))
    a = sub.add_parser("ablate", help="compare partner scorers end to end")
    _add_pipeline_options(a, True)
    a.add_argument("--scorers", default=",".join(PSEUDO_SCORERS), help="comma-separated partner scorers")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            print(cmd_synth(args))
            return 0
        cfg = _effective_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dumps())
            return 0
        work = Path(args.work)
        if args.command == "ablate":
            scorers = [x.strip() for x in args.scorers.split(",") if x.strip()]
            bad = [x for x in scorers if x not in PSEUDO_SCORERS]
            if bad or not scorers:
                raise ConfigError(f"unknown scorers {bad}; choose from {PSEUDO_SCORERS}")
            summary = cmd_ablate(cfg, work, scorers)
        else:
            stage = {"features": cmd_features, "pseudo": cmd_pseudo, "train": cmd_train,
                     "score": cmd_score, "eval": cmd_eval}[args.command]
            summary = stage(cfg, work)
        print(summary)
        return 0
    except (MissingArtifact, ConfigError, FormatError, ValueError, OSError, KeyError) as exc:
        print(f"dyad {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
