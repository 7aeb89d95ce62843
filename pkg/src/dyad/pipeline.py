"""In-memory orchestration of the full pipeline, shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamicity as dyn
from .bagging import PseudoScore
from .config import PipelineConfig
from .evaluation import false_alarm_rate, interpolate_to_frames, roc_auc
from .features import PcaModel, extract_handcrafted, pca_fit, pca_transform
from .ingest import DatasetManifest, FormatError, SegmentView, load_features, load_flow, read_ground_truth, read_gv8, split_segments
from .pseudo_scoring import (LocalOutlierFactor, combine_scores, iforest_fit, iforest_score, meb_fit,
                             ocsvm_score, pca_recon_score)
from .trainer import RegressorEnsemble, ensemble_score, final_label, run_training


@dataclass
class Dataset:
    """Per-segment features for every video of a manifest, in manifest order."""

    views: list[SegmentView]
    raw_appearance: np.ndarray
    motion: np.ndarray
    dynamicity: np.ndarray  # pre-normalization segment means
    frame_labels: dict[str, np.ndarray] = field(default_factory=dict)
    pca: PcaModel | None = None
    appearance: np.ndarray | None = None

    @property
    def segment_ids(self) -> list[str]:
        return [v.segment_id for v in self.views]

    def videos(self) -> dict[str, list[int]]:
        """video id -> row indices of its segments, in segment order."""
        out: dict[str, list[int]] = {}
        for i, v in enumerate(self.views):
            out.setdefault(v.video_id, []).append(i)
        return out


def segment_flows(frames: np.ndarray, view: SegmentView, cfg: PipelineConfig, imported=None) -> list:
    """Flow fields for consecutive frame pairs inside one segment."""
    pairs = range(view.start, view.end - 1)
    if imported is not None:
        return [imported[t].astype(np.float64) for t in pairs]
    return [dyn.estimate_flow(frames[t], frames[t + 1], cfg.flow_block, cfg.flow_search) for t in pairs]


def load_dataset(manifest: DatasetManifest, cfg: PipelineConfig) -> Dataset:
    views, appearance, motion, dvals, labels = [], [], [], [], {}
    count = manifest.segment_count_per_video
    if not manifest.entries:
        raise ValueError("manifest lists no videos")
    for entry in manifest.entries:
        video = read_gv8(manifest.resolve(entry.video))
        vid = entry.video_id
        vviews = split_segments(video, count, vid)
        imported_feats = None
        if entry.features:
            imported_feats = load_features(manifest.resolve(entry.features))
            if len(imported_feats) != count:
                raise FormatError(f"{entry.features}: expected {count} vectors, found {len(imported_feats)}")
        imported_flow = None
        if entry.flow:
            imported_flow = load_flow(manifest.resolve(entry.flow))
            if imported_flow.shape[0] != video.frame_count - 1 or imported_flow.shape[2:] != (video.height, video.width):
                raise FormatError(f"{entry.flow}: flow shape {imported_flow.shape} does not fit the video")
        for v in vviews:
            seg = video.frames[v.start:v.end]
            if imported_feats is not None:
                appearance.append(imported_feats[v.index].astype(np.float64))
            else:
                appearance.append(extract_handcrafted(seg))
            flows = segment_flows(video.frames, v, cfg, imported_flow)
            dvals.append(dyn.segment_dynamicity(flows).segment_value)
            motion.append(dyn.motion_features(flows, cfg.motion_hist_max))
        if entry.ground_truth:
            gt = read_ground_truth(manifest.resolve(entry.ground_truth))
            if len(gt) != video.frame_count:
                raise FormatError(f"{entry.ground_truth}: {len(gt)} labels for {video.frame_count} frames")
            labels[vid] = gt
        views.extend(vviews)
    dims = {len(a) for a in appearance}
    if len(dims) != 1:
        raise FormatError("appearance features differ in dimension across videos")
    return Dataset(views, np.asarray(appearance), np.asarray(motion), np.asarray(dvals), labels)


def reduce_features(ds: Dataset, cfg: PipelineConfig) -> Dataset:
    k = min(cfg.pca_k, ds.raw_appearance.shape[1])
    model = pca_fit(ds.raw_appearance, k)
    return replace(ds, pca=model, appearance=pca_transform(model, ds.raw_appearance))


@dataclass
class PseudoResult:
    y_s_hat: np.ndarray
    y_d_hat: np.ndarray
    iforest: np.ndarray  # raw isolation scores
    partner: np.ndarray  # raw score of the second scorer
    models: dict

    def scores(self, segment_ids) -> list[PseudoScore]:
        return [PseudoScore(s, float(a), float(d)) for s, a, d in zip(segment_ids, self.y_s_hat, self.y_d_hat)]


def pseudo_scores(appearance, dynamicity_values, cfg: PipelineConfig) -> PseudoResult:
    x = np.asarray(appearance, dtype=np.float64)
    forest = iforest_fit(x, cfg.iforest_trees, cfg.iforest_subsample, cfg.seed)
    iso = iforest_score(forest, x)
    models = {"iforest": forest}
    if cfg.pseudo_scorer == "ocsvm":
        sphere = meb_fit(x, cfg.meb_epsilon)
        partner = ocsvm_score(sphere, x)
        models["sphere"] = sphere
    elif cfg.pseudo_scorer == "lof":
        partner = LocalOutlierFactor(x, min(cfg.lof_k, len(x) - 1)).training_scores()
    else:
        recon = pca_fit(x, min(cfg.pca_recon_k, x.shape[1]))
        partner = pca_recon_score(recon, x)
        models["recon_pca"] = recon
    y_s = combine_scores(iso, partner)
    y_d = dyn.normalize_dynamicity(dynamicity_values)
    return PseudoResult(y_s, y_d, iso, partner, models)


@dataclass
class Evaluation:
    auc: float
    far: float
    per_video_auc: dict
    fpr: np.ndarray
    tpr: np.ndarray
    frames: dict  # video id -> (y_s, y_d, label) per-frame arrays

    def summary(self) -> dict:
        return {"auc": self.auc, "far": self.far, "per_video_auc": self.per_video_auc}


def evaluate(ds: Dataset, y_s, y_d, tau: float = 0.5) -> Evaluation:
    """Frame-level ROC/AUC and FAR over all videos that carry ground truth."""
    all_s, all_l, per_video, frames = [], [], {}, {}
    for vid, rows in ds.videos().items():
        if vid not in ds.frame_labels:
            continue
        views = [ds.views[i] for i in rows]
        fs = interpolate_to_frames(np.asarray(y_s)[rows], views)
        fd = interpolate_to_frames(np.asarray(y_d)[rows], views)
        gt = ds.frame_labels[vid]
        frames[vid] = (fs, fd, gt)
        all_s.append(fs)
        all_l.append(gt)
        per_video[vid] = roc_auc(fs, gt).auc if 0 < gt.sum() < len(gt) else None
    if not all_s:
        raise ValueError("no ground truth available for evaluation")
    s, lab = np.concatenate(all_s), np.concatenate(all_l)
    roc = roc_auc(s, lab)
    return Evaluation(roc.auc, false_alarm_rate(s, lab, tau), per_video, roc.fpr, roc.tpr, frames)


@dataclass
class PipelineResult:
    dataset: Dataset
    pseudo: PseudoResult
    ensemble: RegressorEnsemble
    y_s: np.ndarray
    y_d: np.ndarray
    labels: np.ndarray
    evaluation: Evaluation | None
    pass_auc: list[float]


def score_segments(ensemble: RegressorEnsemble, appearance, motion, tau: float):
    y_s, y_d = ensemble_score(ensemble, appearance, motion)
    labels = np.array([final_label(float(a), float(d), tau) for a, d in zip(y_s, y_d)], dtype=np.int8)
    return y_s, y_d, labels


def run_pipeline(ds: Dataset, cfg: PipelineConfig, track_passes: bool = False) -> PipelineResult:
    """pseudo labels -> iterative training -> ensemble scores -> evaluation.

    With ``track_passes`` the frame AUC of the ensemble truncated after
    each pass is recorded; ground truth is only read by that hook and
    never reaches training.
    """
    if ds.appearance is None:
        ds = reduce_features(ds, cfg)
    pseudo = pseudo_scores(ds.appearance, ds.dynamicity, cfg)
    ids = ds.segment_ids
    tcfg = cfg.trainer()

    def auc_hook(ens):
        ys, yd = ensemble_score(ens, ds.appearance, ds.motion)
        return {"auc": evaluate(ds, ys, yd, cfg.tau).auc}

    hook = auc_hook if track_passes and ds.frame_labels else None
    ensemble = run_training(ds.appearance, ds.motion, ids, pseudo.scores(ids), tcfg, on_pass=hook)
    y_s, y_d, labels = score_segments(ensemble, ds.appearance, ds.motion, cfg.tau)
    ev = evaluate(ds, y_s, y_d, cfg.tau) if ds.frame_labels else None
    pass_auc = [r.metrics["auc"] for r in ensemble.passes if r.metrics]
    return PipelineResult(ds, pseudo, ensemble, y_s, y_d, labels, ev, pass_auc)


def pseudo_scorer_ablation(ds: Dataset, cfg: PipelineConfig, scorers=("ocsvm", "lof", "pca")) -> list[dict]:
    """Run the full pipeline once per partner scorer; one table row each."""
    if ds.appearance is None:
        ds = reduce_features(ds, cfg)
    rows = []
    for name in scorers:
        res = run_pipeline(ds, replace(cfg, pseudo_scorer=name))
        ev = res.evaluation
        initial_a = (res.pseudo.y_s_hat > cfg.tau) & (res.pseudo.y_d_hat > cfg.tau)
        rows.append({"scorer": f"iforest+{name}",
                     "auc": ev.auc if ev else None,
                     "far": ev.far if ev else None,
                     "initial_positive": int(initial_a.sum())})
    return rows
