"""Training loop, evaluation and checkpoint plumbing."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import heads
from . import numerics as nx
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, from_dict
from .metrics import UndefinedMetricError, average_precision
from .model import DECODER_GROUP, ENCODER_GROUP, GateFusionModel
from .optim import AdamW, lr_schedule
from .synthdata import Episode, corrupt, generate_episode, stack_episodes

logger = logging.getLogger(__name__)

TRAIN, VAL, TEST = "train", "val", "test"
EVAL_CHUNK = 8


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


def build_model(cfg: RunConfig) -> GateFusionModel:
    rng = np.random.default_rng([cfg.seed, 0x1A17])
    return GateFusionModel(cfg.encoder_config("audio"), cfg.encoder_config("video"),
                           cfg.fusion_spec(), cfg.decoder, rng)


def episode_seed(cfg: RunConfig, split: str, index: int) -> list[int]:
    offset = {TRAIN: cfg.data.train_offset, VAL: cfg.data.val_offset, TEST: cfg.data.test_offset}[split]
    return [cfg.seed, offset + index]


def split_episodes(cfg: RunConfig, split: str, n: int | None = None, start: int = 0) -> list[Episode]:
    if n is None:
        n = cfg.data.n_val if split == VAL else cfg.data.n_test
    ecfg = cfg.episode_config()
    return [generate_episode(ecfg, episode_seed(cfg, split, start + i)) for i in range(n)]


def episodes_per_batch(cfg: RunConfig) -> int:
    # whole episodes packed greedily up to the frame budget
    return max(1, cfg.train.batch_frames // cfg.data.t_v)


def compute_losses(bundle: heads.PredictionBundle, labels, w: heads.LossWeights) -> dict[str, nx.Tensor]:
    l_cls = heads.cls(bundle.p_av_live, labels)
    l_mal = heads.mal(bundle, labels)
    l_opp = heads.opp(bundle.p_v, labels)
    return {"cls": l_cls, "mal": l_mal, "opp": l_opp, "total": heads.total_loss(l_cls, l_mal, l_opp, w)}


def predict(model: GateFusionModel, episodes: list[Episode], corrupt_audio: float = 0.0,
            corrupt_video: float = 0.0, noise_seed: int = 0) -> dict[str, np.ndarray]:
    """Stacked probabilities for every episode (no tape)."""
    outs = {"p_av": [], "p_a": [], "p_v": [], "labels": []}
    with nx.no_grad():
        for s in range(0, len(episodes), EVAL_CHUNK):
            chunk = episodes[s:s + EVAL_CHUNK]
            audio, video, labels = stack_episodes(chunk)
            if corrupt_audio:
                audio = corrupt(audio, corrupt_audio, [noise_seed, 0xA, s])
            if corrupt_video:
                video = corrupt(video, corrupt_video, [noise_seed, 0xB, s])
            b = model(audio, video)
            outs["p_av"].append(b.p_av_live.data)
            outs["p_a"].append(b.p_a.data)
            outs["p_v"].append(b.p_v.data)
            outs["labels"].append(labels)
    return {k: np.concatenate(v) for k, v in outs.items()}


def metrics_from_predictions(pred: dict[str, np.ndarray], w: heads.LossWeights) -> dict[str, float]:
    labels = pred["labels"]
    out = {}
    for key, name in (("p_av", "ap_av"), ("p_a", "ap_a"), ("p_v", "ap_v")):
        try:
            out[name] = average_precision(pred[key][..., 1], labels)
        except UndefinedMetricError:
            out[name] = float("nan")
    p_av = nx.Tensor(pred["p_av"])
    bundle = heads.PredictionBundle(p_av, p_av, nx.Tensor(pred["p_a"]), nx.Tensor(pred["p_v"]))
    out.update({k: v.item() for k, v in compute_losses(bundle, labels, w).items()})
    return out


def evaluate_model(model: GateFusionModel, episodes: list[Episode], w: heads.LossWeights,
                   corrupt_audio: float = 0.0, corrupt_video: float = 0.0, noise_seed: int = 0) -> dict[str, float]:
    pred = predict(model, episodes, corrupt_audio, corrupt_video, noise_seed)
    return metrics_from_predictions(pred, w)


@dataclass
class TrainResult:
    config: RunConfig
    model: GateFusionModel
    history: list[dict] = field(default_factory=list)
    final_eval: dict | None = None
    best_eval: dict | None = None


def _manifest(cfg: RunConfig, step: int, metrics: dict | None) -> dict:
    return {"format": "gatefusion-checkpoint/1", "config_hash": cfg.config_hash(), "step": step,
            "metrics": metrics or {}, "config": cfg.to_dict()}


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def train(cfg: RunConfig, out_dir=None, log_fn=None) -> TrainResult:
    """Train end to end; writes ``metrics.jsonl`` and checkpoints when ``out_dir`` is set.

    Parameters split into an encoder group and a decoder-plus-heads group with
    separate base rates, both decayed by ``decay`` every ``decay_interval`` steps.
    """
    cfg.validate()
    model = build_model(cfg)
    groups = model.param_groups()
    params = [p for _, p in groups[ENCODER_GROUP]] + [p for _, p in groups[DECODER_GROUP]]
    n_enc = len(groups[ENCODER_GROUP])
    t = cfg.train
    opt = AdamW(params, betas=tuple(t.betas), eps=t.eps, weight_decay=t.weight_decay)
    weights = cfg.loss_weights()
    chash = cfg.config_hash()
    per_batch = episodes_per_batch(cfg)
    ecfg = cfg.episode_config()

    val_eps = split_episodes(cfg, VAL)
    probe_eps = split_episodes(cfg, TRAIN, n=min(cfg.data.n_val, per_batch * max(t.steps, 1)))

    out = Path(out_dir) if out_dir is not None else None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.jsonl", "w")
    result = TrainResult(cfg, model)
    # the best-AP state stays in memory and is written once, at the end or on abort
    best = {}

    def emit(record):
        record = dict(record, config_hash=chash)
        result.history.append(record)
        if fh is not None:
            fh.write(_json_line(record) + "\n")
        if log_fn is not None:
            log_fn(record)

    def run_eval(step):
        m = evaluate_model(model, val_eps, weights)
        probe = evaluate_model(model, probe_eps, weights)
        rec = {"event": "eval", "step": step, **m, "train_ap_av": probe["ap_av"]}
        emit(rec)
        return rec

    try:
        for step in range(t.steps):
            batch = [generate_episode(ecfg, episode_seed(cfg, TRAIN, step * per_batch + j))
                     for j in range(per_batch)]
            audio, video, labels = stack_episodes(batch)
            bundle = model(audio, video)
            losses = compute_losses(bundle, labels, weights)
            values = {k: v.item() for k, v in losses.items()}
            if not all(np.isfinite(v) for v in values.values()):
                raise TrainingAborted(
                    f"non-finite loss at step {step}",
                    {"event": "abort", "step": step, "reason": "non-finite loss", "losses": values,
                     "batch_seeds": [episode_seed(cfg, TRAIN, step * per_batch + j) for j in range(per_batch)]})
            model.zero_grad()
            losses["total"].backward()
            lr_e = lr_schedule(step, t.lr_encoder, t.decay, t.decay_interval)
            lr_d = lr_schedule(step, t.lr_decoder, t.decay, t.decay_interval)
            try:
                opt.step([lr_e] * n_enc + [lr_d] * (len(params) - n_enc))
            except FloatingPointError as exc:
                raise TrainingAborted(str(exc), {"event": "abort", "step": step, "reason": str(exc)}) from exc
            emit({"event": "step", "step": step + 1, **values, "lr_encoder": lr_e, "lr_decoder": lr_d})
            if (step + 1) % t.eval_interval == 0 or step + 1 == t.steps:
                rec = run_eval(step + 1)
                result.final_eval = rec
                if result.best_eval is None or rec["ap_av"] > result.best_eval["ap_av"]:
                    result.best_eval = rec
                    if out is not None:
                        best.update(state=model.state_dict(), step=step + 1)
        if t.steps == 0:
            result.final_eval = result.best_eval = run_eval(0)
            best.update(state=model.state_dict(), step=0)
    except TrainingAborted as exc:
        emit(exc.record)
        if out is not None:
            (out / "error.json").write_text(_json_line(dict(exc.record, config_hash=chash)) + "\n")
            _save_best(out, cfg, best, result.best_eval)
        raise
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        _save_best(out, cfg, best, result.best_eval)
        save_checkpoint(out / "checkpoints" / "final", model.state_dict(),
                        _manifest(cfg, t.steps, result.final_eval))
    return result


def _save_best(out: Path, cfg: RunConfig, best: dict, metrics: dict | None):
    if best:
        save_checkpoint(out / "checkpoints" / "best", best["state"], _manifest(cfg, best["step"], metrics))


def load_model(checkpoint_dir) -> tuple[GateFusionModel, RunConfig, dict]:
    state, manifest = load_checkpoint(checkpoint_dir)
    cfg = from_dict(manifest["config"])
    model = build_model(cfg)
    model.load_state_dict(state)
    return model, cfg, manifest


def evaluate(checkpoint_dir, episodes: list[Episode] | None = None, split: str = VAL,
             corrupt_audio: float = 0.0, corrupt_video: float = 0.0, noise_seed: int = 0) -> dict:
    """Metrics of a saved checkpoint on ``episodes`` (default: the config's ``split``)."""
    model, cfg, _ = load_model(checkpoint_dir)
    if episodes is None:
        episodes = split_episodes(cfg, split, n=cfg.data.n_val if split in (VAL, TRAIN) else None)
    return evaluate_model(model, episodes, cfg.loss_weights(), corrupt_audio, corrupt_video, noise_seed)
