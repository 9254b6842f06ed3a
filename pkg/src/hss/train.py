"""End-to-end pipeline: preprocessing, training with checkpoints, evaluation and generation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .autodiff import SGD, Tape
from .config import RunConfig
from .corpus import (
    Dataset,
    Interaction,
    load_dataset,
    make_batches,
    preprocess,
    read_corpus,
    read_lexicon,
    save_dataset,
)
from .decoder import GenerationConfig, generate
from .errors import ConfigError, ContractError, NumericError
from .metrics import EvalPair, MetricReport, rmse, text_report
from .model import HSSModel, ModelConfig

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "joint_loss", "rating_loss", "generation_loss", "val_rmse", "seconds"]


# -- preprocessing ---------------------------------------------------------------------------


def run_preprocess(cfg: RunConfig) -> Dataset:
    if not cfg.corpus or not cfg.lexicon or not cfg.dataset:
        raise ConfigError("preprocess needs corpus, lexicon and dataset paths")
    records = read_corpus(cfg.corpus)
    lexicon = read_lexicon(cfg.lexicon)
    ds = preprocess(records, lexicon, cfg.min_user_records, cfg.min_word_freq, cfg.split, cfg.seed)
    if not ds.vocab.feature_indices:
        raise ConfigError("no lexicon word survived vocabulary filtering")
    ds.meta = {"seed": cfg.seed, "split": list(cfg.split), "min_user_records": cfg.min_user_records,
               "min_word_freq": cfg.min_word_freq}
    Path(cfg.dataset).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(cfg.dataset, ds)
    return ds


def _require_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("no dataset path configured")
    return load_dataset(cfg.dataset)


# -- training --------------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    joint: float
    rating: float
    generation: float
    val_rmse: float
    seconds: float

    def row(self) -> list[str]:
        return [str(self.epoch), repr(self.joint), repr(self.rating), repr(self.generation),
                repr(self.val_rmse), f"{self.seconds:.3f}"]


@dataclass
class TrainResult:
    model: HSSModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = float("inf")


def model_config(cfg: RunConfig, ds: Dataset) -> ModelConfig:
    return ModelConfig(
        n_users=len(ds.users),
        n_items=len(ds.items),
        vocab_size=len(ds.vocab),
        feature_indices=tuple(sorted(ds.vocab.feature_indices)),
        d=cfg.d,
        rating_layers=cfg.rating_layers,
        gen_layers=cfg.gen_layers,
        dropout=cfg.dropout,
        init_std=cfg.init_std,
    )


def make_optimizer(cfg: RunConfig, model: HSSModel) -> SGD:
    return SGD(model.params, cfg.lr, cfg.momentum, cfg.l2, cfg.clip_norm, model.clip_groups, no_decay=("emb.E",))


def predict_ratings(model: HSSModel, rows) -> np.ndarray:
    if not rows:
        return np.zeros(0)
    users = np.array([x.user_index for x in rows], dtype=np.int64)
    items = np.array([x.item_index for x in rows], dtype=np.int64)
    return model.rating_forward(users, items).value.copy()


def split_rmse(model: HSSModel, rows) -> float:
    if not rows:
        return float("nan")
    return rmse(predict_ratings(model, rows), [x.rating for x in rows])


def _quantize_state(model: HSSModel, opt: SGD) -> None:
    # keep the in-memory state identical to what a checkpoint can hold so resuming is exact
    for name, p in model.params.items():
        p.value[...] = ckpt_io.quantize(p.value)
        opt.velocity[name][...] = ckpt_io.quantize(opt.velocity[name])


def train_epoch(model: HSSModel, opt: SGD, rows, cfg: RunConfig, epoch: int) -> tuple[float, float, float]:
    """One pass over ``rows``; returns row-weighted mean (joint, rating, generation) losses."""
    model.dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
    totals = np.zeros(3)
    for batch in make_batches(rows, cfg.batch_size, cfg.n_sentences, cfg.seed, epoch):
        opt.zero_grad()
        with Tape() as tape:
            terms = model.forward_loss(batch, training=True)
        joint = float(terms.joint.value)
        if not np.isfinite(joint):
            raise NumericError(f"non-finite loss in epoch {epoch}")
        tape.backward(terms.joint)
        opt.step()
        totals += len(batch) * np.array([joint, float(terms.rating.value), float(terms.generation.value)])
    return tuple(float(x) for x in totals / max(len(rows), 1))


def _save(path: Path, model: HSSModel, ds: Dataset, opt: SGD, cfg: RunConfig, epoch: int, best: float,
          best_epoch: int) -> None:
    meta = {"epoch": epoch, "best_val_rmse": best, "best_epoch": best_epoch, "run": cfg.to_dict()}
    ckpt_io.save(path, model, ds.vocab, opt.velocity, meta)


def run_train(cfg: RunConfig, dataset: Dataset | None = None, resume: bool = False) -> TrainResult:
    ds = dataset if dataset is not None else _require_dataset(cfg)
    rows = ds.split.train
    if not rows:
        raise ConfigError("the training split is empty")
    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / "last.ckpt"
    log_path = cfg.log_path
    log_path.parent.mkdir(parents=True, exist_ok=True)

    mcfg = model_config(cfg, ds)
    start = 0
    best, best_epoch = float("inf"), 0
    history: list[EpochRecord] = []
    if resume and last_path.is_file():
        ck = ckpt_io.load(last_path)
        ckpt_io.check_compatible(ck, ds.vocab, len(ds.users), len(ds.items))
        model = ckpt_io.build_model(ck)
        opt = make_optimizer(cfg, model)
        for name, v in ck.velocity.items():
            opt.velocity[name][...] = v
        start = int(ck.meta["epoch"])
        best = float(ck.meta["best_val_rmse"])
        best_epoch = int(ck.meta["best_epoch"])
        history = read_log(log_path)[:start]
        _write_log(log_path, history)
    else:
        model = HSSModel(mcfg, seed=cfg.seed)
        opt = make_optimizer(cfg, model)
        _quantize_state(model, opt)
        _write_log(log_path, [])

    for epoch in range(start + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        joint, rating, gen = train_epoch(model, opt, rows, cfg, epoch)
        _quantize_state(model, opt)
        val = split_rmse(model, ds.split.validation)
        score = val if np.isfinite(val) else split_rmse(model, rows)
        rec = EpochRecord(epoch, joint, rating, gen, val, time.perf_counter() - t0)
        history.append(rec)
        if score < best:
            best, best_epoch = score, epoch
            _save(out_dir / "best.ckpt", model, ds, opt, cfg, epoch, best, best_epoch)
        _save(out_dir / f"epoch_{epoch:03d}.ckpt", model, ds, opt, cfg, epoch, best, best_epoch)
        _save(last_path, model, ds, opt, cfg, epoch, best, best_epoch)
        with log_path.open("a", newline="") as fh:
            csv.writer(fh).writerow(rec.row())
        log.info("epoch %d joint=%.4f rating=%.4f gen=%.4f val_rmse=%.4f", epoch, joint, rating, gen, val)
    return TrainResult(model, history, best_epoch, best)


def _write_log(path: Path, history: list[EpochRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for rec in history:
            w.writerow(rec.row())


def read_log(path) -> list[EpochRecord]:
    path = Path(path)
    if not path.is_file():
        return []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochRecord(int(r["epoch"]), float(r["joint_loss"]), float(r["rating_loss"]),
                        float(r["generation_loss"]), float(r["val_rmse"]), float(r["seconds"]))
            for r in reader
        ]


# -- evaluation and generation -----------------------------------------------------------------


def load_model(cfg: RunConfig, ds: Dataset) -> HSSModel:
    ck = ckpt_io.load(cfg.checkpoint_path)
    ckpt_io.check_compatible(ck, ds.vocab, len(ds.users), len(ds.items))
    return ckpt_io.build_model(ck)


def generation_config(cfg: RunConfig) -> GenerationConfig:
    return GenerationConfig(beam_size=cfg.beam_size, max_tokens=cfg.max_tokens, keep_sentences=cfg.keep_sentences)


def reference_tokens(ds: Dataset, x: Interaction, n_sentences: int | None) -> list[str]:
    sents = x.sentences if n_sentences is None else x.sentences[:n_sentences]
    return [t for s in sents for t in ds.vocab.decode(s.token_ids)]


@dataclass
class Evaluation:
    report: MetricReport
    rows: list[tuple[str, str, str, str]]  # user_id, item_id, candidate text, reference text


def evaluate_model(model: HSSModel, ds: Dataset, cfg: RunConfig, split: str = "test") -> Evaluation:
    try:
        rows = getattr(ds.split, split)
    except AttributeError:
        raise ConfigError(f"unknown split {split!r}; use train, validation or test") from None
    if not rows:
        raise ContractError(f"the {split} split is empty")
    gcfg = generation_config(cfg)
    pairs, out = [], []
    for x in rows:
        gen = generate(model, x.user_index, x.item_index, gcfg)
        cand = [t for s in gen.sentences for t in ds.vocab.decode(s)]
        ref = reference_tokens(ds, x, cfg.n_sentences)
        pairs.append(EvalPair(cand, [ref]))
        out.append((ds.users[x.user_index], ds.items[x.item_index], " ".join(cand), " ".join(ref)))
    r = rmse(predict_ratings(model, rows), [x.rating for x in rows])
    report = text_report(
        pairs, ds.vocab.feature_words, r,
        split=split, n_pairs=len(pairs), n_sentences=cfg.n_sentences, keep_sentences=cfg.keep_sentences,
    )
    return Evaluation(report, out)


def run_evaluate(cfg: RunConfig, split: str = "test", dataset: Dataset | None = None) -> Evaluation:
    ds = dataset if dataset is not None else _require_dataset(cfg)
    model = load_model(cfg, ds)
    ev = evaluate_model(model, ds, cfg, split)
    out_dir = Path(cfg.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"report_{split}.json").write_text(ev.report.to_json() + "\n", encoding="utf-8")
    with (out_dir / f"generated_{split}.tsv").open("w", encoding="utf-8") as cand, \
            (out_dir / f"references_{split}.tsv").open("w", encoding="utf-8") as ref:
        for u, i, c, r in ev.rows:
            cand.write(f"{u}\t{i}\t{c}\n")
            ref.write(f"{u}\t{i}\t{r}\n")
    return ev


def run_generate(cfg: RunConfig, user_id: str, item_id: str, dataset: Dataset | None = None) -> str:
    ds = dataset if dataset is not None else _require_dataset(cfg)
    u, i = ds.user_index(user_id), ds.item_index(item_id)
    model = load_model(cfg, ds)
    return generate(model, u, i, generation_config(cfg)).text(ds.vocab)
