"""CSV exchange, entity splits, and turning a raw dataset into model-ready data.

File formats (UTF-8, header row, ``.`` decimals):

* triplets: ``sample_id,time,feature_id,value``
* statics:  ``sample_id,s1,...,sD``
* labels:   ``sample_id,label`` or, in retail mode, ``sample_id,article_id``
  rows (one per purchased article)
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    LabeledSample,
    NormalizationStats,
    PretrainWindow,
    TripletSeries,
    WindowingConfig,
    build_pretrain_windows,
    default_seqlen,
    fit_normalization,
)
from .model import EncoderConfig
from .synthetic import RawDataset
from .training import DataContext, bucket_interval_count

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.65, 0.15, 0.20)
SPLITS = ("train", "val", "test")


class DataFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# splits


def _split_key(entity_id: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{entity_id}".encode("utf-8")).hexdigest()


def split_entities(ids, seed: int, fractions=SPLIT_FRACTIONS) -> dict[str, str]:
    """Assign entities to train/val/test.

    Entities are ranked by a seeded hash of their id and cut at the rounded
    fraction boundaries, so the assignment does not depend on input order.
    """
    ids = list(ids)
    ranked = sorted(ids, key=lambda e: _split_key(e, seed))
    n = len(ranked)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    out = {}
    for i, e in enumerate(ranked):
        out[e] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    return out


# --------------------------------------------------------------------------
# CSV


def export_csv(raw: RawDataset, out_dir, feature_names=None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: out_dir / f"{k}.csv" for k in ("triplets", "statics", "labels")}
    names = feature_names or [str(j) for j in range(1, raw.n_features + 1)]
    with open(paths["triplets"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "time", "feature_id", "value"])
        for sid, s in zip(raw.ids, raw.series):
            for t, v, f in zip(s.times, s.values, s.features):
                w.writerow([sid, repr(float(t)), names[f - 1], repr(float(v))])
    with open(paths["statics"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + [f"s{k + 1}" for k in range(raw.statics.shape[1])])
        for sid, row in zip(raw.ids, raw.statics):
            w.writerow([sid] + [repr(float(x)) for x in row])
    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if raw.mode == "retail":
            w.writerow(["sample_id", "article_id"])
            for sid, y in zip(raw.ids, raw.labels):
                for j in np.flatnonzero(np.asarray(y)):
                    w.writerow([sid, names[j]])
        else:
            w.writerow(["sample_id", "label"])
            for sid, y in zip(raw.ids, raw.labels):
                w.writerow([sid, int(y)])
    return paths


def _rows(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        if expected_header is not None and [h.strip() for h in header[: len(expected_header)]] != expected_header:
            raise DataFormatError(f"{path}:1: expected header {','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, header, row


def _float(path, lineno, text):
    try:
        x = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: not a number: {text!r}") from None
    if not math.isfinite(x):
        raise DataFormatError(f"{path}:{lineno}: non-finite value {text!r}")
    return x


def _vocab_key(name: str):
    try:
        return (0, float(name), name)
    except ValueError:
        return (1, 0.0, name)


def ingest_csv(
    triplet_path,
    statics_path,
    labels_path,
    mode: str = "healthcare",
    *,
    supervised_window: float = 24.0,
    split_seed: int = 0,
) -> RawDataset:
    """Parse and validate the CSV trio into a :class:`RawDataset`.

    The feature vocabulary comes from the training split; feature ids seen
    only in validation/test go to one extra ``unknown`` feature.
    """
    obs = defaultdict(list)
    for lineno, _, row in _rows(triplet_path, ["sample_id", "time", "feature_id", "value"]):
        if len(row) != 4:
            raise DataFormatError(f"{triplet_path}:{lineno}: expected 4 fields, got {len(row)}")
        sid, t, fid, v = row
        obs[sid].append((_float(triplet_path, lineno, t), fid.strip(), _float(triplet_path, lineno, v)))
    if not obs:
        raise DataFormatError(f"{triplet_path}: no observations")

    statics = {}
    dim = None
    for lineno, header, row in _rows(statics_path, ["sample_id"]):
        if len(row) != len(header):
            raise DataFormatError(f"{statics_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        statics[row[0]] = [_float(statics_path, lineno, x) for x in row[1:]]
        dim = len(row) - 1
    dim = dim or 0

    ids = sorted(set(obs) | set(statics))
    split = split_entities(ids, split_seed)
    train_feats = {fid for sid in ids if split[sid] == "train" for _, fid, _ in obs.get(sid, [])}
    vocab = {name: i + 1 for i, name in enumerate(sorted(train_feats, key=_vocab_key))}
    unknown_seen = {fid for sid in ids for _, fid, _ in obs.get(sid, []) if fid not in vocab}
    if unknown_seen:
        log.warning("%d feature ids not in the training vocabulary mapped to an unknown bucket", len(unknown_seen))
    unk = len(vocab) + 1
    n_features = len(vocab) + (1 if unknown_seen else 0)

    labels = {}
    if mode == "retail":
        for sid in ids:
            labels[sid] = np.zeros(n_features)
        for lineno, _, row in _rows(labels_path, ["sample_id", "article_id"]):
            if len(row) != 2:
                raise DataFormatError(f"{labels_path}:{lineno}: expected 2 fields")
            sid, art = row[0], row[1].strip()
            if sid not in labels:
                raise DataFormatError(f"{labels_path}:{lineno}: unknown sample {sid!r}")
            labels[sid][vocab.get(art, unk) - 1] = 1.0
    elif mode == "healthcare":
        for lineno, _, row in _rows(labels_path, ["sample_id", "label"]):
            if len(row) != 2:
                raise DataFormatError(f"{labels_path}:{lineno}: expected 2 fields")
            y = _float(labels_path, lineno, row[1])
            if y not in (0.0, 1.0):
                raise DataFormatError(f"{labels_path}:{lineno}: label must be 0 or 1")
            labels[row[0]] = y
        missing = [sid for sid in ids if sid not in labels]
        if missing:
            raise DataFormatError(f"{labels_path}: no label for {len(missing)} samples (e.g. {missing[0]!r})")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    series = []
    for sid in ids:
        rows = obs.get(sid, [])
        series.append(TripletSeries.from_arrays(
            [r[0] for r in rows], [r[2] for r in rows], [vocab.get(r[1], unk) for r in rows]
        ))
    st = np.array([statics.get(sid, [0.0] * dim) for sid in ids], dtype=np.float64).reshape(len(ids), dim)
    names = [None] * n_features
    for name, i in vocab.items():
        names[i - 1] = name
    if unknown_seen:
        names[-1] = "<unknown>"
    return RawDataset(ids, series, st, [labels[sid] for sid in ids], n_features, supervised_window, mode,
                      extra={"split": split, "feature_names": names})


# --------------------------------------------------------------------------
# preparation


@dataclass
class PreparedData:
    unlabeled_train: list[PretrainWindow]
    unlabeled_val: list[PretrainWindow]
    labeled_train: list[LabeledSample]
    labeled_val: list[LabeledSample]
    labeled_test: list[LabeledSample]
    stats: NormalizationStats
    ctx: DataContext
    split: dict = field(default_factory=dict)

    def with_labeled_train(self, samples) -> "PreparedData":
        return PreparedData(self.unlabeled_train, self.unlabeled_val, list(samples), self.labeled_val,
                            self.labeled_test, self.stats, self.ctx, self.split)


def prepare_data(raw: RawDataset, exp) -> PreparedData:
    """Split, window, normalize and size the model for ``raw``.

    ``exp`` is an :class:`~paits.config.ExperimentConfig`. Pretraining windows
    come from the full series of train/val entities, re-expressed relative to
    the window start so they look like supervised inputs.
    """
    split = split_entities(raw.ids, exp.split_seed)
    retail = raw.mode == "retail"
    labeled = {k: [] for k in SPLITS}
    windows = {"train": [], "val": []}
    n_unlabeled = {"train": 0, "val": 0}
    for i, (sid, s) in enumerate(zip(raw.ids, raw.series)):
        part = split[sid]
        sup = s.between(0.0, exp.supervised_window)
        if len(sup):
            labeled[part].append(LabeledSample(raw.statics[i], sup, raw.labels[i], sid))
        else:
            log.warning("dropping labeled sample %s with no observations", sid)
        if part in windows:
            ws = build_pretrain_windows(s, raw.statics[i], exp.windowing, raw.n_features,
                                        binary_targets=retail, sample_id=sid)
            if ws:
                n_unlabeled[part] += 1
            windows[part].extend(ws)
    if not labeled["train"]:
        raise ValueError("no labeled training samples")

    stats = fit_normalization([x.series for x in labeled["train"]], raw.n_features,
                              np.stack([x.statics for x in labeled["train"]]))

    def norm_window(w: PretrainWindow) -> PretrainWindow:
        z = w.target if retail else stats.normalize_targets(w.target, w.target_mask)
        return PretrainWindow(stats.normalize_statics(w.statics), stats.normalize_series(w.series.shift(w.start)),
                              w.start, z, w.target_mask, w.sample_id)

    def norm_sample(x: LabeledSample) -> LabeledSample:
        return LabeledSample(stats.normalize_statics(x.statics), stats.normalize_series(x.series), x.label, x.sample_id)

    seqlen = exp.model.seqlen or default_seqlen([x.series for x in labeled["train"]])
    ms = exp.model
    enc = EncoderConfig(
        n_features=raw.n_features,
        static_dim=raw.statics.shape[1],
        seqlen=seqlen,
        embed_dim=ms.embed_dim,
        blocks=ms.blocks,
        heads=ms.heads,
        dropout=ms.dropout,
        ff_dim=ms.ff_dim,
        static_embed_dim=ms.static_embed_dim,
        task="multilabel" if retail else "binary",
        reconstruct_target=ms.reconstruct_target,
    )
    longest = max(exp.windowing.obs_length, exp.supervised_window)
    ctx = DataContext(
        encoder=enc,
        bucket_start=float(stats.normalize_time(0.0)),
        bucket_width=stats.time_scale(exp.interval_width),
        interval_count=bucket_interval_count(longest, exp.interval_width),
        n_unlabeled_train=max(n_unlabeled["train"], 1),
        n_unlabeled_val=max(n_unlabeled["val"], 1),
    )
    return PreparedData(
        [norm_window(w) for w in windows["train"]],
        [norm_window(w) for w in windows["val"]],
        [norm_sample(x) for x in labeled["train"]],
        [norm_sample(x) for x in labeled["val"]],
        [norm_sample(x) for x in labeled["test"]],
        stats,
        ctx,
        split,
    )


# --------------------------------------------------------------------------
# reporting


def nearest_rank_percentile(values, q: float) -> float:
    xs = np.sort(np.asarray(values))
    if xs.size == 0:
        raise ValueError("no values")
    k = max(1, int(math.ceil(q / 100.0 * xs.size)))
    return float(xs[k - 1])


def sparsity_report(series, interval_width: float, *, n_features: int | None = None, span: float | None = None) -> dict:
    """Share of empty (entity, feature, interval) cells over ``[0, span)`` and
    observation-count percentiles (nearest rank)."""
    if interval_width <= 0:
        raise ValueError("interval_width must be positive")
    series = list(series)
    if n_features is None:
        n_features = max((int(s.features.max()) for s in series if len(s)), default=1)
    if span is None:
        span = max((float(s.times.max()) for s in series if len(s)), default=0.0) + 1e-12
    n_intervals = max(1, int(math.ceil(span / interval_width)))
    occupied = 0
    for s in series:
        inside = (s.times >= 0) & (s.times < n_intervals * interval_width)
        b = np.floor(s.times[inside] / interval_width).astype(np.int64)
        occupied += len(set(zip(s.features[inside].tolist(), b.tolist())))
    cells = len(series) * n_features * n_intervals
    counts = [len(s) for s in series]
    return {
        "sparsity": 1.0 - occupied / cells if cells else float("nan"),
        "cells": cells,
        "n_intervals": n_intervals,
        "count_percentiles": {str(q): nearest_rank_percentile(counts, q) for q in (1, 50, 99)} if counts else {},
    }
