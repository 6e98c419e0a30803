"""Batch evaluation of AEC systems over a test manifest."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..datagen.corpus import load_example
from ..dsp import DEFAULT_FRAME, istft, stft
from ..masks import MASK_CLIP, apply_mask, true_cirm
from ..nn.streaming import offline_enhance
from .metrics import erle, estoi, nlms_baseline, si_sdr

TABLE_SNRS = (10.0, 15.0, 20.0, 25.0, 30.0)
METRIC_KEYS = ("erle_db", "estoi", "si_sdr_db")


@dataclass
class MetricsRow:
    id: str
    scenario: str
    ser_db: float
    snr_db: float
    erle_db: float | None
    estoi: float | None
    si_sdr_db: float | None
    model: str
    error: str = ""

    def to_dict(self):
        return asdict(self)


# -- systems: callables example -> near-end estimate ------------------------------------

def identity_system(ex):
    return np.asarray(ex.mic, dtype=np.float64)


def oracle_system(ex, cfg=DEFAULT_FRAME, mask_clip=MASK_CLIP):
    """Apply the true (clipped) cIRM to the mic spectrum."""
    Y = stft(ex.mic.astype(np.float64), cfg)
    S = stft(ex.near_end.astype(np.float64), cfg)
    return istft(apply_mask(true_cirm(S, Y, mask_clip=mask_clip), Y), cfg)


def nlms_system(taps=512, mu=0.5, eps=1e-8):
    def run(ex):
        return nlms_baseline(ex.mic, ex.far_end, taps, mu, eps)
    return run


def model_system(model, cfg=DEFAULT_FRAME):
    def run(ex):
        return offline_enhance(model, ex.mic.astype(np.float64), ex.far_end.astype(np.float64), cfg)
    return run


SYSTEMS = {"identity": identity_system, "oracle": oracle_system}


def _match(a, n):
    a = np.asarray(a, dtype=np.float64)
    if a.size >= n:
        return a[:n]
    return np.concatenate([a, np.zeros(n - a.size)])


def score_example(ex, est, name: str) -> MetricsRow:
    """All applicable metrics for one example; failures are recorded, not raised."""
    meta = ex.meta
    row = MetricsRow(str(meta.get("id", "")), ex.scenario, float(meta.get("ser_db", math.nan)),
                     float(meta.get("snr_db", math.nan)), None, None, None, name)
    errors = []
    n = len(ex.mic)
    est = _match(est, n)
    if ex.scenario == "far_only":
        try:
            row.erle_db = erle(ex.mic, est)
        except ValueError as exc:
            errors.append(str(exc))
    else:
        for key, fn in (("estoi", estoi), ("si_sdr_db", si_sdr)):
            try:
                setattr(row, key, fn(ex.near_end, est))
            except ValueError as exc:
                errors.append(str(exc))
    row.error = "; ".join(errors)
    return row


def evaluate_suite(system, rows, name: str = "system", corpus_root=None, workers: int = 1,
                   splits=("test",)):
    """Per-example :class:`MetricsRow` list in manifest order."""
    chosen = [r for r in rows if splits is None or r["split"] in splits]

    def one(r):
        ex = load_example(r, corpus_root)
        ex.meta.setdefault("ser_db", r.get("ser_db"))
        ex.meta.setdefault("snr_db", r.get("snr_db"))
        ex.meta.setdefault("scenario", r.get("scenario"))
        try:
            est = system(ex)
        except (ValueError, FloatingPointError) as exc:
            return MetricsRow(r["id"], r["scenario"], r["ser_db"], r["snr_db"], None, None, None, name, str(exc))
        return score_example(ex, est, name)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, chosen))
    return [one(r) for r in chosen]


def aggregate(rows):
    """Means per (model, scenario, snr_db) ignoring missing values."""
    groups = {}
    for r in rows:
        groups.setdefault((r.model, r.scenario, r.snr_db), []).append(r)
    out = []
    for (model, scenario, snr), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        rec = {"model": model, "scenario": scenario, "snr_db": snr, "n": len(members)}
        for key in METRIC_KEYS:
            vals = [getattr(m, key) for m in members if getattr(m, key) is not None]
            rec[key] = float(np.mean(vals)) if vals else None
        out.append(rec)
    return out


def format_table(records, keys=None, sep="\t") -> str:
    """Delimited text table of dict records."""
    if not records:
        return ""
    keys = keys or list(records[0].keys())

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    lines = [sep.join(keys)]
    lines += [sep.join(cell(r.get(k)) for k in keys) for r in records]
    return "\n".join(lines) + "\n"
