"""Mixture synthesis and corpus manifests.

Every example is drawn from its own generator seeded with
``(master seed, split, index)``, and all sampled parameters land in the
manifest row, so an example can be re-rendered from ``(seed, row)`` alone
and parallel generation matches serial generation.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import dsp
from .rir import RoomSpec, generate_rir, random_room
from .sources import SourcePool, load_source

SCENARIOS = ("double_talk", "near_only", "far_only")
SPLITS = {"train": 0, "val": 1, "test": 2}
CHANNELS = ("mic", "near", "far", "echo", "noise")

ACTIVE_FRAME = 320  # 20 ms
ACTIVE_RANGE_DB = 60.0


@dataclass
class GenConfig:
    n_train: int = 100
    n_val: int = 20
    n_test: int = 20
    segment_seconds: float = 4.0
    source_seconds: float = 6.0
    ser_mean: float = -10.0
    ser_std: float = 10.0
    test_ser_choices: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0])
    snr_mean: float = 0.0
    snr_std: float = 10.0
    test_snr_levels: list = field(default_factory=lambda: [10.0, 15.0, 20.0, 25.0, 30.0])
    far_noise_snr_mean: float = 0.0
    far_noise_snr_std: float = 10.0
    ir_gain_mean: float = -10.0
    ir_gain_std: float = 3.0
    delay_max_ms: float = 100.0
    tilt_bound: float = 8.0 / 3.0
    p_near_only: float = 0.2
    p_far_only: float = 0.2
    level_min_dbfs: float = -25.0
    level_max_dbfs: float = 0.0
    highpass_hz: float = 80.0
    band_low_hz: float = 100.0
    band_high_hz: float = 7500.0
    absorption_min: float = 0.2
    absorption_max: float = 0.8
    max_order: int = 8
    n_near_sources: int = 32
    n_far_sources: int = 32
    n_music_sources: int = 8
    n_noise_sources: int = 8
    near_dir: str = ""
    far_dir: str = ""
    music_dir: str = ""
    noise_dir: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generation keys: {sorted(unknown)}")
        return cls(**d)

    def validate(self):
        if self.p_near_only < 0 or self.p_far_only < 0 or self.p_near_only + self.p_far_only > 1:
            raise ValueError("scenario probabilities must be non-negative and sum to <= 1")
        if self.segment_seconds <= 0:
            raise ValueError("segment_seconds must be positive")
        if not -25.0 <= self.level_min_dbfs <= self.level_max_dbfs <= 0.0:
            raise ValueError("level range must lie within [-25, 0] dBFS")
        if self.tilt_bound > dsp.TILT_BOUND + 1e-12:
            raise ValueError("tilt_bound exceeds 8/3")

    def pool(self, seed: int) -> SourcePool:
        sizes = {
            "near": self.n_near_sources,
            "far": self.n_far_sources,
            "music": self.n_music_sources,
            "noise": self.n_noise_sources,
        }
        dirs = {"near": self.near_dir, "far": self.far_dir, "music": self.music_dir, "noise": self.noise_dir}
        return SourcePool(seed, sizes, self.source_seconds, dirs)

    @property
    def segment_len(self) -> int:
        return int(round(self.segment_seconds * dsp.SAMPLE_RATE))


@dataclass
class MixtureExample:
    near_end: np.ndarray
    far_end: np.ndarray
    echo: np.ndarray
    noise: np.ndarray
    mic: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.meta.get("scenario", "double_talk")

    def channel(self, name: str) -> np.ndarray:
        return {"mic": self.mic, "near": self.near_end, "far": self.far_end,
                "echo": self.echo, "noise": self.noise}[name]


# -- levels -----------------------------------------------------------------

def active_power(x) -> float:
    """Mean power over 20 ms frames within 60 dB of the loudest frame.

    The threshold is relative, so the measurement scales exactly with gain.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size // ACTIVE_FRAME
    if n == 0:
        return float(np.mean(x * x)) if x.size else 0.0
    frames = x[: n * ACTIVE_FRAME].reshape(n, ACTIVE_FRAME)
    energy = np.mean(frames * frames, axis=1)
    top = energy.max()
    if top == 0.0:
        return 0.0
    active = energy >= top * 10.0 ** (-ACTIVE_RANGE_DB / 10.0)
    return float(np.mean(energy[active]))


def ratio_db(a, b) -> float:
    return 10.0 * np.log10(active_power(a) / active_power(b))


def _scale_to_ratio(reference, x, ratio_db_target, what):
    p_ref = active_power(reference)
    p_x = active_power(x)
    if p_ref == 0.0:
        raise ValueError(f"cannot set {what}: reference channel has zero power")
    if p_x == 0.0:
        raise ValueError(f"cannot set {what}: channel to scale has zero power")
    return x * np.sqrt(p_ref / (p_x * 10.0 ** (ratio_db_target / 10.0)))


# -- operations ---------------------------------------------------------------

def synth_echo_path(far_end, ir, gain_db, delay_ms, tilt_slope, highpass_hz=80.0,
                    band=(100.0, 7500.0), fs=dsp.SAMPLE_RATE):
    """Echo = delay(tilt(bandpass(highpass(far_end * (gain * ir))))).

    ``highpass_hz=None`` / ``band=None`` bypass the filters.
    """
    gain = 10.0 ** (gain_db / 20.0)
    d = dsp.convolve(far_end, gain * np.asarray(ir, dtype=np.float64))
    if highpass_hz is not None:
        d = dsp.biquad_filter(d, "highpass", highpass_hz, fs=fs)
    if band is not None:
        d = dsp.biquad_filter(d, "bandpass", band[0], band[1], fs=fs)
    d = dsp.spectral_tilt(d, tilt_slope, fs=fs)
    return dsp.delay(d, delay_ms, fs=fs)


def mix_example(near, echo, noise, ser_db, snr_db, scenario="double_talk", far_end=None,
                level_dbfs=None, dtype=np.float32, meta=None) -> MixtureExample:
    """Scale echo to ``ser_db`` and noise to ``snr_db`` against the near end,
    zero channels for the scenario, optionally normalize the peak of the
    mixture to ``level_dbfs``, then form ``mic = near + echo + noise``.

    Ratios are computed before scenario zeroing. After the cast to
    ``dtype`` the mixture is summed in that precision, so the signal model
    holds sample-exactly for the stored channels.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    s = np.asarray(near, dtype=np.float64)
    d = np.asarray(echo, dtype=np.float64)
    v = np.asarray(noise, dtype=np.float64)
    x = np.zeros_like(s) if far_end is None else np.asarray(far_end, dtype=np.float64)
    if not s.shape == d.shape == v.shape == x.shape:
        raise ValueError("all channels must have the same length")
    d = _scale_to_ratio(s, d, ser_db, "SER")
    v = _scale_to_ratio(s, v, snr_db, "SNR")
    if scenario == "near_only":
        d = np.zeros_like(d)
        x = np.zeros_like(x)
    elif scenario == "far_only":
        s = np.zeros_like(s)
    if level_dbfs is not None:
        y = s + d + v
        peak = np.max(np.abs(y))
        if peak == 0.0:
            raise ValueError("mixture is silent; cannot normalize")
        c = 10.0 ** (level_dbfs / 20.0) / peak
        s, d, v, x = s * c, d * c, v * c, x * c
    s, d, v, x = (a.astype(dtype) for a in (s, d, v, x))
    y = s + d + v
    info = dict(meta or {})
    info.update(ser_db=float(ser_db), snr_db=float(snr_db), scenario=scenario)
    if level_dbfs is not None:
        info["level_dbfs"] = float(level_dbfs)
    return MixtureExample(near_end=s, far_end=x, echo=d, noise=v, mic=y, meta=info)


def _segment(x, offset, n):
    seg = np.zeros(n)
    piece = np.asarray(x[offset : offset + n], dtype=np.float64)
    seg[: piece.size] = piece
    return seg


def _offset(rng, src_len, n):
    return int(rng.integers(0, src_len - n + 1)) if src_len > n else 0


def sample_row(cfg: GenConfig, pool: SourcePool, seed: int, split: str, index: int,
               rng=None, exclude=None, scenario=None) -> dict:
    """Draw every random parameter of one example.

    ``exclude`` maps a pool kind to source indices that must not be used;
    ``scenario`` forces the scenario instead of drawing it.
    """
    if rng is None:
        rng = np.random.default_rng([seed, SPLITS[split], index])
    exclude = exclude or {}
    n = cfg.segment_len
    row = {"id": f"{split}-{index:05d}", "split": split, "index": index, "seed": seed}

    def pick(kind, exclude=()):
        size = pool.size(kind)
        choices = [i for i in range(size) if i not in exclude]
        if not choices:
            raise ValueError(f"not enough {kind} sources")
        return int(choices[int(rng.integers(len(choices)))])

    near_i, far_i = pick("near", exclude.get("near", ())), pick("far", exclude.get("far", ()))
    music_i, noise_i = pick("music"), pick("noise")
    for kind, i in (("near", near_i), ("far", far_i), ("music", music_i), ("noise", noise_i)):
        row[f"{kind}_source"] = pool.source_id(kind, i)
        row[f"{kind}_offset"] = _offset(rng, pool.get(kind, i).size, n)

    u = rng.random()
    if scenario is not None:
        pass
    elif u < cfg.p_near_only:
        scenario = "near_only"
    elif u < cfg.p_near_only + cfg.p_far_only:
        scenario = "far_only"
    else:
        scenario = "double_talk"
    if split == "test":
        ser = float(rng.choice(cfg.test_ser_choices))
        snr = float(rng.choice(cfg.test_snr_levels))
    else:
        ser = float(rng.normal(cfg.ser_mean, cfg.ser_std))
        snr = float(rng.normal(cfg.snr_mean, cfg.snr_std))
    room = random_room(rng, (cfg.absorption_min, cfg.absorption_max), cfg.max_order)
    row.update(
        scenario=scenario,
        ser_db=ser,
        snr_db=snr,
        far_noise_snr_db=float(rng.normal(cfg.far_noise_snr_mean, cfg.far_noise_snr_std)),
        ir_gain_db=float(rng.normal(cfg.ir_gain_mean, cfg.ir_gain_std)),
        ir_gain_std=cfg.ir_gain_std,
        delay_ms=float(rng.uniform(0.0, cfg.delay_max_ms)),
        tilt_slope=float(rng.uniform(-cfg.tilt_bound, cfg.tilt_bound)),
        level_dbfs=float(rng.uniform(cfg.level_min_dbfs, cfg.level_max_dbfs)),
        room=room.to_dict(),
        segment_len=n,
        source_seconds=cfg.source_seconds,
        highpass_hz=cfg.highpass_hz,
        band_hz=[cfg.band_low_hz, cfg.band_high_hz],
    )
    return row


def far_end_and_echo(row: dict, far_source: np.ndarray, music_source: np.ndarray):
    """Far-end reference (speech plus music noise) and its simulated echo."""
    n = row["segment_len"]
    x0 = _segment(far_source, row["far_offset"], n)
    m = _segment(music_source, row["music_offset"], n)
    x = x0 + _scale_to_ratio(x0, m, row["far_noise_snr_db"], "far-end SNR")
    room = row["room"]
    spec = RoomSpec(tuple(room["dims"]), tuple(room["source"]), tuple(room["mic"]),
                    room["absorption"], room["max_order"])
    ir = generate_rir(spec)
    d = synth_echo_path(x, ir, row["ir_gain_db"], row["delay_ms"], row["tilt_slope"],
                        row["highpass_hz"], tuple(row["band_hz"]))
    return x, d


def render_example(row: dict, seed: int | None = None) -> MixtureExample:
    """Rebuild one example from its manifest row."""
    seed = row["seed"] if seed is None else seed
    secs = row["source_seconds"]
    n = row["segment_len"]
    s = _segment(load_source(row["near_source"], seed, secs), row["near_offset"], n)
    x, d = far_end_and_echo(
        row,
        load_source(row["far_source"], seed, secs),
        load_source(row["music_source"], seed, secs),
    )
    v = _segment(load_source(row["noise_source"], seed, secs), row["noise_offset"], n)
    meta = {k: row[k] for k in ("id", "split", "delay_ms", "ir_gain_db", "tilt_slope", "far_noise_snr_db")}
    return mix_example(s, d, v, row["ser_db"], row["snr_db"], row["scenario"], far_end=x,
                       level_dbfs=row["level_dbfs"], meta=meta)


def source_index(source_id: str, pool: SourcePool, kind: str) -> int:
    for i in range(pool.size(kind)):
        if pool.source_id(kind, i) == source_id:
            return i
    raise ValueError(f"{source_id} is not in the {kind} pool")


def make_corpus(cfg: GenConfig, seed: int) -> list[dict]:
    """Manifest rows for the train, val and test splits (no audio rendered)."""
    cfg.validate()
    pool = cfg.pool(seed)
    rows = []
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        rows.extend(sample_row(cfg, pool, seed, split, i) for i in range(count))
    return rows


def write_manifest(rows, path):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    return rows


def write_corpus(rows, out_dir) -> list[dict]:
    """Render every row to float32 WAVs under ``out_dir/audio``; write the manifest."""
    out_dir = Path(out_dir)
    audio = out_dir / "audio"
    audio.mkdir(parents=True, exist_ok=True)
    written = []
    for row in rows:
        ex = render_example(row)
        files = {}
        for ch in CHANNELS:
            rel = f"audio/{row['id']}_{ch}.wav"
            dsp.write_wav(out_dir / rel, ex.channel(ch))
            files[ch] = rel
        written.append(dict(row, files=files))
    write_manifest(written, out_dir / "manifest.jsonl")
    return written


def load_example(row: dict, root=None) -> MixtureExample:
    """Read an example from its WAV files if present, else re-render it."""
    files = row.get("files")
    if files and root is not None:
        root = Path(root)
        ch = {k: dsp.read_wav(root / files[k]).astype(np.float32) for k in CHANNELS}
        return MixtureExample(ch["near"], ch["far"], ch["echo"], ch["noise"], ch["mic"],
                              meta={k: row[k] for k in ("id", "split", "scenario", "ser_db", "snr_db")})
    return render_example(row)


def scenario_counts(rows) -> dict:
    out = {}
    for row in rows:
        key = (row["split"], row["scenario"])
        out[key] = out.get(key, 0) + 1
    return out


def config_dict(cfg: GenConfig) -> dict:
    return asdict(cfg)
