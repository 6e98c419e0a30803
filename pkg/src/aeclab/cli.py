"""``aeclab`` command line: synth, train, infer, eval, rir.

Exit codes: 0 success, 2 configuration / usage error, 3 I/O error,
4 numeric failure.
"""

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class _Fail(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _fail_config(msg):
    return _Fail(msg, EXIT_CONFIG)


def _guard(fn):
    """Map library exceptions onto the documented exit codes."""
    import functools

    from .config import ConfigError
    from .nn.checkpoint import CheckpointError

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigError, CheckpointError) as exc:
            raise _Fail(str(exc), EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_IO) from None
        except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
            raise _Fail(f"I/O error: {exc}", EXIT_IO) from None
        except FloatingPointError as exc:
            raise _Fail(f"numeric failure: {exc}", EXIT_NUMERIC) from None
        except (ValueError, KeyError, TypeError) as exc:
            raise _Fail(str(exc), EXIT_CONFIG) from None

    return wrapper


def _threads(value):
    if value is None:
        env = os.environ.get("AECLAB_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError:
                raise _fail_config(f"AECLAB_THREADS must be an integer, got {env!r}") from None
    if value is not None and value < 1:
        raise _fail_config("--threads must be >= 1")
    return value


def _limit_threads(ctx, n):
    if n is None:
        return
    from threadpoolctl import threadpool_limits

    ctx.with_resource(threadpool_limits(limits=n))


@click.group()
@click.option("--threads", type=int, default=None,
              help="BLAS/worker thread count (falls back to AECLAB_THREADS); 1 gives bit-reproducible runs.")
@click.pass_context
def main(ctx, threads):
    """Neural acoustic echo cancellation lab."""
    ctx.ensure_object(dict)
    n = _threads(threads)
    ctx.obj["threads"] = n
    _limit_threads(ctx, n)


def _config(path):
    from .config import load_config

    return load_config(path)


# -- synth ---------------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Overrides [experiment] seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--n-train", type=int, default=None)
@click.option("--n-val", type=int, default=None)
@click.option("--n-test", type=int, default=None)
@_guard
def synth(config_path, seed, out_dir, n_train, n_val, n_test):
    """Render a mixture corpus (WAVs + manifest.jsonl)."""
    from .datagen.corpus import make_corpus, scenario_counts, write_corpus

    cfg = _config(config_path)
    seed = cfg.seed if seed is None else seed
    for key, val in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if val is not None:
            if val < 0:
                raise _fail_config(f"--{key.replace('_', '-')} must be >= 0")
            setattr(cfg.gen, key, val)
    rows = write_corpus(make_corpus(cfg.gen, seed), out_dir)
    with open(Path(out_dir) / "config.json", "w") as fh:
        json.dump({"seed": seed, "gen": cfg.to_dict()["gen"]}, fh, indent=1, sort_keys=True)
    counts = scenario_counts(rows)
    click.echo(f"wrote {len(rows)} examples to {out_dir}")
    for (split, scen), n in sorted(counts.items()):
        click.echo(f"  {split:5s} {scen:11s} {n}")


# -- train ---------------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--manifest", type=click.Path(dir_okay=False, exists=False), required=True)
@click.option("--stage", type=click.Choice(["pretrain", "finetune"]), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--init", "init_ckpt", type=click.Path(dir_okay=False), default=None,
              help="Starting checkpoint (required for finetune).")
@click.option("--epochs", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", is_flag=True, help="Continue from OUT/last.aecl and its optimizer sidecar.")
@_guard
def train(config_path, manifest, stage, out_dir, init_ckpt, epochs, max_steps, seed, resume):
    """Run one training stage and write checkpoints plus metrics logs."""
    from .datagen.corpus import read_manifest
    from .nn.checkpoint import load_checkpoint
    from .nn.model import AecModel, ModelConfig
    from .training import run_training

    cfg = _config(config_path)
    tcfg = cfg.train_config(stage, epochs=epochs, max_steps=max_steps, seed=seed)
    if stage == "finetune" and init_ckpt is None and not resume:
        raise _fail_config("finetune needs --init CHECKPOINT (a pre-trained model)")
    rows = read_manifest(manifest)
    model = None
    if init_ckpt is not None and not resume:
        model, frame_cfg, _ = load_checkpoint(init_ckpt)
        if frame_cfg != cfg.frame:
            raise _fail_config(f"checkpoint frame config {frame_cfg} differs from the experiment's")
    model_cfg = ModelConfig(**dict(cfg.model.to_dict(), seed=tcfg.seed))
    if model is None and not resume:
        model = AecModel(model_cfg)
    res = run_training(tcfg, rows, model=model, out_dir=out_dir, gen_cfg=cfg.gen, frame_cfg=cfg.frame,
                       resume=resume, corpus_root=Path(manifest).parent)
    last = res.epochs[-1]
    click.echo(f"stage={stage} epochs={len(res.epochs)} steps={last['global_step']} "
               f"val_loss={last['val_loss']!r} best_val={res.best_val!r}")
    click.echo(f"checkpoints in {out_dir} (best.aecl, last.aecl)")


# -- infer ---------------------------------------------------------------------------

@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("mic_wav", type=click.Path(dir_okay=False))
@click.argument("far_wav", type=click.Path(dir_okay=False))
@click.argument("out_wav", type=click.Path(dir_okay=False))
@click.option("--streaming", is_flag=True, help="Frame-by-frame inference; prints the real-time factor.")
@_guard
def infer(checkpoint, mic_wav, far_wav, out_wav, streaming):
    """Enhance one microphone recording given its far-end reference."""
    from .dsp import read_wav, write_wav
    from .nn.checkpoint import load_checkpoint
    from .nn.streaming import offline_enhance, stream_signal

    model, frame_cfg, _ = load_checkpoint(checkpoint)
    mic = read_wav(mic_wav).astype(np.float64)
    far = read_wav(far_wav).astype(np.float64)
    if mic.shape != far.shape:
        raise _fail_config(f"mic ({mic.size} samples) and far-end ({far.size} samples) lengths differ")
    if streaming:
        out, rtf = stream_signal(model, mic, far, frame_cfg)
    else:
        out = offline_enhance(model, mic, far, frame_cfg)
    if not np.all(np.isfinite(out)):
        raise _Fail("model produced non-finite samples", EXIT_NUMERIC)
    write_wav(out_wav, out)
    if streaming:
        click.echo(f"rtf={rtf:.4f}")


# -- eval ----------------------------------------------------------------------------

@main.command("eval")
@click.argument("target")
@click.option("--manifest", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--spectrograms", type=int, default=None, help="Number of before/after images to write.")
@_guard
def evaluate(target, manifest, out_dir, config_path, split, spectrograms):
    """Score TARGET (a checkpoint path, or nlms / oracle / identity) on a manifest split."""
    from .datagen.corpus import load_example, read_manifest
    from .eval import (aggregate, evaluate_suite, format_table, identity_system, model_system,
                       nlms_system, oracle_system, save_spectrograms)
    from .nn.checkpoint import load_checkpoint

    cfg = _config(config_path)
    rows = read_manifest(manifest)
    root = Path(manifest).parent
    if target == "nlms":
        system = nlms_system(cfg.eval.nlms_taps, cfg.eval.nlms_mu, cfg.eval.nlms_eps)
    elif target == "oracle":
        system = oracle_system
    elif target == "identity":
        system = identity_system
    else:
        model, frame_cfg, _ = load_checkpoint(target)
        system = model_system(model, frame_cfg)
    name = target if target in ("nlms", "oracle", "identity") else Path(target).stem
    chosen = [r for r in rows if r["split"] == split]
    if not chosen:
        raise _fail_config(f"manifest has no rows in split {split!r}")
    workers = max(1, cfg.eval.workers)
    results = evaluate_suite(system, chosen, name, corpus_root=root, workers=workers, splits=None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = [r.to_dict() for r in results]
    (out / "metrics.tsv").write_text(format_table(recs))
    with open(out / "metrics.jsonl", "w") as fh:
        for r in recs:
            fh.write(json.dumps(r) + "\n")
    agg = aggregate(results)
    (out / "summary.tsv").write_text(format_table(agg))
    n_img = cfg.eval.spectrograms if spectrograms is None else spectrograms
    for r in chosen[:n_img]:
        ex = load_example(r, root)
        save_spectrograms(out / f"{r['id']}_spectrogram.png", {"microphone": ex.mic, "output": system(ex)})
    failed = sum(1 for r in results if r.error)
    click.echo(format_table(agg), nl=False)
    click.echo(f"rows={len(results)} failed_metrics={failed} out={out}")


# -- rir -----------------------------------------------------------------------------

def _triple(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise click.BadParameter(f"expected three comma-separated numbers, got {text!r}")
    return vals


@main.command()
@click.option("--room", required=True, help="Room dimensions Lx,Ly,Lz in metres.")
@click.option("--source", required=True, help="Loudspeaker position x,y,z.")
@click.option("--mic", required=True, help="Microphone position x,y,z.")
@click.option("--absorption", type=float, default=0.3, show_default=True)
@click.option("--max-order", type=int, default=8, show_default=True)
@click.option("--length", type=int, default=None, help="Output length in samples.")
@click.option("--out", "out_wav", type=click.Path(dir_okay=False), required=True)
@_guard
def rir(room, source, mic, absorption, max_order, length, out_wav):
    """Generate an image-method room impulse response as a float32 WAV."""
    from .datagen.rir import RoomSpec, generate_rir
    from .dsp import write_wav

    try:
        spec = RoomSpec(_triple(room), _triple(source), _triple(mic), absorption, max_order)
    except click.BadParameter as exc:
        raise _fail_config(str(exc)) from None
    h = generate_rir(spec, length=length)
    write_wav(out_wav, h)
    click.echo(f"wrote {h.size} taps to {out_wav} (peak {np.max(np.abs(h)):.6g})")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
