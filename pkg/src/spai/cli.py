"""Command-line entry points: toy pretext pretraining, detector training,
inference, evaluation, and perturbation generation.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every subcommand
honors --seed; all outputs land under the chosen output directory.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import evaluation
from .backbone import load_pretrained, pretrain_toy
from .detector import load_detector, save_detector
from .errors import SpaiError
from .evaluation import PERTURBATION_GRID, load_manifest, perturb, write_manifest
from .sca import attention_heatmap
from .training import AugmentationPolicy, TrainConfig, fit


@dataclass
class CliConfig:
    """Declarative run description; round-trips through JSON unchanged."""

    seed: int = 0
    out_dir: str = "runs"
    verbosity: int = 0
    train: dict = dataclasses.field(default_factory=dict)
    policy: dict = dataclasses.field(default_factory=dict)
    pretrain: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "CliConfig":
        data = json.loads(Path(path).read_text())
        return cls(**data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True))


def _tuplify(policy_kwargs: dict) -> dict:
    # JSON renders tuples as lists; dataclass fields expect tuples back.
    out = {}
    for key, value in policy_kwargs.items():
        out[key] = tuple(value) if isinstance(value, list) else value
    return out


pass_config = click.make_pass_decorator(CliConfig)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Declarative JSON run description; flags override it.")
@click.option("--seed", type=int, default=None, help="Seed for reproducible outputs.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory for all artifacts.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, seed, out_dir, verbose):
    """Spectral detector of AI-generated images."""
    cfg = CliConfig.from_json(config_path) if config_path else CliConfig()
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    cfg.verbosity = verbose
    ctx.obj = cfg


def _out_dir(cfg: CliConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fail(message: str):
    raise click.ClickException(message)  # exit code 1


@main.command("pretrain-toy")
@click.argument("image_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--radius", type=float, default=4.0, show_default=True,
              help="Masking radius of the pretext task, in spectral pixels.")
@click.option("--p-low", type=float, default=0.5, show_default=True)
@pass_config
def cmd_pretrain_toy(cfg, image_dir, steps, batch_size, lr, radius, p_low):
    """Pretrain a toy backbone on a folder of real images."""
    out = _out_dir(cfg)
    kwargs = dict(cfg.pretrain)
    kwargs.update(steps=steps, batch_size=batch_size, lr=lr, radius=radius, p_low=p_low)
    ckpt = out / "backbone.pt"
    try:
        log = pretrain_toy(image_dir, ckpt, seed=cfg.seed, **kwargs)
    except SpaiError as exc:
        _fail(str(exc))
    with open(out / "pretext_log.jsonl", "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    click.echo(f"wrote {ckpt} (loss {log[0]['loss']:.4f} -> {log[-1]['loss']:.4f})")


@main.command("train")
@click.option("--train-manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--val-manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backbone", "backbone_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", type=int, default=None)
@click.option("--warmup-epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--k-training", type=int, default=None)
@click.option("--lr", "base_lr", type=float, default=None)
@click.option("--radius", type=float, default=None)
@click.option("--feature-dim", type=int, default=None)
@click.option("--attn-dim", type=int, default=None)
@pass_config
def cmd_train(cfg, train_manifest, val_manifest, backbone_path, **overrides):
    """Train detector components against a frozen backbone."""
    out = _out_dir(cfg)
    train_kwargs = dict(cfg.train)
    train_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    train_kwargs["seed"] = cfg.seed
    try:
        encoder = load_pretrained(backbone_path)
        config = TrainConfig(**train_kwargs)
        policy_kwargs = _tuplify(cfg.policy)
        policy_kwargs.setdefault("view_side", encoder.config.input_side)
        policy = AugmentationPolicy(**policy_kwargs)

        with open(out / "train_log.jsonl", "w") as log_file:

            def log_fn(entry):
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
                if cfg.verbosity:
                    click.echo(
                        f"epoch {entry['epoch']}: train {entry['train_loss']:.4f} "
                        f"val {entry['val_loss']:.4f} auc {entry['val_auc']:.4f}"
                    )

            result = fit(
                load_manifest(train_manifest),
                load_manifest(val_manifest),
                encoder,
                config,
                policy,
                log_fn=log_fn,
            )
        ckpt = out / "detector.pt"
        version = save_detector(result.detector, ckpt, policy, config, backbone_path)
    except (SpaiError, FileNotFoundError, RuntimeError, TypeError) as exc:
        _fail(str(exc))
    click.echo(
        f"wrote {ckpt} ({version}); best epoch {result.best_epoch} "
        f"val_loss {result.best_val_loss:.4f}"
    )


def _iter_infer_paths(inputs, manifest):
    paths = [Path(p) for p in inputs]
    if manifest:
        paths.extend(Path(rec.path) for rec in load_manifest(manifest, check_paths=False))
    return paths


@main.command("infer")
@click.argument("inputs", nargs=-1, type=click.Path())
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--detector", "detector_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backbone", "backbone_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Override the backbone path recorded in the detector checkpoint.")
@click.option("--heatmap", is_flag=True, help="Write per-image attention overlays as PNG.")
@click.option("--dump-embeddings", is_flag=True, help="Write per-patch spectral vectors as NPZ.")
@pass_config
def cmd_infer(cfg, inputs, manifest, detector_path, backbone_path, heatmap, dump_embeddings):
    """Score images; one JSON record per line in detections.jsonl."""
    out = _out_dir(cfg)
    paths = _iter_infer_paths(inputs, manifest)
    if not paths:
        raise click.UsageError("no input images given (arguments or --manifest)")
    try:
        detector = load_detector(detector_path, backbone_path)
    except (SpaiError, FileNotFoundError) as exc:
        _fail(str(exc))
    failures = 0
    with open(out / "detections.jsonl", "w") as fh:
        for path in paths:
            try:
                image = np.asarray(Image.open(path).convert("RGB"))
                result, vectors, grid = detector.score_array(
                    image, path=str(path), return_vectors=True
                )
                fh.write(result.to_json() + "\n")
                if heatmap:
                    overlay = attention_heatmap(grid, np.asarray(result.attention), image)
                    Image.fromarray(overlay).save(out / f"{path.stem}_heatmap.png")
                if dump_embeddings:
                    np.savez(
                        out / f"{path.stem}_embeddings.npz",
                        spectral_vectors=vectors,
                        coords=np.asarray(grid.coords),
                        score=result.score,
                    )
                if cfg.verbosity:
                    click.echo(f"{path}: {result.score:.4f}")
            except Exception as exc:  # per-record failure, keep going
                failures += 1
                fh.write(json.dumps({"path": str(path), "error": str(exc)}) + "\n")
    if failures == len(paths):
        _fail("all inputs failed to score")
    click.echo(f"scored {len(paths) - failures}/{len(paths)} images -> {out / 'detections.jsonl'}")


def _parse_perturbation(spec: str) -> tuple[str, float]:
    try:
        kind, severity = spec.split(":", 1)
        severity = float(severity)
    except ValueError:
        raise click.UsageError(f"--perturb expects kind:severity, got {spec!r}")
    if kind not in PERTURBATION_GRID:
        raise click.UsageError(
            f"unknown perturbation kind {kind!r}; choose from {sorted(PERTURBATION_GRID)}"
        )
    return kind, severity


@main.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--detector", "detector_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backbone", "backbone_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--perturb", "perturb_spec", default=None, help="kind:severity, e.g. jpeg:85")
@pass_config
def cmd_eval(cfg, manifest, detector_path, backbone_path, perturb_spec):
    """Evaluate a detector over a manifest, optionally under a perturbation."""
    out = _out_dir(cfg)
    perturbation = _parse_perturbation(perturb_spec) if perturb_spec else None
    try:
        detector = load_detector(detector_path, backbone_path)
        records = load_manifest(manifest)
        report = evaluation.evaluate_detector(
            records,
            lambda image: detector.score_array(image).score,
            perturbation=perturbation,
            seed=cfg.seed,
        )
    except (SpaiError, FileNotFoundError) as exc:
        _fail(str(exc))
    suffix = f"_{perturbation[0]}_{perturbation[1]:g}" if perturbation else ""
    (out / f"report{suffix}.json").write_text(report.to_json())
    (out / f"report{suffix}.txt").write_text(report.render_table())
    click.echo(report.render_table())
    if report.has_errors:
        _fail("one or more metric cells errored; see report")


@main.command("perturb")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--kind", required=True, type=click.Choice(sorted(PERTURBATION_GRID)))
@click.option("--severity", required=True, type=float)
@click.option("--strict/--no-strict", default=True,
              help="Restrict severities to the documented grids.")
@pass_config
def cmd_perturb(cfg, inputs, manifest, kind, severity, strict):
    """Write perturbed copies of images (and a manifest when given one)."""
    out = _out_dir(cfg)
    rng = np.random.default_rng(cfg.seed)
    records = list(load_manifest(manifest)) if manifest else None
    paths = [Path(p) for p in inputs] + ([Path(r.path) for r in records] if records else [])
    if not paths:
        raise click.UsageError("no input images given (arguments or --manifest)")
    new_records = []
    try:
        for i, path in enumerate(paths):
            image = np.asarray(Image.open(path).convert("RGB"))
            result = perturb(image, kind, severity, rng=rng, strict=strict)
            dest = out / f"{path.stem}_{kind}_{severity:g}.png"
            Image.fromarray(result).save(dest)
            if records and i >= len(inputs):
                rec = records[i - len(inputs)]
                new_records.append(evaluation.ManifestRecord(str(dest), rec.label, rec.source))
    except SpaiError as exc:
        _fail(str(exc))
    if new_records:
        write_manifest(new_records, out / f"manifest_{kind}_{severity:g}.csv")
    click.echo(f"wrote {len(paths)} perturbed images to {out}")


if __name__ == "__main__":
    sys.exit(main())
