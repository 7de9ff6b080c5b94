"""Command-line entry point: ``cycleemotion {synth,train,evaluate,translate,report}``.

Exit codes: 0 on success, 1 for user or configuration errors, 2 when a run aborts.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from pydantic import ValidationError

from . import report as rpt
from .config import RunConfig, load_json
from .data import (
    DatasetManifest,
    SyntheticDomainSpec,
    generate_synthetic_pair,
    load_manifest,
    write_synthetic,
)
from .emotion import Emotion
from .training import NonFiniteLossError, evaluate, load_networks, train, train_classifier

logger = logging.getLogger("cycleemotion")


class UserError(Exception):
    pass


def _prepare_out(out: Path, force: bool, resume: bool = False) -> None:
    if out.exists() and any(out.iterdir()) and not resume:
        if not force:
            raise UserError(f"output directory {out} is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# --- commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    raw = load_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SyntheticDomainSpec(**raw)
    out = Path(args.out)
    _prepare_out(out, args.force)
    source, target = generate_synthetic_pair(spec)
    write_synthetic(source, out, "source")
    write_synthetic(target, out, "target")
    _write_json(spec.model_dump(mode="json"), out / "synth_spec.json")
    for name, m in (("source", source), ("target", target)):
        counts = Counter()
        for r in m.records:
            counts[r.label if r.label is not None else int(np.argmax(r.votes))] += 1
        line = ", ".join(f"{Emotion(k).label}={counts[k]}" for k in sorted(counts))
        print(f"{name}: {len(m.records)} images ({line})")
    return 0


def _load_run_config(args) -> RunConfig:
    if not args.config:
        raise UserError("train requires --config")
    raw = load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output_dir"] = args.out
    return RunConfig(**raw).effective()


def cmd_train(args) -> int:
    run = _load_run_config(args)
    cfg = run.training
    # fail fast on data problems before building anything
    source = load_manifest(run.source_manifest, image_size=cfg.image_size).domain("source")
    target = load_manifest(run.target_manifest, image_size=cfg.image_size).domain("target")
    for name, m in (("source", source), ("target", target)):
        if not m.records:
            raise UserError(f"{name} manifest has no {name}-domain records")
        if m.task != cfg.task:
            raise UserError(f"{name} manifest is a {m.task} manifest but training.task is {cfg.task!r}")
    out = Path(run.output_dir)
    if args.resume and not (out / "checkpoint" / "manifest.json").is_file():
        raise UserError(f"nothing to resume in {out}")
    _prepare_out(out, args.force, resume=args.resume)
    _write_json(run.model_dump(mode="json"), out / "effective_config.json")

    result = train(cfg, source, target, out, resume=args.resume)
    st = result.trainer.state
    validation = {
        "selection": cfg.selection,
        "best_metric": st.best_metric,
        "best_epoch": st.best_epoch,
        "history": st.validation_history,
        "source_val_adapted": evaluate(result.trainer["F_S_adapted"], _adapted(result, source, "val"), "val").to_dict(),
    }
    _write_json(validation, out / "validation.json")
    print(f"checkpoint: {result.checkpoint}")
    print(f"best validation metric {st.best_metric:.6f} at epoch {st.best_epoch}")
    return 0


def _adapted(result, source, split):
    """Source split whose pixels are replaced by their translations, for scoring F'_S."""
    recs = source.split(split)
    with torch.no_grad():
        adapted = torch.cat([result.trainer["G_ST"](xb) for xb in torch.split(source.images(split), 256)])
    pixels = {
        r.image: (a.permute(1, 2, 0).numpy() * 255).round().astype(np.uint8) for r, a in zip(recs, adapted)
    }
    return DatasetManifest(source.task, recs, image_size=source.image_size, pixels=pixels)


def cmd_evaluate(args) -> int:
    if args.source_only and args.oracle:
        raise UserError("--source-only and --oracle are mutually exclusive")
    cfg, nets = load_networks(args.checkpoint)
    manifest = load_manifest(args.manifest, image_size=cfg.image_size)
    if manifest.task != cfg.task:
        raise UserError(f"checkpoint was trained for {cfg.task!r} but the manifest is {manifest.task!r}")
    if args.oracle:
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        model, name = train_classifier(cfg, manifest, "train"), "oracle"
    elif args.source_only:
        model, name = nets["F_S"], "source_only"
    else:
        model, name = nets["F_S_adapted"], "adapted"
    metrics = evaluate(model, manifest, args.split).to_dict()
    payload = {"model": name, "split": args.split, "task": cfg.task, **metrics}
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return 0


def _contact_sheet(originals: torch.Tensor, adapted: torch.Tensor, per_row: int = 8) -> Image.Image:
    n, _, h, w = originals.shape
    rows = -(-n // per_row)
    sheet = Image.new("RGB", (per_row * 2 * w + (per_row - 1) * 4, rows * h), "white")
    for i in range(n):
        r, c = divmod(i, per_row)
        x0 = c * (2 * w + 4)
        for j, img in enumerate((originals[i], adapted[i])):
            arr = (img.permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
            sheet.paste(Image.fromarray(arr), (x0 + j * w, r * h))
    return sheet


def cmd_translate(args) -> int:
    cfg, nets = load_networks(args.checkpoint)
    manifest = load_manifest(args.manifest, image_size=cfg.image_size)
    if manifest.task != cfg.task:
        raise UserError(f"checkpoint was trained for {cfg.task!r} but the manifest is {manifest.task!r}")
    source = manifest.domain("source")
    recs = source.split(args.split)
    if not recs:
        raise UserError(f"manifest has no source-domain records in split {args.split!r}")
    out = Path(args.out)
    _prepare_out(out, args.force)
    x = source.images(args.split)
    with torch.no_grad():
        adapted = torch.cat([nets["G_ST"](xb) for xb in torch.split(x, 256)])
    img_dir = out / "adapted"
    img_dir.mkdir()
    for rec, img in zip(recs, adapted):
        arr = (img.permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
        Image.fromarray(arr).save(img_dir / (Path(rec.image).stem + ".png"))
    _contact_sheet(x[: args.sheet_size], adapted[: args.sheet_size]).save(out / "contact_sheet.png")
    l1 = float((adapted - x).abs().mean())
    _write_json({"n_images": len(recs), "mean_l1_change": l1}, out / "translate_summary.json")
    print(f"wrote {len(recs)} adapted images to {img_dir} (mean L1 change {l1:.4f})")
    return 0


def cmd_report(args) -> int:
    if not args.log and not args.metrics:
        raise UserError("report needs --log and/or --metrics")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.log:
        records = rpt.read_loss_log(args.log)
        figures = rpt.plot_loss_curves(records, out / "loss_curves")
        print(f"wrote {len(figures)} loss-curve figures to {out / 'loss_curves'}")
    if args.metrics:
        labels = args.labels or [Path(p).stem for p in args.metrics]
        if len(labels) != len(args.metrics):
            raise UserError("--labels must match --metrics one to one")
        runs = {}
        for label, path in zip(labels, args.metrics):
            runs[label] = load_json(path)
        header, rows = rpt.comparison_table(runs)
        rpt.write_csv(header, rows, out / "comparison.csv")
        rpt.write_markdown(header, rows, out / "comparison.md")
        print((out / "comparison.md").read_text(), end="")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycleemotion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    common(p, out_required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run both training parts")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint's classifier on a manifest split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--source-only", action="store_true", help="evaluate F_S instead of the adapted classifier")
    p.add_argument("--oracle", action="store_true", help="train on the manifest's labelled train split")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("translate", help="dump G_ST translations and a contact sheet")
    common(p, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sheet-size", type=int, default=32)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("report", help="loss curves and a metric comparison table")
    common(p, out_required=True)
    p.add_argument("--log")
    p.add_argument("--metrics", nargs="*")
    p.add_argument("--labels", nargs="*")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 2
    except (UserError, ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
