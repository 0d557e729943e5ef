"""Command-line entry points: infer, eval, train, serve, make-toy-group.

Exit codes: 0 ok, 2 bad flags/inputs, 3 backend or checkpoint failure,
4 empty prompt, 5 non-finite training loss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import raster
from .backend import DiffusionBackend, DiffusionConfig, ToyBackend, ToyConfig
from .core import AlphaMatte, ImagePlane, MattingRequest, RoiPrompt
from .data import ingest_tree, load_group, load_manifest
from .errors import (
    BackendError,
    ConfigurationError,
    EmptyPromptError,
    EmptyQueryError,
    IconmatError,
    NonFiniteLossError,
    ValidationError,
)
from .head import DIFFUSION_HEAD, TOY_HEAD, HeadConfig, build_head, load_head
from .metrics import average_reports, run_protocol, write_report_csv, write_report_json
from .pipeline import InContextMatter, PipelineConfig
from .prompts import parse_wire_prompt
from .toydata import make_toy_group
from .training import TrainConfig, Trainer, latest_checkpoint, run_training

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_EMPTY_PROMPT = 4
EXIT_NONFINITE = 5


def _build_backend(args):
    if args.backend == "toy":
        return ToyBackend(ToyConfig())
    config = DiffusionConfig(
        timestep=args.timestep, noise_seed=getattr(args, "seed", 0) or 0
    )
    return DiffusionBackend(config)


def _head_profile(backend_name: str) -> HeadConfig:
    profile = TOY_HEAD if backend_name == "toy" else DIFFUSION_HEAD
    return HeadConfig(**profile)


def _build_matter(args) -> InContextMatter:
    backend = _build_backend(args)
    config = PipelineConfig(
        use_intra=not getattr(args, "no_intra", False),
        extend_m=getattr(args, "extend_m", 8),
    )
    if args.checkpoint:
        head_config, params = load_head(args.checkpoint)
        head = build_head(head_config, params)
    else:
        if args.backend != "toy":
            raise BackendError(
                "the diffusion backend needs a trained head; pass --checkpoint"
            )
        head = build_head(_head_profile(args.backend))
    return InContextMatter(backend, head, config)


def _load_prompt(args, image_hw) -> RoiPrompt:
    path = Path(args.prompt)
    if not path.exists():
        raise ValidationError(f"prompt file {path} does not exist")
    if args.prompt_kind == "mask" and path.suffix.lower() != ".json":
        mask = raster.load_binary_mask(path).data
        return parse_wire_prompt({"kind": "mask", "mask_ref": path.name}, image_hw, mask=mask)
    doc = json.loads(path.read_text())
    if doc.get("kind", args.prompt_kind) != args.prompt_kind:
        raise ValidationError(
            f"prompt file kind {doc.get('kind')!r} conflicts with --prompt-kind {args.prompt_kind!r}"
        )
    doc["kind"] = args.prompt_kind
    mask = None
    if args.prompt_kind == "mask":
        mask_path = path.parent / doc["mask_ref"]
        mask = raster.load_binary_mask(mask_path).data
    return parse_wire_prompt(doc, image_hw, mask=mask)


def _collect_targets(spec: str):
    """Directory of images, or a manifest whose members all become targets."""
    path = Path(spec)
    if path.is_dir():
        files = raster.list_images(path)
        if not files:
            raise ValidationError(f"no images under {path}")
        return [(p.stem, raster.load_image(p)) for p in files]
    if path.is_file():
        manifest = load_manifest(path)
        targets = []
        for record in manifest.groups:
            group = load_group(manifest, record)
            targets.extend(zip(group.image_ids, group.images))
        if not targets:
            raise ValidationError(f"manifest {path} has no members")
        return targets
    raise ValidationError(f"targets path {path} does not exist")


def _parse_extra_refs(values):
    """--refs entries are image=prompt pairs (prompt format as --prompt)."""
    pairs = []
    for value in values or []:
        if "=" not in value:
            raise ValidationError(
                f"--refs entry {value!r} must be <image>=<prompt-file>"
            )
        img, prm = value.split("=", 1)
        pairs.append((Path(img), Path(prm)))
    return pairs


def cmd_infer(args) -> int:
    matter = _build_matter(args)
    ref_image = raster.load_image(args.reference)
    prompt = _load_prompt(args, ref_image.shape[:2])
    references = [(ref_image, prompt)]
    for img_path, prompt_path in _parse_extra_refs(args.refs):
        extra_image = raster.load_image(img_path)
        extra_args = argparse.Namespace(
            prompt=str(prompt_path), prompt_kind=args.prompt_kind
        )
        references.append((extra_image, _load_prompt(extra_args, extra_image.shape[:2])))
    targets = _collect_targets(args.targets)
    request = MattingRequest(
        targets=tuple(img for _, img in targets),
        references=tuple(references),
    )
    results = matter.process(request)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for (stem, _), result in zip(targets, results):
        alpha_path = out_dir / f"{stem}_alpha.png"
        raster.save_alpha(alpha_path, AlphaMatte(ImagePlane(result.alpha)))
        entry = {"image_id": stem, "alpha": alpha_path.name}
        if args.save_guidance:
            guidance_path = out_dir / f"{stem}_guidance.png"
            raster.save_alpha(guidance_path, AlphaMatte(ImagePlane(result.guidance)))
            entry["guidance"] = guidance_path.name
        outputs.append(entry)
    (out_dir / "outputs.json").write_text(
        json.dumps({"outputs": outputs}, sort_keys=True, indent=2) + "\n"
    )
    print(f"wrote {len(outputs)} alpha mattes to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        print(f"error: manifest {manifest_path} not found", file=sys.stderr)
        return EXIT_USAGE
    matter = _build_matter(args)
    manifest = load_manifest(manifest_path)
    groups = [load_group(manifest, record) for record in manifest.groups]
    reports = run_protocol(
        matter.evaluate_model,
        groups,
        prompt_kind=args.prompt_kind,
        rounds=args.rounds,
        seed=args.seed,
        include_references=args.include_references,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        write_report_json(report, out_dir / f"report_round_{report.round_index}.json")
        write_report_csv(report, out_dir / f"report_round_{report.round_index}.csv")
    avg = average_reports(reports)
    write_report_json(avg, out_dir / "report_average.json")
    write_report_csv(avg, out_dir / "report_average.csv")
    line = "  ".join(f"{k}={v:.6f}" for k, v in avg.overall.items())
    print(f"averaged over {len(reports)} rounds: {line}")
    return EXIT_OK


def _train_groups(manifest):
    from .training import TrainGroup

    groups = []
    for record in manifest.groups:
        loaded = load_group(manifest, record)
        if any(label is None for label in loaded.labels):
            continue
        groups.append(
            TrainGroup(
                group_id=loaded.group_id,
                kind=loaded.kind,
                images=loaded.images,
                labels=loaded.labels,
            )
        )
    return groups


def cmd_train(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        print(f"error: manifest {manifest_path} not found", file=sys.stderr)
        return EXIT_USAGE
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.profile == "toy":
        overrides.setdefault("crop_size", 64)
        overrides.setdefault("batch_size", 2)
        head_config = HeadConfig(**TOY_HEAD)
        args.backend = "toy"
    else:
        head_config = _head_profile(args.backend)
    train_config = TrainConfig(**{**TrainConfig().to_meta(), **overrides})
    backend = _build_backend(args)
    manifest = load_manifest(manifest_path)
    groups = _train_groups(manifest)
    trainer = Trainer(backend, head_config, train_config, groups)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(
            {"train": train_config.to_meta(), "head": head_config.to_meta()},
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    if args.resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is None:
            print("error: --resume but no checkpoint in out dir", file=sys.stderr)
            return EXIT_USAGE
        trainer.load_checkpoint(ckpt)
        print(f"resumed from {ckpt.name} at iteration {trainer.iteration}")
    final = run_training(trainer, out_dir)
    print(f"final head checkpoint: {final}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceSettings, create_app

    settings = ServiceSettings.from_env(
        checkpoint=args.checkpoint,
        store=args.store,
        backend=args.backend,
        port=args.port,
    )
    app = create_app(settings)
    uvicorn.run(app, host=args.host, port=settings.port, log_level="info")
    return EXIT_OK


def cmd_make_toy_group(args) -> int:
    group_dir = make_toy_group(args.out, count=args.count, seed=args.seed, size=args.size)
    manifest = ingest_tree(Path(args.out))
    from .data import save_manifest

    save_manifest(manifest, Path(args.out) / "manifest.json")
    print(f"toy group at {group_dir}; manifest at {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def _add_backend_flags(parser):
    parser.add_argument("--backend", choices=("toy", "diffusion"), default="toy")
    parser.add_argument("--timestep", type=int, default=200,
                        help="diffusion probe timestep")
    parser.add_argument("--checkpoint", default=None, help="head checkpoint path")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iconmat",
        description="Reference-prompted alpha matting for image batches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="matte a batch of targets from one prompted reference")
    p.add_argument("--targets", required=True, help="image directory or manifest JSON")
    p.add_argument("--reference", required=True)
    p.add_argument("--prompt", required=True, help="mask PNG or prompt JSON")
    p.add_argument("--prompt-kind", choices=("mask", "points", "scribbles"),
                   required=True)
    p.add_argument("--refs", nargs="*", default=[],
                   help="extra references as <image>=<prompt-file>")
    p.add_argument("--out", required=True)
    p.add_argument("--save-guidance", action="store_true")
    p.add_argument("--no-intra", action="store_true",
                   help="disable self-attention propagation")
    p.add_argument("--extend-m", type=int, default=8,
                   help="attention cells added per prompted cell (points/scribbles)")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="run the fixed-reference evaluation protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--prompt-kind", choices=("mask", "points", "scribbles"),
                   default="mask")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--include-references", action="store_true")
    p.add_argument("--no-intra", action="store_true")
    p.add_argument("--extend-m", type=int, default=8)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the matting head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="JSON file of TrainConfig overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--profile", choices=("toy", "full"), default="full")
    p.add_argument("--resume", action="store_true")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="run the HTTP matting service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--store", default=None)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-toy-group", help="write the bundled 4-image toy group")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_make_toy_group)
    return parser


def main(argv=None) -> int:
    import torch

    torch.set_num_threads(1)  # bitwise-reproducible conv results
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}; samples: {exc.sample_ids}", file=sys.stderr)
        return EXIT_NONFINITE
    except (EmptyPromptError, EmptyQueryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_PROMPT
    except (BackendError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (IconmatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
