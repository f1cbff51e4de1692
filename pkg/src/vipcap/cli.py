"""vipcap command-line interface.

Subcommands: build-datastore, train, generate, eval, ablate. Exit codes:
0 success, 1 usage error, 2 data/config error, 3 numeric failure. Log level
comes from the VIPCAP_LOG environment variable; every run logs its resolved
arguments and seed.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .datastore import (
    RetrievalConfig,
    format_prompt,
    load_datastore,
    load_entries,
    retrieve_topk,
    save_datastore,
)
from .encoders import EncoderConfig, encode_text, global_image_embedding
from .errors import ConfigError, DataError, InputError, NumericError
from .generation import generate
from .metrics import EvalCorpus, bleu4, cider
from .seeding import derive_seed
from .training import (
    ABLATION_AXES,
    ModelGeometry,
    TrainConfig,
    ablate,
    load_dataset_dir,
    restore_captioner,
    train,
)
from .vipc_io import read_jsonl, read_vipc

log = logging.getLogger("vipcap")


def _setup_logging() -> None:
    level = os.environ.get("VIPCAP_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _log_invocation(command: str, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("%s resolved config: %s", command, json.dumps(resolved, sort_keys=True, default=str))


def _read_config(path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return TrainConfig.from_dict(raw)


def _infer_encoder_config(data_dir, index) -> EncoderConfig:
    """Patch dims from the first feature file, else synthetic defaults that
    match the datastore width (the mean-patch query must fit the store)."""
    features_dir = Path(data_dir) / "features"
    if features_dir.is_dir():
        for path in sorted(features_dir.glob("*.bin")):
            mat = read_vipc(path)
            return EncoderConfig(
                image_dim=mat.shape[1], text_dim=index.dim, num_patches=mat.shape[0]
            )
    return EncoderConfig(image_dim=index.dim, text_dim=index.dim, num_patches=8)


def cmd_build_datastore(args) -> int:
    _log_invocation("build-datastore", args)
    records = read_jsonl(args.captions)
    matrix = read_vipc(args.embeddings)
    index = load_entries(records, matrix)
    save_datastore(args.out, index.entries)
    print(f"datastore: {len(index)} entries, dim {index.dim}, at {args.out}")
    return 0


def cmd_train(args) -> int:
    _log_invocation("train", args)
    cfg = _read_config(args.config)
    log.info("train seed: %d", cfg.seed)
    index = load_datastore(args.datastore)
    enc_cfg = _infer_encoder_config(args.data, index)
    geometry = ModelGeometry(encoder=enc_cfg)
    dataset = load_dataset_dir(args.data, enc_cfg)
    result = train(cfg, dataset, index, geometry)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.vckp"
    save_checkpoint(ckpt_path, result.checkpoint)
    (out / "loss_history.json").write_text(
        json.dumps(result.loss_history), encoding="utf-8"
    )
    (out / "resolved_config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
    )
    print(f"trained {len(result.loss_history)} steps, final loss {result.loss_history[-1]:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_generate(args) -> int:
    _log_invocation("generate", args)
    ckpt = load_checkpoint(args.checkpoint)
    captioner, cfg, geometry, vocab = restore_captioner(ckpt)
    features = read_vipc(args.features)
    enc = geometry.encoder
    if features.shape != (enc.num_patches, enc.image_dim):
        raise ConfigError(
            f"features shape {features.shape} does not match model ({enc.num_patches}, {enc.image_dim})"
        )
    index = load_datastore(args.datastore)
    hits = retrieve_topk(index, global_image_embedding(features), RetrievalConfig(k=min(cfg.k, len(index))))
    prompt = format_prompt([e.text for e, _ in hits], token_budget=enc.max_text_tokens)
    text_feature = encode_text(prompt, enc)
    rng = torch.Generator().manual_seed(derive_seed(args.seed, "generate"))
    refined = captioner.vip(text_feature, torch.from_numpy(features.copy()), rng=rng)
    strategy = "beam" if args.beam > 1 else "greedy"
    caption = generate(
        captioner.bridge, vocab, prompt, refined, strategy=strategy, beam_width=args.beam
    )
    print(caption)
    return 0


def _collect_captions(records, source: str, multi: bool) -> dict:
    out = {}
    for rec in records:
        if "id" not in rec:
            raise DataError(f"{source}: record missing id: {rec!r}")
        image_id = str(rec["id"])
        if "caption" in rec:
            captions = [str(rec["caption"])]
        elif "captions" in rec:
            captions = [str(c) for c in rec["captions"]]
        else:
            raise DataError(f"{source}: record missing caption(s): {rec!r}")
        if multi:
            out.setdefault(image_id, []).extend(captions)
        else:
            if image_id in out:
                raise DataError(f"{source}: duplicate candidate id {image_id!r}")
            if len(captions) != 1:
                raise DataError(f"{source}: one candidate caption per image, got {len(captions)}")
            out[image_id] = captions[0]
    return out


def cmd_eval(args) -> int:
    _log_invocation("eval", args)
    candidates = _collect_captions(read_jsonl(args.pred), str(args.pred), multi=False)
    references = _collect_captions(read_jsonl(args.refs), str(args.refs), multi=True)
    corpus = EvalCorpus.from_dicts(candidates, references)
    report = {"num_images": len(corpus.ids), "bleu4": bleu4(corpus)}
    if len(corpus.ids) >= 2:
        report["cider"] = cider(corpus)
    else:
        log.warning("single-image corpus: CIDEr is undefined, reporting null")
        report["cider"] = None
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    _log_invocation("ablate", args)
    base = _read_config(args.config)
    grid = ablate(base, args.axis)
    out_dir = Path(args.out) if args.out else Path(f"ablate_{args.axis}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, cfg in enumerate(grid):
        path = out_dir / f"{args.axis}_{i:02d}.json"
        path.write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vipcap",
        description="Retrieval-text visual prompts for lightweight captioning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-datastore", help="validate and persist a caption datastore")
    p.add_argument("--captions", required=True, help="captions.jsonl with id/text records")
    p.add_argument("--embeddings", required=True, help="VIPC container, rows aligned to captions")
    p.add_argument("--out", required=True, help="output datastore directory")
    p.set_defaults(func=cmd_build_datastore)

    p = sub.add_parser("train", help="train the ViP module and adapters")
    p.add_argument("--config", required=True, help="JSON file mirroring TrainConfig")
    p.add_argument("--data", required=True, help="directory with pairs.jsonl (+ features/)")
    p.add_argument("--datastore", required=True, help="datastore directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="caption a feature file with a trained checkpoint")
    p.add_argument("--features", required=True, help="VIPC patch-feature file")
    p.add_argument("--datastore", required=True, help="datastore directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--beam", type=int, default=1, help="beam width (1 = greedy)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True, help="jsonl with one candidate per image id")
    p.add_argument("--refs", required=True, help="jsonl with references per image id")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="expand an ablation axis into config files")
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--config", required=True, help="base config JSON")
    p.add_argument("--out", default=None, help="output directory (default ablate_<axis>)")
    p.set_defaults(func=cmd_ablate)

    return parser


def dispatch(argv) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ConfigError, DataError, InputError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
