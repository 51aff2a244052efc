"""Command-line entry point: generate, train, compose, eval.

Every command echoes the effective RunConfig next to its artifacts and
is reproducible from (inputs, config, seed) alone.  Exit codes: 0 on
success, 1 usage/input error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import classifier, compositor, dataio, evalbench, nncore, placement
from .config import RunConfig, load_config, save_config
from .errors import DataError, InputError, NumericError
from .geometry import Box

CLASSIFIER_WEIGHTS = "classifier.weights"
PLACEMENT_WEIGHTS = "placement.weights"
CONFIG_ECHO = "config.txt"


def _build_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = config.override(seed=args.seed)
    return config


def _echo_config(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / CONFIG_ECHO)


def cmd_generate(args) -> int:
    config = _build_config(args)
    if args.n <= 0:
        raise InputError("--n must be positive")
    out = Path(args.out)
    scene_set = dataio.synth_generate(args.n, config.seed)
    dataio.write_dataset(scene_set, out, config.seed)
    _echo_config(config, out)
    print(f"wrote {len(scene_set.records)} records to {out}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    scene_set = dataio.load_dataset(args.data_dir)
    split = dataio.load_split(args.data_dir)
    out = Path(args.out)
    resume = nncore.load_weights(args.resume) if args.resume else None

    if args.stage == "classifier":
        train_ids = {s for s, name in split.items() if name == "train"}
        examples = classifier.examples_from_scenes(scene_set, train_ids)
        params, history = classifier.train_classifier(examples, config,
                                                      params=resume)
        weights_name = CLASSIFIER_WEIGHTS
    else:
        params, history = placement.train_placement(scene_set, config,
                                                    split=split, params=resume)
        weights_name = PLACEMENT_WEIGHTS

    _echo_config(config, out)
    nncore.save_weights(params, out / weights_name)
    with open(out / f"{args.stage}_metrics.jsonl", "w", encoding="utf-8") as f:
        for row in history:
            f.write(json.dumps(row) + "\n")
    last = history[-1] if history else {}
    print(f"trained {args.stage}: {len(history)} epochs, "
          f"final {json.dumps(last)}")
    print(f"weights: {out / weights_name}")
    return 0


def _load_mask(path, shape) -> np.ndarray:
    mask = compositor.load_rgba(path)[..., 0].astype(np.float64) / 255.0
    if mask.shape != shape:
        mask = compositor.bilinear_resample(mask[..., None], *shape)[..., 0]
    return mask


def cmd_compose(args) -> int:
    config = _build_config(args)
    host = compositor.load_rgba(args.host)
    sticker_img = compositor.load_rgba(args.sticker)
    weights_dir = Path(args.weights)

    sticker_in = classifier.make_sticker_input(sticker_img)
    record = {"style": args.force_style}
    if args.force_style:
        decision = None
        style = args.force_style
        use_mask, transparency = args.mask is not None, False
    else:
        cls_params = nncore.load_weights(weights_dir / CLASSIFIER_WEIGHTS)
        decision = classifier.classify(cls_params, sticker_in,
                                       config.thresholds(), config)
        style = "filter" if decision.is_filter else "sticker"
        use_mask, transparency = decision.use_mask, decision.transparency
        record.update(style=style, p_filter=decision.p_filter,
                      p_mask=decision.p_mask,
                      p_transparency=decision.p_transparency)

    if style == "filter":
        mask = _load_mask(args.mask, host.shape[:2]) if args.mask else None
        if use_mask and mask is None:
            raise InputError("classifier chose use_mask; pass --mask")
        result = compositor.composite_filter(host, sticker_img, use_mask,
                                             transparency, mask=mask,
                                             filter_opacity=config.filter_opacity)
    else:
        pl_params = nncore.load_weights(weights_dir / PLACEMENT_WEIGHTS)
        res = config.resolution
        host_small = compositor.bilinear_resample(host, res, res)
        host_small = np.clip(np.rint(host_small), 0, 255).astype(np.uint8)
        if args.host_mask:
            fg_mask = _load_mask(args.host_mask, (res, res))
        else:
            fg_mask = np.zeros((res, res), np.float64)
        host_in = placement.HostInput(rgba=host_small,
                                      fg_mask=fg_mask.astype(np.float32))
        out = placement.predict_placement(pl_params, host_in, sticker_img,
                                          config)
        result, clipped = compositor.composite_sticker(host, sticker_img,
                                                       out.box)
        record.update(box=[out.box.x, out.box.y, out.box.w, out.box.h],
                      chosen_anchor=out.chosen, clipped_out=clipped)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    compositor.save_rgba(result, out_path)
    with open(out_path.with_suffix(".decision.json"), "w",
              encoding="utf-8") as f:
        json.dump(record, f, indent=2)
    _echo_config(config, out_path.parent)
    print(f"{style} composite -> {out_path}")
    return 0


def cmd_eval(args) -> int:
    config = _build_config(args)
    scene_set = dataio.load_dataset(args.data_dir)
    split = dataio.load_split(args.data_dir)
    records = [r for r in scene_set.records
               if r.style_label == "sticker" and split.get(r.sticker_id) == "test"]
    if not records:
        raise DataError("no sticker-style test records in the dataset")

    methods = {}
    for name in args.methods.split(","):
        name = name.strip()
        if name == "center":
            methods[name] = evalbench.center_method
        elif name == "random":
            methods[name] = evalbench.make_random_method(config.seed)
        elif name == "model":
            if not args.weights:
                raise InputError("the model method needs --weights")
            params = nncore.load_weights(Path(args.weights) / PLACEMENT_WEIGHTS)
            methods[name] = evalbench.make_model_method(params, scene_set,
                                                        records, config)
        else:
            raise InputError(f"unknown method {name!r} "
                             "(expected model, center or random)")

    report = evalbench.evaluate(methods, scene_set, records, config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    evalbench.write_report(report, out_path)
    _echo_config(config, out_path.parent)
    print(evalbench.format_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="placekit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a pipeline stage")
    p.add_argument("data_dir")
    p.add_argument("--stage", choices=["classifier", "placement"],
                   required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--resume", default=None,
                   help="weight file to continue training from")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compose", help="classify a sticker and composite it")
    p.add_argument("host")
    p.add_argument("sticker")
    p.add_argument("--weights", required=True)
    p.add_argument("--mask", default=None,
                   help="filter mask (1 = keep host) for filter style")
    p.add_argument("--host-mask", default=None,
                   help="host foreground mask for the placement net")
    p.add_argument("--force-style", choices=["sticker", "filter"],
                   default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("eval", help="score placement methods on the test split")
    p.add_argument("data_dir")
    p.add_argument("--weights", default=None)
    p.add_argument("--methods", default="model,center,random")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
