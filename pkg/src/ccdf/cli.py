"""Command-line entry points: synth, train, infer, evaluate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint, dataio, metrics, trainer_pipeline
from .dataio import ChangeRegion, SyntheticSpec
from .preprocess import standardize
from .trainer_pipeline import TrainConfig


def _read_synth_spec(path: Path) -> SyntheticSpec:
    raw = json.loads(path.read_text())
    regions = tuple(ChangeRegion(**r) for r in raw.pop("change_regions", []))
    return SyntheticSpec(size=tuple(raw.pop("size")), change_regions=regions, **raw)


def _cmd_synth(args) -> int:
    spec = _read_synth_spec(Path(args.spec))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t1, t2, ref = dataio.make_synthetic_pair(spec)
    dataio.save_raster(t1, out / "t1.tif")
    dataio.save_raster(t2, out / "t2.tif")
    dataio.save_reference_map(ref, out / "ref.png", encoding="color")
    print(f"wrote t1.tif, t2.tif, ref.png to {out}")
    return 0


def _load_config(path: str | None) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def _standardized(path: str, cfg: TrainConfig) -> dataio.ImageTensor:
    eps = 1e-8 if cfg.std_epsilon else None
    return standardize(dataio.load_raster(path), per_band=cfg.per_band_standardize, epsilon=eps)


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image1 = dataio.load_raster(args.t1)
    image2 = dataio.load_raster(args.t2)
    pairs = trainer_pipeline.prepare_patch_pairs(image1, image2, cfg)

    g12_path = out / "generator_t1_to_t2.pt"
    g21_path = out / "generator_t2_to_t1.pt"
    seg_path = out / "segmenter.pt"
    stages = [1, 2, 3] if args.stage == "all" else [int(args.stage)]
    report = trainer_pipeline.TrainReport(config=cfg.to_dict())

    g12 = checkpoint.load_checkpoint(g12_path) if g12_path.exists() and 1 not in stages else None
    net = checkpoint.load_checkpoint(seg_path) if seg_path.exists() and 2 not in stages else None
    for stage in stages:
        if stage == 1:
            g12, g21, rep = trainer_pipeline.run_stage1(pairs, cfg)
            checkpoint.save_checkpoint(g21, g21_path)
        elif stage == 2:
            if g12 is None:
                raise SystemExit(f"stage 2 needs {g12_path}; run stage 1 first")
            net, rep = trainer_pipeline.run_stage2(pairs, g12, cfg)
        else:
            if g12 is None or net is None:
                raise SystemExit("stage 3 needs generator and segmenter checkpoints; run stages 1 and 2 first")
            g12, net, rep = trainer_pipeline.run_stage3(pairs, g12, net, cfg)
        report = report.merge(rep)
        checkpoint.save_checkpoint(g12, g12_path)
        if net is not None:
            checkpoint.save_checkpoint(net, seg_path)

    report.checkpoints = {p.stem: str(p) for p in (g12_path, g21_path, seg_path) if p.exists()}
    (out / "train_report.json").write_text(report.to_json())
    print(f"trained stages {stages}; report at {out / 'train_report.json'}")
    return 0


def _cmd_infer(args) -> int:
    cfg = _load_config(args.config)
    net = checkpoint.load_checkpoint(args.checkpoint)
    image1 = _standardized(args.t1, cfg)
    image2 = _standardized(args.t2, cfg)
    probability, binary = trainer_pipeline.infer_full_image(image1, image2, net, cfg)
    out = Path(args.out)
    dataio.save_change_map(probability, out)
    binary_path = out.with_name(out.stem + "_binary.png")
    dataio.save_change_map(binary.astype(float), binary_path)
    print(f"wrote {out} and {binary_path}")
    return 0


def _cmd_evaluate(args) -> int:
    pred = dataio.load_change_map(args.pred)
    binary = (pred >= args.threshold).astype(int)
    ref = dataio.load_reference_map(args.ref, encoding=args.ref_encoding)
    report = metrics.evaluation_report(binary, ref)
    Path(args.report).write_text(json.dumps(report, indent=2))
    scores = " ".join(f"{k}={v:.2f}" for k, v in report["metrics_percent"].items())
    print(scores)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccdf", description="Unsupervised bi-temporal change detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bi-temporal pair")
    p.add_argument("--spec", required=True, help="JSON synthetic-pair recipe")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train the detector on a bi-temporal pair")
    p.add_argument("--t1", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--config", help="JSON or TOML training config")
    p.add_argument("--out", required=True, help="checkpoint/report directory")
    p.add_argument("--stage", choices=["1", "2", "3", "all"], default="all")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="produce a change map from a checkpoint")
    p.add_argument("--t1", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="JSON or TOML training config")
    p.add_argument("--out", required=True, help="output change map (.tif/.png/.raw)")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score a change map against a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-encoding", choices=["color", "integer"], default="color")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", required=True, help="output JSON report")
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
