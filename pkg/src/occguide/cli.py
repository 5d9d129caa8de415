"""Command-line entry point: ``occguide <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import io as oio
from .config import Config, load_config, load_section
from .detection import OracleDetector, OracleDetectorParams
from .evaluation import evaluate, dataset_stats
from .exceptions import DetectorError, FormatError, InvalidArgumentError
from .netcheck import run_checks
from .occlusion_map import TruthStyle, generate_truth_map
from .region_select import SelectParams, select_regions
from .scenes import SceneGenParams, synth_scene
from .tpp import run_tpp

log = logging.getLogger("occguide")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return w, h


def _seed(args, cfg: Config) -> int:
    for value in (getattr(args, "sub_seed", None), args.seed):
        if value is not None:
            return value
    return cfg.seed


def cmd_gen_maps(args, cfg: Config) -> int:
    manifest = oio.load_annotations(
        args.annotations, args.format, image_size=args.image_size, occlusion_table=cfg.occlusion_table
    )
    overrides = {
        k: v
        for k, v in (
            ("style", TruthStyle.parse(args.style) if args.style else None),
            ("stride", args.stride),
            ("sigma", args.sigma),
            ("radius", args.radius),
            ("base_value", args.base_value),
        )
        if v is not None
    }
    params = dataclasses.replace(cfg.map, **overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for img in manifest:
        if img.width is None or img.height is None:
            raise FormatError(f"image {img.id!r} has no size; pass --image-size")
        if "/" in img.id or "\\" in img.id or img.id in ("", ".", ".."):
            raise FormatError(f"image id {img.id!r} cannot be used as a file name")
        occ = generate_truth_map(
            img.annotations, int(round(img.width)), int(round(img.height)), params=params
        )
        oio.save_map(out_dir / f"{img.id}.omap", occ)
    print(f"wrote {len(manifest)} maps to {out_dir}")
    return EXIT_OK


def cmd_select_regions(args, cfg: Config) -> int:
    occ = oio.load_map(args.map)
    params = load_section(args.params, SelectParams, "select") if args.params else cfg.select
    img_w, img_h = args.image_size if args.image_size else (occ.img_w, occ.img_h)
    regions = select_regions(occ, img_w, img_h, params, seed=_seed(args, cfg))
    oio.save_regions(args.out, regions)
    print(f"wrote {len(regions)} regions to {args.out}")
    return EXIT_OK


def cmd_run_tpp(args, cfg: Config) -> int:
    scenes = oio.load_scenes(args.scenes)
    oracle = load_section(args.oracle_params, OracleDetectorParams, "oracle") if args.oracle_params else cfg.oracle
    if args.map_noise is not None:
        oracle = dataclasses.replace(oracle, map_noise=args.map_noise)
    select = load_section(args.select_params, SelectParams, "select") if args.select_params else cfg.select
    n_sub = cfg.tpp.n_sub if args.n_sub is None else args.n_sub
    fine = args.fine_size or cfg.tpp.fine_size
    coarse = args.coarse_size or cfg.tpp.coarse_size
    detector = OracleDetector.from_params(oracle)
    seed = _seed(args, cfg)
    results = []
    for scene in scenes:
        occ = None
        if args.maps_dir:
            occ = oio.load_map(Path(args.maps_dir) / f"{scene.image_id}.omap")
        results.append(
            run_tpp(scene, detector, select, cfg.nms, n_sub=n_sub, fine_size=fine, seed=seed,
                    coarse_size=coarse, occlusion_map=occ, n_jobs=args.n_jobs)
        )
    oio.save_detections(args.out, results, [s.image_id for s in scenes])
    print(f"wrote detections for {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    params = load_section(args.gen, SceneGenParams, "synth") if args.gen else cfg.synth
    if args.count < 0:
        raise InvalidArgumentError("--count must be >= 0")
    seed = _seed(args, cfg)
    scenes = [
        synth_scene(params, seed=np.random.SeedSequence([seed, i]), image_id=str(i))
        for i in range(args.count)
    ]
    oio.save_scenes(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    gt = oio.load_annotations(args.gt, args.format, occlusion_table=cfg.occlusion_table)
    det_ids, det_lists = oio.load_detections(args.dets)
    by_id = dict(zip(det_ids, det_lists))
    known = {img.id for img in gt}
    stray = sorted(set(det_ids) - known)
    if stray:
        raise FormatError(f"{args.dets}: detections for unknown image ids {stray[:5]}")
    dets = [by_id.get(img.id, []) for img in gt]
    settings = cfg.eval
    if args.max_dets is not None:
        settings = dataclasses.replace(settings, max_dets=args.max_dets, occ_max_dets=args.max_dets)
    report = evaluate(dets, gt.annotations, settings, per_class=args.per_class)
    oio.save_report(args.report, report)
    if args.csv:
        oio.save_report_csv(args.csv, report)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK


def cmd_stats(args, cfg: Config) -> int:
    gt = oio.load_annotations(args.gt, args.format, image_size=args.image_size, occlusion_table=cfg.occlusion_table)
    iou_thr = cfg.eval.stats_iou if args.iou is None else args.iou
    objects, overlaps = dataset_stats(gt.annotations, iou_thr)
    print(json.dumps({"images": len(gt), "objects_per_image": objects, "overlaps_per_image": overlaps, "iou": iou_thr}))
    return EXIT_OK


def cmd_netcheck(args, cfg: Config) -> int:
    return EXIT_OK if run_checks() else EXIT_FAILURE


def cmd_config(args, cfg: Config) -> int:
    if args.action == "print-defaults":
        sys.stdout.write(Config().to_toml())
    else:
        sys.stdout.write(cfg.to_toml())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occguide", description="Occlusion-guided detection toolkit")
    p.add_argument("--config", help="TOML config file (flags override it)")
    p.add_argument("--seed", type=int, default=None, help="global random seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", dest="sub_seed", type=int, default=None)
        return sp

    g = sub.add_parser("gen-maps", help="generate occlusion truth maps (OMAP1)")
    g.add_argument("--annotations", required=True)
    g.add_argument("--format", choices=["native_json", "visdrone_txt"], default="native_json")
    g.add_argument("--image-size", type=_size, help="WxH, for formats without image sizes")
    g.add_argument("--style", choices=["highlighted", "occlusion_only"])
    g.add_argument("--stride", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--radius", type=int)
    g.add_argument("--base-value", type=float)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_maps)

    s = seeded(sub.add_parser("select-regions", help="pick occlusion sub-regions from a map"))
    s.add_argument("--map", required=True)
    s.add_argument("--params", help="TOML with SelectParams keys")
    s.add_argument("--image-size", type=_size, help="source image WxH (defaults to the map's)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select_regions)

    r = seeded(sub.add_parser("run-tpp", help="two-phase detection with the oracle detector"))
    r.add_argument("--scenes", required=True)
    r.add_argument("--oracle-params", help="TOML with OracleDetectorParams keys")
    r.add_argument("--select-params", help="TOML with SelectParams keys")
    r.add_argument("--n-sub", type=int)
    r.add_argument("--maps-dir", help="use <id>.omap from here instead of the detector's map")
    r.add_argument("--map-noise", type=float, help="multiplicative noise on the oracle map")
    r.add_argument("--fine-size", type=_size)
    r.add_argument("--coarse-size", type=_size)
    r.add_argument("--n-jobs", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run_tpp)

    y = seeded(sub.add_parser("synth", help="generate synthetic scenes"))
    y.add_argument("--gen", help="TOML with SceneGenParams keys")
    y.add_argument("--count", type=int, default=100)
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="evaluate detections against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--dets", required=True)
    e.add_argument("--format", choices=["native_json", "visdrone_txt"], default="native_json")
    e.add_argument("--report", required=True)
    e.add_argument("--csv")
    e.add_argument("--max-dets", type=int)
    e.add_argument("--per-class", action="store_true")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("stats", help="objects and overlaps per image")
    t.add_argument("--gt", required=True)
    t.add_argument("--format", choices=["native_json", "visdrone_txt"], default="native_json")
    t.add_argument("--image-size", type=_size)
    t.add_argument("--iou", type=float)
    t.set_defaults(func=cmd_stats)

    n = sub.add_parser("netcheck", help="run the netmath gradient/shape checks")
    n.set_defaults(func=cmd_netcheck)

    c = sub.add_parser("config", help="print configuration")
    c.add_argument("action", choices=["print-defaults", "show"])
    c.set_defaults(func=cmd_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        start = time.perf_counter()
        code = args.func(args, cfg)
        log.debug("%s finished in %.2fs", args.command, time.perf_counter() - start)
        return code
    except (InvalidArgumentError, FormatError) as exc:
        print(f"occguide: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DetectorError as exc:
        print(f"occguide: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
