"""Command-line interface: ``ovmot {track,eval,simulate,gradcheck,hallucinate}``.

Exit codes: 0 success, 2 input/parse error, 3 semantic error.
"""
import argparse
from concurrent.futures import ThreadPoolExecutor
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import fileio
from .association import AssociationConfig, track_video
from .core import BACKGROUND_ID
from .hallucination import HallucConfig, build_positive_mask, geometric_transform, masked_denoise, toy_denoiser
from .losses import gradcheck_report
from .metrics import TetaConfig, teta, track_map
from .simulate import ScenarioConfig, generate_scenario
from .vocab import ClassifierConfig

log = logging.getLogger("ovmot")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SEMANTIC = 3


def _threads():
    raw = os.environ.get("OVTRACK_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_videos(fn, items):
    n = _threads()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------

def cmd_track(args):
    records = fileio.read_detections(args.detections)
    vocab = fileio.read_vocab(args.vocab) if args.vocab else None
    if vocab is not None:
        for r in records:
            for d in r.detections:
                if d.text_embed is not None and d.text_embed.shape[0] != vocab.dim:
                    raise fileio.SemanticError(
                        f"text_embed dimension {d.text_embed.shape[0]} (video {r.video}, frame {r.frame}) "
                        f"does not match vocabulary dimension {vocab.dim}"
                    )
    cfg = AssociationConfig(
        beta=args.beta,
        beta_obj=args.beta_obj,
        gamma=args.gamma,
        memory_frames=args.memory,
        cosine_gate=args.cosine_gate,
        nms_iou=args.nms,
        class_agnostic_nms=args.nms_mode == "agnostic",
        match_temperature=args.match_temperature,
    )
    cls_cfg = ClassifierConfig(args.temperature)
    videos = list(fileio.group_by_video(records).items())
    results = _map_videos(lambda item: track_video(item[1], vocab, cls_cfg, cfg, video=item[0]), videos)
    tracks = [t for per_video in results for t in per_video]
    fileio.write_tracks(args.out, fileio.track_rows(tracks))
    log.info("wrote %d tracks over %d videos to %s", len(tracks), len(videos), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _check_categories(rows, annos, cats, vocab):
    gt_ids = {a.class_id for a in annos}
    cat_ids = {cid for cid, _ in cats}
    if cats and gt_ids - cat_ids:
        raise fileio.SemanticError(f"unknown ground-truth category ids: {sorted(gt_ids - cat_ids)}")
    known = set(cat_ids)
    if vocab is not None:
        vocab_ids = {c.class_id for c in vocab.classes}
        if gt_ids - vocab_ids:
            raise fileio.SemanticError(f"ground-truth category ids not in the vocabulary: {sorted(gt_ids - vocab_ids)}")
        known |= vocab_ids
    if known:
        bad_pred = sorted({r.class_id for r in rows} - known - {BACKGROUND_ID})
        if bad_pred:
            raise fileio.SemanticError(f"unknown predicted category ids: {bad_pred}")


def eval_report(rows, annos, vocab, metric="both", split=None, teta_cfg=TetaConfig(), thresholds=(0.5, 0.75)):
    splits = [split] if split else (["all", "base", "novel"] if vocab is not None else ["all"])
    if vocab is None and any(s != "all" for s in splits):
        raise fileio.SemanticError("split evaluation needs --vocab")
    report = {"config": {"loc_iou_thr": teta_cfg.loc_iou_thr, "assoc_counts": teta_cfg.assoc_counts,
                         "thresholds": list(thresholds)}}
    if metric in ("teta", "both"):
        scores = teta(rows, annos, vocab, teta_cfg)
        report["teta"] = {s: scores[s].as_dict() for s in splits}
    if metric in ("trackmap", "both"):
        report["trackmap"] = {s: track_map(rows, annos, vocab, thresholds, s).as_dict() for s in splits}
    return report


def _summary(report):
    lines = []
    if "teta" in report:
        lines.append(f"{'split':<6} {'TETA':>7} {'LocA':>7} {'AssocA':>7} {'ClsA':>7}")
        for s, v in report["teta"].items():
            if v["empty"]:
                lines.append(f"{s:<6} {'empty':>7}")
            else:
                lines.append(f"{s:<6} {v['TETA']:7.4f} {v['LocA']:7.4f} {v['AssocA']:7.4f} {v['ClsA']:7.4f}")
    if "trackmap" in report:
        lines.append(f"{'split':<6} {'mAP':>7} {'mAP50':>7} {'mAP75':>7}")
        for s, v in report["trackmap"].items():
            if v["empty"]:
                lines.append(f"{s:<6} {'empty':>7}")
                continue
            fmt = lambda x: f"{x:7.4f}" if x is not None else f"{'-':>7}"  # noqa: E731
            lines.append(f"{s:<6} {fmt(v['mAP'])} {fmt(v['mAP50'])} {fmt(v['mAP75'])}")
    return "\n".join(lines)


def cmd_eval(args):
    rows = fileio.read_tracks(args.tracks)
    annos, cats = fileio.read_ground_truth(args.gt)
    vocab = fileio.read_vocab(args.vocab) if args.vocab else None
    _check_categories(rows, annos, cats, vocab)
    cfg = TetaConfig(args.loc_iou, args.assoc_counts)
    try:
        report = eval_report(rows, annos, vocab, args.metric, args.split, cfg, tuple(args.thresholds))
    except ValueError as e:
        if isinstance(e, fileio.SemanticError):
            raise
        raise fileio.SemanticError(str(e)) from None
    if args.report:
        _write_json(args.report, report)
    print(_summary(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _occlusion(text):
    try:
        ident, start, length = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("occlusion windows are IDENTITY:START:LENGTH") from None
    return ident, start, length


def cmd_simulate(args):
    try:
        cfg = ScenarioConfig(
            videos=args.videos,
            frames_per_video=args.frames,
            identities_per_video=args.identities,
            embed_dim=args.embed_dim,
            text_dim=args.text_dim,
            classes=args.classes,
            embed_noise=args.embed_noise,
            text_noise=args.text_noise,
            fn_rate=args.fn_rate,
            fp_rate=args.fp_rate,
            box_jitter=args.jitter,
            occlusion_windows=tuple(args.occlude),
            seed=args.seed,
        )
        scenario = generate_scenario(cfg)
    except ValueError as e:
        raise fileio.InputError(f"invalid scenario config: {e}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_detections(out / "detections.jsonl", fileio.records_from_scenario(scenario))
    fileio.write_ground_truth(out / "gt.json", scenario.ground_truth, fileio.categories_from_vocab(scenario.vocab))
    fileio.write_vocab(out / "vocab.json", scenario.vocab)
    log.info("wrote scenario with %d annotations to %s", len(scenario.ground_truth), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args):
    if args.instances < 1 or not args.step > 0 or not args.temperature > 0:
        raise fileio.InputError("instances must be >= 1, step and temperature positive")
    report = gradcheck_report(args.loss, args.instances, args.seed, args.step, args.temperature)
    report["tolerance"] = args.tolerance
    report["passed"] = bool(report["max_rel_err"] < args.tolerance)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _write_json(args.out, report)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# hallucinate
# ---------------------------------------------------------------------------

def _load_boxes(path):
    obj = fileio._load_json(path)
    items = obj.get("boxes", obj) if isinstance(obj, dict) else obj
    if not isinstance(items, list):
        raise fileio.InputError("boxes file must hold a list of [x, y, w, h]", path=path)
    return [fileio._box(b, {"path": path}) for b in items]


def cmd_hallucinate(args):
    try:
        cfg = HallucConfig(args.delta0, args.steps, args.eta, args.min_area, args.seed, args.deterministic)
    except ValueError as e:
        raise fileio.InputError(str(e)) from None
    grid = fileio.load_grid(args.input)
    h, w = grid.shape[:2]
    if args.mask:
        mask = fileio.load_grid(args.mask)
        if args.mask.lower().endswith(".png"):
            mask = (mask > -1.0).astype(np.float64)
        mask = (mask[:, :, 0] > 0).astype(np.float64)
        if mask.shape != (h, w):
            raise fileio.SemanticError(f"mask is {mask.shape}, grid is {(h, w)}")
    elif args.boxes:
        mask = build_positive_mask(_load_boxes(args.boxes), h, w, cfg.min_area)
    else:
        mask = np.zeros((h, w))
    if args.affine:
        params = np.array(args.affine, dtype=np.float64).reshape(2, 3)
        try:
            grid, mask = geometric_transform(grid, mask, params)
        except ValueError as e:
            raise fileio.InputError(str(e)) from None
    target = fileio.load_grid(args.target) if args.target else grid
    if target.shape != grid.shape:
        raise fileio.SemanticError("toy denoiser target must match the grid shape")
    rng = np.random.default_rng(cfg.seed)
    out = masked_denoise(grid, mask, toy_denoiser(target), cfg=cfg, rng=rng, cond=args.caption)
    fileio.save_grid(args.output, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ovmot", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="associate detections into tracks")
    t.add_argument("--detections", required=True)
    t.add_argument("--vocab")
    t.add_argument("--out", required=True)
    t.add_argument("--beta", type=float, default=0.5, help="bi-softmax match threshold (default 0.5)")
    t.add_argument("--gamma", type=float, default=1e-4, help="new-track score threshold (default 1e-4)")
    t.add_argument(
        "--beta-obj", type=float, default=0.3,
        help="detection score needed to continue a track; not given by the method, default 0.3 is our choice",
    )
    t.add_argument("--memory", type=int, default=10, help="frames a lost track stays matchable (default 10)")
    t.add_argument(
        "--cosine-gate", type=float, default=0.3,
        help="cosine similarity a match must also exceed; default 0.3 is our choice",
    )
    t.add_argument(
        "--match-temperature", type=float, default=0.07,
        help="temperature on embedding dot products in the bi-softmax; default 0.07 is our choice",
    )
    t.add_argument("--temperature", type=float, default=0.07, help="classification softmax temperature")
    t.add_argument("--nms", type=float, default=0.5, help="duplicate-removal IoU threshold (default 0.5)")
    t.add_argument("--nms-mode", choices=["agnostic", "class"], default="agnostic")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score tracks with TETA and/or Track-mAP")
    e.add_argument("--tracks", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--vocab")
    e.add_argument("--metric", choices=["teta", "trackmap", "both"], default="both")
    e.add_argument("--split", choices=["all", "base", "novel"], default=None,
                   help="report one split only (default: all three)")
    e.add_argument("--report")
    e.add_argument("--loc-iou", type=float, default=0.5,
                   help="localisation IoU threshold; default 0.5 is our choice")
    e.add_argument("--assoc-counts", choices=["hota_style", "tpl_only"], default="hota_style")
    e.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 0.75])
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="write a synthetic scenario")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--videos", type=int, default=1)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--identities", type=int, default=8)
    s.add_argument("--embed-dim", type=int, default=32)
    s.add_argument("--text-dim", type=int, default=16)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--embed-noise", type=float, default=0.0)
    s.add_argument("--text-noise", type=float, default=0.05)
    s.add_argument("--fn-rate", type=float, default=0.0)
    s.add_argument("--fp-rate", type=float, default=0.0)
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--occlude", type=_occlusion, action="append", default=[],
                   metavar="ID:START:LEN")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    g.add_argument("--loss", choices=["track", "aux", "both"], default="both")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=100)
    g.add_argument("--step", type=float, default=1e-4)
    g.add_argument("--temperature", type=float, default=0.07)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    h = sub.add_parser("hallucinate", help="masked re-noise/denoise of a latent grid (toy denoiser)")
    h.add_argument("--input", required=True, help="OVTG raw grid or 8-bit PNG")
    h.add_argument("--output", required=True)
    h.add_argument("--mask", help="foreground mask grid (nonzero = keep)")
    h.add_argument("--boxes", help="JSON list of [x, y, w, h] foreground boxes")
    h.add_argument("--target", help="toy-denoiser target grid (default: the input)")
    h.add_argument("--caption", help="conditioning token passed to the denoiser")
    h.add_argument("--denoiser", choices=["toy"], default="toy")
    h.add_argument("--delta0", type=float, default=0.75)
    h.add_argument("--steps", type=int, default=50)
    h.add_argument("--eta", type=float, default=0.02)
    h.add_argument("--min-area", type=float, default=64.0**2)
    h.add_argument("--affine", type=float, nargs=6, metavar="A")
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--deterministic", action="store_true")
    h.set_defaults(func=cmd_hallucinate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except fileio.SemanticError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SEMANTIC
    except fileio.InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
