"""Command-line entry points.

    nerdd accumulate --events f.nev --fps 30 --out dir/
    nerdd stats      --events f.nev | --manifest m.json [--ann dir]
    nerdd annotate   --events f.nev --fps 30 --out ann.json
    nerdd interpolate --ann ann.json
    nerdd sync       --manifest m.json [--video ID] [--estimate-offset]
    nerdd split      --manifest m.json --seed 0 --ratio 0.8 [--out split.json]
    nerdd eval       --dets dets.json --ann dir [--split test --split-file f]
    nerdd grad-check [--op NAME] [--seed N]
    nerdd train-toy  --strategy pool --cutoff encoder --queries 5 --steps 500
    nerdd detect     --manifest m.json --weights w.nwt --strategy pool --out d.json
    nerdd serve      --manifest m.json --port 8080 [--static dir]
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import annotate as ann_mod
from . import dataset as ds
from . import evaluation as ev_mod
from . import events as ev
from .fusion import GRAD_CHECK_OPS, FusionConfig, ParamStore, grad_check
from .fusion import forward_detect_with_cache, init_params
from .registration import (
    RegistrationParams,
    UndefinedOffsetError,
    estimate_temporal_offset,
)


def _read_stream(args) -> ev.EventStream:
    if args.events.endswith(".csv"):
        if args.width is None or args.height is None:
            raise SystemExit("CSV input needs --width and --height")
        return ev.read_csv(args.events, args.width, args.height)
    with open(args.events, "rb") as fh:
        return ev.decode_event_stream(fh.read())


def _fps_arg(value: str):
    return int(value) if value.isdigit() else value  # keep "29.97" exact


def cmd_accumulate(args) -> int:
    from PIL import Image

    stream = _read_stream(args)
    cfg = ev.AccumulationConfig(_fps_arg(args.fps))
    duration = args.duration_us
    if duration is None:
        duration = int(stream.t[-1]) + 1 if len(stream) else 0
    result = ev.accumulate(stream, cfg, duration)
    os.makedirs(args.out, exist_ok=True)
    for frame in result.frames:
        Image.fromarray(ev.render_frame(frame)).save(
            os.path.join(args.out, f"frame_{frame.index:06d}.png"))
    np.savez_compressed(
        os.path.join(args.out, "counts.npz"),
        on=np.stack([f.on_counts for f in result.frames]) if result.frames else np.empty((0,)),
        off=np.stack([f.off_counts for f in result.frames]) if result.frames else np.empty((0,)),
    )
    report = {
        "frames": len(result.frames),
        "interval_us": cfg.interval_us,
        "events_counted": result.total_counted(),
        "events_dropped": result.dropped,
    }
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return 0


def _load_annotation_dir(path):
    out = []
    for name in sorted(os.listdir(path)):
        if not name.endswith(".json") or name.endswith(".base.json"):
            continue
        try:
            out.append(ds.load_annotations(os.path.join(path, name)))
        except (ds.SchemaError, json.JSONDecodeError):
            continue  # not an annotation file
    return out


def cmd_stats(args) -> int:
    if args.events:
        stats = ev.stream_stats(_read_stream(args))
        print(json.dumps({
            "events": stats.count,
            "on": stats.on_count,
            "off": stats.off_count,
            "duration_us": stats.duration_us,
            "mean_rate_hz": stats.mean_rate_hz,
        }, indent=2))
        return 0
    if not args.manifest:
        raise SystemExit("stats needs --events or --manifest")
    manifests = ds.load_manifest(args.manifest, check_paths=False)
    if args.ann:
        annotations = _load_annotation_dir(args.ann)
    else:
        annotations = [ds.load_annotations(m.annotations)
                       for m in manifests if m.annotations and os.path.exists(m.annotations)]
    stats = ds.dataset_stats(manifests, annotations)
    pct = (100.0 * stats.frames_with_drone / stats.frames_total) if stats.frames_total else 0.0
    print(f"videos:              {stats.video_count}")
    print(f"frames/modality:     {stats.frames_total}")
    print(f"frames with drone:   {stats.frames_with_drone} ({pct:.1f}%)")
    print(f"frames without:      {stats.frames_without_drone}")
    print(f"total length:        {stats.total_length_s / 3600.0:.2f} h")
    print(f"fps:                 {', '.join(str(f) for f in stats.fps)}")
    print(f"resolutions:         {', '.join(f'{w}x{h}' for w, h in stats.resolutions)}")
    print(json.dumps(stats.to_json()))
    return 0


def cmd_annotate(args) -> int:
    stream = _read_stream(args)
    cfg = ev.AccumulationConfig(_fps_arg(args.fps))
    duration = int(stream.t[-1]) + 1 if len(stream) else 0
    result = ev.accumulate(stream, cfg, duration)
    params = ann_mod.BlobParams(
        count_threshold=args.threshold,
        min_area=args.min_area,
        max_area=args.max_area,
        link_max_dist=args.link_dist,
        min_track_len=args.min_track_len,
    )
    per_frame = [ann_mod.detect_blobs(f, params) for f in result.frames]
    tracks = ann_mod.link_tracks(per_frame, params, optimal=args.optimal_linking)
    boxes = [b for t in tracks for b in t.keyframes]
    out = ds.VideoAnnotations(
        video_id=args.video_id or os.path.splitext(os.path.basename(args.events))[0],
        fps=float(ev.AccumulationConfig(_fps_arg(args.fps)).fps),
        width=stream.width,
        height=stream.height,
        boxes=tuple(sorted(boxes, key=lambda b: (b.frame, b.track_id))),
        frame_count=len(result.frames),
    )
    ds.save_annotations(out, args.out)
    print(f"{len(tracks)} tracks, {len(boxes)} boxes -> {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    ann = ds.load_annotations(args.ann)
    from .service import apply_interpolation

    boxes = list(ann.boxes)
    for tid in sorted({b.track_id for b in boxes}):
        boxes = apply_interpolation(boxes, tid)
    ds.save_annotations(ann.with_boxes(boxes), args.ann)
    print(f"{len(ann.boxes)} -> {len(boxes)} boxes")
    return 0


def cmd_sync(args) -> int:
    from .pipeline import RecordingPipeline

    manifests = ds.load_manifest(args.manifest)
    updated = []
    for m in manifests:
        if args.video and m.video_id != args.video:
            updated.append(m)
            continue
        pipe = RecordingPipeline(m)
        n = min(pipe.n_frames, len(pipe.rgb_files))
        if n < 8:
            print(f"{m.video_id}: fewer than 8 frames, skipped")
            updated.append(m)
            continue
        event_activity = np.array(
            [float(pipe.count_frame(i).total()) for i in range(n)])
        prev = pipe.rgb_registered(0).astype(np.float64)
        rgb_activity = [0.0]
        for i in range(1, n):
            cur = pipe.rgb_registered(i).astype(np.float64)
            rgb_activity.append(float(np.abs(cur - prev).mean()))
            prev = cur
        try:
            est = estimate_temporal_offset(event_activity, np.array(rgb_activity), m.fps)
        except UndefinedOffsetError as exc:
            print(f"{m.video_id}: offset undefined ({exc}), skipped")
            updated.append(m)
            continue
        # lag k: rgb delayed by k frames => event clock minus rgb clock = -k*dt
        t_offset = -est.offset_us
        print(f"{m.video_id}: lag {est.lag_frames} frames, score {est.score:.3f}, "
              f"t_offset {t_offset} us (current {m.registration.t_offset_us})")
        if args.estimate_offset:
            from dataclasses import replace

            reg = RegistrationParams.from_json(
                {**m.registration.to_json(), "t_offset_us": t_offset})
            m = replace(m, registration=reg)
        updated.append(m)
    if args.estimate_offset:
        ds.save_manifest(updated, args.manifest)
        print(f"manifest updated: {args.manifest}")
    return 0


def cmd_split(args) -> int:
    manifests = ds.load_manifest(args.manifest, check_paths=False)
    spec = ev_mod.video_split([m.video_id for m in manifests], args.ratio, args.seed)
    print(f"train {len(spec.train)} / test {len(spec.test)}")
    if args.out:
        spec.save(args.out)
        print(f"-> {args.out}")
    else:
        print(json.dumps(spec.to_json(), indent=2))
    return 0


def cmd_eval(args) -> int:
    with open(args.dets) as fh:
        raw = json.load(fh)
    annotations = _load_annotation_dir(args.ann)
    keep = None
    if args.split != "all":
        if not args.split_file:
            raise SystemExit("--split train|test needs --split-file from `nerdd split`")
        spec = ev_mod.SplitSpec.load(args.split_file)
        keep = set(spec.train if args.split == "train" else spec.test)
    gts = {}
    for ann in annotations:
        if keep is not None and ann.video_id not in keep:
            continue
        for b in ann.boxes:
            gts.setdefault((ann.video_id, b.frame), []).append((b.x, b.y, b.w, b.h))
    dets = [
        ev_mod.Detection((d["video_id"], d["frame"]), float(d["score"]),
                         (d["x"], d["y"], d["w"], d["h"]))
        for d in raw
        if keep is None or d["video_id"] in keep
    ]
    report = ev_mod.coco_map(dets, gts)
    print(f"{'IoU':>6s} {'AP':>8s} {'TP':>6s} {'FP':>6s} {'FN':>6s}")
    for thr in ev_mod.IOU_THRESHOLDS:
        tp, fp, fn = report.counts[thr]
        print(f"{thr:6.2f} {report.per_threshold[thr]:8.4f} {tp:6d} {fp:6d} {fn:6d}")
    print(f"AP50={report.ap50:.4f} AP75={report.ap75:.4f} AP50:95={report.ap50_95:.4f}")
    print(json.dumps(report.to_json()))
    return 0


def cmd_grad_check(args) -> int:
    ops = [args.op] if args.op else list(GRAD_CHECK_OPS)
    worst_ok = True
    for op in ops:
        err = grad_check(op, seed=args.seed)
        tol = 1e-3 if op == "end_to_end" else 1e-4
        ok = err < tol
        worst_ok &= ok
        print(f"{op:24s} max rel err {err:.3e}  (tol {tol:.0e})  {'OK' if ok else 'FAIL'}")
    return 0 if worst_ok else 1


def cmd_train_toy(args) -> int:
    from .fusion.toy import train_toy

    cfg = FusionConfig(strategy=args.strategy, cutoff=args.cutoff,
                       n_queries=args.queries, d=args.d, patch=args.patch)
    res = train_toy(cfg, steps=args.steps, lr=args.lr, seed=args.seed,
                    log_every=max(1, args.steps // 10))
    drop = (1.0 - res.losses[-1] / res.losses[0]) * 100.0 if res.losses[0] else 0.0
    print(f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f} ({drop:.1f}% reduction)")
    print(f"train-set AP50={res.ap50:.3f} AP75={res.report.ap75:.3f} "
          f"AP50:95={res.report.ap50_95:.3f}")
    if args.save_weights:
        res.store.save(args.save_weights)
        print(f"weights -> {args.save_weights}")
    return 0


def cmd_detect(args) -> int:
    from .pipeline import RecordingPipeline

    cfg = FusionConfig(strategy=args.strategy, cutoff=args.cutoff,
                       n_queries=args.queries, d=args.d, patch=args.patch)
    store = ParamStore.load(args.weights) if args.weights else init_params(cfg, args.seed)
    manifests = ds.load_manifest(args.manifest)
    out = []
    for m in manifests:
        if args.video and m.video_id != args.video:
            continue
        pipe = RecordingPipeline(m)
        n = pipe.n_frames if args.max_frames is None else min(pipe.n_frames, args.max_frames)
        for i in range(n):
            det, _ = forward_detect_with_cache(pipe.ev_input(i), pipe.rgb_input(i), cfg, store)
            for q in range(det.n_queries):
                score = float(det.probs[q, 0])
                if score < args.min_score:
                    continue
                cx, cy, w, h = det.boxes[q]
                out.append({
                    "video_id": m.video_id,
                    "frame": i,
                    "score": score,
                    "x": (cx - w / 2) * m.width,
                    "y": (cy - h / 2) * m.height,
                    "w": w * m.width,
                    "h": h * m.height,
                })
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    print(f"{len(out)} detections -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.manifest, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nerdd", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def add_events_args(sp):
        sp.add_argument("--events", required=True, help="NEV1 or CSV event file")
        sp.add_argument("--width", type=int, help="sensor width (CSV input)")
        sp.add_argument("--height", type=int, help="sensor height (CSV input)")

    sp = sub.add_parser("accumulate", help="events -> pseudo-frame renders + counts")
    add_events_args(sp)
    sp.add_argument("--fps", default="30")
    sp.add_argument("--duration-us", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_accumulate)

    sp = sub.add_parser("stats", help="stream stats or dataset stats")
    sp.add_argument("--events")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--manifest")
    sp.add_argument("--ann", help="annotation directory (overrides manifest paths)")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("annotate", help="blob-detect and link tracks into an annotation file")
    add_events_args(sp)
    sp.add_argument("--fps", default="30")
    sp.add_argument("--out", required=True)
    sp.add_argument("--video-id", default=None)
    sp.add_argument("--threshold", type=int, default=2)
    sp.add_argument("--min-area", type=int, default=9)
    sp.add_argument("--max-area", type=int, default=10_000)
    sp.add_argument("--link-dist", type=float, default=40.0)
    sp.add_argument("--min-track-len", type=int, default=5)
    sp.add_argument("--optimal-linking", action="store_true",
                    help="Hungarian per-frame linking instead of greedy")
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("interpolate", help="densify all tracks in an annotation file")
    sp.add_argument("--ann", required=True)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("sync", help="estimate the event/RGB clock offset")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--video", default=None)
    sp.add_argument("--estimate-offset", action="store_true",
                    help="write the estimate into the manifest")
    sp.set_defaults(func=cmd_sync)

    sp = sub.add_parser("split", help="video-wise train/test split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ratio", type=float, default=0.8)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("eval", help="COCO-style AP of a detections file")
    sp.add_argument("--dets", required=True)
    sp.add_argument("--ann", required=True, help="annotation directory")
    sp.add_argument("--split", choices=("all", "train", "test"), default="all")
    sp.add_argument("--split-file")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check", help="verify analytic gradients")
    sp.add_argument("--op", choices=GRAD_CHECK_OPS, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("train-toy", help="overfit the synthetic pair set")
    sp.add_argument("--strategy", default="pool")
    sp.add_argument("--cutoff", default="encoder")
    sp.add_argument("--queries", type=int, default=5)
    sp.add_argument("--d", type=int, default=64)
    sp.add_argument("--patch", type=int, default=16)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--save-weights")
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("detect", help="run the detector over a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--strategy", default="pool")
    sp.add_argument("--cutoff", default="encoder")
    sp.add_argument("--queries", type=int, default=5)
    sp.add_argument("--d", type=int, default=64)
    sp.add_argument("--patch", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--video", default=None)
    sp.add_argument("--max-frames", type=int, default=None)
    sp.add_argument("--min-score", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("serve", help="annotation review HTTP service")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8080)
    sp.add_argument("--static", default=None, help="built review UI directory")
    sp.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
