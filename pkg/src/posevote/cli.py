"""Command-line front end.

Subcommands: synth, vote, loss, histogram, eval, refine, pipeline. All
outputs are JSON/CSV written atomically (temp file + rename), carry the seed
they were produced with, and are bit-identical across repeated runs with the
same arguments.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import pipeline as pipeline_mod
from .fields import CenterField, DepthMap, LabelMap
from .geometry import CameraIntrinsics, Pose, rotation_angle_between
from .losses import LossKind, loss_gradient_check, optimize_rotation, ploss, sloss
from .metrics import accuracy_curve, add, add_s, auc, is_correct, reprojection_error
from .ply import load_model, save_ply
from .refine import IcpParams, multi_hypothesis_refine
from .synth import (NoiseSpec, Scene, default_registry, ground_truth_fields,
                    make_primitive_model, perturb, random_quat, random_scene,
                    render_full)
from .tensorio import load_tensor, save_tensor
from .voting import VotingParams, detect


def _round9(obj):
    if isinstance(obj, float):
        return float("%.9g" % obj) if math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj):
    _atomic_write(path, json.dumps(_round9(obj), indent=2, allow_nan=True) + "\n")


def write_csv(path: str, rows: list[dict]):
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0])
    buf = []
    buf.append(",".join(header))
    for row in rows:
        buf.append(",".join(_csv_cell(row[k]) for k in header))
    _atomic_write(path, "\n".join(buf) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return "%.9g" % v
    return str(v)


def load_intrinsics(path: str) -> CameraIntrinsics:
    with open(path) as f:
        return CameraIntrinsics.from_dict(json.load(f))


def load_poses(path: str) -> list[tuple[int, Pose]]:
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = [data]
    return [(int(d.get("class_id", 0)), Pose.from_dict(d)) for d in data]


def _noise_from_args(args) -> NoiseSpec:
    preset = getattr(args, "noise", "none")
    if preset == "none":
        spec = NoiseSpec()
    elif preset == "moderate":
        spec = NoiseSpec(direction_sigma=0.05, depth_sigma=0.005,
                         rotation_sigma_deg=25.0)
    else:
        raise SystemExit(f"unknown noise preset: {preset}")
    return NoiseSpec(
        direction_sigma=(args.noise_dir if args.noise_dir is not None
                         else spec.direction_sigma),
        depth_sigma=(args.noise_depth if args.noise_depth is not None
                     else spec.depth_sigma),
        label_flip_rate=(args.noise_flip if args.noise_flip is not None
                         else spec.label_flip_rate),
        rotation_sigma_deg=(args.noise_rot if args.noise_rot is not None
                            else spec.rotation_sigma_deg),
        rng_seed=args.seed,
    )


def _voting_from_args(args) -> VotingParams:
    return VotingParams(score_threshold=args.score_threshold,
                        nms_radius=args.nms_radius,
                        inlier_ray_distance=args.inlier_eps)


def _icp_from_args(args) -> IcpParams:
    return IcpParams(max_iterations=args.icp_iters,
                     residual_reject_threshold=args.icp_reject,
                     n_hypotheses=args.hypotheses,
                     rng_seed=args.seed)


def _add_voting_flags(p):
    p.add_argument("--score-threshold", type=int, default=None)
    p.add_argument("--nms-radius", type=int, default=20)
    p.add_argument("--inlier-eps", type=float, default=3.0)


def _add_icp_flags(p):
    p.add_argument("--icp-iters", type=int, default=100)
    p.add_argument("--icp-reject", type=float, default=0.02)
    p.add_argument("--hypotheses", type=int, default=1)


def _add_noise_flags(p):
    p.add_argument("--noise", choices=["none", "moderate"], default="none")
    p.add_argument("--noise-dir", type=float, default=None,
                   help="direction jitter sigma, radians")
    p.add_argument("--noise-depth", type=float, default=None,
                   help="depth noise sigma, meters")
    p.add_argument("--noise-flip", type=float, default=None,
                   help="label flip rate in [0,1)")
    p.add_argument("--noise-rot", type=float, default=None,
                   help="simulated rotation-regression error sigma, degrees")


# ---------------------------------------------------------------------------
# subcommands


def _load_scene_json(path) -> Scene:
    with open(path) as f:
        desc = json.load(f)
    intr = CameraIntrinsics.from_dict(desc["intrinsics"])
    instances = [(int(inst["class_id"]), Pose.from_dict(inst))
                 for inst in desc["instances"]]
    return Scene(instances=instances, intrinsics=intr,
                 width=int(desc["width"]), height=int(desc["height"]))


def cmd_synth(args) -> int:
    models = default_registry()
    os.makedirs(args.out_dir, exist_ok=True)
    noise = _noise_from_args(args)
    scene_ids = range(args.random if args.random else 1)
    index = []
    for i in scene_ids:
        if args.scene:
            scene = _load_scene_json(args.scene)
        else:
            scene = random_scene(args.seed * 100003 + i, models,
                                 width=args.width, height=args.height)
        raster = render_full(scene, models)
        labels = LabelMap(labels=raster.label)
        fld, truths = ground_truth_fields(scene, models, raster)
        spec = NoiseSpec(direction_sigma=noise.direction_sigma,
                         depth_sigma=noise.depth_sigma,
                         label_flip_rate=noise.label_flip_rate,
                         rotation_sigma_deg=noise.rotation_sigma_deg,
                         rng_seed=noise.rng_seed * 100003 + i)
        fld, labels = perturb(fld, labels, spec)
        prefix = os.path.join(args.out_dir, f"scene_{i:04d}")
        save_tensor(prefix + "_labels.pft", labels.labels)
        save_tensor(prefix + "_depth.pft", raster.depth.astype(np.float32))
        save_tensor(prefix + "_field.pft", fld.to_tensor(max(models)))
        gt = {
            "seed": args.seed,
            "scene": i,
            "intrinsics": scene.intrinsics.to_dict(),
            "width": scene.width,
            "height": scene.height,
            "instances": [
                {
                    **t.pose.to_dict(class_id=t.class_id),
                    "center_px": [float(t.center[0]), float(t.center[1])],
                    "visibility": t.visibility,
                    "center_occluded": t.center_occluded,
                }
                for t in truths
            ],
        }
        write_json(prefix + "_gt.json", gt)
        index.append(os.path.basename(prefix))
    write_json(os.path.join(args.out_dir, "index.json"),
               {"seed": args.seed, "scenes": list(index)})
    return 0


def cmd_vote(args) -> int:
    labels = LabelMap(labels=load_tensor(args.labels))
    fld = CenterField.from_tensor(load_tensor(args.field))
    intr = load_intrinsics(args.intrinsics)
    detections = detect(labels, fld, intr, _voting_from_args(args))
    out = {"seed": args.seed, "detections": [d.to_dict() for d in detections]}
    if args.out:
        write_json(args.out, out)
    else:
        print(json.dumps(_round9(out), indent=2))
    return 0


def cmd_loss(args) -> int:
    model = load_model(args.model, class_id=1)
    (_, est), = load_poses(args.pose_est)
    (_, gt), = load_poses(args.pose_gt)
    kind = LossKind(args.kind)
    fn = ploss if kind is LossKind.PLOSS else sloss
    res = fn(est.quaternion, gt.quaternion, model)
    out = {
        "kind": args.kind,
        "value_m2": res.value,
        "gradient_wxyz": [float(g) for g in res.gradient],
        "angle_error_deg": rotation_angle_between(est.quaternion, gt.quaternion),
        "gradient_check_max_rel_error": loss_gradient_check(
            kind, est.quaternion, gt.quaternion, model),
    }
    if args.out:
        write_json(args.out, out)
    else:
        print(json.dumps(_round9(out), indent=2))
    return 0


def cmd_histogram(args) -> int:
    model = make_primitive_model(args.model_kind, scale=0.1,
                                 n_points=args.model_points)
    rng = np.random.default_rng(args.seed)
    q_gt = random_quat(rng)
    inits = [random_quat(rng) for _ in range(args.inits)]
    results = optimize_rotation(model, q_gt, LossKind(args.kind), inits,
                                steps=args.steps, lr=args.lr)
    rows = [{"init": i, "angle_error_deg": ang}
            for i, (_, ang) in enumerate(results)]
    write_csv(args.out, rows)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model, class_id=1)
    gt_poses = load_poses(args.gt)
    est_poses = load_poses(args.est)
    if len(gt_poses) != len(est_poses):
        raise SystemExit("gt and est pose lists differ in length")
    intr = load_intrinsics(args.intrinsics) if args.intrinsics else None
    rows = []
    for i, ((_, gt), (_, est)) in enumerate(zip(gt_poses, est_poses)):
        a = add(est, gt, model)
        s = add_s(est, gt, model)
        row = {"frame": i, "add_m": a, "add_s_m": s,
               "correct": int(is_correct(a, model))}
        if intr is not None:
            row["reproj_px"] = reprojection_error(est, gt, model, intr)
        rows.append(row)
    summary = {
        "seed": args.seed,
        "frames": len(rows),
        "auc_add": auc(accuracy_curve([r["add_m"] for r in rows],
                                      args.max_threshold)),
        "auc_adds": auc(accuracy_curve([r["add_s_m"] for r in rows],
                                       args.max_threshold)),
        "accuracy_10pct_diameter": float(np.mean([r["correct"] for r in rows])),
        "max_threshold_m": args.max_threshold,
    }
    if args.out_csv:
        write_csv(args.out_csv, rows)
    if args.out:
        write_json(args.out, summary)
    else:
        print(json.dumps(_round9(summary), indent=2))
    return 0


def cmd_refine(args) -> int:
    observed = DepthMap(depth=load_tensor(args.depth))
    labels = LabelMap(labels=load_tensor(args.labels))
    model = load_model(args.model, class_id=args.class_id)
    (_, init), = load_poses(args.init)
    intr = load_intrinsics(args.intrinsics)
    res = multi_hypothesis_refine(observed, labels, args.class_id, model,
                                  init, intr, _icp_from_args(args))
    out = {
        "seed": args.seed,
        **res.pose.to_dict(class_id=args.class_id),
        "mean_residual_m": res.mean_residual,
        "inlier_fraction": res.inlier_fraction,
        "iterations": res.iterations,
    }
    if args.out:
        write_json(args.out, out)
    else:
        print(json.dumps(_round9(out), indent=2))
    return 0


def cmd_pipeline(args) -> int:
    cfg = pipeline_mod.PipelineConfig(
        scenes=args.scenes,
        seed=args.seed,
        noise=_noise_from_args(args),
        refine=args.refine,
        icp=_icp_from_args(args),
        voting=_voting_from_args(args),
        width=args.width,
        height=args.height,
        min_visibility=args.min_visibility,
        max_threshold=args.max_threshold,
        jobs=args.jobs,
    )
    summary, records = pipeline_mod.run_pipeline(cfg, default_registry())
    if args.csv:
        write_csv(args.csv, [r.to_row() for r in records])
    if args.out:
        write_json(args.out, summary)
    else:
        print(json.dumps(_round9(summary), indent=2))
    return 0


def cmd_make_model(args) -> int:
    model = make_primitive_model(args.kind, scale=args.scale,
                                 n_points=args.points)
    save_ply(args.out, model.points, faces=model.faces)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posevote",
                                description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render synthetic scenes to tensor files")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--random", type=int, default=1, metavar="N")
    s.add_argument("--scene", help="scene description JSON (instead of random)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    _add_noise_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("vote", help="run Hough voting on label/field tensors")
    s.add_argument("--labels", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    _add_voting_flags(s)
    s.set_defaults(func=cmd_vote)

    s = sub.add_parser("loss", help="evaluate a rotation loss and gradient")
    s.add_argument("--model", required=True)
    s.add_argument("--pose-est", required=True)
    s.add_argument("--pose-gt", required=True)
    s.add_argument("--kind", choices=["ploss", "sloss"], required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("histogram",
                       help="rotation-error histogram from loss descent")
    s.add_argument("--kind", choices=["ploss", "sloss"], required=True)
    s.add_argument("--model-kind", default="bar_2fold")
    s.add_argument("--model-points", type=int, default=320)
    s.add_argument("--inits", type=int, default=200)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.03)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_histogram)

    s = sub.add_parser("eval", help="ADD/ADD-S/AUC over pose lists")
    s.add_argument("--gt", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--intrinsics")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-threshold", type=float, default=0.10)
    s.add_argument("--out")
    s.add_argument("--out-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("refine", help="multi-hypothesis ICP refinement")
    s.add_argument("--depth", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--class-id", type=int, required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    _add_icp_flags(s)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("pipeline",
                       help="synth -> detect -> (refine) -> eval, end to end")
    s.add_argument("--scenes", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--refine", action="store_true")
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--min-visibility", type=float, default=0.3)
    s.add_argument("--max-threshold", type=float, default=0.10)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--csv")
    _add_noise_flags(s)
    _add_voting_flags(s)
    _add_icp_flags(s)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("make-model", help="write a primitive model PLY")
    s.add_argument("--kind", required=True,
                   choices=["cube", "bar_2fold", "asymmetric_blob", "cylinder"])
    s.add_argument("--scale", type=float, default=0.1)
    s.add_argument("--points", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_model)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"posevote: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
