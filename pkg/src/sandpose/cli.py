"""Command-line interface: synth / estimate / eval / compare.

The four subcommands chain into the full pipeline: generate scene bundles,
estimate poses per scene and class, score the estimates against ground
truth into accuracy curves, and compare curves across methods.  All
outputs are deterministic for fixed seeds and configs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .detection import synth_detections
from .evaluation import PoseError, accuracy_curve, pose_error, read_curve_csv, write_curve_csv
from .geometry import Pose6D
from .harness import SceneSpec, camera_extrinsics, generate_scene, load_scene, save_scene
from .icp import IcpConfig, icp_estimate
from .sand import PoseEstimate, SandConfig, run_sand

__all__ = ["main"]


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _scene_dirs(root: Path) -> list[Path]:
    if (root / "depth.png").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "depth.png").exists())
    if not dirs:
        raise SystemExit(f"error: no scene bundles under {root}")
    return dirs


def _cmd_synth(args) -> int:
    spec = SceneSpec.from_dict(_load_json(args.spec)) if args.spec else SceneSpec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seeds):
        gt = generate_scene(spec, seed=seed)
        dets = synth_detections(gt, spec.detection, seed=gt.seed)
        save_scene(gt, out / gt.scene_id, detections=dets)
        print(f"wrote {out / gt.scene_id} ({len(gt.objects)} objects, {len(dets)} detections)")
    return 0


def _estimate_to_dict(class_id: str, est: PoseEstimate) -> dict:
    row = {
        "class": class_id,
        "translation": [float(v) for v in est.pose.translation],
        "quaternion": [float(v) for v in est.pose.rotation],
        "weight": est.weight,
        "converged": est.converged,
        "iterations": est.iterations_run,
        "refined_box": list(est.refined_box.as_tuple()),
    }
    if est.mse is not None:
        row["mse"] = est.mse
    return row


def _cmd_estimate(args) -> int:
    if args.method == "sand":
        cfg = SandConfig.from_dict(_load_json(args.config)) if args.config else SandConfig()
    else:
        cfg = IcpConfig.from_dict(_load_json(args.config)) if args.config else IcpConfig()
    scenes_out = []
    for scene_dir in _scene_dirs(Path(args.scene)):
        bundle = load_scene(scene_dir)
        if bundle.detections is None:
            raise SystemExit(f"error: {scene_dir} has no detections.json")
        meshes = {obj.class_id: obj.mesh for obj in bundle.objects}
        classes = sorted({d.class_id for d in bundle.detections} & set(meshes))
        estimates, failures = [], []
        for class_id in classes:
            try:
                if args.method == "sand":
                    est = run_sand(
                        bundle.depth, bundle.detections, class_id,
                        meshes[class_id], bundle.camera, cfg,
                    )
                else:
                    idxs = bundle.detections.indices_for_class(class_id)
                    best = max(idxs, key=lambda i: (bundle.detections[i].score, -i))
                    est = icp_estimate(
                        bundle.depth, bundle.detections[best],
                        meshes[class_id], bundle.camera, cfg,
                        init_rotation=camera_extrinsics().rotation,
                    )
                estimates.append(_estimate_to_dict(class_id, est))
            except Exception as exc:  # recorded, not fatal
                failures.append({"class": class_id, "error": f"{type(exc).__name__}: {exc}"})
        scenes_out.append({"scene": scene_dir.name, "estimates": estimates, "failures": failures})
        print(f"{scene_dir.name}: {len(estimates)} estimates, {len(failures)} failures")
    report = {"method": args.method, "config": cfg.to_dict(), "scenes": scenes_out}
    _write_json(report, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = _load_json(args.report)
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    truth_root = Path(args.truth)
    errors = []
    for scene in report["scenes"]:
        scene_dir = truth_root / scene["scene"]
        if not scene_dir.exists() and (truth_root / "depth.png").exists():
            scene_dir = truth_root
        bundle = load_scene(scene_dir)
        truth = {obj.class_id: obj for obj in bundle.objects}
        seen = set()
        for row in scene["estimates"]:
            obj = truth.get(row["class"])
            if obj is None:
                continue
            est_pose = Pose6D(row["translation"], row["quaternion"])
            errors.append(
                pose_error(est_pose, obj.pose, obj.mesh, class_id=row["class"], scene_id=scene["scene"])
            )
            seen.add(row["class"])
        for row in scene.get("failures", []):
            if row["class"] in truth and row["class"] not in seen:
                errors.append(PoseError.failure(row["class"], scene["scene"]))
        # ground-truth objects the method produced nothing for still count
        for class_id in truth:
            if class_id not in seen and class_id not in {f["class"] for f in scene.get("failures", [])}:
                errors.append(PoseError.failure(class_id, scene["scene"]))
    if not errors:
        raise SystemExit("error: report contains no estimates matching the ground truth")
    curve = accuracy_curve(errors, thresholds)
    write_curve_csv(
        curve, args.out, method=report["method"], class_id="*",
        scenes=len(report["scenes"]),
    )
    finite = [e.headline for e in errors if e.headline < float("inf")]
    mean_err = sum(finite) / len(finite) if finite else float("inf")
    print(f"method={report['method']} scenes={len(report['scenes'])} estimates={len(errors)}")
    print(f"mean headline error (successful): {mean_err:.4f} m")
    for t, a in zip(curve.thresholds, curve.accuracy):
        print(f"accuracy @ {t:g} m: {a:.3f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args) -> int:
    paths = [p for p in args.reports.split(",") if p]
    if len(paths) < 2:
        raise SystemExit("error: compare needs at least two curve files")
    curves = []
    for p in paths:
        curve, meta = read_curve_csv(p)
        curves.append((meta.get("method", Path(p).stem), curve))
    base = curves[0][1].thresholds
    for name, curve in curves[1:]:
        if curve.thresholds != base:
            raise SystemExit(f"error: {name} uses different thresholds than {curves[0][0]}")
    lines = []
    header = "threshold_m " + " ".join(f"{name:>10s}" for name, _ in curves) + "  best"
    lines.append(header)
    for i, t in enumerate(base):
        accs = [curve.accuracy[i] for _, curve in curves]
        best = curves[int(max(range(len(accs)), key=lambda k: accs[k]))][0]
        lines.append(
            f"{t:<11g} " + " ".join(f"{a:>10.3f}" for a in accs) + f"  {best}"
        )
    wins = {name: 0 for name, _ in curves}
    for i in range(len(base)):
        accs = [curve.accuracy[i] for _, curve in curves]
        top = max(accs)
        for (name, curve) in curves:
            if curve.accuracy[i] == top:
                wins[name] += 1
    summary = "ties included; thresholds led: " + ", ".join(
        f"{name}={n}/{len(base)}" for name, n in wins.items()
    )
    lines.append(summary)
    text = "\n".join(lines) + "\n"
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandpose",
        description="Render-and-compare pose estimation: synthetic scenes, "
        "estimation, evaluation, and method comparison.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene bundles")
    p.add_argument("--spec", help="scene spec JSON (defaults used when omitted)")
    p.add_argument("--seeds", type=int, default=1, help="number of scenes (seeds 0..n-1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("estimate", help="estimate poses for scene bundles")
    p.add_argument("--method", choices=("sand", "icp"), required=True)
    p.add_argument("--scene", required=True, help="scene dir or parent of scene dirs")
    p.add_argument("--config", help="config JSON mirroring the method's fields")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("eval", help="score a report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True, help="scene dir or parent of scene dirs")
    p.add_argument("--thresholds", default="0.01,0.02,0.05", help="comma-separated meters")
    p.add_argument("--out", required=True, help="curve CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="compare accuracy curves")
    p.add_argument("--reports", required=True, help="comma-separated curve CSVs")
    p.add_argument("--out", required=True, help="summary text path")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
