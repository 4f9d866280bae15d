"""Command-line entry point.

Subcommands: validate, gen, render, streamlines, bench, experiment,
serve.  Any failure exits non-zero with a message on stderr and removes
partially written output files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import accel, flow, io_formats, lr_core, volren


class CliError(Exception):
    pass


def _worker_count(settings) -> int:
    env = os.environ.get("LRVIS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"LRVIS_THREADS must be an integer, got {env!r}")
    return settings.workers


def _load_volume(path):
    try:
        return io_formats.load_dataset(path)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {path}")
    except (json.JSONDecodeError, KeyError, ValueError,
            lr_core.LRSplineError) as exc:
        raise CliError(f"bad dataset {path}: {exc}")


def _load_scene(path) -> io_formats.SceneConfig:
    try:
        return io_formats.load_scene(path)
    except FileNotFoundError:
        raise CliError(f"scene not found: {path}")
    except (json.JSONDecodeError, io_formats.SceneError, ValueError) as exc:
        raise CliError(f"bad scene {path}: {exc}")


def _scene_paths(scene: io_formats.SceneConfig, scene_path):
    """Resolve dataset/trim paths relative to the scene file."""
    base = os.path.dirname(os.path.abspath(scene_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    if scene.dataset is None:
        raise CliError(f"scene {scene_path} names no dataset")
    dataset = resolve(scene.dataset)
    trim = resolve(scene.trim_mesh) if scene.trim_mesh else None
    return dataset, trim


def cmd_validate(args) -> int:
    vol = _load_volume(args.dataset)
    report = lr_core.validate(vol)
    if not report.ok:
        for issue in report.issues:
            print(issue, file=sys.stderr)
        raise CliError(f"{args.dataset}: {len(report.issues)} issue(s)")
    print(f"OK: {len(vol.bsplines)} functions, {len(vol.elements)} elements,"
          f" worst partition-of-unity residual {report.worst_unity_residual:.3e}")
    return 0


def cmd_gen(args) -> int:
    try:
        with open(args.spec) as fh:
            spec = io_formats.spec_from_json(json.load(fh))
        vol = io_formats.generate_synthetic(spec)
    except FileNotFoundError:
        raise CliError(f"spec not found: {args.spec}")
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(f"bad generator spec {args.spec}: {exc}")
    io_formats.save_dataset(vol, args.output)
    print(f"wrote {args.output}: {len(vol.elements)} elements")
    return 0


def cmd_render(args) -> int:
    scene = _load_scene(args.scene)
    if scene.camera is None or scene.tf is None:
        raise CliError("render scene needs 'camera' and 'transfer_function'")
    dataset, trim_path = _scene_paths(scene, args.scene)
    vol = _load_volume(dataset)
    bez = lr_core.BezierVolume.from_lr(vol)
    forest = accel.build_kdforest(vol)
    field_ = volren.ScalarField(bez, forest)
    trim = None
    if trim_path:
        try:
            mesh = io_formats.load_stl(trim_path)
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(f"bad trim mesh {trim_path}: {exc}")
        trim = volren.TrimMesh(mesh.triangles)
    scene.settings.workers = _worker_count(scene.settings)
    img = volren.render(scene.camera, field_, scene.tf, scene.settings, trim)
    io_formats.write_image(img, args.output)
    print(f"wrote {args.output} ({scene.camera.width}x{scene.camera.height})")
    return 0


def _vector_field(vol):
    bez = lr_core.BezierVolume.from_lr(vol)
    return flow.VectorField(bez, accel.build_kdforest(vol))


def cmd_streamlines(args) -> int:
    scene = _load_scene(args.scene)
    if scene.seeds is None:
        raise CliError("streamline scene needs 'seeds'")
    cfg = scene.integrator or flow.IntegratorConfig()
    dataset, _ = _scene_paths(scene, args.scene)
    vol = _load_volume(dataset)
    if vol.range_dim != 3:
        raise CliError(f"dataset {dataset} is not a 3-vector field")
    field_ = _vector_field(vol)
    for i, s in enumerate(scene.seeds):
        if not field_.inside(s):
            raise CliError(f"seed {i} lies outside the domain")
    lines = flow.integrate_all(field_, scene.seeds, cfg)
    with open(args.output, "w") as fh:
        json.dump(flow.streamlines_to_json(lines), fh)
    print(f"wrote {args.output} ({len(lines)} streamlines)")
    if args.image:
        if scene.camera is None:
            raise CliError("--image needs a 'camera' in the scene")
        radius = scene.tube_radius
        if radius is None:
            radius = 0.008 * float(np.linalg.norm(
                vol.domain[:, 1] - vol.domain[:, 0]))
        img = flow.render_streamlines(lines, field_, scene.camera, radius)
        io_formats.write_image(img, args.image)
        print(f"wrote {args.image}")
    return 0


def cmd_bench(args) -> int:
    vol = _load_volume(args.dataset)
    grids = []
    for tok in args.grids.split(","):
        tok = tok.strip()
        if tok:
            g = int(tok)
            if g < 1:
                raise CliError(f"grid size must be >= 1, got {g}")
            grids.append(g)
    wanted = [s.strip() for s in args.structures.split(",") if s.strip()]
    structures = {}
    for name in wanted:
        if name == "linear":
            structures["linear"] = accel.LinearScan(vol)
        elif name == "grid":
            try:
                res = accel.finest_grid_resolution(vol)
                structures["grid"] = accel.build_grid_table(vol, res)
            except accel.InapplicableError as exc:
                print(f"# grid table skipped: {exc}", file=sys.stderr)
        elif name == "octree":
            try:
                structures["octree"] = accel.build_octree(vol)
            except accel.InapplicableError as exc:
                print(f"# octree skipped: {exc}", file=sys.stderr)
        elif name == "kdtree":
            structures["kdtree"] = accel.build_kdtree(vol)
        elif name == "forest":
            for g in grids:
                structures[f"forest{g}"] = accel.KdForest.build(vol, g, g, g)
        else:
            raise CliError(f"unknown structure {name!r}")
    rows = accel.bench_lookups(vol, structures,
                               sample_count=args.samples)
    out = sys.stdout if args.output is None else open(args.output, "w")
    try:
        print("structure,mean_depth,max_depth,depth_variance,"
              "lookups_per_second", file=out)
        for row in rows:
            s = structures[row["structure"]]
            if isinstance(s, accel.KdForest):
                st = accel.depth_stats(s)
                depth = (f"{st.mean_depth:.3f},{st.max_depth:.0f},"
                         f"{st.var_depth:.3f}")
            else:
                depth = ",,"
            print(f"{row['structure']},{depth},"
                  f"{row['lookups_per_second']:.1f}", file=out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_experiment(args) -> int:
    scene = _load_scene(args.scene)
    if scene.seeds is None:
        raise CliError("experiment scene needs 'seeds'")
    dataset, _ = _scene_paths(scene, args.scene)
    vol = _load_volume(dataset)
    if vol.range_dim != 3:
        raise CliError(f"dataset {dataset} is not a 3-vector field")
    field_ = _vector_field(vol)
    cfg = scene.integrator or flow.IntegratorConfig()
    t_max = cfg.t_max
    reference = flow.reference_solution(field_, scene.seeds, t_max)
    h = cfg.h0
    methods = [
        {"name": "RK2", "mode": "fixed", "values": [h, h / 2, h / 4]},
        {"name": "RK4", "mode": "fixed", "values": [h, h / 2, h / 4]},
        {"name": "RKF5", "mode": "fixed", "values": [h, h / 2, h / 4]},
        {"name": "RK4", "mode": "heuristic", "values": [1.0, 0.5, 0.25]},
        {"name": "RKF45", "mode": "embedded",
         "values": [1e-3, 1e-4, 1e-5]},
    ]
    rows = flow.efficiency_experiment(field_, scene.seeds, methods,
                                      reference, t_max)
    csv_text = flow.experiment_csv(rows)
    if args.output is None:
        sys.stdout.write(csv_text)
    else:
        with open(args.output, "w") as fh:
            fh.write(csv_text)
        print(f"wrote {args.output}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app
    app = create_app(args.dataset)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lrvis",
        description="Render and trace trivariate LR-spline fields")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset invariants")
    p.add_argument("dataset")
    p.set_defaults(fn=cmd_validate, outputs=lambda a: [])

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_gen, outputs=lambda a: [a.output])

    p = sub.add_parser("render", help="render a scene to an image")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_render, outputs=lambda a: [a.output])

    p = sub.add_parser("streamlines", help="trace seeds to JSON")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--image", default=None,
                   help="also render the traced lines to this image")
    p.set_defaults(fn=cmd_streamlines,
                   outputs=lambda a: [a.output] + ([a.image] if a.image
                                                  else []))

    p = sub.add_parser("bench", help="lookup structure statistics")
    p.add_argument("dataset")
    p.add_argument("--structures",
                   default="linear,grid,octree,kdtree,forest")
    p.add_argument("--grids", default="1,8,64,512")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_bench,
                   outputs=lambda a: [a.output] if a.output else [])

    p = sub.add_parser("experiment", help="integrator efficiency sweep")
    p.add_argument("scene")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_experiment,
                   outputs=lambda a: [a.output] if a.output else [])

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve, outputs=lambda a: [])
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - single top-level report
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    for path in args.outputs(args):
        if path and os.path.exists(path):
            try:
                os.remove(path)
            except OSError:
                pass
    return 1


if __name__ == "__main__":
    sys.exit(main())
