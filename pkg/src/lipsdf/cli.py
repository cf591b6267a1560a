"""Command-line front end: ``lipsdf <subcommand> ...``.

Field-taking subcommands accept a *source* that is either a weight file
(``*.lndf``) or an oracle spec such as ``sphere:0,0,0:0.5``. Networks are
queried in their normalized coordinates, the frame in which they are
1-Lipschitz; ``--denormalize`` maps output geometry back to input units.

Exit codes: 0 success or audit pass, 1 audit fail, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import extract, fieldops, geometry, oracles, trainer
from .lipnet import ValidationError

LIPSCHITZ_BOUND = 1.0 + 1e-9


class UsageError(ValueError):
    pass


def _vec(text: str, dim: int | None = None) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if dim is not None and len(v) != dim:
        raise UsageError(f"expected {dim} coordinates, got {text!r}")
    return v


def load_source(spec: str):
    """Return ``(field, net_or_None)`` for a weight file or an oracle spec."""
    path = Path(spec)
    if path.suffix.lower() == ".lndf" or path.is_file():
        net = trainer.restore(path)
        return fieldops.NetField(net), net
    return oracles.parse_shape(spec), None


def _margin_of(net, override):
    if override is not None:
        return override
    if net is not None:
        return float(net.meta.get("margin", 1e-2))
    return 0.0


def _write_geometry(path, geom_or_lines, net, denormalize: bool):
    if isinstance(geom_or_lines, extract.Polylines):
        V = geom_or_lines.vertices
        if denormalize and net is not None:
            V = net.norm.inverse(V)
        lines = [list(c) + ([c[0]] if cl else [])
                 for c, cl in zip(geom_or_lines.chains, geom_or_lines.closed)]
        geometry.write_obj(path, V, lines=lines)
        return
    V = geom_or_lines.vertices
    if denormalize and net is not None:
        V = net.norm.inverse(V)
    geometry.write_obj(path, V, faces=geom_or_lines.triangles)


def _extract_to(field, net, isos, res, bounds, out, workers, denormalize) -> list[str]:
    grid = extract.sample_grid(field, tuple(bounds), res, workers=workers)
    out = Path(out)
    written = []
    for i, iso in enumerate(isos):
        target = out if len(isos) == 1 else out.with_name(f"{out.stem}_{i:03d}{out.suffix}")
        if grid.dim == 2:
            result = extract.marching_squares(grid, iso)
        else:
            result = extract.marching_cubes(grid, iso)
        _write_geometry(target, result, net, denormalize)
        written.append(str(target))
    return written


def _camera(args) -> fieldops.Camera:
    return fieldops.Camera(tuple(_vec(args.eye, 3)), tuple(_vec(args.look_at, 3)),
                           tuple(_vec(args.up, 3)), args.fov)


def _render_to(field, args, out):
    if field.dim != 3:
        raise UsageError("render needs a 3D field")
    img = fieldops.render(field, _camera(args), args.width, args.height, args.shading,
                          args.t_max, args.surface_tol, args.max_iter, args.workers)
    fieldops.write_image(out, img)


# ---------------------------------------------------------------------------
# subcommands


def cmd_label(args) -> int:
    if args.oracle:
        shape = oracles.parse_shape(args.oracle)
        ds = oracles.analytic_dataset(shape, args.n, seed=args.seed)
        tf = geometry.NormalizeTransform.identity(shape.dim)
    else:
        if not args.geometry:
            raise UsageError("label needs a geometry file or --oracle")
        geom = geometry.load_geometry(args.geometry, require_normals=False)
        geom, tf = geometry.normalize(geom)
        if args.mode == "signed":
            ds = geometry.build_signed_dataset(geom, args.n, args.tau_in, args.tau_out, args.seed)
        else:
            ds = geometry.build_unsigned_dataset(geom, args.n, args.seed)
    ds.to_csv(args.out)
    tf_path = args.transform or str(Path(args.out).with_suffix(".transform.json"))
    geometry.save_transform(tf_path, tf)
    print(f"wrote {len(ds)} labeled points to {args.out} (transform: {tf_path})")
    return 0


_TRAIN_FLAGS = ("loss", "margin", "lam", "depth", "k", "epochs", "seed", "lr", "batch_size")


def cmd_train(args) -> int:
    settings = {}
    if args.config:
        settings.update(trainer.load_config(args.config))
        settings = {("lam" if k == "lambda" else k): v for k, v in settings.items()}
    for name in _TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            settings[name] = value
    if args.checkpoint_every:
        settings["checkpoint_every"] = args.checkpoint_every
        settings["checkpoint_path"] = args.out
    cfg = trainer.TrainConfig.from_mapping(settings)
    ds = geometry.LabeledDataset.from_csv(args.dataset, mode=args.mode)
    norm = geometry.load_transform(args.transform) if args.transform else None

    def report(epoch, net, rec):
        if args.verbose and (epoch == 1 or epoch % args.verbose == 0 or epoch == cfg.epochs):
            print(f"epoch {epoch:5d}  loss {rec.total:+.6f}  hinge {rec.hinge:.6f}  "
                  f"miscls {rec.misclassification:.4f}", flush=True)

    net, log = trainer.train(ds, cfg, norm=norm, callback=report)
    trainer.checkpoint(net, args.out)
    if args.log:
        log.to_csv(args.log)
    print(f"wrote {args.out}")
    return 0


def cmd_extract(args) -> int:
    field, net = load_source(args.source)
    isos = args.iso or [0.0]
    for path in _extract_to(field, net, isos, args.res, args.bounds, args.out, args.workers,
                            args.denormalize):
        print(f"wrote {path}")
    return 0


def cmd_render(args) -> int:
    field, _ = load_source(args.source)
    _render_to(field, args, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_audit(args) -> int:
    field, net = load_source(args.source)
    rows = []
    if args.check == "lipschitz":
        q = fieldops.audit_lipschitz(field, args.n, seed=args.seed)
        ok = q <= LIPSCHITZ_BOUND
        rows.append(("max_difference_quotient", q, LIPSCHITZ_BOUND, ok))
    elif args.check == "gradnorm":
        grid = extract.planar_slice(field, (-1.0, 1.0), args.res, axis=args.axis,
                                    offset=args.offset, quantity="gradnorm", workers=args.workers)
        g = float(grid.values.max())
        ok = g <= LIPSCHITZ_BOUND
        rows.append(("max_gradient_norm", g, LIPSCHITZ_BOUND, ok))
        if args.image:
            extract.emit_heatmap(grid, args.image, vmin=0.0, vmax=max(1.0, g))
    else:
        grid = extract.sample_grid(field, (-1.0, 1.0), args.res, workers=args.workers)
        if args.mesh:
            mesh = geometry.load_geometry(args.mesh)
        elif grid.dim == 2:
            mesh = extract.marching_squares(grid, 0.0).segments()
        else:
            mesh = extract.marching_cubes(grid, 0.0)
        report = fieldops.audit_underestimation(field, mesh, args.n, args.radius, args.seed)
        bound = 2.0 * _margin_of(net, args.margin) + grid.cell_diagonal
        ok = report.max_diff <= bound
        rows.append(("max_f_minus_mesh_distance", report.max_diff, bound, ok))
        # reported for reference, not part of the verdict
        rows.append(("max_magnitude_excess", report.max_magnitude_excess, None, None))
        if args.points_csv:
            report.to_csv(args.points_csv)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["quantity", "value", "bound", "pass"])
            for name, value, bound, passed in rows:
                wr.writerow([name, repr(float(value)), "" if bound is None else repr(float(bound)),
                             "" if passed is None else int(bool(passed))])
    for name, value, bound, passed in rows:
        if bound is None:
            print(f"{name} = {value:.12g}")
        else:
            print(f"{name} = {value:.12g} (bound {bound:.12g}) {'PASS' if passed else 'FAIL'}")
    verdict = all(bool(passed) for _, _, _, passed in rows if passed is not None)
    print("verdict:", "PASS" if verdict else "FAIL")
    return 0 if verdict else 1


def cmd_query(args) -> int:
    field, _ = load_source(args.source)
    if bool(args.project) == bool(args.skeleton):
        raise UsageError("query needs exactly one of --project or --skeleton")
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        wr = csv.writer(out, lineterminator="\n")
        axes = ["x", "y", "z"][:field.dim]
        if args.project:
            X0 = np.stack([_vec(p, field.dim) for p in args.project])
            res = fieldops.project(field, X0, iso=args.iso, tol=args.tol, max_iter=args.max_iter,
                                   raw_step=args.raw_step)
            wr.writerow(axes + ["iterations", "residual", "status"])
            for p, it, r, s in zip(res.points, res.iterations, res.residual, res.status):
                wr.writerow([repr(float(v)) for v in p] + [int(it), repr(float(r)), s])
        else:
            n_raw, gamma_raw = args.skeleton
            try:
                n, gamma = int(n_raw), float(gamma_raw)
            except ValueError:
                raise UsageError("--skeleton takes an integer count and a float threshold") from None
            P = fieldops.medial_axis_sample(field, n, gamma, seed=args.seed,
                                            signed=not args.unsigned, fd_step=args.fd_step)
            wr.writerow(axes)
            for p in P:
                wr.writerow([repr(float(v)) for v in p])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_csg(args) -> int:
    f1, n1 = load_source(args.a)
    f2, _ = load_source(args.b)
    field = fieldops.CsgField(args.op, f1, f2)
    if not (args.extract_out or args.render_out):
        raise UsageError("csg needs --extract-out and/or --render-out")
    if args.extract_out:
        for path in _extract_to(field, None, args.iso or [0.0], args.res, args.bounds,
                                args.extract_out, args.workers, False):
            print(f"wrote {path}")
    if args.render_out:
        _render_to(field, args, args.render_out)
        print(f"wrote {args.render_out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_render_flags(p):
    p.add_argument("--eye", default="0,0,3", help="camera position (default: %(default)s)")
    p.add_argument("--look-at", default="0,0,0", help="camera target (default: %(default)s)")
    p.add_argument("--up", default="0,1,0", help="camera up vector (default: %(default)s)")
    p.add_argument("--fov", type=float, default=40.0, help="vertical field of view in degrees (default: %(default)s)")
    p.add_argument("--width", type=int, default=256, help="image width (default: %(default)s)")
    p.add_argument("--height", type=int, default=256, help="image height (default: %(default)s)")
    p.add_argument("--shading", choices=["lambert", "normal", "depth"], default="lambert",
                   help="shading mode (default: %(default)s)")
    p.add_argument("--t-max", type=float, default=10.0, help="maximum ray length (default: %(default)s)")
    p.add_argument("--surface-tol", type=float, default=1e-4, help="hit threshold on |f| (default: %(default)s)")
    p.add_argument("--max-iter", type=int, default=200, help="steps per ray (default: %(default)s)")


def _add_extract_flags(p, out_flag="--out", required=True):
    p.add_argument("--iso", type=float, action="append",
                   help="iso value, repeatable for a family of level sets (default: 0)")
    p.add_argument("--res", type=int, default=64, help="grid points per axis (default: %(default)s)")
    p.add_argument("--bounds", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"),
                   help="grid extent on every axis (default: -1 1)")
    p.add_argument(out_flag, required=required, help="OBJ output (suffixed _000, _001... for several isos)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="lipsdf", description=__doc__.split("\n")[0],
                                     formatter_class=fmt)
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="threads for batched evaluation; results do not depend on it (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label", help="sample and label a training set", formatter_class=fmt)
    p.add_argument("geometry", nargs="?", help="OBJ, PLY or XYZ input")
    p.add_argument("--oracle", help="label an analytic shape instead (adds s_true)")
    p.add_argument("--mode", choices=["signed", "unsigned"], default="signed")
    p.add_argument("--n", type=int, default=10_000, help="points per class")
    p.add_argument("--tau-in", type=float, default=0.6, help="winding threshold for inside")
    p.add_argument("--tau-out", type=float, default=0.4, help="winding threshold for outside")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset CSV")
    p.add_argument("--transform", help="transform JSON (default: next to --out)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="fit a Lipschitz network to a dataset", formatter_class=fmt)
    p.add_argument("dataset", help="dataset CSV from 'label'")
    p.add_argument("--mode", choices=["signed", "unsigned"], default="signed")
    p.add_argument("--transform", help="transform JSON to embed in the weight file")
    p.add_argument("--config", help="JSON or TOML file with training settings; flags override it")
    p.add_argument("--loss", choices=["hkr", "fit"], help="loss (default: hkr)")
    p.add_argument("--margin", type=float, help="hinge margin m (default: 0.01)")
    p.add_argument("--lambda", dest="lam", type=float, help="hinge weight (default: 100)")
    p.add_argument("--depth", type=int, help="number of layers (default: 20)")
    p.add_argument("--k", type=int, help="layer width (default: 128)")
    p.add_argument("--epochs", type=int, help="epochs (default: 1000)")
    p.add_argument("--lr", type=float, help="Adam step size (default: 0.001)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="points per class per batch (default: 512)")
    p.add_argument("--seed", type=int, help="initialization and shuffling seed (default: 0)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="rewrite --out every N epochs")
    p.add_argument("--log", help="per-epoch CSV log")
    p.add_argument("--verbose", type=int, default=0, metavar="N", help="print progress every N epochs")
    p.add_argument("--out", required=True, help="weight file (.lndf)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="mesh level sets (marching squares/cubes)", formatter_class=fmt)
    p.add_argument("source", help="weight file or oracle spec")
    _add_extract_flags(p)
    p.add_argument("--denormalize", action="store_true", help="write vertices in input units")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", help="sphere-trace an image", formatter_class=fmt)
    p.add_argument("source", help="weight file or oracle spec")
    _add_render_flags(p)
    p.add_argument("--out", required=True, help="PPM (or .png) output")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("audit", help="check Lipschitz, gradient-norm or underestimation bounds",
                       formatter_class=fmt)
    p.add_argument("source", help="weight file or oracle spec")
    p.add_argument("--check", choices=["lipschitz", "underestimate", "gradnorm"], required=True)
    p.add_argument("--n", type=int, default=100_000, help="pairs (lipschitz) or points (underestimate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=64, help="grid resolution for gradnorm slices and meshes")
    p.add_argument("--axis", type=int, default=2, help="slice normal axis for 3D gradnorm")
    p.add_argument("--offset", type=float, default=0.0, help="slice offset for 3D gradnorm")
    p.add_argument("--image", help="gradnorm heatmap image (PPM or PNG)")
    p.add_argument("--mesh", help="reference mesh for underestimate (default: the field's own level set)")
    p.add_argument("--radius", type=float, default=3.0, help="sampling ball radius for underestimate")
    p.add_argument("--margin", type=float, help="margin for the 2m bound (default: from the weight file)")
    p.add_argument("--points-csv", help="per-point underestimation CSV")
    p.add_argument("--out", help="summary CSV")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("query", help="projection or medial-axis sampling", formatter_class=fmt)
    p.add_argument("source", help="weight file or oracle spec")
    p.add_argument("--project", action="append", metavar="X,Y[,Z]", help="start point, repeatable")
    p.add_argument("--skeleton", nargs=2, metavar=("N", "GAMMA"), help="candidates and gradient threshold")
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--raw-step", action="store_true", help="use x - f grad f without normalizing")
    p.add_argument("--fd-step", type=float, help="finite-difference step for skeleton gradients")
    p.add_argument("--unsigned", action="store_true", help="keep skeleton points on both sides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("csg", help="compose two fields, then extract and/or render", formatter_class=fmt)
    p.add_argument("a", help="first operand (weight file or oracle spec)")
    p.add_argument("b", help="second operand")
    p.add_argument("--op", choices=["union", "intersect", "difference"], default="union")
    _add_extract_flags(p, "--extract-out", required=False)
    _add_render_flags(p)
    p.add_argument("--render-out", help="PPM (or .png) output")
    p.set_defaults(func=cmd_csg)
    return parser


_INPUT_ERRORS = (UsageError, geometry.GeometryError, geometry.SamplingBudgetError,
                 trainer.WeightFileError, ValidationError, ValueError, OSError, KeyError,
                 json.JSONDecodeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except trainer.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
