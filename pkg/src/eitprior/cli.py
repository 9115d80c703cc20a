"""Command-line front end for the full pipeline.

Exit codes: 0 on success, 2 for usage problems (bad flags, missing or
malformed files), 3 for numerical failures (solver stall, diverging
reconstruction).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import study
from .fileio import (
    FormatError,
    read_eimg,
    read_f64mat,
    read_f64vec,
    render_slice,
    threshold_voxels,
    write_eimg,
    write_f64mat,
    write_f64vec,
)
from .grid import ImageField, make_circular_mask, make_cylindrical_mask
from .phantom import builtin_case, phantom_from_json, rasterize
from .recon import DivergenceError, ReconConfig, normalize_for_eval, reconstruct
from .metrics import mssim, relative_error
from .sensing import (
    SolverError,
    add_noise,
    adjacent_protocol,
    circular_layout,
    combined_3d_protocol,
    jacobian,
    normalize_measurements,
    simulate_voltages,
    two_layer_layout,
    VoltageFrame,
)

__all__ = ["main"]


class UsageError(Exception):
    """Bad inputs that the user can fix (exit code 2)."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _mask_from_args(args):
    if getattr(args, "mask", None):
        return read_eimg(args.mask).mask
    if getattr(args, "grid", None):
        if getattr(args, "nz", None):
            return make_cylindrical_mask(args.grid, args.grid, args.nz)
        return make_circular_mask(args.grid)
    raise UsageError("supply --mask FILE or --grid N [--nz NZ]")


def _protocol_and_layout(kind: str, mask, electrodes: int):
    if kind == "2d":
        if mask.ndim != 2:
            raise UsageError("2d protocol needs a 2D region")
        return adjacent_protocol(electrodes), circular_layout(mask, electrodes)
    if mask.ndim != 3:
        raise UsageError("3d protocol needs a 3D region")
    return combined_3d_protocol(electrodes), two_layer_layout(mask, electrodes)


def _cmd_phantom(args) -> int:
    if (args.case is None) == (args.spec is None):
        raise UsageError("choose exactly one of --case or --spec")
    spec = builtin_case(args.case) if args.case is not None else phantom_from_json(args.spec)
    ndim = spec.ndim or (3 if args.nz else 2)
    if ndim == 3 and not args.nz:
        raise UsageError("3D phantoms need --nz")
    mask = (
        make_cylindrical_mask(args.grid, args.grid, args.nz)
        if ndim == 3
        else make_circular_mask(args.grid)
    )
    field = rasterize(spec, mask)
    if args.difference:
        from .sensing import normalize_conductivity

        reference = ImageField(mask, np.full(mask.n_inside, spec.background))
        field = normalize_conductivity(field, reference)
    write_eimg(args.out, field)
    print(f"wrote {args.out} ({mask.n_inside} cells)")
    return 0


def _cmd_protocol(args) -> int:
    if args.kind == "2d":
        protocol = adjacent_protocol(args.electrodes)
    else:
        protocol = combined_3d_protocol(args.electrodes)
    for entry in protocol.entries:
        dp, dm, mp, mm = (int(e) + 1 for e in entry)
        print(f"drive (e{dp}, e{dm})  measure (e{mp}, e{mm})")
    print(f"entries: {protocol.m}")
    return 0


def _cmd_simulate(args) -> int:
    observed = read_eimg(args.phantom)
    protocol, layout = _protocol_and_layout(args.protocol, observed.mask, args.electrodes)
    if args.reference:
        reference = read_eimg(args.reference)
        if reference.mask != observed.mask:
            raise UsageError("reference and phantom masks differ")
    else:
        reference = ImageField(
            observed.mask, np.full(observed.mask.n_inside, args.background)
        )
    v_obs = simulate_voltages(observed, protocol, layout)
    v_ref = simulate_voltages(reference, protocol, layout)
    if args.snr_db is not None:
        v_obs = add_noise(v_obs, args.snr_db, args.seed)
    v_norm = normalize_measurements(v_obs, v_ref)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "observed": prefix.with_suffix(".vo.f64vec"),
        "reference": prefix.with_suffix(".vr.f64vec"),
        "normalized": prefix.with_suffix(".v.f64vec"),
    }
    write_f64vec(paths["observed"], v_obs.values)
    write_f64vec(paths["reference"], v_ref.values)
    write_f64vec(paths["normalized"], v_norm.values)
    for label, path in paths.items():
        print(f"wrote {path} ({label}, {protocol.m} entries)")
    return 0


def _cmd_jacobian(args) -> int:
    if args.reference:
        reference = read_eimg(args.reference)
    else:
        mask = _mask_from_args(args)
        reference = ImageField(mask, np.full(mask.n_inside, args.background))
    protocol, layout = _protocol_and_layout(args.protocol, reference.mask, args.electrodes)
    j = jacobian(reference, protocol, layout)
    write_f64mat(args.out, j)
    print(f"wrote {args.out} ({j.shape[0]} x {j.shape[1]})")
    return 0


def _cmd_recon(args) -> int:
    j = read_f64mat(args.jacobian)
    v = read_f64vec(args.voltages)
    mask = _mask_from_args(args)
    cfg = ReconConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    started = time.perf_counter()
    result = reconstruct(j, VoltageFrame(v, "normalized"), mask, cfg)
    wall = time.perf_counter() - started
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_eimg(out, result.sigma)
    outputs = [out]
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("iteration,loss,fidelity\n")
        for it, (lo, fi) in enumerate(zip(result.loss_trace, result.data_fidelity_trace)):
            fh.write(f"{it},{lo!r},{fi!r}\n")
    outputs.append(trace_path)
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": {
            str(args.jacobian): _sha256(Path(args.jacobian)),
            str(args.voltages): _sha256(Path(args.voltages)),
        },
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_time": wall,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    final_loss = float(result.loss_trace[-1]) if len(result.loss_trace) else float("nan")
    print(f"wrote {out} (final loss {final_loss:.6g}, {wall:.1f} s)")
    return 0


def _cmd_eval(args) -> int:
    recon_field = normalize_for_eval(read_eimg(args.recon))
    truth_field = normalize_for_eval(read_eimg(args.truth))
    report = {
        "re": relative_error(recon_field, truth_field),
        "mssim": mssim(recon_field, truth_field),
    }
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_render(args) -> int:
    field = read_eimg(args.image)
    render_slice(field, args.out, axis=args.axis, index=args.index)
    print(f"wrote {args.out}")
    if args.voxel_out is not None:
        rows = threshold_voxels(field, args.voxel_threshold)
        header = "x,y,value" if field.ndim == 2 else "x,y,z,value"
        with open(args.voxel_out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(header + "\n")
            for row in rows:
                coords = ",".join(str(int(c)) for c in row[:-1])
                fh.write(f"{coords},{row[-1]!r}\n")
        print(f"wrote {args.voxel_out} ({len(rows)} cells)")
    return 0


def _cmd_repro(args) -> int:
    summary = study.run_desk_study(args.out_dir, seed=args.seed, workers=args.workers)
    with open(summary, "r", encoding="ascii") as fh:
        sys.stdout.write(fh.read())
    print(f"summary: {summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eitprior",
        description="Difference EIT reconstruction with an untrained shallow-MLP prior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterize a built-in case or JSON phantom spec")
    p.add_argument("--case", type=int, choices=range(1, 6), help="built-in case id")
    p.add_argument("--spec", help="phantom spec as a JSON file or literal")
    p.add_argument("--grid", type=int, default=64, help="cells per transverse axis")
    p.add_argument("--nz", type=int, help="z cells (3D phantoms)")
    p.add_argument("--difference", action="store_true",
                   help="write the normalized change against a uniform background")
    p.add_argument("--out", required=True, help="output .eimg path")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("protocol", help="list a stimulation-measurement protocol")
    p.add_argument("kind", choices=("2d", "3d"))
    p.add_argument("--electrodes", type=int, default=16, help="electrodes per ring")
    p.set_defaults(func=_cmd_protocol)

    p = sub.add_parser("simulate", help="simulate raw and normalized voltages")
    p.add_argument("--phantom", required=True, help="observed conductivity .eimg")
    p.add_argument("--protocol", required=True, choices=("2d", "3d"))
    p.add_argument("--reference", help="reference conductivity .eimg")
    p.add_argument("--background", type=float, default=2.0,
                   help="uniform reference conductivity when --reference is absent")
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--snr-db", type=float, help="add Gaussian noise to the observed frame")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--out-prefix", required=True,
                   help="writes PREFIX.vo/.vr/.v.f64vec")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("jacobian", help="sensitivity matrix at a reference field")
    p.add_argument("--reference", help="reference conductivity .eimg")
    p.add_argument("--grid", type=int, help="circular/cylindrical region size")
    p.add_argument("--nz", type=int, help="z cells for a cylindrical region")
    p.add_argument("--background", type=float, default=2.0)
    p.add_argument("--protocol", required=True, choices=("2d", "3d"))
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--out", required=True, help="output .f64mat path")
    p.set_defaults(func=_cmd_jacobian)

    p = sub.add_parser("recon", help="reconstruct from a matrix, data, and config JSON")
    p.add_argument("--jacobian", required=True)
    p.add_argument("--voltages", required=True, help="normalized data .f64vec")
    p.add_argument("--mask", help=".eimg whose mask defines the region")
    p.add_argument("--grid", type=int)
    p.add_argument("--nz", type=int)
    p.add_argument("--config", required=True, help="config as a JSON file or literal")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output .eimg path")
    p.add_argument("--trace", help="loss trace CSV (default: OUT.trace.csv)")
    p.add_argument("--manifest", help="run manifest JSON (default: OUT.manifest.json)")
    p.set_defaults(func=_cmd_recon)

    p = sub.add_parser("eval", help="score a reconstruction against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="render a grayscale slice to PGM")
    p.add_argument("--image", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), help="slice axis (3D only)")
    p.add_argument("--index", type=int, help="slice index (3D only)")
    p.add_argument("--voxel-threshold", type=float, default=0.5,
                   help="|value| fraction kept by --voxel-out")
    p.add_argument("--voxel-out", help="also export strong cells as CSV")
    p.add_argument("--out", required=True, help="output .pgm path")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("repro", help="run the five-case desk-scale study")
    p.add_argument("--scale", choices=("desk",), default="desk")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, help="parallel case workers (default: EIT_RSIP_THREADS)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_repro)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FormatError, FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
