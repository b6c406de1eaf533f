"""Operator-facing command line.

Subcommands: generate, gen-volumes, gen-psf, simulate, views, refocus,
bgremove, evaluate, pca, sweep-sbr, verify.  Every command is deterministic
given its config and seed; the resolved config is echoed into the output
directory as config.json.  Logs are line-oriented key=value.  Exit codes:
0 ok, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, stackio
from .bgremove import BgrParams, remove_background
from .lightfield import extract_views, refocus, save_refocus, save_views
from .metrics import MatchConfig, detect, f1_vs_depth, match, pca_patches
from .optics import load_psf_stack, save_psf_stack, synthesize_psf_stack
from .presets import Preset, get_preset
from .scatter import (
    AttenuationModel,
    Measurement,
    UndefinedSignalError,
    load_measurement,
    sample_noise_params,
    save_measurement,
    simulate_pair,
)
from .stackio import build_manifest, load_manifest, read_stack, verify_manifest
from .volume import (
    Volume,
    load_volume,
    rasterize,
    read_emitters_csv,
    sample_emitters,
    save_volume,
    write_emitters_csv,
)

SEED_ENV = "SCATTERFIELD_SEED"
DEFAULT_SWEEP_SBRS = (1.05, 1.25, 1.35, 2.0, 3.0)
DEFAULT_SWEEP_LS = (80.0, 160.0, 320.0)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def log(event: str, **kv) -> None:
    parts = [f"event={event}"]
    parts += [f"{k}={v}" for k, v in kv.items()]
    print(" ".join(parts), flush=True)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _echo_config(out_dir: Path, args, preset: Preset | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    if preset is not None:
        cfg["preset_resolved"] = preset.to_dict()
    with open(out_dir / "config.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(cfg, f, indent=2, default=str)
        f.write("\n")


def _match_config(args) -> MatchConfig:
    return MatchConfig(
        intensity_threshold=args.threshold,
        lateral_tol_um=args.lateral_tol,
        axial_tol_um=args.axial_tol,
        matcher=args.matcher,
    )


def _seeds_for_sample(child: np.random.SeedSequence) -> dict:
    vals = child.generate_state(4)
    return {
        "volume": int(vals[0]),
        "background": int(vals[1]),
        "noise": int(vals[2]),
        "sbr": int(vals[3]),
    }


def _generate_sample(
    preset: Preset,
    out_dir: Path,
    sample_id: str,
    seeds: dict,
    sbr_range: tuple[float, float],
    with_noise: bool,
    ls_um: float | None,
    clip: bool,
    shared_bg: bool,
) -> dict:
    geometry = preset.geometry()
    psf = synthesize_psf_stack(preset.psf_params(), geometry, preset.z_planes_um())
    volume_seed = seeds["volume"]
    emitters = sample_emitters(preset.recipe(seed=volume_seed))
    while not emitters:
        volume_seed += 1
        log("resample_empty_volume", id=sample_id, seed=volume_seed)
        emitters = sample_emitters(preset.recipe(seed=volume_seed))
    recipe = preset.recipe(seed=volume_seed)
    vol = rasterize(emitters, recipe)

    sbr = float(np.random.default_rng(seeds["sbr"]).uniform(*sbr_range))
    noise = sample_noise_params(seeds["noise"]) if with_noise else None
    attenuation = (
        AttenuationModel(scattering_length_um=ls_um, surface_z_um=preset.z_origin_um)
        if ls_um
        else None
    )
    m, gt = simulate_pair(
        vol,
        psf,
        preset.bg_params(shared=shared_bg),
        geometry,
        sbr_target=sbr,
        noise=noise,
        attenuation=attenuation,
        bg_seed=seeds["background"],
        clip=clip,
    )
    m.meta.seeds["volume"] = int(volume_seed)

    vs = extract_views(m, geometry)
    rfv = refocus(vs, geometry, preset.z_planes_um(), z_focus_um=preset.z_focus_um)

    save_measurement(out_dir / f"{sample_id}_meas.sbrb", m)
    save_views(out_dir / f"{sample_id}_views.sbrb", vs, meta=m.meta.to_dict())
    save_refocus(out_dir / f"{sample_id}_refocus.sbrb", rfv, meta=m.meta.to_dict())
    save_volume(out_dir / f"{sample_id}_volume.sbrb", gt, meta=m.meta.to_dict())
    write_emitters_csv(out_dir / f"{sample_id}_emitters.csv", gt.emitters)
    return {"id": sample_id, "sbr": sbr, "ls_um": ls_um}


def cmd_generate(args) -> int:
    preset = get_preset(args.preset)
    if args.preset == "paper":
        log("warning", msg="paper_preset_is_large", sensor=str(preset.sensor_shape))
    seed = _resolve_seed(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, args, preset)
    children = np.random.SeedSequence(seed).spawn(args.n)
    jobs = max(1, args.jobs)
    tasks = [
        (preset, out_dir, f"s{i:04d}", _seeds_for_sample(children[i]),
         (args.sbr_min, args.sbr_max), not args.no_noise, args.ls, args.clip, args.shared_bg)
        for i in range(args.n)
    ]
    if jobs == 1:
        for t in tasks:
            rec = _generate_sample(*t)
            log("sample", id=rec["id"], sbr=f"{rec['sbr']:.4f}", ls=rec["ls_um"])
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_generate_sample, *zip(*tasks)):
                log("sample", id=rec["id"], sbr=f"{rec['sbr']:.4f}", ls=rec["ls_um"])
    names = ("test", "test") if args.split == "test" else ("train", "val")
    fractions = (1.0, 0.0) if args.split == "test" else (0.8, 0.2)
    manifest = build_manifest(out_dir, split_seed=seed, fractions=fractions, split_names=names)
    log("manifest", path=str(out_dir / "manifest.json"), samples=len(manifest.records))
    return EXIT_OK


def cmd_gen_volumes(args) -> int:
    preset = get_preset(args.preset)
    seed = _resolve_seed(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, args, preset)
    children = np.random.SeedSequence(seed).spawn(args.n)
    for i in range(args.n):
        recipe = preset.recipe(seed=int(children[i].generate_state(1)[0]))
        emitters = sample_emitters(recipe)
        vol = rasterize(emitters, recipe)
        sid = f"s{i:04d}"
        save_volume(out_dir / f"{sid}_volume.sbrb", vol)
        write_emitters_csv(out_dir / f"{sid}_emitters.csv", emitters)
        log("volume", id=sid, emitters=len(emitters))
    return EXIT_OK


def cmd_gen_psf(args) -> int:
    preset = get_preset(args.preset)
    psf = synthesize_psf_stack(preset.psf_params(), preset.geometry(), preset.z_planes_um())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_psf_stack(args.out, psf)
    log("psf", path=args.out, planes=psf.n_planes)
    return EXIT_OK


def cmd_simulate(args) -> int:
    preset = get_preset(args.preset)
    seed = _resolve_seed(args)
    geometry = preset.geometry()
    if args.psf:
        psf = load_psf_stack(args.psf, expected_planes=preset.n_planes)
    else:
        psf = synthesize_psf_stack(preset.psf_params(), geometry, preset.z_planes_um())
    out_dir = Path(args.out)
    _echo_config(out_dir, args, preset)
    volume_paths = sorted(Path(args.volumes).glob("*_volume.sbrb"))
    if not volume_paths:
        raise DataError(f"no *_volume.sbrb files in {args.volumes}")
    children = np.random.SeedSequence(seed).spawn(len(volume_paths))
    for i, vp in enumerate(volume_paths):
        sid = vp.name[: -len("_volume.sbrb")]
        vol = load_volume(vp)
        seeds = _seeds_for_sample(children[i])
        sbr = float(np.random.default_rng(seeds["sbr"]).uniform(args.sbr_min, args.sbr_max))
        noise = sample_noise_params(seeds["noise"]) if not args.no_noise else None
        attenuation = (
            AttenuationModel(scattering_length_um=args.ls, surface_z_um=preset.z_origin_um)
            if args.ls
            else None
        )
        try:
            m, _ = simulate_pair(
                vol,
                psf,
                preset.bg_params(shared=args.shared_bg),
                geometry,
                sbr_target=sbr,
                noise=noise,
                attenuation=attenuation,
                bg_seed=seeds["background"],
                clip=args.clip,
            )
        except UndefinedSignalError:
            log("skip_empty_volume", id=sid)
            continue
        save_measurement(out_dir / f"{sid}_meas.sbrb", m)
        log("measurement", id=sid, sbr=f"{sbr:.4f}")
    return EXIT_OK


def _input_files(path: str, pattern: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob(pattern))
        if not files:
            raise DataError(f"no {pattern} files in {p}")
        return files
    if not p.exists():
        raise DataError(f"{p} does not exist")
    return [p]


def cmd_views(args) -> int:
    preset = get_preset(args.preset)
    geometry = preset.geometry()
    out = Path(args.out)
    files = _input_files(args.input, "*_meas.sbrb")
    out.mkdir(parents=True, exist_ok=True) if len(files) > 1 else out.parent.mkdir(
        parents=True, exist_ok=True
    )
    for f in files:
        m = load_measurement(f)
        vs = extract_views(m, geometry)
        dest = out / f.name.replace("_meas", "_views") if len(files) > 1 else out
        save_views(dest, vs, meta=m.meta.to_dict())
        log("views", input=str(f), output=str(dest))
    return EXIT_OK


def cmd_refocus(args) -> int:
    preset = get_preset(args.preset)
    geometry = preset.geometry()
    out = Path(args.out)
    files = _input_files(args.input, "*_views.sbrb")
    out.mkdir(parents=True, exist_ok=True) if len(files) > 1 else out.parent.mkdir(
        parents=True, exist_ok=True
    )
    from .lightfield import ViewStack

    for f in files:
        data, header = read_stack(f)
        vs = ViewStack(views=data.astype(np.float64), geometry=geometry)
        rfv = refocus(vs, geometry, preset.z_planes_um(), z_focus_um=preset.z_focus_um)
        dest = out / f.name.replace("_views", "_refocus") if len(files) > 1 else out
        save_refocus(dest, rfv, meta=header.get("meta"))
        log("refocus", input=str(f), output=str(dest))
    return EXIT_OK


def cmd_bgremove(args) -> int:
    params = BgrParams(structuring_radius_px=args.radius, mode=args.mode)
    out = Path(args.out)
    files = _input_files(args.input, "*_meas.sbrb")
    out.mkdir(parents=True, exist_ok=True) if len(files) > 1 else out.parent.mkdir(
        parents=True, exist_ok=True
    )
    for f in files:
        m = load_measurement(f)
        cleaned = remove_background(m, params)
        dest = out / f.name if len(files) > 1 else out
        save_measurement(dest, cleaned)
        log("bgremove", input=str(f), output=str(dest), mode=args.mode, radius=args.radius)
    return EXIT_OK


def _load_prediction(pred_dir: Path, sample_id: str) -> Volume | None:
    for name in (f"{sample_id}_pred.sbrb", f"{sample_id}.sbrb", f"{sample_id}_volume.sbrb"):
        if (pred_dir / name).exists():
            return load_volume(pred_dir / name)
    return None


def _write_rows_csv(path: Path, rows: list[dict]) -> None:
    columns = ["z_um", "z_over_ls", "tp", "fp", "fn", "precision", "recall", "f1", "stderr"]
    extra = [c for c in rows[0] if c not in columns] if rows else []
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=extra + columns)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _evaluate_records(records, root: Path, pred_dir: Path, cfg: MatchConfig):
    reports = []
    missing = []
    for rec in records:
        pred = _load_prediction(pred_dir, rec["id"])
        if pred is None:
            missing.append(rec["id"])
            continue
        emitters = read_emitters_csv(root / rec["emitters_csv"])
        reports.append((rec, match(detect(pred, cfg), emitters, cfg, pred.z_planes_um)))
    if missing:
        raise DataError(f"missing predictions for ids: {missing}")
    return reports


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _match_config(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, args)
    records = manifest.records if args.split == "all" else manifest.split(args.split)
    if not records:
        raise DataError(f"no records in split {args.split!r}")
    reports = _evaluate_records(records, manifest.root, Path(args.pred), cfg)

    def sbr_bucket(rec) -> str:
        if not args.sbr_bins or rec.get("sbr") is None:
            return ""
        edges = sorted(args.sbr_bins)
        for lo, hi in zip(edges, edges[1:]):
            if lo <= rec["sbr"] < hi:
                return f"_sbr{lo:g}-{hi:g}"
        return "_sbrother"

    groups: dict = {}
    for rec, rep in reports:
        groups.setdefault((rec.get("ls_um"), sbr_bucket(rec)), []).append((rec, rep))
    summary = []
    for (ls, bucket), pairs in sorted(groups.items(), key=lambda kv: (kv[0][0] is None, kv[0])):
        reps = [r for _, r in pairs]
        meta = read_stack(manifest.root / pairs[0][0]["measurement_path"])[1].get("meta", {})
        surface = meta.get("surface_z_um")
        if surface is None:
            surface = read_stack(manifest.root / pairs[0][0]["volume_path"])[1].get("z0_um", 0.0)
        rows = f1_vs_depth(reps, ls, surface_z_um=surface)
        tag = (f"ls{ls:g}" if ls else "free") + bucket
        _write_rows_csv(out_dir / f"f1_vs_depth_{tag}.csv", rows)
        for rec, rep in pairs:
            summary.append(
                {
                    "id": rec["id"],
                    "ls_um": ls,
                    "sbr": rec.get("sbr"),
                    "tp": rep.tp,
                    "fp": rep.fp,
                    "fn": rep.fn,
                    "precision": rep.precision,
                    "recall": rep.recall,
                    "f1": rep.f1,
                }
            )
        mean_f1 = float(np.mean([r.f1 for r in reps]))
        log("evaluated", ls=ls, samples=len(reps), mean_f1=f"{mean_f1:.4f}")
    with open(out_dir / "report.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump({"per_sample": summary}, f, indent=2)
        f.write("\n")
    return EXIT_OK


def cmd_pca(args) -> int:
    sources = []
    for spec_arg in args.inputs:
        if "=" not in spec_arg:
            raise DataError(f"pca input must be domain=dataset_dir, got {spec_arg!r}")
        domain, dir_str = spec_arg.split("=", 1)
        root = Path(dir_str)
        manifest = load_manifest(root / "manifest.json")
        preset = get_preset(args.preset)
        geometry = preset.geometry()
        cy, cx = geometry.view_centers[4]
        pitch = 4.15
        for rec in manifest.records[: args.max_samples]:
            m = load_measurement(root / rec["measurement_path"])
            emitters = read_emitters_csv(root / rec["emitters_csv"])
            locs = []
            for e in emitters:
                r = int(round(cy + e.y_um / pitch))
                c = int(round(cx + e.x_um / pitch))
                if 16 <= r <= m.data.shape[0] - 16 and 16 <= c <= m.data.shape[1] - 16:
                    locs.append((r, c))
            if locs:
                sources.append((domain, m.data, np.array(locs)))
    rows = pca_patches(sources)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["domain", "pc1", "pc2"])
        w.writeheader()
        for r in rows:
            w.writerow(r)
    log("pca", patches=len(rows), output=str(out))
    return EXIT_OK


def _bgr_baseline_predict(cell_dir: Path, pred_dir: Path, preset: Preset, radius: int) -> None:
    """bgremove -> views -> refocus -> max-normalize, saved as prediction stacks."""
    geometry = preset.geometry()
    params = BgrParams(structuring_radius_px=radius)
    pred_dir.mkdir(parents=True, exist_ok=True)
    for meas_path in sorted(cell_dir.glob("*_meas.sbrb")):
        sid = meas_path.name[: -len("_meas.sbrb")]
        m = load_measurement(meas_path)
        cleaned = remove_background(m, params)
        vs = extract_views(cleaned, geometry)
        rfv = refocus(vs, geometry, preset.z_planes_um(), z_focus_um=preset.z_focus_um)
        planes = rfv.planes
        peak = planes.max()
        if peak > 0:
            planes = planes / peak
        vol = Volume(planes, (preset.dz_um, 4.15, 4.15), preset.z_origin_um, [])
        save_volume(pred_dir / f"{sid}_pred.sbrb", vol)


def cmd_sweep_sbr(args) -> int:
    preset = get_preset(args.preset)
    seed = _resolve_seed(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, args, preset)
    cfg = _match_config(args)
    grid_rows = []
    cell_rows = []
    for si, sbr in enumerate(args.sbrs):
        if sbr <= 1.0:
            log("warning", msg="sbr_at_or_below_one_carries_no_signal", sbr=sbr)
        for li, ls in enumerate(args.lss):
            cell = out_dir / f"cells/sbr{sbr:g}_ls{ls:g}"
            cell.mkdir(parents=True, exist_ok=True)
            cell_seed = int(np.random.SeedSequence([seed, si, li]).generate_state(1)[0])
            children = np.random.SeedSequence(cell_seed).spawn(args.n)
            for i in range(args.n):
                _generate_sample(
                    preset,
                    cell,
                    f"s{i:04d}",
                    _seeds_for_sample(children[i]),
                    (sbr, sbr),
                    not args.no_noise,
                    ls,
                    False,
                    False,
                )
            build_manifest(cell, split_seed=cell_seed, fractions=(1.0, 0.0), split_names=("test", "test"))
            pred_dir = cell / "predictions"
            if args.predictor == "bgr-baseline":
                _bgr_baseline_predict(cell, pred_dir, preset, args.radius)
            elif args.predictor == "oracle":
                pred_dir = cell  # {id}_volume.sbrb doubles as the prediction
            else:
                pred_dir = Path(args.pred_root) / f"sbr{sbr:g}_ls{ls:g}"
            manifest = load_manifest(cell / "manifest.json")
            reports = _evaluate_records(manifest.records, cell, pred_dir, cfg)
            rows = f1_vs_depth([r for _, r in reports], ls, surface_z_um=preset.z_origin_um)
            for r in rows:
                grid_rows.append({"sbr": sbr, "ls_um": ls, **r})
            f1s = np.array([r.f1 for _, r in reports]) if reports else np.zeros(0)
            mean_f1 = float(f1s.mean()) if f1s.size else 0.0
            stderr = float(f1s.std(ddof=1) / np.sqrt(len(f1s))) if len(f1s) > 1 else 0.0
            cell_rows.append(
                {"sbr": sbr, "ls_um": ls, "n": len(f1s), "mean_f1": mean_f1, "stderr_f1": stderr}
            )
            log("cell", sbr=sbr, ls=ls, mean_f1=f"{mean_f1:.4f}")
    _write_rows_csv(out_dir / "sweep_grid.csv", grid_rows)
    with open(out_dir / "cells_summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["sbr", "ls_um", "n", "mean_f1", "stderr_f1"])
        w.writeheader()
        w.writerows(cell_rows)
    log("sweep", output=str(out_dir / "sweep_grid.csv"), rows=len(grid_rows))
    return EXIT_OK


def cmd_verify(args) -> int:
    manifest = load_manifest(args.manifest)
    problems = verify_manifest(manifest)
    for p in problems:
        log("problem", detail=p)
    if problems:
        raise DataError(f"{len(problems)} integrity problems")
    log("verified", records=len(manifest.records))
    return EXIT_OK


def _add_eval_flags(p) -> None:
    p.add_argument("--threshold", type=float, default=0.5, help="detection intensity threshold")
    p.add_argument("--lateral-tol", type=float, default=8.3, help="lateral match tolerance, um")
    p.add_argument("--axial-tol", type=float, default=25.0, help="axial match tolerance, um")
    p.add_argument("--matcher", choices=["hungarian", "greedy"], default="hungarian")


def _add_sim_flags(p) -> None:
    p.add_argument("--sbr-min", type=float, default=1.1)
    p.add_argument("--sbr-max", type=float, default=3.0)
    p.add_argument("--ls", type=float, default=None, help="scattering length, um (test data only)")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--clip", action="store_true", help="clip noisy output at 0")
    p.add_argument("--shared-bg", action="store_true", help="one background canvas for all views")


def build_parser() -> _Parser:
    parser = _Parser(prog="scatterfield", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="full synthetic dataset with views/refocus/manifest")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--split", choices=["trainval", "test"], default="trainval")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gen-volumes", help="ground-truth volumes and emitter CSVs only")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_volumes)

    p = sub.add_parser("gen-psf", help="synthesize the parametric PSF stack")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_psf)

    p = sub.add_parser("simulate", help="measurements from existing volumes")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--volumes", required=True)
    p.add_argument("--psf", default=None, help="measured PSF stack file (default: synthetic)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("views", help="extract 9 views from measurement file(s)")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_views)

    p = sub.add_parser("refocus", help="shift-and-add focal stack from views file(s)")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refocus)

    p = sub.add_parser("bgremove", help="classical background removal")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["morphological_open", "gaussian_highpass"], default="morphological_open")
    p.add_argument("--radius", type=int, default=15)
    p.set_defaults(func=cmd_bgremove)

    p = sub.add_parser("evaluate", help="score prediction stacks against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory with {id}_pred.sbrb stacks")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--sbr-bins", type=float, nargs="+", default=None,
                   help="bucket edges for per-SBR F1 curves")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pca", help="patch PCA across measurement domains")
    p.add_argument("inputs", nargs="+", help="domain=dataset_dir pairs")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int, default=10)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("sweep-sbr", help="fixed-seed test grid over (SBR, ls) cells")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sbrs", type=float, nargs="+", default=list(DEFAULT_SWEEP_SBRS))
    p.add_argument("--lss", type=float, nargs="+", default=list(DEFAULT_SWEEP_LS))
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--predictor", choices=["bgr-baseline", "oracle", "external"], default="bgr-baseline")
    p.add_argument("--pred-root", default=None, help="per-cell predictions for --predictor external")
    p.add_argument("--radius", type=int, default=15, help="bgr baseline structuring radius")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_sweep_sbr)

    p = sub.add_parser("verify", help="manifest referential-integrity check")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "predictor", None) == "external" and not args.pred_root:
        parser.error("--predictor external requires --pred-root")
    try:
        return args.func(args)
    except (DataError, stackio.StackFormatError, stackio.ManifestError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
