"""Command-line front end.

Subcommands: synth-gen, fit-gmm, sample, chamfer, gradcheck, pretrain-toy.
Every command is deterministic given its flags and seed, writes reports as
JSON embedding the tool version and the fully resolved config, and uses the
exit code contract 0 = success, 1 = check failure, 2 = usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .contrastive import (ContrastiveConfig, ContrastiveParams, FeatureMap,
                          aggregate_global, bcsa, global_loss, info_nce,
                          local_loss, total_loss, toy_pretrain)
from .errors import AlignmentError, DivergenceError, FormatError, InsufficientDataError
from .gmm import DEFAULT_COMPONENTS, fit_em, load_gmm, save_gmm
from .metrics import mean_chamfer
from .pointcloud import atomic_write_text, load_corpus, load_manifest, write_corpus
from .sampling import SamplingConfig, lidar_to_radar
from .synth import SceneSpec, gen_feature_batch, gen_scene
from .tensor import Tensor, finite_diff_check

GRADCHECK_TOL = 1e-5

_SAMPLING_KEYS = {f.name for f in dataclasses.fields(SamplingConfig)}
_CONTRASTIVE_KEYS = {f.name for f in dataclasses.fields(ContrastiveConfig)}
KNOWN_CONFIG_KEYS = _SAMPLING_KEYS | _CONTRASTIVE_KEYS


class CliError(Exception):
    """Usage or I/O problem; maps to exit code 2."""


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config file {p}: expected a flat JSON object")
    unknown = sorted(set(doc) - KNOWN_CONFIG_KEYS)
    if unknown:
        raise CliError(f"config file {p}: unknown keys: {', '.join(unknown)}")
    return doc


def resolve_configs(file_values: dict, overrides: dict) -> tuple[SamplingConfig, ContrastiveConfig, dict]:
    """file values override defaults; explicit CLI flags override the file."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        sampling = SamplingConfig(**{k: v for k, v in merged.items() if k in _SAMPLING_KEYS})
        contrastive = ContrastiveConfig(**{k: v for k, v in merged.items()
                                           if k in _CONTRASTIVE_KEYS})
    except ValueError as exc:
        raise CliError(f"bad config: {exc}") from exc
    resolved = {**dataclasses.asdict(sampling), **dataclasses.asdict(contrastive)}
    return sampling, contrastive, resolved


def _report_header(resolved_config: dict) -> dict:
    return {"version": __version__, "config": resolved_config}


def _write_json(path: str | Path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth-gen


def cmd_synth_gen(args) -> int:
    spec = SceneSpec(seed=args.seed, n_frames=args.frames, n_objects=args.objects,
                     noise_sigma=args.noise)
    scene = gen_scene(spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(out / "lidar", scene.lidar_frames, fmt=args.format)
        write_corpus(out / "radar", scene.radar_frames, fmt=args.format)
        counts = [f.n_points for f in scene.radar_frames]
        atomic_write_text(out / "radar_counts.txt", "".join(f"{c}\n" for c in counts))
        top = {
            "version": __version__,
            "config": dataclasses.asdict(spec),
            "seed": spec.seed,
            "frames": [f.frame_id for f in scene.lidar_frames],
            "motions": [m.to_dict() for m in scene.motions],
            "radar_counts": counts,
        }
        _write_json(out / "manifest.json", top)
    except OSError as exc:
        raise CliError(f"cannot write corpus to {out}: {exc}") from exc
    print(f"wrote {len(scene.lidar_frames)} lidar + {len(scene.radar_frames)} radar "
          f"frames to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit-gmm


def cmd_fit_gmm(args) -> int:
    path = Path(args.counts)
    if not path.exists():
        raise CliError(f"counts file not found: {path}")
    counts = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            value = int(raw)
        except ValueError as exc:
            raise CliError(f"{path} line {lineno}: not an integer: {raw!r}") from exc
        if value <= 0:
            raise CliError(f"{path} line {lineno}: counts must be positive, got {value}")
        counts.append(value)
    try:
        result = fit_em(counts, args.components, tol=args.tol,
                        max_iter=args.max_iter, seed=args.seed)
    except (InsufficientDataError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    save_gmm(result.model, args.out)
    report_path = args.report or f"{args.out}.report.json"
    doc = _report_header({"components": args.components, "tol": args.tol,
                          "max_iter": args.max_iter, "seed": args.seed,
                          "counts_file": str(path)})
    doc.update({
        "n_counts": len(counts),
        "final_log_likelihood": result.ll_trace[-1],
        "iterations": result.n_iter,
        "converged": result.converged,
    })
    _write_json(report_path, doc)
    print(f"fitted {args.components} components on {len(counts)} counts, "
          f"final log-likelihood {result.ll_trace[-1]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    file_cfg = load_config_file(args.config)
    sampling, _, resolved = resolve_configs(file_cfg, {"seed": args.seed})
    if args.ablate_weights != "none":
        keep = args.ablate_weights
        try:
            sampling = dataclasses.replace(
                sampling,
                alpha_int=sampling.alpha_int if keep == "int" else 0.0,
                alpha_dist=sampling.alpha_dist if keep == "dist" else 0.0,
                alpha_spa=sampling.alpha_spa if keep == "spa" else 0.0,
            )
        except ValueError as exc:
            raise CliError(f"ablation leaves no active weight family: {exc}") from exc
        resolved = {**resolved, **{k: getattr(sampling, k)
                                   for k in ("alpha_int", "alpha_dist", "alpha_spa")}}
    try:
        frames = load_corpus(args.input)
    except (FormatError, OSError) as exc:
        raise CliError(f"cannot load input corpus: {exc}") from exc
    if not Path(args.gmm).exists():
        raise CliError(f"gmm model not found: {args.gmm}")
    try:
        model = load_gmm(args.gmm)
    except FormatError as exc:
        raise CliError(f"cannot load gmm model: {exc}") from exc

    outputs, reports = lidar_to_radar(frames, model, sampling)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(out, outputs, fmt=args.format,
                     extra={"config": resolved, "version": __version__,
                            "ablate_weights": args.ablate_weights})
        doc = _report_header(resolved)
        doc["ablate_weights"] = args.ablate_weights
        doc["frames"] = [r.to_dict() for r in reports]
        _write_json(out / "reports.json", doc)
    except OSError as exc:
        raise CliError(f"cannot write output corpus: {exc}") from exc
    print(f"sampled {len(outputs)} pseudo-radar frames to {out}")
    return 0


# ---------------------------------------------------------------------------
# chamfer


def cmd_chamfer(args) -> int:
    try:
        frames_a = load_corpus(args.a)
        frames_b = load_corpus(args.b)
    except (FormatError, OSError) as exc:
        raise CliError(f"cannot load corpus: {exc}") from exc
    try:
        report = mean_chamfer(frames_a, frames_b)
    except AlignmentError as exc:
        raise CliError(str(exc)) from exc
    doc = _report_header({"a": str(args.a), "b": str(args.b)})
    doc.update(report.to_dict())
    _write_json(args.report, doc)
    if args.plot:
        atomic_write_text(args.plot, chamfer_scatter_svg(report.per_frame))
    print(f"{report.mean:.6f}")
    return 0


def chamfer_scatter_svg(per_frame: list[tuple[str, float]],
                        width: int = 640, height: int = 360) -> str:
    """Per-frame scatter with axes, no external plotting dependency."""
    pad = 48
    values = [v for _, v in per_frame] or [0.0]
    vmax = max(values) or 1.0
    n = max(len(values), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{pad - 12}" font-size="12">chamfer (m^2), '
        f'{len(per_frame)} frames</text>',
        f'<text x="{pad - 40}" y="{pad + 4}" font-size="10">{vmax:.3g}</text>',
    ]
    for i, (fid, v) in enumerate(per_frame):
        x = pad + (width - 2 * pad) * (i + 0.5) / n
        y = height - pad - (height - 2 * pad) * (v / vmax)
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="steelblue">'
                     f'<title>{fid}: {v:.6g}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# gradcheck


def gradcheck_components(seed: int = 0) -> dict[str, float]:
    """Max finite-difference relative error for every loss component.

    Instances use temperature 1.0 so the InfoNCE softmax is well away from
    saturation; at the training default 0.07 the losses sit so close to
    their floor that central differences drown in rounding noise.
    """
    rng = np.random.default_rng(seed)
    c, h, w = 4, 6, 8
    cfg = ContrastiveConfig(tau=1.0, batch_size=3)
    params = ContrastiveParams.init(c, seed=seed)
    errors: dict[str, float] = {}

    anchors = [Tensor(rng.normal(size=6), requires_grad=True) for _ in range(3)]
    cands = [Tensor(rng.normal(size=6), requires_grad=True) for _ in range(3)]
    errors["info_nce"] = max(
        finite_diff_check(lambda t: info_nce(anchors, cands, cfg.tau), anchors[0]),
        finite_diff_check(lambda t: info_nce(anchors, cands, cfg.tau), cands[1]),
    )

    f1 = Tensor(rng.normal(size=(c, h)), requires_grad=True)
    f2 = Tensor(rng.normal(size=(c, h)), requires_grad=True)
    readout = Tensor(rng.normal(size=(c, h)))

    def bcsa_scalar(_):
        r1, r2 = bcsa(f1, f2, params.bcsa)
        return T.add(T.tsum(T.mul(r1, readout)), T.tsum(T.mul(r2, readout)))

    errors["bcsa"] = max(
        finite_diff_check(bcsa_scalar, f1),
        finite_diff_check(bcsa_scalar, f2),
        max(finite_diff_check(bcsa_scalar, p) for p in params.bcsa.tensors()),
    )

    fa = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)
    fb = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)
    proj = Tensor(rng.normal(size=c))

    def agg_scalar(_):
        g_a, g_b = aggregate_global(fa, fb, params.global_agg)
        return T.add(T.tsum(T.mul(g_a, proj)), T.tsum(T.mul(g_b, proj)))

    errors["aggregate_global"] = max(
        finite_diff_check(agg_scalar, fa),
        finite_diff_check(agg_scalar, fb),
        max(finite_diff_check(agg_scalar, p) for p in params.global_agg.tensors()),
    )

    rad = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)
    img = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)

    def local_scalar(_):
        f_rad = FeatureMap(rad, "radar", "bev")
        f_img = FeatureMap(img, "image", "bev")
        r = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
        return local_loss(f_rad, f_img, cfg, params, r)

    errors["local_loss"] = max(
        finite_diff_check(local_scalar, rad),
        finite_diff_check(local_scalar, img),
    )

    batch = gen_feature_batch(seed + 7, batch=2, channels=c, height=3, width=3,
                              noise_sigma=0.6)
    maps = [getattr(s, n).tensor for s in batch.scenes
            for n in ("img_bev", "img_fv", "rad_bev", "rad_fv")]
    for t in maps:
        t.requires_grad = True

    def global_scalar(_):
        return global_loss(batch.scenes, cfg, params)

    errors["global_loss"] = max(
        finite_diff_check(global_scalar, maps[0]),
        finite_diff_check(global_scalar, maps[-1]),
        max(finite_diff_check(global_scalar, p) for p in params.global_agg.tensors()),
    )

    batch2 = gen_feature_batch(seed + 11, batch=2, channels=c, height=4, width=8,
                               noise_sigma=0.6)
    maps2 = [getattr(s, n).tensor for s in batch2.scenes
             for n in ("img_bev", "img_fv", "rad_bev", "rad_fv")]
    for t in maps2:
        t.requires_grad = True

    def total_scalar(_):
        r = np.random.Generator(np.random.Philox(key=np.array([seed, 2], dtype=np.uint64)))
        return total_loss(batch2.scenes, cfg, params, r)

    errors["total_loss"] = max(
        finite_diff_check(total_scalar, maps2[0]),
        finite_diff_check(total_scalar, maps2[2]),
    )
    return errors


def cmd_gradcheck(args) -> int:
    errors = gradcheck_components(args.seed)
    failures = [name for name, err in errors.items() if not err < GRADCHECK_TOL]
    for name, err in errors.items():
        status = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:18s} max rel err {err:.3e}  {status}")
    if args.report:
        doc = _report_header({"seed": args.seed, "tol": GRADCHECK_TOL, "tau": 1.0})
        doc["components"] = errors
        doc["failures"] = failures
        _write_json(args.report, doc)
    if failures:
        print(f"gradcheck FAILED: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# pretrain-toy


def cmd_pretrain_toy(args) -> int:
    corpus = Path(args.corpus)
    if not (corpus / "manifest.json").exists():
        raise CliError(f"no manifest.json in {corpus}")
    manifest = load_manifest(corpus)
    frame_ids = manifest.get("frames", [])
    # the corpus supplies scene identities; features are synthetic
    # planted-correspondence stand-ins keyed on (seed, corpus size)
    n_scenes = max(2, min(4, len(frame_ids))) if frame_ids else 3
    batch = gen_feature_batch(seed=args.seed, batch=n_scenes, channels=args.channels,
                              height=args.height, width=args.width,
                              noise_sigma=args.noise)
    cfg = ContrastiveConfig(batch_size=args.columns)
    try:
        trace, _ = toy_pretrain(batch.scenes, cfg, steps=args.steps,
                                learning_rate=args.lr, seed=args.seed)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    doc = _report_header({
        "corpus": str(corpus), "steps": args.steps, "lr": args.lr,
        "seed": args.seed, "channels": args.channels, "height": args.height,
        "width": args.width, "noise": args.noise, "columns": args.columns,
        "scenes": n_scenes,
    })
    doc.update(trace.to_dict())
    _write_json(args.report, doc)
    improved = trace.losses[-1] < trace.losses[0]
    print(f"loss {trace.losses[0]:.6f} -> {trace.losses[-1]:.6f}, "
          f"pos/neg sim {trace.final_pos_sim:.3f}/{trace.final_neg_sim:.3f}")
    if not improved:
        print("no improvement over the run", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudoradar",
        description="pseudo-radar synthesis, evaluation, and contrastive loss checks",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic lidar+radar corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("fit-gmm", help="fit a count mixture to a counts file")
    p.add_argument("--counts", required=True)
    p.add_argument("--components", type=int, default=DEFAULT_COMPONENTS)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("sample", help="run the lidar-to-radar sampling pipeline")
    p.add_argument("--input", required=True, help="lidar corpus directory")
    p.add_argument("--gmm", required=True, help="fitted model JSON")
    p.add_argument("--config", default=None, help="flat JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--ablate-weights", choices=("int", "dist", "spa", "none"),
                   default="none", help="keep only one weight family")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("chamfer", help="mean Chamfer distance between two corpora")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--plot", default=None, help="optional SVG scatter path")
    p.set_defaults(func=cmd_chamfer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pretrain-toy", help="gradient-descent sanity run on planted features")
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--height", type=int, default=6)
    p.add_argument("--width", type=int, default=12)
    p.add_argument("--noise", type=float, default=2.0)
    p.add_argument("--columns", type=int, default=4)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_pretrain_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        # config validation and filesystem failures are usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
