"""Command line entry point.  Every stage reads and writes files.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import geometry as G
from . import metrics as M
from . import pipeline as P
from .autoencoder import load_autoencoder, save_autoencoder, train_autoencoder
from .config import ConfigError, RunConfig
from .diffusion import load_diffusion, save_diffusion, train_diffusion
from .sketch_io import (check_header, dump_ndjson, export_svg, parse_quickdraw_ndjson,
                        parse_svg_paths, stroke_count_percentile)
from .tensor import checkpoint
from .tensor.engine import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
TABLE_KIND = "stroke-table"
LATENT_KIND = "latent-dataset"


class DataError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _emit(title, header, rows, out):
    """Delimited block on stdout: a title line, a CSV header and rows."""
    out.write(f"== {title} ==\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])


def _thin(log, n=10):
    """About ``n`` evenly spaced rows of a loss log, always ending on the last one."""
    every = max(1, len(log) // n)
    rows = log[::every]
    return rows if rows[-1] is log[-1] else rows + log[-1:]


def _read_text(path):
    if not os.path.exists(path):
        raise DataError(f"missing input artifact: {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_container(path, kind):
    if not os.path.exists(path):
        raise DataError(f"missing input artifact: {path}")
    return checkpoint.load(path, kind)


def load_sketches(path, normalize=True):
    """Canonical or raw QuickDraw NDJSON; returns normalized sketches when asked."""
    text = _read_text(path)
    check_header(text, "sketches")
    result = parse_quickdraw_ndjson(text)
    if result.errors:
        raise DataError(f"{path}: {result.errors[0]}")
    sketches = result.sketches
    return [G.normalize_sketch(s) for s in sketches] if normalize else sketches


def load_generated(path):
    """Generated sketches from a directory of SVG files or an NDJSON file.

    Non-empty sketches are normalized exactly like the real set, so both sides
    of a comparison see the same canvas convention.
    """
    if not os.path.isdir(path):
        sketches = load_sketches(path, normalize=False)
    else:
        sketches = []
        for n in sorted(n for n in os.listdir(path) if n.endswith(".svg")):
            sk = parse_svg_paths(_read_text(os.path.join(path, n)))
            sk.source_id = n[:-4]
            sketches.append(sk)
    return [G.normalize_sketch(s) if s.n_points else s for s in sketches]


def _parse_ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _parse_floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _resolve(args, overrides):
    cfg = RunConfig.load(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    cfg.update(overrides)
    return cfg


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ---------------------------------------------------------------- stages


def cmd_ingest(args, out):
    cfg = _resolve(args, {"max_strokes": args.max_strokes})
    raw = _read_text(args.input)
    result = parse_quickdraw_ndjson(raw)
    for err in result.errors:
        sys.stderr.write(f"warning: {args.input}: {err}\n")
    sketches = [s for s in result.sketches if s.n_points > 0]
    cap = cfg["max_strokes"]
    if args.percentile is not None and sketches:
        cap = min(cap, stroke_count_percentile(sketches, args.percentile))
    kept = [s for s in sketches if len(s.strokes) <= cap]
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(dump_ndjson(kept, "sketches"))
    rows = [(s.source_id, s.label or "", len(s.strokes)) for s in kept]
    if args.manifest:
        buf = io.StringIO()
        buf.write("# strokeset-manifest v1\n")
        buf.write(f"# max_strokes={cap}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source_id", "label", "stroke_count"])
        w.writerows(rows)
        with open(args.manifest, "w", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    _emit("ingest", ["parsed", "rejected_lines", "dropped_over_cap", "kept", "max_strokes"],
          [(len(result.sketches), len(result.errors), len(sketches) - len(kept), len(kept), cap)], out)
    return EXIT_OK


def _table_from_args(cfg, sketches):
    return P.build_stroke_table(sketches, cfg["n_points"], cfg["resolution"], cfg["gamma"] if cfg["gamma"] > 0 else 50.0,
                                cfg["margin_scale"], cfg["stroke_norm"], with_fields=cfg["gamma"] > 0)


def cmd_preprocess(args, out):
    cfg = _resolve(args, {"gamma": args.gamma, "stroke_norm": False if args.no_stroke_norm else None})
    sketches = load_sketches(args.input)
    table = _table_from_args(cfg, sketches)
    arrays = {"points": table.points, "boxes": table.boxes, "owner": table.owner.astype(np.float64)}
    if table.fields is not None:
        arrays["fields"] = table.fields
    meta = cfg.as_meta()
    meta["n_sketches"] = table.n_sketches
    _ensure_parent(args.out)
    checkpoint.save(args.out, arrays, TABLE_KIND, meta)
    if args.pgm_dir and table.fields is not None:
        os.makedirs(args.pgm_dir, exist_ok=True)
        for i, f in enumerate(table.fields):
            with open(os.path.join(args.pgm_dir, f"stroke_{i:05d}.pgm"), "wb") as fh:
                fh.write(G.udf_to_pgm(G.UdfField(f, cfg["gamma"])))
    _emit("preprocess", ["sketches", "strokes", "n_points", "resolution", "stroke_norm", "fields"],
          [(table.n_sketches, len(table.points), cfg["n_points"], cfg["resolution"], cfg["stroke_norm"],
            table.fields is not None)], out)
    return EXIT_OK


def _load_table(path):
    arrays, meta, _ = _load_container(path, TABLE_KIND)
    table = P.StrokeTable(arrays["points"], arrays["boxes"], arrays.get("fields"),
                          arrays["owner"].astype(np.int64), int(meta["n_sketches"]),
                          meta.get("run.stroke_norm", "True") == "True")
    return table, meta


def _table_config(args, meta, overrides):
    """Run config for a stage that consumes a stroke table: data keys come from the table."""
    cfg = _resolve(args, overrides)
    for key in ("n_points", "resolution", "gamma", "margin_scale", "stroke_norm"):
        if f"run.{key}" in meta:
            cfg.set(key, meta[f"run.{key}"])
    return cfg


def cmd_train_encoder(args, out):
    table, meta = _load_table(args.table)
    cfg = _table_config(args, meta, {"enc_steps": args.steps, "seed": args.seed})
    enc_cfg = cfg.encoder()
    if enc_cfg.image_branch and table.fields is None:
        raise DataError("stroke table has no fields; preprocess with gamma > 0 or train with gamma=0")
    res = train_autoencoder(table.points, table.fields if enc_cfg.image_branch else None, enc_cfg,
                            cfg.encoder_training(), seed=cfg["seed"])
    _ensure_parent(args.out)
    save_autoencoder(args.out, res.model, cfg.as_meta())
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("# strokeset-losslog v1\nstep,total,vec,img,kl,ce\n")
            for row in res.log:
                fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
    if args.figure:
        from . import plotting
        plotting.loss_curves(res.log, ["total", "vec", "img", "kl", "ce"], args.figure, "stroke autoencoder")
    _emit("train-encoder", ["step", "total", "vec", "img", "kl", "ce"], _thin(res.log), out)
    return EXIT_OK


def _sketch_labels(path):
    sketches = load_sketches(path)
    return sketches, [s.label or "" for s in sketches]


def cmd_encode_dataset(args, out):
    ae, ae_meta = load_autoencoder(args.encoder) if os.path.exists(args.encoder) else (None, None)
    if ae is None:
        raise DataError(f"missing input artifact: {args.encoder}")
    table, meta = _load_table(args.table)
    cfg = _table_config(args, meta, {"max_strokes": args.max_strokes, "v_mag": args.v_mag})
    if ae.cfg.n_points != table.points.shape[1]:
        raise DataError("encoder and stroke table disagree on points per stroke")
    z = P.encode_table(ae, table)
    seqs, counts = P.pack_latents(z, table.boxes, table.owner, table.n_sketches, cfg["max_strokes"], cfg["v_mag"])
    arrays = {"sequences": seqs, "counts": counts.astype(np.float64)}
    out_meta = cfg.as_meta()
    if args.sketches:
        _, labels = _sketch_labels(args.sketches)
        if len(labels) != table.n_sketches:
            raise DataError("sketch file does not match the stroke table")
        names = sorted(set(labels))
        arrays["labels"] = np.array([names.index(lb) for lb in labels], dtype=np.float64)
        out_meta["class_names"] = ",".join(names)
    _ensure_parent(args.out)
    checkpoint.save(args.out, arrays, LATENT_KIND, out_meta)
    _emit("encode-dataset", ["sketches", "strokes", "max_strokes", "width", "mean_strokes"],
          [(len(seqs), int(counts.sum()), cfg["max_strokes"], seqs.shape[2], float(counts.mean()))], out)
    return EXIT_OK


def cmd_train_diffusion(args, out):
    arrays, meta, _ = _load_container(args.latents, LATENT_KIND)
    cfg = _resolve(args, {"diff_steps": args.steps, "seed": args.seed})
    for key in ("d_f", "max_strokes", "v_mag", "stroke_norm"):
        cfg.set(key, meta[f"run.{key}"])
    seqs = arrays["sequences"]
    labels = arrays["labels"].astype(np.int64) if cfg["n_classes"] > 0 and "labels" in arrays else None
    if cfg["n_classes"] > 0 and labels is None:
        raise DataError("n_classes > 0 but the latent dataset carries no labels")
    if labels is not None and labels.max() >= cfg["n_classes"]:
        raise DataError(f"latent dataset has {labels.max() + 1} classes > n_classes={cfg['n_classes']}")
    res = train_diffusion(seqs, cfg.denoiser(), cfg.diffusion_training(), seed=cfg["seed"], labels=labels)
    _ensure_parent(args.out)
    extra = cfg.as_meta()
    if "class_names" in meta:
        extra["class_names"] = meta["class_names"]
    save_diffusion(args.out, res.model, extra)
    if args.figure:
        from . import plotting
        plotting.loss_curves(res.log, ["noise_mse", "split_mse"], args.figure, "latent diffusion")
    _emit("train-diffusion", ["step", "noise_mse", "split_mse"], _thin(res.log), out)
    return EXIT_OK


def _load_models(args):
    for p in (args.encoder, args.diffusion):
        if not os.path.exists(p):
            raise DataError(f"missing input artifact: {p}")
    ae, _ = load_autoencoder(args.encoder)
    diff, _ = load_diffusion(args.diffusion)
    P.check_compatible(ae, diff)
    return ae, diff


def cmd_generate(args, out):
    cfg = _resolve(args, {"seed": args.seed})
    ae, diff = _load_models(args)
    seeds = list(range(cfg["seed"], cfg["seed"] + args.n))
    gens = P.generate(ae, diff, seeds, cond=args.cond)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for g in gens:
        with open(os.path.join(args.out_dir, f"sample_{g.seed:06d}.svg"), "w", encoding="utf-8") as fh:
            fh.write(export_svg(g.sketch, cfg["svg_stroke_width"], cfg["svg_canvas"]))
        rows.append((g.seed, len(g.strokes), "" if args.cond is None else args.cond))
    with open(os.path.join(args.out_dir, "manifest.csv"), "w", encoding="utf-8") as fh:
        fh.write("# strokeset-generated v1\nseed,stroke_count,cond\n")
        fh.writelines(f"{a},{b},{c}\n" for a, b, c in rows)
    _emit("generate", ["seed", "stroke_count", "cond"], rows, out)
    if args.trajectory:
        steps = _parse_ints(args.trajectory)
        snaps = P.snapshot_trajectory(ae, diff, seeds[0], steps, cond=args.cond)
        _emit("trajectory", ["t", "visible_strokes"], [(t, len(s.strokes)) for t, s in zip(steps, snaps)], out)
        traj_dir = os.path.join(args.out_dir, "trajectory")
        os.makedirs(traj_dir, exist_ok=True)
        for t, s in zip(steps, snaps):
            with open(os.path.join(traj_dir, f"seed{seeds[0]:06d}_t{t:04d}.svg"), "w", encoding="utf-8") as fh:
                fh.write(export_svg(s.sketch, cfg["svg_stroke_width"], cfg["svg_canvas"]))
        if args.figure:
            from . import plotting
            plotting.trajectory(snaps, steps, args.figure)
    elif args.figure:
        from . import plotting
        plotting.sketch_grid([g.sketch for g in gens], args.figure, [f"seed {g.seed}" for g in gens])
    return EXIT_OK


def cmd_reconstruct(args, out):
    if not os.path.exists(args.encoder):
        raise DataError(f"missing input artifact: {args.encoder}")
    ae, meta = load_autoencoder(args.encoder)
    cfg = _resolve(args, {})
    for key in ("gamma", "margin_scale", "stroke_norm"):
        if f"run.{key}" in meta:
            cfg.set(key, meta[f"run.{key}"])
    sketches = load_sketches(args.sketches)
    match = [s for s in sketches if s.source_id == args.id]
    if not match:
        raise DataError(f"no sketch with id {args.id!r} in {args.sketches}")
    sk = match[0]
    table = P.build_stroke_table([sk], ae.cfg.n_points, ae.cfg.resolution, cfg["gamma"] if cfg["gamma"] > 0 else 50.0,
                                 cfg["margin_scale"], cfg["stroke_norm"], with_fields=ae.cfg.image_branch)
    rec = P.reconstruct_table(ae, table)
    ref = P.to_sketch_space(table.points, table.boxes)
    err = np.linalg.norm(rec - ref, axis=-1).mean(axis=1)
    rebuilt = P.group_strokes(rec, table.owner, 1)[0]
    rebuilt.source_id = sk.source_id
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(export_svg(rebuilt, cfg["svg_stroke_width"], cfg["svg_canvas"]))
    _emit("reconstruct", ["stroke", "mean_point_error"], list(enumerate(err.tolist())), out)
    return EXIT_OK


def cmd_evaluate(args, out):
    cfg = _resolve(args, {"metric_k": args.k})
    real = load_sketches(args.real)
    gen = load_generated(args.generated)
    k = cfg["metric_k"]
    if len(real) <= k:
        raise DataError(f"need more than k={k} real sketches, got {len(real)}")
    report = M.evaluate(real, gen, cfg.extractor(), k)
    if args.out:
        _ensure_parent(args.out)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("# strokeset-metrics v1\n" + report.to_json() + "\n")
    _emit("evaluate", ["fid", "precision", "recall", "delta", "k", "n_real", "n_gen", "extractor_id"],
          [(report.fid, report.precision, report.recall, report.delta, report.k, report.n_real, report.n_gen,
            report.extractor_id)], out)
    out.write(report.to_table() + "\n")
    return EXIT_OK


def cmd_render_udf(args, out):
    cfg = _resolve(args, {})
    sketches = load_sketches(args.sketches)
    match = [s for s in sketches if s.source_id == args.id] if args.id else sketches[:1]
    if not match:
        raise DataError(f"no sketch with id {args.id!r}")
    strokes = match[0].strokes
    if not 0 <= args.stroke < len(strokes):
        raise DataError(f"sketch has {len(strokes)} strokes; index {args.stroke} out of range")
    local, _ = G.normalize_stroke(G.resample_stroke(strokes[args.stroke], cfg["n_points"]))
    gammas = _parse_floats(args.gamma)
    if any(g <= 0 for g in gammas):
        raise DataError("gamma must be positive for rendering (gamma 0 is the ablation switch)")
    fields, rows = [], []
    base, ext = os.path.splitext(args.out)
    for g in gammas:
        f = G.render_udf(local, g, cfg["resolution"], cfg["margin_scale"])
        fields.append(f.values)
        path = args.out if len(gammas) == 1 else f"{base}_gamma{g:g}{ext or '.pgm'}"
        _ensure_parent(path)
        with open(path, "wb") as fh:
            fh.write(G.udf_to_pgm8(f) if args.bits == 8 else G.udf_to_pgm(f))
        rows.append((g, path, float(f.values.max()), float(f.values.mean())))
    if args.figure:
        from . import plotting
        plotting.gamma_sweep(fields, gammas, args.figure)
    _emit("render-udf", ["gamma", "path", "max", "mean"], rows, out)
    return EXIT_OK


def run_ablation(sketches, cfg, variants, seed=0):
    """Train one autoencoder per variant on the same sketches; returns rows of results."""
    rows = []
    for name in variants:
        vcfg = RunConfig(dict(cfg.values))
        if name == "no-stroke-norm":
            vcfg.set("stroke_norm", False)
        elif name == "gamma-0":
            vcfg.set("gamma", 0.0)
        table = _table_from_args(vcfg, sketches)
        enc_cfg = vcfg.encoder()
        res = train_autoencoder(table.points, table.fields if enc_cfg.image_branch else None, enc_cfg,
                                vcfg.encoder_training(), seed=seed)
        err = P.reconstruction_error(res.model, table)
        rec = P.group_strokes(P.reconstruct_table(res.model, table), table.owner, table.n_sketches)
        k = min(vcfg["metric_k"], len(sketches) - 1)
        report = M.evaluate(sketches, rec, vcfg.extractor(), k)
        rows.append((name, err, report.fid, report.precision, report.recall, res.log[-1][1]))
    return rows


def cmd_ablate(args, out):
    cfg = _resolve(args, {"enc_steps": args.steps, "seed": args.seed})
    sketches = load_sketches(args.sketches)
    if args.limit:
        sketches = sketches[:args.limit]
    variants = ["full"]
    if args.no_stroke_norm:
        variants.append("no-stroke-norm")
    if args.gamma is not None:
        if args.gamma != 0:
            raise DataError("--gamma in ablate only accepts 0 (image branch removed)")
        variants.append("gamma-0")
    if len(variants) == 1:
        variants += ["no-stroke-norm", "gamma-0"]
    rows = run_ablation(sketches, cfg, variants, cfg["seed"])
    _emit("ablate", ["variant", "recon_error", "recon_fid", "precision", "recall", "final_loss"], rows, out)
    if args.figure:
        from . import plotting
        plotting.ablation_bars([r[0] for r in rows], [r[1] for r in rows], args.figure)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (default: $STROKESET_CONFIG)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="strokeset", description="Stroke autoencoder + latent diffusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse QuickDraw NDJSON and filter by stroke count")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")
    s.add_argument("--max-strokes", type=int)
    s.add_argument("--percentile", type=float, help="cap N_s at this stroke-count percentile")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("preprocess", parents=[common], help="resample, normalize and render stroke fields")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--gamma", type=float)
    s.add_argument("--no-stroke-norm", action="store_true")
    s.add_argument("--pgm-dir")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train-encoder", parents=[common], help="train the stroke autoencoder")
    s.add_argument("table")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--log")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_train_encoder)

    s = sub.add_parser("encode-dataset", parents=[common], help="freeze the encoder and emit composite latents")
    s.add_argument("encoder")
    s.add_argument("table")
    s.add_argument("--out", required=True)
    s.add_argument("--sketches", help="sketch file, to attach class labels")
    s.add_argument("--max-strokes", type=int)
    s.add_argument("--v-mag", type=float)
    s.set_defaults(func=cmd_encode_dataset)

    s = sub.add_parser("train-diffusion", parents=[common], help="train the latent set diffusion model")
    s.add_argument("latents")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_train_diffusion)

    s = sub.add_parser("generate", parents=[common], help="sample sketches to SVG")
    s.add_argument("encoder")
    s.add_argument("diffusion")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--cond", type=int)
    s.add_argument("--trajectory", help="comma-separated timesteps to snapshot")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("reconstruct", parents=[common], help="autoencoder round trip of one sketch")
    s.add_argument("encoder")
    s.add_argument("sketches")
    s.add_argument("--id", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", parents=[common], help="FID / precision / recall report")
    s.add_argument("real")
    s.add_argument("generated", help="directory of SVGs or an NDJSON file")
    s.add_argument("--out")
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render-udf", parents=[common], help="render one stroke's distance field as PGM")
    s.add_argument("sketches")
    s.add_argument("--id")
    s.add_argument("--stroke", type=int, default=0)
    s.add_argument("--gamma", default="50", help="one value or a comma-separated sweep")
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_render_udf)

    s = sub.add_parser("ablate", parents=[common], help="compare the full model against ablated variants")
    s.add_argument("sketches")
    s.add_argument("--no-stroke-norm", action="store_true")
    s.add_argument("--gamma", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--limit", type=int)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args, out)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (DataError, checkpoint.FormatError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
