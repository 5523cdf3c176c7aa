"""Command-line front end.

One binary, subcommand style: gen, train-src, discover, pseudo, selftrain,
eval, hist. Every command reads JSON config / SCST tensors, writes its
outputs under --out, and prints a single-line JSON summary to stdout.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 input validation error (malformed tensors, mismatched shapes), 5 stage
failure (generation, discovery, training). On failure the files created by
the invocation are removed, so reruns start clean. SCAST_LOG selects the
stderr log level (error, info, debug).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from .config import RunConfig, from_dict, load_config
from .errors import ConfigError, ScastError, TensorFormatError
from .metrics import (
    SCOPE_ALL,
    SCOPE_BACK,
    SCOPE_TEXT,
    dense_prf,
    likelihood_metric,
    mean_entropy,
    region_prf_iou50,
    scope_mask,
    score_histogram,
)
from .model import forward, init_params, train_source, LossWeights, OptimConfig
from .pseudolabel import (
    CoRegConfig,
    assign_pseudo_labels,
    compute_thresholds,
    coreg_distance,
    coreg_filter_pooled,
)
from .rng import stream
from .selftrain import MODES, parse_mode, planned_iterations, run
from .subcat import ClusterParams, SubcategoryModel, discover_subcategories
from .synthgen import Domain, DomainSample, WorldSpec, default_world, generate_domain
from .tensorio import read_tensor, write_tensor
from .types import LabelMask, PixelGrid

log = logging.getLogger("scast")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

CSV_COLUMNS = ["round", "rho", "precision", "recall", "f_score", "entropy",
               "likelihood", "err_rate", "selected_bi", "selected_sub", "dropped"]


def _setup_logging() -> None:
    name = os.environ.get("SCAST_LOG", "error").lower()
    if name not in _LOG_LEVELS:
        raise ConfigError("SCAST_LOG", f"must be one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(
        level=_LOG_LEVELS[name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# output tracking: anything created by a failed invocation is removed
# ---------------------------------------------------------------------------

class _Outputs:
    def __init__(self, root: Path):
        self.created: list[Path] = []
        if not root.exists():
            root.mkdir(parents=True)
            self.created.append(root)
        self.root = root

    def file(self, *rel) -> Path:
        p = self.root.joinpath(*[str(r) for r in rel])
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.created:
            self.created.append(p)
        return p

    def directory(self, *rel) -> Path:
        p = self.root.joinpath(*[str(r) for r in rel])
        if not p.exists() and p not in self.created:
            self.created.append(p)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def discard(self) -> None:
        for p in reversed(self.created):
            try:
                if p.is_dir():
                    shutil.rmtree(p, ignore_errors=True)
                else:
                    p.unlink(missing_ok=True)
            except OSError:
                pass


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))   # shortest round-trip text, even for numpy scalars
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# manifest plumbing
# ---------------------------------------------------------------------------

def _load_manifest(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    return manifest


def _manifest_samples(manifest: dict, base: Path, domain: str, split: str):
    """Load the tensors of every matching sample record."""
    world = manifest["world"]
    n_sub = world["s_text"] + world["s_back"]
    out = []
    for rec in manifest["samples"]:
        if rec["domain"] != domain or rec["split"] != split:
            continue
        feats = read_tensor(base / rec["features"])
        bic = read_tensor(base / rec["biclass"])
        sub = read_tensor(base / rec["subpop"])
        out.append((rec["id"], DomainSample(
            grid=PixelGrid(feats),
            biclass=LabelMask(bic.astype(np.int32), num_classes=2),
            true_subpop=LabelMask(sub.astype(np.int32), num_classes=n_sub),
        )))
    if not out:
        raise ValueError(f"manifest has no samples with domain={domain} split={split}")
    return out


def _load_submodel(path: Path) -> SubcategoryModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    centroids = read_tensor(path.parent / doc["centroids"]).astype(np.float64)
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    centroids = centroids / np.maximum(norms, 1e-12)
    return SubcategoryModel(
        k_text=doc["k_text"],
        k_back=doc["k_back"],
        centroids=centroids,
        parent=np.asarray(doc["parent"], dtype=np.int32),
        params=ClusterParams(doc["eps"], doc["min_pts"], doc["downsample"]),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, args, out: _Outputs) -> dict:
    world = default_world(cfg)
    n = cfg.world.n_train + cfg.world.n_eval
    records = []
    total = 0
    for domain in (Domain.SOURCE, Domain.TARGET):
        samples = generate_domain(world, domain, n)
        for i, s in enumerate(samples):
            split = "train" if i < cfg.world.n_train else "eval"
            sid = f"{domain.value}-{i:03d}"
            rec = {"id": sid, "domain": domain.value, "split": split, "index": i}
            for kind, arr in (("features", s.grid.features),
                              ("biclass", s.biclass.labels),
                              ("subpop", s.true_subpop.labels)):
                fname = f"{sid}.{kind}.scst"
                write_tensor(arr, out.file(fname))
                rec[kind] = fname
            records.append(rec)
            total += 1
    manifest = {
        "version": 1,
        "config": cfg.to_dict(),
        "world": world.to_dict(),
        "samples": records,
    }
    _write_json(out.file("manifest.json"), manifest)
    return {"command": "gen", "out": str(out.root), "samples": total}


def cmd_train_src(cfg: RunConfig, args, out: _Outputs) -> dict:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    samples = [s for _, s in _manifest_samples(manifest, manifest_path.parent,
                                               "source", "train")]
    params = init_params(cfg.d_in, cfg.d_h, stream(cfg.seed, "init"))
    optim = OptimConfig(
        lr0=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        power=cfg.power,
        max_iter=planned_iterations(cfg, MODES["baseline"], len(samples), 0))
    w = LossWeights(cfg.lambda_bi, cfg.lambda_sub)
    _, trace = train_source(
        params, samples, None, w, optim, kind=cfg.loss,
        epochs=cfg.source_epochs, batch_size=cfg.batch_size,
        rng=stream(cfg.seed, "train", "src"))
    ckpt_dir = out.directory("checkpoint")
    ckpt.save_checkpoint(ckpt_dir, params)
    _write_csv(out.file("trace.csv"), ["epoch", "loss_bi", "loss_sub", "lr"],
               [[t["epoch"], t["loss_bi"], t["loss_sub"], t["lr"]] for t in trace])
    final = trace[-1]["loss_bi"] if trace else float("nan")
    return {"command": "train-src", "checkpoint": str(ckpt_dir),
            "epochs": cfg.source_epochs, "final_loss_bi": final}


def cmd_discover(cfg: RunConfig, args, out: _Outputs) -> dict:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    pairs = _manifest_samples(manifest, manifest_path.parent, "source", "train")
    params = ckpt.load_checkpoint(args.checkpoint)
    feats = [forward(params, s.grid, want_sub=False)[0] for _, s in pairs]
    model, y_sub = discover_subcategories(
        feats, [s.biclass for _, s in pairs],
        ClusterParams(cfg.eps, cfg.min_pts, cfg.downsample))
    write_tensor(model.centroids.astype(np.float32), out.file("centroids.scst"))
    _write_json(out.file("submodel.json"), {
        "k": model.k, "k_text": model.k_text, "k_back": model.k_back,
        "parent": model.parent.tolist(), "eps": model.params.eps,
        "min_pts": model.params.min_pts, "downsample": model.params.downsample,
        "centroids": "centroids.scst",
    })
    for (sid, _), mask in zip(pairs, y_sub):
        write_tensor(mask.labels, out.file(f"ysub-{sid}.scst"))
    return {"command": "discover", "k_text": model.k_text,
            "k_back": model.k_back, "out": str(out.root)}


def cmd_pseudo(cfg: RunConfig, args, out: _Outputs) -> dict:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    pairs = _manifest_samples(manifest, manifest_path.parent, "target", "train")
    params = ckpt.load_checkpoint(args.checkpoint)
    submodel = _load_submodel(Path(args.submodel)) if args.submodel else None
    if submodel is not None and not params.has_sub:
        raise ValueError("submodel given but checkpoint has no subcategory head")
    rho = args.rho if args.rho is not None else cfg.rho_schedule[0]

    p_bis, p_subs = [], []
    for _, s in pairs:
        _, p_bi, p_sub = forward(params, s.grid, want_sub=submodel is not None)
        p_bis.append(p_bi)
        p_subs.append(p_sub)

    theta_bi = compute_thresholds(p_bis, rho)
    y_bi = [assign_pseudo_labels(p, theta_bi) for p in p_bis]
    summary = {"command": "pseudo", "rho": rho,
               "theta_bi": theta_bi.thresholds.tolist(),
               "selected_bi": int(sum((m.labels != -1).sum() for m in y_bi))}

    y_sub = None
    if submodel is not None:
        theta_sub = compute_thresholds(p_subs, rho)
        y_sub = [assign_pseudo_labels(p, theta_sub) for p in p_subs]
        dists = [coreg_distance(pb, ps, submodel.parent)
                 for pb, ps in zip(p_bis, p_subs)]
        coreg = CoRegConfig(cfg.rho_reg, per_image=args.per_image)
        if coreg.per_image:
            fb_all, fs_all, dropped = [], [], 0
            theta_reg = None
            for b, s, d in zip(y_bi, y_sub, dists):
                fb, fs, rep = coreg_filter_pooled([b], [s], [d], coreg)
                fb_all.append(fb[0])
                fs_all.append(fs[0])
                dropped += rep.n_dropped
                theta_reg = rep.theta_reg
        else:
            fb_all, fs_all, rep = coreg_filter_pooled(y_bi, y_sub, dists, coreg)
            dropped = rep.n_dropped
            theta_reg = rep.theta_reg
        y_bi, y_sub = fb_all, fs_all
        for (sid, _), d in zip(pairs, dists):
            write_tensor(np.asarray(d, dtype=np.float32), out.file(f"dist-{sid}.scst"))
        summary.update({"theta_sub": theta_sub.thresholds.tolist(),
                        "theta_reg": theta_reg, "dropped": dropped,
                        "selected_sub": int(sum((m.labels != -1).sum() for m in y_sub))})

    for (sid, _), mask in zip(pairs, y_bi):
        write_tensor(mask.labels, out.file(f"ybi-{sid}.scst"))
    if y_sub is not None:
        for (sid, _), mask in zip(pairs, y_sub):
            write_tensor(mask.labels, out.file(f"ysub-{sid}.scst"))
    _write_json(out.file("report.json"), summary)
    return summary


def cmd_selftrain(cfg: RunConfig, args, out: _Outputs) -> dict:
    mode = parse_mode(args.mode)
    rounds_dir = out.directory("rounds")

    def snapshot(state):
        ckpt.save_checkpoint(out.directory("rounds", f"round-{state.round_index:02d}"),
                             state.params)

    result = run(cfg, mode, coreg_per_image=args.per_image, round_hook=snapshot)
    _write_csv(out.file("rounds.csv"), CSV_COLUMNS,
               [[row[c] for c in CSV_COLUMNS] for row in result.rows])
    _write_csv(out.file("trace.csv"), ["epoch", "loss_bi", "loss_sub", "lr"],
               [[t["epoch"], t["loss_bi"], t["loss_sub"], t["lr"]]
                for t in result.source_trace])
    ckpt.save_checkpoint(out.directory("checkpoint"), result.state.params)
    if result.state.submodel is not None:
        model = result.state.submodel
        write_tensor(model.centroids.astype(np.float32), out.file("centroids.scst"))
        _write_json(out.file("submodel.json"), {
            "k": model.k, "k_text": model.k_text, "k_back": model.k_back,
            "parent": model.parent.tolist(), "eps": model.params.eps,
            "min_pts": model.params.min_pts, "downsample": model.params.downsample,
            "centroids": "centroids.scst",
        })
    if result.state.pseudo_bi is not None:
        for i, mask in enumerate(result.state.pseudo_bi):
            write_tensor(mask.labels, out.file(f"mask-bi-{i:03d}.scst"))
    if result.state.pseudo_sub is not None:
        for i, mask in enumerate(result.state.pseudo_sub):
            write_tensor(mask.labels, out.file(f"mask-sub-{i:03d}.scst"))
    if not any(rounds_dir.iterdir()):
        rounds_dir.rmdir()
    final = result.rows[-1]
    return {"command": "selftrain", "mode": args.mode,
            "rounds": len(result.rows) - 1, "f_score": final["f_score"],
            "out": str(out.root)}


def _eval_inputs(cfg, args):
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    pairs = _manifest_samples(manifest, manifest_path.parent, args.domain, args.split)
    params = ckpt.load_checkpoint(args.checkpoint)
    return pairs, params


def cmd_eval(cfg: RunConfig, args, out: _Outputs) -> dict:
    pairs, params = _eval_inputs(cfg, args)
    preds, trues, probs = [], [], []
    region_p, region_r = [], []
    for _, s in pairs:
        _, p_bi, _ = forward(params, s.grid, want_sub=False)
        pred = np.argmax(p_bi, axis=2).astype(np.int32)
        preds.append(pred)
        trues.append(s.biclass.labels)
        probs.append(p_bi.reshape(-1, 2))
        rp, rr, _ = region_prf_iou50(pred, s.biclass)
        region_p.append(rp)
        region_r.append(rr)
    pred = np.stack(preds)
    true = np.stack(trues)
    pooled = np.concatenate(probs)[None, :, :]
    truth_flat = true.reshape(1, -1)

    precision, recall, f_score = dense_prf(pred, true)
    rp = float(np.mean(region_p))
    rr = float(np.mean(region_r))
    rf = 2 * rp * rr / (rp + rr) if rp + rr else 0.0

    rows = [("dense_precision", SCOPE_ALL, precision),
            ("dense_recall", SCOPE_ALL, recall),
            ("dense_f", SCOPE_ALL, f_score),
            ("region_precision", SCOPE_ALL, rp),
            ("region_recall", SCOPE_ALL, rr),
            ("region_f", SCOPE_ALL, rf)]
    for scope in (SCOPE_ALL, SCOPE_TEXT, SCOPE_BACK):
        sel = scope_mask(truth_flat, scope)
        rows.append(("entropy", scope, mean_entropy(pooled, sel)))
        rows.append(("likelihood", scope, likelihood_metric(pooled, sel)))
    _write_csv(out.file("metrics.csv"), ["metric", "scope", "value"], rows)
    return {"command": "eval", "domain": args.domain, "split": args.split,
            "dense_f": f_score, "region_f": rf, "out": str(out.root)}


def cmd_hist(cfg: RunConfig, args, out: _Outputs) -> dict:
    pairs, params = _eval_inputs(cfg, args)
    channel = {"back": 0, "text": 1}[args.channel]
    probs = []
    for _, s in pairs:
        _, p_bi, _ = forward(params, s.grid, want_sub=False)
        probs.append(p_bi.reshape(-1, 2))
    pooled = np.concatenate(probs)[None, :, :]
    hist = score_histogram(pooled, channel, args.bins)
    rows = [(hist.edges[i], hist.edges[i + 1], int(hist.counts[i]))
            for i in range(hist.bins)]
    _write_csv(out.file("hist.csv"), ["bin_lo", "bin_hi", "count"], rows)
    return {"command": "hist", "channel": args.channel, "bins": args.bins,
            "edge_mass": hist.edge_mass(), "total": hist.total,
            "out": str(out.root)}


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scast",
        description="Subcategory-aware self-training laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="bound internal numeric parallelism")

    p = sub.add_parser("gen", help="generate paired source/target samples")
    common(p)

    p = sub.add_parser("train-src", help="source-supervised training")
    common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("discover", help="subcategory discovery on source features")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("pseudo", help="one pseudo-labelling pass on target train")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--submodel", default=None,
                   help="submodel.json for subcategory labels + filtering")
    p.add_argument("--rho", type=float, default=None,
                   help="selection percentage (default: first schedule entry)")
    p.add_argument("--per-image", action="store_true",
                   help="apply the disagreement drop per image instead of pooled")

    p = sub.add_parser("selftrain", help="full multi-round pipeline")
    common(p)
    p.add_argument("--mode", required=True, choices=sorted(MODES))
    p.add_argument("--per-image", action="store_true")

    p = sub.add_parser("eval", help="dense/region metrics for a checkpoint")
    common(p, config_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", default="target", choices=["source", "target"])
    p.add_argument("--split", default="eval", choices=["train", "eval"])

    p = sub.add_parser("hist", help="prediction-score histogram CSV")
    common(p, config_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--channel", required=True, choices=["text", "back"])
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--domain", default="target", choices=["source", "target"])
    p.add_argument("--split", default="eval", choices=["train", "eval"])

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train-src": cmd_train_src,
    "discover": cmd_discover,
    "pseudo": cmd_pseudo,
    "selftrain": cmd_selftrain,
    "eval": cmd_eval,
    "hist": cmd_hist,
}


def _config_for(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        manifest = _load_manifest(Path(args.manifest))
        cfg = from_dict(manifest["config"])
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    try:
        _setup_logging()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = _build_parser()
    args = parser.parse_args(argv)
    outputs = None
    try:
        cfg = _config_for(args)
        outputs = _Outputs(Path(args.out))
        limits = (threadpool_limits(limits=args.threads)
                  if args.threads else contextlib.nullcontext())
        with limits:
            summary = _COMMANDS[args.command](cfg, args, outputs)
        print(json.dumps(summary, sort_keys=True))
        return 0
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except OSError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = 3
    except (TensorFormatError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = 4
    except ScastError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = 5
    if outputs is not None:
        outputs.discard()
    return code


if __name__ == "__main__":
    sys.exit(main())
