"""``densewf`` command line: gen, train, extract, eval, canon, radon, overlay.

Every option may also come from a JSON file given with ``--config``; options
given on the command line win over the file, the file wins over defaults.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import densee, metrics, overlay
from .phantoms import analytic_wavefront, apply_higher_order_filter, rasterize, sample_phantom
from .radon import N_ANGLES, Sinogram, canonical_map, fbp, inverse_canonical_map, radon
from .shearlet import ShearletConfig
from .tensorio import Manifest, ManifestRecord, load_tensor, save_tensor

DEFAULTS: dict[str, dict[str, Any]] = {
    "gen": {"count": 10, "M": 64, "kind": "jump", "shapes": "3,8", "angle_step": 1, "disk_radius": None},
    "train": {
        "heads": "0,20,40,60,80,100,120,140,160,180",
        "steps": 1500,
        "batch_size": 86,
        "lr": 0.05,
        "centers_per_image": 10,
        "widths": "32,32,64,64",
        "hidden": 1024,
        "domain": "image",
    },
    "extract": {"tau": 0.5, "tau_gate": None, "domain": "image", "angles": None},
    "eval": {"bins": None},
    "canon": {"inverse": False},
    "radon": {"angle_step": 1, "origin": "center", "fbp": False, "offsets": None},
    "overlay": {"legend": None},
}


def phantom_seed(seed: int, index: int) -> int:
    """Per-phantom seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _ints(text: str | None) -> list[int] | None:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [int(t) for t in text]
    if text == "all":
        return list(range(densee.N_HEADS))
    return [int(t) for t in str(text).split(",") if t.strip()]


def _measured_angles(step: int) -> np.ndarray:
    if step < 1 or N_ANGLES % step:
        raise ValueError(f"angle step must divide {N_ANGLES}")
    return np.arange(0, N_ANGLES, step, dtype=float)


# --- commands -----------------------------------------------------------------------------


def cmd_gen(a) -> int:
    if a.kind not in ("jump", "higher_order", "sinogram"):
        raise SystemExit(f"unknown kind {a.kind!r}")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = _ints(a.shapes)
    records = []
    angles = _measured_angles(a.angle_step)
    for k in range(a.count):
        spec = sample_phantom(phantom_seed(a.seed, k), a.M, (lo, hi), disk_radius=a.disk_radius)
        image = rasterize(spec)
        if a.kind == "higher_order":
            image = apply_higher_order_filter(image)
        wf = analytic_wavefront(spec)
        rec = ManifestRecord(image=f"image_{k:05d}.wft", wf=f"wf_{k:05d}.wft", meta={"seed": spec.seed, "phantom": spec.to_json()})
        save_tensor(out / rec.image, image)
        save_tensor(out / rec.wf, wf)
        rec.shapes = {"image": list(image.shape), "wf": list(wf.shape)}
        if a.kind == "sinogram":
            sino = radon(image, a.M, angles, origin="corner")
            swf = canonical_map(wf)
            rec.sinogram, rec.sinogram_wf = f"sinogram_{k:05d}.wft", f"sinogram_wf_{k:05d}.wft"
            save_tensor(out / rec.sinogram, sino.values)
            save_tensor(out / rec.sinogram_wf, swf)
            rec.shapes.update(sinogram=list(sino.values.shape), sinogram_wf=list(swf.shape))
            rec.meta.update(angles=angles.tolist(), origin="corner")
        records.append(rec)
    info = {"kind": a.kind, "seed": a.seed, "M": a.M, "count": a.count}
    Manifest(records, info, root=out).save(out / "manifest.json")
    print(f"wrote {a.count} records to {out / 'manifest.json'}")
    return 0


def _sinogram(man: Manifest, rec: ManifestRecord) -> Sinogram:
    values = load_tensor(man.path(rec.sinogram))
    angles = np.asarray(rec.meta.get("angles", np.arange(values.shape[1])), dtype=float)
    origin = rec.meta.get("origin", "corner")
    return Sinogram(values, angles, np.arange(values.shape[0]) + 0.5, origin, values.shape[0])


def _sources(man: Manifest, domain: str, system) -> list:
    out = []
    for rec in man.records:
        if domain == "image":
            out.append(densee.image_source(load_tensor(man.path(rec.image)), system, load_tensor(man.path(rec.wf))))
        else:
            out.append(densee.sinogram_source(_sinogram(man, rec), system, load_tensor(man.path(rec.sinogram_wf))))
    return out


def _domain_config(man: Manifest, domain: str) -> ShearletConfig:
    rec = man.records[0]
    if domain == "image":
        return ShearletConfig(M=rec.shapes.get("image", [None])[0] or load_tensor(man.path(rec.image)).shape[0])
    if domain == "sinogram":
        return densee.sinogram_system_config(load_tensor(man.path(rec.sinogram)).shape[0])
    raise SystemExit(f"unknown domain {domain!r}")


def cmd_train(a) -> int:
    man = Manifest.load(a.manifest)
    config = _domain_config(man, a.domain)
    system = densee.build_system_cached(config)
    heads = _ints(a.heads)
    data = densee.make_training_set(_sources(man, a.domain, system), heads, a.centers_per_image, a.seed)
    model = densee.DenseeModel.create(config, a.seed, _ints(a.widths), a.hidden)
    cfg = densee.TrainConfig(a.batch_size, a.steps, a.lr, a.seed)
    densee.train(model, data, cfg)
    densee.save_model(model, a.out)
    print(json.dumps({"model": str(a.out), "losses": {str(h): v for h, v in sorted(model.losses.items())}}))
    return 0


def cmd_extract(a) -> int:
    man = Manifest.load(a.manifest)
    model = densee.load_model(a.model)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k, rec in enumerate(man.records):
        if a.domain == "image":
            wf = densee.extract_wavefront(load_tensor(man.path(rec.image)), model, a.tau, tau_gate=a.tau_gate)
            name = f"pred_wf_{k:05d}.wft"
            save_tensor(out / name, wf)
            new = ManifestRecord(image=str(Path(man.root, rec.image).resolve()), wf=name, meta=dict(rec.meta))
            new.shapes = {"wf": list(wf.shape)}
        else:
            Y = densee.extract_sinogram_wavefront(_sinogram(man, rec), model, a.tau, angles=_ints(a.angles), tau_gate=a.tau_gate)
            X = inverse_canonical_map(Y)
            sname, name = f"pred_sinogram_wf_{k:05d}.wft", f"pred_wf_{k:05d}.wft"
            save_tensor(out / sname, Y)
            save_tensor(out / name, X)
            new = ManifestRecord(image=str(Path(man.root, rec.image).resolve()), wf=name, sinogram_wf=sname, meta=dict(rec.meta))
            new.shapes = {"wf": list(X.shape), "sinogram_wf": list(Y.shape)}
        records.append(new)
    Manifest(records, {"model": str(a.model), "tau": a.tau, "domain": a.domain}, root=out).save(out / "manifest.json")
    print(f"wrote {len(records)} masks to {out}")
    return 0


def evaluate_manifests(pred: Manifest, truth: Manifest, bins: list[int] | None = None) -> dict[str, Any]:
    """Per-bin scores pooled over records, mismatch per record, aggregate MF."""
    if len(pred.records) != len(truth.records):
        raise ValueError("prediction and truth manifests differ in length")
    keep = np.arange(N_ANGLES) if bins is None else np.asarray(bins)
    tp = np.zeros(len(keep), np.int64)
    fp = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    tn = np.zeros_like(tp)
    per_record = []
    for pr, tr in zip(pred.records, truth.records):
        p = load_tensor(pred.path(pr.wf)).astype(bool)[..., keep]
        t = load_tensor(truth.path(tr.wf)).astype(bool)[..., keep]
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
        axes = tuple(range(p.ndim - 1))
        tp += (p & t).sum(axis=axes)
        fp += (p & ~t).sum(axis=axes)
        fn += (~p & t).sum(axis=axes)
        tn += (~p & ~t).sum(axis=axes)
        per_record.append({"wf": pr.wf, "mismatch": metrics.wf_mismatch(p, t)})
    scores = {int(b): metrics.BinaryScore(int(a), int(b_), int(c), int(d)) for b, a, b_, c, d in zip(keep, tp, fp, fn, tn)}
    active = [s for s in scores.values() if s.tp + s.fp + s.fn > 0]
    return {
        "mf": metrics.mf_score(active) if active else 1.0,
        "accuracy": metrics.mean_accuracy(list(scores.values())),
        "mean_mismatch": float(np.mean([r["mismatch"] for r in per_record])) if per_record else 0.0,
        "active_bins": len(active),
        "per_bin": {str(b): s.to_json() for b, s in scores.items() if s.tp + s.fp + s.fn > 0},
        "per_record": per_record,
    }


def cmd_eval(a) -> int:
    report = evaluate_manifests(Manifest.load(a.pred), Manifest.load(a.truth), _ints(a.bins))
    text = json.dumps(report, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(json.dumps({k: report[k] for k in ("mf", "accuracy", "mean_mismatch")}))
    return 0


def cmd_canon(a) -> int:
    X = load_tensor(a.input)
    save_tensor(a.output, inverse_canonical_map(X) if a.inverse else canonical_map(X))
    return 0


def cmd_radon(a) -> int:
    data = load_tensor(a.input)
    angles = _measured_angles(a.angle_step)
    if a.fbp:
        M = data.shape[0] if a.offsets is None else a.offsets
        n = data.shape[0]
        sino = Sinogram(data, angles[: data.shape[1]] if data.shape[1] != len(angles) else angles, np.arange(n) - (n - 1) / 2.0, "center", M)
        save_tensor(a.output, fbp(sino, M))
    else:
        save_tensor(a.output, radon(data, a.offsets, angles, origin=a.origin).values)
    return 0


def cmd_overlay(a) -> int:
    rgb = overlay.render_overlay(load_tensor(a.image), load_tensor(a.wf))
    overlay.save_png(rgb, a.out)
    if a.legend:
        overlay.save_png(overlay.color_wheel(), a.legend)
    return 0


# --- parsing -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="densewf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file with option values")
        sp.set_defaults(func=func)
        return sp

    g = add("gen", cmd_gen, "generate phantoms, labels and optionally sinograms")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--M", type=int)
    g.add_argument("--kind", choices=["jump", "higher_order", "sinogram"])
    g.add_argument("--shapes", help="min,max shape count")
    g.add_argument("--angle-step", type=int, dest="angle_step", help="sinogram angle spacing in degrees")
    g.add_argument("--disk-radius", type=float, dest="disk_radius")
    g.add_argument("--out", required=True)

    t = add("train", cmd_train, "train selected heads on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--heads", help="comma list or 'all'")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--centers-per-image", type=int, dest="centers_per_image")
    t.add_argument("--widths")
    t.add_argument("--hidden", type=int)
    t.add_argument("--domain", choices=["image", "sinogram"])
    t.add_argument("--out", required=True)

    e = add("extract", cmd_extract, "extract wavefront sets with a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--tau", type=float)
    e.add_argument("--tau-gate", type=float, dest="tau_gate")
    e.add_argument("--domain", choices=["image", "sinogram"])
    e.add_argument("--angles", help="sinogram columns to classify")
    e.add_argument("--out", required=True)

    v = add("eval", cmd_eval, "score predicted masks against truth")
    v.add_argument("--pred", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--bins", help="restrict to these direction bins")
    v.add_argument("--out")

    c = add("canon", cmd_canon, "apply the digital canonical map or its inverse")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--inverse", action="store_true", default=None)

    r = add("radon", cmd_radon, "Radon transform or filtered backprojection")
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--angle-step", type=int, dest="angle_step")
    r.add_argument("--origin", choices=["center", "corner"])
    r.add_argument("--offsets", type=int)
    r.add_argument("--fbp", action="store_true", default=None)

    o = add("overlay", cmd_overlay, "render a wavefront overlay PNG")
    o.add_argument("--image", required=True)
    o.add_argument("--wf", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--legend")
    return p


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from ``--config`` then from the defaults."""
    file_values = json.loads(Path(args.config).read_text()) if args.config else {}
    for key, default in DEFAULTS.get(args.command, {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))
    for key, value in file_values.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    if args.command in ("gen", "train") and getattr(args, "seed", None) is None:
        raise SystemExit(f"{args.command}: --seed is required (in flags or the config file)")
    return args


def main(argv: list[str] | None = None) -> int:
    args = resolve(build_parser().parse_args(argv))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
