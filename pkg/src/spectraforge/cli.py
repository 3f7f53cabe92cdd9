"""``spectraforge`` command-line entry point.

Every subcommand is deterministic given its inputs and ``--seed`` values;
outputs carry no timestamps.  Failures print ``error: <ErrorClass>: <message>``
on stderr and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path


from . import classify, core, nn, preprocess, seqae, synth, toygen
from .errors import SpecError, SpectraForgeError

log = logging.getLogger("spectraforge")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return (p if p.is_absolute() else Path(base) / p).absolute()


def _split_from_manifest(manifest, ds: core.Dataset, val_fraction=0.15, seed=0):
    tags = core.manifest_field(manifest, "split")
    if tags:
        train = ds.subset(r for r in ds if tags.get(r.id) == "train")
        val = ds.subset(r for r in ds if tags.get(r.id) == "val")
        return train, val
    return core.split_dataset(ds, val_fraction, seed)


# ---------------------------------------------------------------------------
# subcommand implementations (also used by ``pipeline``)
# ---------------------------------------------------------------------------

def gen_toy(spec: toygen.ToyDatasetSpec, out) -> Path:
    ds = toygen.generate(spec)
    return core.save_manifest(ds, out, extra={"toy_spec": spec.to_json()})


def run_preprocess(profile: preprocess.Profile, manifest, out) -> Path:
    """Structural steps, record-level split, then scaling fitted on the train part."""
    ds = core.load_manifest(manifest)
    ds = ds.subset(preprocess.apply_profile(r, profile) for r in ds)
    train, val = core.split_dataset(ds, profile.val_fraction, profile.seed)
    params = preprocess.fit_scaling(train, clamp=profile.clamp)
    scaled = preprocess.scale_dataset(ds, params)
    tags = {r.id: {"split": "train"} for r in train}
    tags.update({r.id: {"split": "val"} for r in val})
    out = Path(out)
    _write_json(out / "scaling.json", params.to_json())
    return core.save_manifest(scaled, out, record_fields=tags,
                              extra={"scaling": "scaling.json"})


def run_train_ae(role: str, cfg: dict, base: Path) -> Path:
    manifest = _resolve(base, cfg["manifest"])
    bundle_dir = _resolve(base, cfg["bundle"])
    d = int(cfg["d"])
    tcfg = nn.TrainConfig.from_json(cfg.get("train"))
    ds = core.load_manifest(manifest)
    train, val = _split_from_manifest(manifest, ds, cfg.get("val_fraction", 0.15),
                                      cfg.get("split_seed", 0))
    if role == "first":
        model, hist = seqae.train_first(train, val, d, tcfg, float(cfg.get("keep_prob", 0.25)))
        nn.save_model(model, bundle_dir / "first")
    elif role == "second":
        first = nn.load_model(bundle_dir / "first")
        if first.latent_dim != d:
            raise SpecError(f"stage-1 model has d={first.latent_dim}, config says d={d}")
        tcfg2 = nn.TrainConfig.from_json(cfg.get("train_second", cfg.get("train")))
        model, hist = seqae.train_second(train, val, first, tcfg2)
        seqae.save_bundle(seqae.SeqAeBundle(first, model), bundle_dir)
    else:
        raise SpecError(f"unknown role {role!r}")
    _write_json(bundle_dir / f"{role}_history.json", hist)
    log.info("%s stage: best val MSE %.4e at epoch %d", role,
             min(hist["val_loss"]), hist["best_epoch"])
    return bundle_dir


def run_encode(bundle_dir, manifest, out) -> Path:
    b = seqae.load_bundle(bundle_dir)
    ds = core.load_manifest(manifest)
    return seqae.save_latents(seqae.encode_dataset(ds, b), out, labels=ds.labels)


def run_synth(bundle_dir, latent_dir, multiplier, seed, out, ridge=None, shrinkage=0.0) -> Path:
    b = seqae.load_bundle(bundle_dir)
    latents, labels = seqae.load_latents(latent_dir)
    out = Path(out)
    for lab, group in sorted(synth.group_by_label(latents).items()):
        if len(group) >= 2:
            stats = synth.fit_stats(group, ridge, shrinkage)
            synth.save_stats(stats, out / "stats", stem=f"stats_{_safe(lab)}")
    ds = synth.synthesize(latents, b, multiplier, ridge, seed, labels, shrinkage)
    return core.save_manifest(ds, out, extra={"multiplier": multiplier, "seed": seed})


def _safe(label) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "+" for ch in str(label))


def run_reconstruct(bundle_dir, manifest, out) -> Path:
    b = seqae.load_bundle(bundle_dir)
    ds = core.load_manifest(manifest)
    return core.save_manifest(seqae.reconstruct_dataset(ds, b), out)


def run_classify(original, synthetic, reconstructed, runs, seeds, holdout_k, n_trees,
                 variance_target, report_path) -> Path:
    orig = core.load_manifest(original)
    syn = core.load_manifest(synthetic) if synthetic else None
    rec = core.load_manifest(reconstructed) if reconstructed else None
    reports = classify.run_experiment(orig, syn, rec, runs=runs, holdout_k=holdout_k,
                                      seeds=seeds, variance_target=variance_target,
                                      forest_cfg=classify.ForestConfig(n_trees=n_trees))
    return write_report(reports, report_path, {"runs": runs, "holdout_k": holdout_k,
                                               "variance_target": variance_target,
                                               "n_trees": n_trees})


def write_report(reports, path, settings=None) -> Path:
    doc = {"conditions": [r.to_json() for r in reports], "settings": settings or {}}
    return _write_json(path, doc)


def render_report(doc: dict) -> tuple[str, str]:
    """Aligned text table and CSV (one row per condition and seed)."""
    rows = [("condition", "runs", "mean AR", "std AR")]
    for c in doc["conditions"]:
        std = f"{100 * c['std']:.2f}" if c.get("std_defined", True) else "n/a"
        rows.append((c["condition"], str(len(c["ar"])), f"{100 * c['mean']:.2f}%", std))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", "seed", "ar"])
    for c in doc["conditions"]:
        for s, a in zip(c["seeds"], c["ar"]):
            writer.writerow([c["condition"], s, f"{a:.6f}"])
    return "\n".join(lines), buf.getvalue()


def run_pipeline(cfg: dict, base: Path) -> Path:
    """gen-toy (or a given manifest) -> preprocess -> train-ae x2 -> encode -> synth
    -> reconstruct -> classify -> report."""
    out = _resolve(base, cfg.get("out", "run"))
    if "manifest" in cfg:
        raw_manifest = _resolve(base, cfg["manifest"])
    else:
        toy = cfg.get("toy", {})
        spec = (toygen.ToyDatasetSpec.from_json(toy["spec"]) if "spec" in toy
                else toygen.default_spec(seed=int(toy.get("seed", 0))))
        raw_manifest = gen_toy(spec, out / "raw")
    profile_cfg = cfg.get("profile", {})
    profile = (preprocess.Profile.load(_resolve(base, profile_cfg))
               if isinstance(profile_cfg, str) else preprocess.Profile.from_json(profile_cfg))
    pre_manifest = run_preprocess(profile, raw_manifest, out / "preprocessed")

    ae_cfg = {"manifest": str(pre_manifest), "bundle": str(out / "bundle"), "d": cfg.get("d", 16),
              "train": cfg.get("train"), "keep_prob": cfg.get("keep_prob", 0.25)}
    if "train_second" in cfg:
        ae_cfg["train_second"] = cfg["train_second"]
    run_train_ae("first", ae_cfg, base)
    bundle_dir = run_train_ae("second", ae_cfg, base)
    run_encode(bundle_dir, pre_manifest, out / "latents")

    scfg = cfg.get("synth", {})
    multiplier = float(scfg.get("multiplier", 1.0))
    ridge = scfg.get("ridge")
    shrinkage = float(scfg.get("shrinkage", 0.0))
    synth_seed = int(scfg.get("seed", 7))
    syn_manifest = run_synth(bundle_dir, out / "latents", multiplier, synth_seed,
                             out / "synthetic", ridge, shrinkage)
    rec_manifest = run_reconstruct(bundle_dir, pre_manifest, out / "reconstructed")

    ccfg = cfg.get("classify", {})
    runs = int(ccfg.get("runs", 5))
    seeds = list(ccfg.get("seeds", range(1, runs + 1)))
    holdout_k = int(ccfg.get("holdout_k", 5))
    n_trees = int(ccfg.get("n_trees", 100))
    target = float(ccfg.get("variance_target", 0.90))
    original = core.load_manifest(pre_manifest)
    if scfg.get("per_fold", True):
        b = seqae.load_bundle(bundle_dir)

        def synthetic(train, seed):
            lat = seqae.encode_dataset(train, b)
            return synth.synthesize(lat, b, multiplier, ridge, synth_seed * 1_000_003 + seed,
                                    train.labels, shrinkage)
    else:
        synthetic = core.load_manifest(syn_manifest)
    reports = classify.run_experiment(original, synthetic, core.load_manifest(rec_manifest),
                                      runs=runs, holdout_k=holdout_k, seeds=seeds,
                                      variance_target=target,
                                      forest_cfg=classify.ForestConfig(n_trees=n_trees))
    path = write_report(reports, out / "report.json",
                        {"runs": runs, "holdout_k": holdout_k, "n_trees": n_trees,
                         "variance_target": target, "d": ae_cfg["d"],
                         "synth_per_fold": bool(scfg.get("per_fold", True))})
    table, table_csv = render_report(_read_json(path))
    (out / "report.txt").write_text(table + "\n")
    (out / "report.csv").write_text(table_csv)
    print(table)
    return path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _existing_file(value: str) -> Path:
    p = Path(value)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return p


def _existing_dir(value: str) -> Path:
    p = Path(value)
    if not p.is_dir():
        raise argparse.ArgumentTypeError(f"no such directory: {value}")
    return p


def _seed_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectraforge",
                                description="Synthesize 2D spectra with sequential autoencoders.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-toy", help="generate a surrogate dataset (SPB + manifest)")
    s.add_argument("--spec", type=_existing_file, help="toy spec JSON (default: built-in)")
    s.add_argument("--seed", type=int, default=0, help="seed for the built-in spec")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("preprocess", help="RIP removal, Haar reduction, crop, log+min-max")
    s.add_argument("--profile", type=_existing_file, required=True)
    s.add_argument("--manifest", type=_existing_file, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("train-ae", help="train stage one or two of the bundle")
    s.add_argument("--role", choices=("first", "second"), required=True)
    s.add_argument("--config", type=_existing_file, required=True)

    s = sub.add_parser("encode", help="encode records into latent matrices")
    s.add_argument("--bundle", type=_existing_dir, required=True)
    s.add_argument("--manifest", type=_existing_file, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("synth", help="sample and decode synthetic records")
    s.add_argument("--bundle", type=_existing_dir, required=True)
    s.add_argument("--latents", type=_existing_dir, required=True)
    s.add_argument("--multiplier", type=float, default=1.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--ridge", type=float, default=None)
    s.add_argument("--shrinkage", type=float, default=0.0)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("reconstruct", help="encode+decode records unchanged")
    s.add_argument("--bundle", type=_existing_dir, required=True)
    s.add_argument("--manifest", type=_existing_file, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("classify", help="repeated hold-out PCA + forest experiment")
    s.add_argument("--original", type=_existing_file, required=True)
    s.add_argument("--synthetic", type=_existing_file)
    s.add_argument("--reconstructed", type=_existing_file)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--seeds", type=_seed_list)
    s.add_argument("--holdout-k", type=int, default=5)
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--variance-target", type=float, default=0.90)
    s.add_argument("--report", type=Path, required=True)

    s = sub.add_parser("report", help="render a report JSON as a table and CSV")
    s.add_argument("--report", type=_existing_file, required=True)
    s.add_argument("--csv", type=Path)

    s = sub.add_parser("pipeline", help="run everything end to end from one config")
    s.add_argument("--config", type=_existing_file, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _dispatch(args)
    except SpectraForgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return 1
    return 0


def _dispatch(args):
    cmd = args.command
    if cmd == "gen-toy":
        spec = toygen.ToyDatasetSpec.load(args.spec) if args.spec else toygen.default_spec(args.seed)
        print(gen_toy(spec, args.out))
    elif cmd == "preprocess":
        print(run_preprocess(preprocess.Profile.load(args.profile), args.manifest, args.out))
    elif cmd == "train-ae":
        print(run_train_ae(args.role, _read_json(args.config), args.config.parent))
    elif cmd == "encode":
        print(run_encode(args.bundle, args.manifest, args.out))
    elif cmd == "synth":
        print(run_synth(args.bundle, args.latents, args.multiplier, args.seed, args.out,
                        args.ridge, args.shrinkage))
    elif cmd == "reconstruct":
        print(run_reconstruct(args.bundle, args.manifest, args.out))
    elif cmd == "classify":
        seeds = args.seeds if args.seeds is not None else list(range(1, args.runs + 1))
        print(run_classify(args.original, args.synthetic, args.reconstructed, args.runs, seeds,
                           args.holdout_k, args.n_trees, args.variance_target, args.report))
    elif cmd == "report":
        table, table_csv = render_report(_read_json(args.report))
        print(table)
        if args.csv:
            args.csv.write_text(table_csv)
    elif cmd == "pipeline":
        run_pipeline(_read_json(args.config), args.config.parent)


if __name__ == "__main__":
    sys.exit(main())
