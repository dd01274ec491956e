"""Command-line surface: synth | augment | train | eval | ablate.

Exit codes: 0 success, 1 usage error, 2 data error (malformed configs,
bundles, shapes, parameters), 3 numerical failure. Config files are JSON
documents with the schemas documented in the README; all randomness is
derived from seeds in those files, never from the environment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .augment import ALL_OPS, AugmentSpec, apply_spec, write_preview_csv
from .bundle import HsiBundle, load_checkpoint, read_bundle, save_checkpoint, write_bundle
from .contrastive import ContrastiveConfig
from .errors import (
    DataError,
    NumericalError,
    ParameterError,
    ParseError,
    ShapeError,
    ToolkitError,
)
from .hsi import HyperCube, PatchSet, extract_patches
from .nn import init_params, resolve_preset
from .seeding import derive_rng
from .synth import SynthConfig, generate_scene, load_endmembers
from .training import (
    TrainConfig,
    ablate,
    config_digest,
    evaluate,
    split_dataset,
    train,
)

_AUGMENT_STREAM = 23


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None


def _check_keys(doc: dict, allowed: set[str], path) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ParseError(f"{path}: unknown config keys {unknown}; allowed: {sorted(allowed)}")


_SYNTH_KEYS = {
    "height", "width", "k", "p", "dirichlet_concentration", "snr_db",
    "modulation_sigma", "modulation_floor", "seed", "name",
}


def _synth_config(path) -> SynthConfig:
    doc = _load_json(path)
    _check_keys(doc, _SYNTH_KEYS, path)
    if "dirichlet_concentration" in doc and doc["dirichlet_concentration"] is not None:
        doc["dirichlet_concentration"] = tuple(doc["dirichlet_concentration"])
    try:
        return SynthConfig(**doc)
    except TypeError as exc:
        raise ParseError(f"{path}: {exc}") from None


_TRAIN_KEYS = {
    "patch_size", "stride", "batch_size", "epochs", "lr", "momentum", "seed",
    "arm", "split_fraction", "preset", "precision", "contrastive",
}
_CONTRASTIVE_KEYS = {
    "radius", "temperature", "weight",
    "per_positive_normalization", "include_positives_in_denominator",
}


def _train_config(path) -> tuple[TrainConfig, int, int]:
    doc = _load_json(path)
    _check_keys(doc, _TRAIN_KEYS, path)
    patch_size = int(doc.pop("patch_size", 8))
    stride = int(doc.pop("stride", max(patch_size // 2, 1)))
    con = doc.pop("contrastive", {})
    _check_keys(con, _CONTRASTIVE_KEYS, path)
    try:
        config = TrainConfig(contrastive=ContrastiveConfig(**con), **doc)
    except TypeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return config, patch_size, stride


def _bundle_patches(bundle: HsiBundle, patch_size: int, stride: int) -> PatchSet:
    if bundle.labels is None:
        raise DataError("bundle has no label payload; cannot build training patches")
    lab = bundle.labels
    is_abundance = bool(
        lab.min() >= 0.0 and lab.max() <= 1.0 and np.abs(lab.sum(axis=0) - 1.0).max() <= 1e-6
    )
    return extract_patches(bundle.cube, lab, patch_size, stride, is_abundance=is_abundance)


def _digest_of(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    config = _synth_config(args.config)
    endmembers = load_endmembers(args.endmembers) if args.endmembers else None
    scene = generate_scene(config, endmembers)
    bundle = HsiBundle(
        cube=scene.cube,
        clean=scene.clean,
        labels=scene.abundances.values,
        seed=config.seed,
        config_digest=_digest_of(_load_json(args.config)),
    )
    write_bundle(bundle, args.out)
    print(
        f"wrote {args.out}: k={scene.cube.k} {scene.cube.height}x{scene.cube.width}"
        f" p={scene.abundances.p} snr_db={config.snr_db}"
    )
    return 0


def _parse_param(text: str):
    key, _, value = text.partition("=")
    if not _ or not key:
        raise ParseError(f"--param expects key=value, got {text!r}")
    for cast in (int, float):
        try:
            return key, cast(value)
        except ValueError:
            continue
    return key, value


def _cmd_augment(args) -> int:
    bundle = read_bundle(args.input)
    op = args.op.replace("-", "_")
    if op not in ALL_OPS:
        raise ParameterError(f"unknown operator {args.op!r}; known: {sorted(ALL_OPS)}")
    params = dict(_parse_param(p) for p in args.param or [])
    spec = AugmentSpec(op=op, params=params)
    rng = derive_rng(args.seed, _AUGMENT_STREAM)
    original = bundle.cube.data
    transformed = apply_spec(original, spec, rng)
    if args.out:
        if transformed.shape != original.shape:
            raise ShapeError(
                f"operator changed cube shape {original.shape} -> {transformed.shape}; "
                "cannot rewrite the bundle"
            )
        out_bundle = HsiBundle(
            cube=HyperCube(
                data=transformed, wavelengths=bundle.cube.wavelengths, name=bundle.cube.name
            ),
            clean=bundle.clean,
            labels=bundle.labels,
            seed=bundle.seed,
            config_digest=bundle.config_digest,
            dtype=bundle.dtype,
        )
        write_bundle(out_bundle, args.out)
        print(f"wrote {args.out}")
    if args.preview:
        r, c = bundle.cube.height // 2, bundle.cube.width // 2
        wl = bundle.cube.wavelengths
        axis = wl if wl is not None else np.arange(bundle.cube.k, dtype=np.float64)
        write_preview_csv(args.preview, axis, original[:, r, c], transformed[:, r, c])
        print(f"wrote {args.preview}")
    return 0


def _save_run(outdir, config_doc: dict, result, report_text: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_checkpoint(
        os.path.join(outdir, "checkpoint.bin"),
        result.model.digest,
        result.model.state_arrays(),
    )
    with open(os.path.join(outdir, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,total,regression,contrastive,batches,skipped\n")
        for row in result.log:
            fh.write(
                f"{row.epoch},{row.total:.9g},{row.regression:.9g},"
                f"{row.contrastive:.9g},{row.batches},{row.skipped}\n"
            )
    with open(os.path.join(outdir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report_text)


def _cmd_train(args) -> int:
    config, patch_size, stride = _train_config(args.config)
    bundle = read_bundle(args.data)
    patches = _bundle_patches(bundle, patch_size, stride)
    split = split_dataset(patches, config.split_fraction, config.seed)
    result = train(config, split.train)
    scores = evaluate(result.model, split.test)
    digest = config_digest(config, patches.k, patch_size, patches.label_dim)
    report = (
        f"schema = hycoreg.run.v1\n"
        f"config_digest = {digest}\n"
        f"train_patches = {len(split.train)}\n"
        f"test_patches = {len(split.test)}\n"
        f"r2 = {scores.r2:.9g}\n"
        f"mae = {scores.mae:.9g}\n"
        f"seconds = {result.seconds:.3f}\n"
    )
    _save_run(args.out, _load_json(args.config), result, report)
    print(f"trained {config.arm!r} arm: r2={scores.r2:.4f} mae={scores.mae:.4f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config_path = os.path.join(args.run, "config.json")
    config, patch_size, stride = _train_config(config_path)
    bundle = read_bundle(args.data)
    patches = _bundle_patches(bundle, patch_size, stride)
    model = init_params(
        resolve_preset(config.preset),
        patches.k,
        patch_size,
        patches.label_dim,
        seed=config.seed,
        dtype=config.dtype,
    )
    digest, arrays = load_checkpoint(os.path.join(args.run, "checkpoint.bin"))
    if digest != model.digest:
        raise DataError(
            f"checkpoint digest {digest} does not match run config digest {model.digest}"
        )
    model.load_state_arrays(arrays)
    split = split_dataset(patches, config.split_fraction, config.seed)
    scores = evaluate(model, split.test)
    text = f"r2 = {scores.r2:.9g}\nmae = {scores.mae:.9g}\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _cmd_ablate(args) -> int:
    config, patch_size, stride = _train_config(args.config)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s]
    except ValueError:
        raise ParseError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise ParseError("--seeds must name at least one seed")
    bundle = read_bundle(args.data)
    patches = _bundle_patches(bundle, patch_size, stride)
    report = ablate(config, patches, seeds)
    text = report.to_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    print(report.render_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hycoreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out", required=True, help="output .hsb bundle")
    p.add_argument("--endmembers", help="optional endmember text file")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment", help="apply one operator to a bundle cube")
    p.add_argument("--in", dest="input", required=True, help="input .hsb bundle")
    p.add_argument("--op", required=True, help="operator name (e.g. spectral-flip)")
    p.add_argument("--param", action="append", help="operator parameter key=value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write transformed bundle here")
    p.add_argument("--preview", help="write center-pixel before/after CSV here")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="train one arm and save run artifacts")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="input .hsb bundle with labels")
    p.add_argument("--out", required=True, help="run artifacts directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved run on a bundle")
    p.add_argument("--run", required=True, help="run artifacts directory")
    p.add_argument("--data", required=True, help="input .hsb bundle with labels")
    p.add_argument("--out", help="optional metrics output file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-arm ablation")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="input .hsb bundle with labels")
    p.add_argument("--seeds", required=True, help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--out", help="report output file")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DataError, ShapeError, ParameterError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
