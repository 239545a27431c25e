"""Command-line surface for the three retrieval roles.

Owners generate keys and encrypt; the retrieval server builds codebook and
index and answers queries; experimenters reproduce the benchmark sweeps.
Results go to stdout in line-oriented form, diagnostics to stderr.  Exit
codes: 0 success, 1 usage problem, 2 data or I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .cipher import decrypt, encrypt, generate_keysets, load_keysets, save_keysets
from .codebook import KMeansConfig, load_codebook, save_codebook, train_codebook
from .evaluation import (
    EvalCondition,
    GroundTruth,
    load_ground_truth,
    sweep,
    sweep_table,
)
from .image_io import load_image, load_manifest, save_image
from .index import (
    build_index_from_images,
    format_results,
    load_index,
    make_query_descriptor,
    save_index,
    search,
)
from .scd import ScdConfig, extract_patches
from .synth import SynthConfig, generate_dataset

logger = logging.getLogger("etcbir")

CONFIG_ENV_VAR = "ETCBIR_CONFIG"
_IMAGE_SUFFIXES = {".ppm", ".png", ".jpg", ".jpeg"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise _UsageError(message)


@dataclass
class CliConfig:
    """Defaults shared by all subcommands; flags override individual fields."""

    h_bins: int = 16
    s_bins: int = 4
    v_bins: int = 4
    coeffs: int = 64
    m: int = 128
    seed: int = 0
    max_iter: int = 100
    tol: float = 1e-4
    top_k: int = 10
    keys_path: str | None = None
    codebook_path: str | None = None
    index_path: str | None = None

    @classmethod
    def from_file(cls, path) -> "CliConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys in {path}: {sorted(unknown)}")
        return cls(**data)

    def scd(self) -> ScdConfig:
        return ScdConfig(self.h_bins, self.s_bins, self.v_bins, self.coeffs)


def _load_config(args) -> CliConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if path:
        if not Path(path).is_file():
            raise _UsageError(f"config file not found: {path}")
        return CliConfig.from_file(path)
    return CliConfig()


def _pick(flag_value, config_value):
    return config_value if flag_value is None else flag_value


def _require(value, name: str):
    if value is None:
        raise _UsageError(f"{name} is required (flag or config file)")
    return value


def cmd_genkeys(args, cfg: CliConfig) -> int:
    if args.count < 1:
        raise _UsageError("--count must be >= 1")
    out = _require(_pick(args.out, cfg.keys_path), "--out")
    save_keysets(generate_keysets(args.count), out)
    print(out)
    return 0


def _list_input_images(in_dir: Path, manifest_path) -> list[tuple[str, Path]]:
    """(output name, input path) pairs, manifest order or sorted filenames."""
    if manifest_path:
        manifest = load_manifest(manifest_path)
        return [(entry.image_id, Path(entry.path)) for entry in manifest.entries]
    if not in_dir.is_dir():
        raise ValueError(f"not a directory: {in_dir}")
    paths = sorted(
        p for p in in_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not paths:
        raise ValueError(f"no images found in {in_dir}")
    return [(p.stem, p) for p in paths]


def _cmd_transform_dir(args, cfg: CliConfig, operation) -> int:
    keys_path = _require(_pick(args.keys, cfg.keys_path), "--keys")
    keysets = load_keysets(keys_path)
    items = _list_input_images(Path(args.in_dir), args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for i, (name, path) in enumerate(items):
        try:
            if i >= len(keysets):
                raise ValueError(f"no keyset for image {i} ({name})")
            img = load_image(path)
            suffix = path.suffix.lower() if path.suffix.lower() in (".ppm", ".png") else ".png"
            out_path = out_dir / f"{name}{suffix}"
            save_image(operation(img, keysets[i][1]), out_path)
            print(out_path)
        except (ValueError, OSError) as exc:
            failures += 1
            print(f"error: {name}: {exc}", file=sys.stderr)
    return 2 if failures else 0


def cmd_encrypt(args, cfg: CliConfig) -> int:
    return _cmd_transform_dir(args, cfg, encrypt)


def cmd_decrypt(args, cfg: CliConfig) -> int:
    return _cmd_transform_dir(args, cfg, decrypt)


def cmd_index(args, cfg: CliConfig) -> int:
    manifest = load_manifest(args.manifest)
    scd = cfg.scd()
    m = _pick(args.m, cfg.m)
    seed = _pick(args.seed, cfg.seed)
    codebook_path = _require(_pick(args.out_codebook, cfg.codebook_path), "--out-codebook")
    index_path = _require(_pick(args.out_index, cfg.index_path), "--out-index")

    images, failures = [], []
    for entry in manifest.entries:
        try:
            images.append(load_image(entry.path))
        except (ValueError, FileNotFoundError) as exc:
            failures.append(f"{entry.image_id}: {exc}")
    if failures:
        raise ValueError(
            f"failed to load {len(failures)} image(s):\n" + "\n".join(failures)
        )

    training = np.concatenate([extract_patches(img, scd) for img in images])
    cb = train_codebook(
        training, m, KMeansConfig(seed=seed, max_iter=cfg.max_iter, tol=cfg.tol)
    )
    index = build_index_from_images(
        manifest.image_ids,
        [entry.owner_id for entry in manifest.entries],
        images,
        cb,
        scd,
    )
    save_codebook(cb, codebook_path)
    save_index(index, index_path)
    df = index.df
    print(
        f"images={index.n} words={cb.m} "
        f"df_min={int(df.min())} df_mean={df.mean():.2f} df_max={int(df.max())}"
    )
    return 0


def cmd_query(args, cfg: CliConfig) -> int:
    codebook_path = _require(_pick(args.codebook, cfg.codebook_path), "--codebook")
    index_path = _require(_pick(args.index, cfg.index_path), "--index")
    top_k = _pick(args.top_k, cfg.top_k)
    if top_k < 1:
        raise _UsageError("--top-k must be >= 1")
    cb = load_codebook(codebook_path)
    index = load_index(index_path, cb, cfg.scd())
    img = load_image(args.image)
    # the flag labels the audit trail only; the server-side pipeline is identical
    logger.info(
        "query image=%s mode=%s", args.image, "encrypted" if args.encrypted else "plain"
    )
    results = search(index, make_query_descriptor(img, index), top_k)
    sys.stdout.write(format_results(results))
    return 0


_ALL_CONDITIONS = [c.value for c in EvalCondition]


def _parse_conditions(spec: str) -> list[EvalCondition]:
    names = _ALL_CONDITIONS if spec.strip().lower() == "all" else spec.split(",")
    try:
        return [EvalCondition.parse(name) for name in names]
    except ValueError as exc:
        raise _UsageError(str(exc))


def _parse_int_list(spec: str, what: str) -> list[int]:
    try:
        return [int(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise _UsageError(f"{what} must be a comma-separated integer list: {spec!r}")


def cmd_evaluate(args, cfg: CliConfig) -> int:
    manifest = load_manifest(args.manifest)
    if args.ground_truth:
        if not Path(args.ground_truth).is_file():
            raise _UsageError(f"missing ground truth file: {args.ground_truth}")
        gt = load_ground_truth(args.ground_truth)
    else:
        gt = GroundTruth.from_manifest(manifest)
    conditions = _parse_conditions(args.conditions)
    m_values = _parse_int_list(args.m_values, "--m-values")
    seeds = _parse_int_list(args.seeds, "--seeds") if args.seeds else [cfg.seed]
    reports = sweep(
        manifest, gt, conditions, m_values, seeds,
        scd=cfg.scd(), max_iter=cfg.max_iter, tol=cfg.tol,
    )
    table = sweep_table(reports)
    if args.out:
        Path(args.out).write_text(table)
        logger.info("sweep table written to %s", args.out)
    else:
        sys.stdout.write(table)
    return 0


def cmd_synth_dataset(args, cfg: CliConfig) -> int:
    synth_cfg = SynthConfig(
        groups=args.groups,
        group_size=args.group_size,
        width=args.width,
        height=args.height,
        seed=_pick(args.seed, cfg.seed),
    )
    generate_dataset(args.out_dir, synth_cfg)
    print(Path(args.out_dir) / "manifest.csv")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="etcbir", description=__doc__)
    parser.add_argument("--config", help=f"config JSON (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genkeys", help="generate fresh keysets")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", help="key file path")
    p.set_defaults(func=cmd_genkeys)

    for name, helptext in (("encrypt", "encrypt a directory of images"),
                           ("decrypt", "decrypt a directory of images")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--in-dir", required=True)
        p.add_argument("--keys", help="key file (one keyset per image, in order)")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--manifest", help="use manifest order instead of filename order")
        p.set_defaults(func=cmd_encrypt if name == "encrypt" else cmd_decrypt)

    p = sub.add_parser("index", help="train codebook and build descriptor index")
    p.add_argument("--manifest", required=True)
    p.add_argument("--m", type=int, help="codebook size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-codebook")
    p.add_argument("--out-index")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank stored images against a query image")
    p.add_argument("--index")
    p.add_argument("--codebook")
    p.add_argument("--image", required=True)
    p.add_argument("--top-k", type=int, dest="top_k")
    flag = p.add_mutually_exclusive_group()
    flag.add_argument("--encrypted", action="store_true",
                      help="label the query as encrypted (processing is identical)")
    flag.add_argument("--plain", action="store_true", help="label the query as plain")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="run retrieval conditions and emit a sweep table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ground-truth", help="JSON image_id -> group_id (default: manifest groups)")
    p.add_argument("--conditions", default="all",
                   help=f"comma list or 'all' ({', '.join(_ALL_CONDITIONS)})")
    p.add_argument("--m-values", required=True, help="comma list of codebook sizes")
    p.add_argument("--seeds", help="comma list of run seeds (default: config seed)")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth-dataset", help="generate the bundled synthetic benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--groups", type=int, default=50)
    p.add_argument("--group-size", type=int, default=4)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth_dataset)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
