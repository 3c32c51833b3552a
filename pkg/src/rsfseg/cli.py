"""Command-line entry point: ``rsfseg <subcommand> ...``.

Parameters resolve as command-line flags over a ``key = value`` config file
over the selected profile's defaults. The worker count may also come from
the ``RSFSEG_WORKERS`` environment variable (flags still win).

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
blowup.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import NumericalBlowupError, ParameterError, VolumeFormatError
from .phantom import PerturbSpec, PhantomSpec, generate_network, perturb
from .profiling import profile_evolution
from .rsf import RsfParams, evolve, extract_mask
from .seeding import BlobParams, detect_seeds, init_phi, read_seeds, write_seeds
from .tiling import MERGE_MODES, load_spilled, merge_phi, plan_tiles, run_pipeline
from .validation import evaluate, sample_plan
from .volume import Volume, read_volume, write_volume

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_BLOWUP = 0, 2, 3, 4
WORKERS_ENV = "RSFSEG_WORKERS"

log = logging.getLogger("rsfseg")


class ConfigError(ParameterError):
    pass


PROFILES = {
    "2d-paper": dict(sigma1=19.0, sigma2=9.0, beta=3.5, alpha=255.0 * 255.0 * 0.01, dt=0.1, max_iters=800),
    "3d-paper": dict(sigma1=5.0, sigma2=0.0, dt=0.06, alpha=255.0 * 255.0 * 0.0009, beta=0.1, max_iters=300),
}


@dataclass
class RunConfig:
    """Every tunable of a run; serialized as ``key = value`` lines."""

    profile: str = "3d-paper"
    sigma1: float = 5.0
    sigma2: float = 0.0
    alpha: float = 255.0 * 255.0 * 0.0009
    beta: float = 0.1
    epsilon: float = 1.0
    dt: float = 0.06
    max_iters: int = 300
    convergence_fraction: float = 0.0
    sigma_b: float = 3.0
    response_threshold: float = 0.1
    nms_radius: float | None = None
    polarity: str = "bright"
    min_response: float = 0.0
    seed_radius: float = 2.0
    tile_size: tuple[int, int, int] | None = None
    merge_mode: str = "linear"
    global_seeding: bool = False
    workers: int = 1
    samples: int = 13
    subvol: tuple[int, int, int] = (100, 100, 100)
    sample_seed: int = 0

    def rsf_params(self):
        return RsfParams(sigma1=self.sigma1, sigma2=self.sigma2, alpha=self.alpha, beta=self.beta,
                         epsilon=self.epsilon, dt=self.dt, max_iters=self.max_iters,
                         convergence_fraction=self.convergence_fraction)

    def blob_params(self):
        return BlobParams(sigma_b=self.sigma_b, response_threshold=self.response_threshold,
                          nms_radius=self.nms_radius, polarity=self.polarity,
                          min_response=self.min_response)

    def to_text(self):
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TRIPLES = ("tile_size", "subvol")
_INTS = ("max_iters", "workers", "samples", "sample_seed")
_BOOLS = ("global_seeding",)
_STRINGS = {"profile": tuple(PROFILES), "polarity": ("bright", "dark"), "merge_mode": MERGE_MODES}
_OPTIONAL = ("nms_radius", "tile_size")


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return " ".join(str(int(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key, text):
    """Convert the text form of ``key`` to its typed value."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    if key in _OPTIONAL and text.lower() == "none":
        return None
    try:
        if key in _TRIPLES:
            parts = text.split()
            if len(parts) != 3:
                raise ValueError(text)
            return tuple(int(p) for p in parts)
        if key in _INTS:
            return int(text)
        if key in _BOOLS:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if key in _STRINGS:
            if text not in _STRINGS[key]:
                raise ValueError(f"expected one of {', '.join(_STRINGS[key])}")
            return text
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from exc


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return values


def read_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    return parse_config_text(text, str(path))


def resolve_config(flags=None, file_values=None, default_profile="3d-paper", env=None):
    """Merge profile defaults, config file values and flags (highest wins)."""
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    file_values = dict(file_values or {})
    unknown = set(flags) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    profile = flags.get("profile") or file_values.get("profile") or default_profile
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    values = dict(PROFILES[profile])
    values.update(file_values)
    env = os.environ if env is None else env
    if env.get(WORKERS_ENV):
        values["workers"] = parse_value("workers", env[WORKERS_ENV])
    values.update(flags)
    values["profile"] = profile
    cfg = RunConfig(**values)
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    # validate eagerly so bad values surface as configuration errors
    cfg.rsf_params()
    cfg.blob_params()
    return cfg


def _add_param_flags(p, rsf=True, blob=True):
    p.add_argument("--config", help="key = value config file")
    if rsf:
        p.add_argument("--profile", choices=sorted(PROFILES))
        for key in ("sigma1", "sigma2", "alpha", "beta", "epsilon", "dt", "convergence_fraction"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
        p.add_argument("--max-iters", dest="max_iters", type=int)
    if blob:
        for key in ("sigma_b", "response_threshold", "nms_radius", "min_response", "seed_radius"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
        p.add_argument("--polarity", choices=("bright", "dark"))
    p.add_argument("--workers", type=int)


def _config_from_args(args, default_profile):
    flags = {k: getattr(args, k, None) for k in _FIELDS}
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    return resolve_config(flags, file_values, default_profile)


def _check_writable(paths, force):
    for p in paths:
        if Path(p).exists() and not force:
            raise FileExistsError(f"{p} exists; pass --force to overwrite")


def _load(path):
    return read_volume(path).data.astype(np.float64)


def cmd_phantom(args):
    dims = tuple(args.dims)
    out = Path(args.output)
    targets = [out.with_name(out.name + s) for s in (".vmh", ".raw", "_gt.vmh", "_gt.raw", "_spec.txt")]
    _check_writable(targets, args.force)
    spec = PhantomSpec(dims=dims, n_branches=args.branches, radius_range=tuple(args.radius),
                       tortuosity=args.tortuosity, foreground=args.foreground,
                       background=args.background, rng_seed=args.seed,
                       connected=not args.disconnected, axial_blur=args.axial_blur)
    pert = PerturbSpec(gaussian_sigma=args.noise, contrast_axis=args.contrast_axis,
                       contrast_range=tuple(args.contrast_range))
    image, mask, _ = generate_network(spec)
    image = perturb(image, pert, rng_seed=args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_volume(targets[0], Volume(image))
    write_volume(targets[2], Volume(mask), dtype="u8")
    text = spec.to_text() + "".join(f"{k}: {v if not isinstance(v, tuple) else ' '.join(map(str, v))}\n"
                                    for k, v in asdict(pert).items())
    targets[4].write_text(text, encoding="utf-8")
    print(f"wrote {targets[0]} and {targets[2]}")
    return EXIT_OK


def cmd_seed(args):
    cfg = _config_from_args(args, "3d-paper")
    _check_writable([args.output], args.force)
    seeds = detect_seeds(_load(args.input), cfg.blob_params())
    write_seeds(args.output, seeds)
    print(f"{len(seeds)} seeds -> {args.output}")
    return EXIT_OK


def cmd_segment(args):
    cfg = _config_from_args(args, args.profile or "3d-paper")
    if args.tile_size is not None:
        cfg.tile_size = tuple(args.tile_size)
    if args.merge_mode is not None:
        cfg.merge_mode = args.merge_mode
    if args.global_seeding:
        cfg.global_seeding = True
    out = Path(args.output)
    targets = [out.with_name(out.name + s) for s in ("_phi.vmh", "_mask.vmh", "_config.txt")]
    _check_writable(targets, args.force)
    sys.stdout.write("# effective config\n" + cfg.to_text())
    image = _load(args.input)
    params, bp = cfg.rsf_params(), cfg.blob_params()
    if cfg.tile_size is not None:
        nz, ny, nx = image.shape
        layout = plan_tiles((nx, ny, nz), cfg.tile_size, cfg.sigma1, cfg.sigma2)
        phi, mask = run_pipeline(image, params, bp, layout, workers=cfg.workers,
                                 seed_radius=cfg.seed_radius, global_seeding=cfg.global_seeding,
                                 merge_mode=cfg.merge_mode, spill_dir=args.spill_dir)
    else:
        seeds = read_seeds(args.seeds) if args.seeds else None
        phi0, seeds = init_phi(image, bp, seed_radius=cfg.seed_radius, seeds=seeds)
        log.info("%d seeds", len(seeds))
        phi = evolve(phi0, image, params, workers=cfg.workers)
        mask = extract_mask(phi)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_volume(targets[0], Volume(phi))
    write_volume(targets[1], Volume(mask), dtype="u8")
    targets[2].write_text(cfg.to_text(), encoding="utf-8")
    print(f"wrote {targets[0]} and {targets[1]}")
    return EXIT_OK


def cmd_merge(args):
    out = Path(args.output)
    targets = [out.with_name(out.name + s) for s in ("_phi.vmh", "_mask.vmh")]
    _check_writable(targets, args.force)
    layout, phis = load_spilled(args.tiles)
    phi = merge_phi(phis, layout, args.merge_mode)
    write_volume(targets[0], Volume(phi))
    write_volume(targets[1], Volume(extract_mask(phi)), dtype="u8")
    print(f"merged {len(phis)} tiles -> {targets[0]}")
    return EXIT_OK


def cmd_metrics(args):
    pred, gt = _load(args.pred) != 0, _load(args.gt) != 0
    nz, ny, nx = gt.shape
    subvol = tuple(args.subvol) if args.subvol else tuple(min(s, d) for s, d in zip((100, 100, 100), (nx, ny, nz)))
    plan = sample_plan((nx, ny, nz), args.samples, subvol, args.sample_seed)
    report = evaluate(pred, gt, plan)
    sys.stdout.write(report.to_table())
    if args.output:
        _check_writable([args.output], args.force)
        report.write_csv(args.output)
    return EXIT_OK


def cmd_profile(args):
    cfg = _config_from_args(args, args.profile or "3d-paper")
    if args.input:
        image = _load(args.input)
    else:
        nx, ny, nz = args.dims
        spec = PhantomSpec(dims=(nx, ny, nz), n_branches=max(2, nx // 8), radius_range=(2.0, 4.0), rng_seed=0)
        image = perturb(generate_network(spec)[0], PerturbSpec(gaussian_sigma=20.0), rng_seed=0)
    if args.iterations < 10:
        raise ConfigError("profiling needs at least 10 timed iterations")
    phi0, _ = init_phi(image, cfg.blob_params(), seed_radius=cfg.seed_radius)
    report = profile_evolution(image, phi0, cfg.rsf_params(), iterations=args.iterations,
                               warmup=2, workers=cfg.workers)
    sys.stdout.write(report.to_table())
    if args.output:
        _check_writable([args.output], args.force)
        Path(args.output).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="rsfseg", description="RSF level-set segmentation of tubular networks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic vessel phantom")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--dims", type=int, nargs=3, default=(256, 256, 1), metavar=("NX", "NY", "NZ"),
                   help="NZ=1 gives a 2D phantom")
    p.add_argument("--branches", type=int, default=8)
    p.add_argument("--radius", type=float, nargs=2, default=(2.0, 4.0), metavar=("RMIN", "RMAX"))
    p.add_argument("--tortuosity", type=float, default=0.12)
    p.add_argument("--foreground", type=float, default=200.0)
    p.add_argument("--background", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--disconnected", action="store_true")
    p.add_argument("--axial-blur", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--contrast-axis", choices=("x", "y", "z", "none"), default="none")
    p.add_argument("--contrast-range", type=float, nargs=2, default=(1.0, 1.0), metavar=("LO", "HI"))
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("seed", help="detect blob seeds")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_param_flags(p, rsf=False)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("segment", help="seed and evolve a level set")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--seeds", help="seed file (skips detection)")
    _add_param_flags(p)
    p.add_argument("--tile-size", type=int, nargs=3, metavar=("TX", "TY", "TZ"))
    p.add_argument("--merge-mode", choices=MERGE_MODES)
    p.add_argument("--global-seeding", action="store_true")
    p.add_argument("--spill-dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("merge", help="merge spilled tile level sets")
    p.add_argument("tiles", help="directory holding layout.txt and tile volumes")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--merge-mode", choices=MERGE_MODES, default="linear")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("metrics", help="Monte-Carlo Dice/Jaccard against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("-o", "--output", help="CSV path")
    p.add_argument("--samples", type=int, default=13)
    p.add_argument("--subvol", type=int, nargs=3, metavar=("SX", "SY", "SZ"))
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("profile", help="per-kernel timing of the evolution step")
    p.add_argument("input", nargs="?")
    p.add_argument("--dims", type=int, nargs=3, default=(64, 64, 64), metavar=("NX", "NY", "NZ"))
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("-o", "--output", help="CSV path")
    _add_param_flags(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalBlowupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (VolumeFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
