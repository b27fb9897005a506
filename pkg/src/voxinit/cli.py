"""Command-line entry points.

Exit codes: 0 ok, 2 usage error, 3 transport failure, 4 bad data
(unreadable config, corrupt checkpoint, malformed bridge reply). The
VOXINIT_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import orbit_pose
from .config import TrainConfig
from .errors import CheckpointError, DivergenceError, ProtocolError, TransportError
from .guidance import TargetSet
from .images import save_png
from .renderer import splat_render
from .training import load_for_render, train_init

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRANSPORT = 3
EXIT_DATA = 4


@dataclass
class RunManifest:
    prompt: str
    config: TrainConfig
    out_dir: str
    provider: str
    bridge_url: str | None
    targets: str | None

    def save(self, path) -> None:
        payload = {
            "prompt": self.prompt,
            "provider": self.provider,
            "bridge_url": self.bridge_url,
            "targets": self.targets,
            "out_dir": self.out_dir,
            "config": self.config.to_dict(),
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig().validate()
    try:
        return TrainConfig.load(path)
    except FileNotFoundError as exc:
        raise CheckpointError(f"config file not found: {path}") from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config file {path}: {exc}") from exc


def _apply_env_seed(config: TrainConfig) -> TrainConfig:
    env = os.environ.get("VOXINIT_SEED")
    if env is not None:
        config.seed = int(env)
    return config


def cmd_init(args: argparse.Namespace) -> int:
    config = _apply_env_seed(_load_config(args.config))
    if args.provider:
        config.provider = args.provider
    if args.bridge_url:
        config.bridge_url = args.bridge_url
    if args.iterations is not None:
        config.iterations = args.iterations
    if args.seed is not None:
        config.seed = args.seed
    try:
        config.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    targets = None
    if config.provider == "synthetic":
        if not args.targets:
            print("error: provider 'synthetic' requires --targets <dir>", file=sys.stderr)
            return EXIT_USAGE
        targets = TargetSet.load(args.targets)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        prompt=args.prompt,
        config=config,
        out_dir=str(out_dir),
        provider=config.provider,
        bridge_url=config.bridge_url,
        targets=args.targets,
    )
    manifest.save(out_dir / "manifest.json")
    result = train_init(args.prompt, config, targets=targets, out_dir=out_dir, verbose=not args.quiet)
    print(f"wrote {out_dir / 'init.ply'} ({len(result.cloud)} points)")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    ckpt, field = load_for_render(args.checkpoint)
    orbit = ckpt.config.orbit()
    if args.size is not None:
        orbit = orbit.__class__(
            radius=orbit.radius,
            elevation_range=orbit.elevation_range,
            fov_deg=orbit.fov_deg,
            height=args.size,
            width=args.size,
        )
    cam = orbit_pose(args.azimuth % 360.0, args.elevation, orbit)
    image = splat_render(field, cam)
    save_png(np.clip(image.color, 0.0, 1.0), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_print_config(args: argparse.Namespace) -> int:
    config = _apply_env_seed(_load_config(args.config))
    print(json.dumps(config.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxinit", description="Voxel-Gaussian initialization for text-to-3D")
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="optimize a field for a prompt and export init.ply")
    p_init.add_argument("--prompt", required=True)
    p_init.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    p_init.add_argument("--out", required=True, help="output directory")
    p_init.add_argument("--provider", choices=("synthetic", "bridge"))
    p_init.add_argument("--bridge-url")
    p_init.add_argument("--targets", help="target-set directory (synthetic provider)")
    p_init.add_argument("--iterations", type=int)
    p_init.add_argument("--seed", type=int)
    p_init.add_argument("--quiet", action="store_true")
    p_init.set_defaults(func=cmd_init)

    p_render = sub.add_parser("render", help="render a view of a checkpointed field")
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--azimuth", type=float, default=0.0)
    p_render.add_argument("--elevation", type=float, default=0.0)
    p_render.add_argument("--out", required=True, help="output PNG path")
    p_render.add_argument("--size", type=int, help="override image size")
    p_render.set_defaults(func=cmd_render)

    p_cfg = sub.add_parser("print-config", help="dump the effective config as JSON")
    p_cfg.add_argument("--config")
    p_cfg.set_defaults(func=cmd_print_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (CheckpointError, ProtocolError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
