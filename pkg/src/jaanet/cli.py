"""Command-line entry points.

Commands: gen-synthetic, train, eval, occlusion-eval, visualize-attention,
count-params. Configuration is a flat INI file with one section per module
([model], [train], [data], [eval]); ``--set section.key=value`` overrides
win over the file. The merged configuration is snapshotted into the output
directory before any work happens, so every run is reproducible from its
snapshot alone.

Output directory resolution: ``--out`` flag, else the JAANET_OUT environment
variable. Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .config import JAANetConfig, TrainConfig, Variant
from .errors import ConfigError, JAANetError
from .layers import count_partitioned_params

_TUPLE_KEYS = {"au_ids", "rates"}


def _dataclass_defaults(cls) -> dict:
    inst = cls()
    d = asdict(inst) if hasattr(inst, "__dataclass_fields__") else dict(inst)
    if "variant" in d:
        d["variant"] = inst.variant.value
    return d


def default_config() -> dict[str, dict]:
    from .data import SyntheticConfig
    return {
        "model": _dataclass_defaults(JAANetConfig),
        "train": _dataclass_defaults(TrainConfig),
        "data": _dataclass_defaults(SyntheticConfig),
        "eval": {"threshold": 0.5, "batch_size": 16},
    }


def _coerce(section: str, key: str, raw: str, current):
    if key in _TUPLE_KEYS:
        parts = raw.replace(",", " ").split()
        cast = int if key == "au_ids" else float
        return tuple(cast(p) for p in parts)
    if key == "variant":
        return Variant.parse(raw).value
    if current is None or isinstance(current, str):
        return None if raw.lower() == "none" else raw
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def load_config(config_path: str | None, overrides: list[str]) -> dict:
    """Defaults, then the INI file, then --set overrides; unknown keys are
    configuration errors that name the offending key."""
    cfg = default_config()

    def apply(section: str, key: str, raw: str, origin: str):
        if section not in cfg:
            raise ConfigError(f"{origin}: unknown section '{section}'")
        if key not in cfg[section]:
            raise ConfigError(f"{origin}: unknown key '{section}.{key}'")
        try:
            cfg[section][key] = _coerce(section, key, raw, cfg[section][key])
        except (ValueError, ConfigError) as exc:
            raise ConfigError(
                f"{origin}: bad value for '{section}.{key}': {exc}") from None

    if config_path:
        parser = configparser.ConfigParser()
        if not parser.read(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                apply(section, key, raw, str(config_path))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, "
                              f"got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        apply(section.strip(), key.strip(), raw.strip(), "--set")
    return cfg


def write_snapshot(cfg: dict, out_dir: Path) -> None:
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: (" ".join(map(str, v))
                               if isinstance(v, tuple) else str(v))
                           for k, v in values.items() if v is not None}
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "config.ini").open("w") as fh:
        parser.write(fh)


def _resolve_out(args) -> Path:
    out = args.out or os.environ.get("JAANET_OUT")
    if not out:
        raise ConfigError("no output directory: pass --out or set JAANET_OUT")
    return Path(out)


def _model_config(cfg: dict, n_au: int | None = None) -> JAANetConfig:
    params = dict(cfg["model"])
    if n_au is not None:
        params["n_au"] = n_au
    return JAANetConfig(**params)


def _train_config(cfg: dict, args) -> TrainConfig:
    params = dict(cfg["train"])
    if args.seed is not None:
        params["seed"] = args.seed
    if getattr(args, "variant", None):
        params["variant"] = args.variant
    params["variant"] = Variant.parse(params["variant"])
    return TrainConfig(**params)


# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args, cfg) -> int:
    from .data import SyntheticConfig, generate_synthetic
    out = _resolve_out(args)
    seed = args.seed if args.seed is not None else 0
    write_snapshot(cfg, out)
    syn = SyntheticConfig(**cfg["data"])
    manifest = generate_synthetic(syn, seed, args.n, out)
    rates = manifest.occurrence_rates()
    print(f"wrote {len(manifest.records)} samples to {out}")
    print("empirical rates:", " ".join(f"{r:.3f}" for r in rates))
    return 0


def cmd_train(args, cfg) -> int:
    from .data import load_manifest
    from .network import JAANet
    from .training import train

    out = _resolve_out(args)
    write_snapshot(cfg, out)
    manifest = load_manifest(args.data)
    if not manifest.records:
        raise ConfigError(f"manifest {args.data} is empty")
    tcfg = _train_config(cfg, args)
    mcfg = _model_config(cfg, n_au=manifest.n_au)
    model = JAANet(mcfg, tcfg.variant, au_ids=manifest.au_ids,
                   seed=tcfg.seed, lambda_e=tcfg.lambda_e)
    result = train(model, manifest, tcfg, out)
    last = result.metrics[-1]
    print(f"trained {result.epochs_run} epochs; "
          f"final train F1 {last.get('train_f1_frame', float('nan')):.3f}")
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def _load_eval_inputs(args):
    from .data import load_manifest
    from .network import load_checkpoint
    model, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    if tuple(manifest.au_ids) != model.au_ids:
        raise ConfigError("manifest AU ids do not match the checkpoint")
    return model, manifest.load_samples()


def cmd_eval(args, cfg) -> int:
    from .evaluation import evaluate_model
    out = _resolve_out(args)
    write_snapshot(cfg, out)
    model, samples = _load_eval_inputs(args)
    res = evaluate_model(model, samples,
                         batch_size=int(cfg["eval"]["batch_size"]),
                         threshold=float(cfg["eval"]["threshold"]))
    (out / "metrics.json").write_text(json.dumps(res.as_dict(), indent=2))
    lines = ["AU   F1     Acc"]
    for au, f1, acc in zip(model.au_ids, res.f1_per_au, res.acc_per_au):
        lines.append(f"{au:<4d} {f1 * 100:5.1f}  {acc * 100:5.1f}")
    lines.append(f"Avg  {res.f1_avg * 100:5.1f}  {res.acc_avg * 100:5.1f}")
    if res.mean_error is not None:
        lines.append(f"mean error {res.mean_error:.2f}  "
                     f"failure rate {res.failure_rate:.2f}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_occlusion_eval(args, cfg) -> int:
    from .evaluation import occlusion_sweep, render_occlusion_table
    out = _resolve_out(args)
    write_snapshot(cfg, out)
    model, samples = _load_eval_inputs(args)
    table = occlusion_sweep(model, samples,
                            batch_size=int(cfg["eval"]["batch_size"]))
    (out / "occlusion.json").write_text(json.dumps(table, indent=2))
    text = render_occlusion_table(table)
    (out / "occlusion.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_visualize(args, cfg) -> int:
    from .visualize import visualize_attention
    out = _resolve_out(args)
    write_snapshot(cfg, out)
    paths = []
    for item in args.images:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.png")) + sorted(p.glob("*.jpg")))
        else:
            paths.append(p)
    if not paths:
        raise ConfigError("no input images found")
    written = visualize_attention(args.checkpoint, paths, out)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_count_params(args, cfg) -> int:
    r = count_partitioned_params("R", args.c)
    rhm = count_partitioned_params("R_hm", args.c)
    print(f"R: {r}, R_hm: {rhm}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jaanet",
        description="Joint AU detection and face alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (or JAANET_OUT)")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a model on a manifest")
    common(p)
    p.add_argument("--data", required=True, help="manifest file")
    p.add_argument("--variant", default=None,
                   help="architecture variant (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("occlusion-eval",
                       help="evaluate under half-face occlusions")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_occlusion_eval)

    p = sub.add_parser("visualize-attention",
                       help="write attention overlays for images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True,
                   help="image files or directories")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("count-params",
                       help="closed-form partitioned parameter counts")
    common(p)
    p.add_argument("--c", type=int, default=8, help="channel parameter")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except JAANetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
