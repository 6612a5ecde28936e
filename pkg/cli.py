"""bathyloc 命令行

  bathyloc gen-lake --profile bowl --ncols 200 --nrows 200 --max-height 27 --seed 7
  bathyloc inspect lake.asc
  bathyloc run --preset bde_maka_ska --out out/run
  bathyloc bench --config bench.json --workers 4
  bathyloc schema --out schemas/
  bathyloc presets

退出码：0 成功，2 配置/校验错误，3 运行期/数值错误。
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from bathy import LakeProfile, SyntheticLakeSpec, generate_synthetic_lake, read_grid, write_grid
from config import config, configure_logging
from exceptions import BathyLocError, ConfigError
from reports import aggregate_doc, write_bench_outputs, write_run_outputs
from schemas import SCHEMA_DOCUMENTS, CliConfig, FilterName
from sim import monte_carlo, run_replicate

log = logging.getLogger("bathyloc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# ---------------------------------------------------------------------------
# 配置加载

def preset_path(name: str) -> Path:
    path = Path(config.PRESET_DIR) / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"unknown preset '{name}' (see `bathyloc presets`)")
    return path


def load_cli_config(args: argparse.Namespace) -> Tuple[CliConfig, Path]:
    """读取配置文件并应用命令行覆盖项，返回 (配置, 相对路径基准目录)"""
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if not args.config and not args.preset:
        raise ConfigError("a config file (--config) or a preset (--preset) is required")
    path = Path(args.config) if args.config else preset_path(args.preset)
    cfg = CliConfig.model_validate_json(path.read_text(encoding="utf-8"))

    data = cfg.model_dump(mode="json")
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.steps is not None:
        data["steps"] = args.steps
    if getattr(args, "runs", None) is not None:
        data["runs"] = args.runs
    if args.filters:
        data["filters"] = [f.strip().upper() for f in args.filters.split(",") if f.strip()]
    if args.motion:
        data["motion"]["kind"] = args.motion
    if args.no_process_noise:
        data["process_noise"] = False
    if args.no_runtime:
        data["record_runtime"] = False
    if args.format:
        data["output"]["formats"] = [f.strip() for f in args.format.split(",") if f.strip()]
    if args.store:
        data["output"]["store"] = True
    return CliConfig.model_validate(data), path.parent


def _out_dir(args: argparse.Namespace, cfg: CliConfig, command: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output.out_dir:
        return Path(cfg.output.out_dir)
    return Path(config.OUTPUT_DIR) / command / cfg.lake.name


def _store(callback) -> None:
    from database import get_sync_db, init_db

    init_db()
    for db in get_sync_db():
        callback(db)


# ---------------------------------------------------------------------------
# 命令

def cmd_gen_lake(args: argparse.Namespace) -> int:
    spec = SyntheticLakeSpec(
        ncols=args.ncols,
        nrows=args.nrows,
        cell_size=args.cell_size,
        profile=args.profile,
        max_height=args.max_height,
        asymmetry=args.asymmetry,
        noise_amplitude=args.noise_amplitude,
        seed=args.seed,
        origin_x=args.origin_x,
        origin_y=args.origin_y,
    )
    grid = generate_synthetic_lake(spec)
    out = Path(args.out) if args.out else Path(config.OUTPUT_DIR) / f"{spec.profile.value}.asc"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_grid(grid, out)
    log.info("已生成合成湖泊 %s", out)
    print(json.dumps({"path": str(out), **grid.summary()}, indent=2))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    grid = read_grid(args.path)
    print(json.dumps(grid.summary(), indent=2))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg, base_dir = load_cli_config(args)
    grid = cfg.lake.load(base_dir)
    plan = cfg.to_plan(grid)
    log.info("单次运行：lake=%s motion=%s filters=%s", cfg.lake.name, cfg.motion.kind.value,
             ",".join(plan.filters))
    truth, reports = run_replicate(plan, cfg.master_seed, 0)
    out_dir = _out_dir(args, cfg, "run")
    write_run_outputs(cfg, truth, reports, out_dir, cfg.output.formats)

    if cfg.output.store:
        from tables import store_runs

        _store(lambda db: store_runs(db, cfg, reports))

    for r in reports:
        print(f"{r.filter_name:4s} rmse=({r.rmse_x:.4f}, {r.rmse_y:.4f}, {r.rmse_z:.4f}) "
              f"diverged={r.diverged}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg, base_dir = load_cli_config(args)
    grid = cfg.lake.load(base_dir)
    workers = args.workers or cfg.workers or config.DEFAULT_WORKERS
    log.info("基准测试：lake=%s motion=%s runs=%d workers=%d", cfg.lake.name, cfg.motion.kind.value,
             cfg.runs, workers)
    result = monte_carlo(cfg.to_plan(grid), cfg.runs, cfg.master_seed, workers=workers)
    out_dir = _out_dir(args, cfg, "bench")
    write_bench_outputs(cfg, result, out_dir, cfg.output.formats)

    if cfg.output.store:
        from tables import store_benchmark

        doc = aggregate_doc(cfg, result)
        _store(lambda db: store_benchmark(db, cfg, doc, result.flat_reports()))

    for name, entry in result.aggregate.items():
        mean = [entry[f"rmse_{a}"]["mean"] for a in ("x", "y", "z")]
        print(f"{name:4s} mean rmse={mean} divergences={entry['divergence_count']}/{entry['runs']}")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, model in SCHEMA_DOCUMENTS.items():
        path = out / f"{name}.schema.json"
        path.write_text(json.dumps(model.model_json_schema(), indent=2) + "\n", encoding="utf-8")
        log.info("已写入 %s", path)
    return EXIT_OK


def cmd_presets(args: argparse.Namespace) -> int:
    for path in sorted(Path(config.PRESET_DIR).glob("*.json")):
        cfg = CliConfig.model_validate_json(path.read_text(encoding="utf-8"))
        print(f"{path.stem:14s} lake={cfg.lake.name} motion={cfg.motion.kind.value} steps={cfg.steps} "
              f"runs={cfg.runs}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="name of a shipped preset")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--steps", type=int)
    p.add_argument("--filters", help="comma separated subset of " + ",".join(f.value for f in FilterName))
    p.add_argument("--motion", choices=["linear", "mixed"])
    p.add_argument("--no-process-noise", action="store_true", help="simulate truth without process noise")
    p.add_argument("--no-runtime", action="store_true", help="omit runtimes (byte-identical outputs)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", help="csv,json")
    p.add_argument("--store", action="store_true", help="persist reports to DATABASE_URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bathyloc", description="Bathymetric AUV localization benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-lake", help="generate a synthetic lake as an ESRI ASCII grid")
    p.add_argument("--profile", choices=[p.value for p in LakeProfile], default=LakeProfile.BOWL.value)
    p.add_argument("--ncols", type=int, required=True)
    p.add_argument("--nrows", type=int, required=True)
    p.add_argument("--cell-size", type=float, default=1.0)
    p.add_argument("--max-height", type=float, required=True)
    p.add_argument("--asymmetry", type=float, default=0.0)
    p.add_argument("--noise-amplitude", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--origin-x", type=float, default=0.0)
    p.add_argument("--origin-y", type=float, default=0.0)
    p.add_argument("--out", help="output .asc path")
    p.set_defaults(func=cmd_gen_lake)

    p = sub.add_parser("inspect", help="print a grid summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("run", help="single run, trajectory CSV + per-filter JSON")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="Monte Carlo benchmark, runs CSV + aggregate JSON")
    _add_run_options(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("schema", help="write JSON Schema documents of config and reports")
    p.add_argument("--out", default="schemas")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("配置校验失败:\n%s", exc)
        return EXIT_CONFIG
    except BathyLocError as exc:
        log.error("%s", exc.message)
        return exc.exit_code
    except OSError as exc:
        log.error("文件读写失败: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
