"""Command-line entry point: ``fracaug {ingest,preprocess,train,eval,verify}``.

Configuration is a flat ``key = value`` file (``#`` starts a comment).
Values resolve as defaults < config file < command-line flags, and
unknown keys are rejected.

Exit codes: 0 ok, 1 check failure, 2 input/format error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FracAugError, NumericError
from .gnn import GinConfig, load_checkpoint, predict_proba
from .graphs import (
    Dataset,
    load_archive,
    load_tudataset,
    make_synthetic_dataset,
    save_archive,
    stratified_split,
)
from .metrics import evaluate
from .pipeline import PipelineConfig, run_fracaug, run_vanilla, write_snapshot
from .spectral import build_caches, load_caches, save_caches
from .verify import SUITES

logger = logging.getLogger("fracaug")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

# keys outside PipelineConfig, with their defaults
EXTRA_DEFAULTS = {
    "dataset": "synthetic",  # synthetic | tu | archive
    "data_dir": "",
    "name": "",
    "archive": "",
    "n_graphs": 2000,
    "anomaly_ratio": 0.08,
    "data_seed": 0,
    "train_frac": 0.01,
    "val_frac": 0.01,
    "hidden_dim": 64,
    "num_layers": 2,
    "readout": "mean",
    "epsilon": 0.0,
    "out_dir": "runs",
    "cache": "",
}


def default_config() -> dict:
    cfg = {f.name: f.default for f in fields(PipelineConfig)}
    cfg.update(EXTRA_DEFAULTS)
    cfg["data_dir"] = os.environ.get("FRACAUG_DATA_DIR", "")
    return cfg


def _coerce(key: str, raw: str, template):
    try:
        if isinstance(template, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(template).__name__}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def resolve_config(path: str | None = None, overrides: dict[str, str] | None = None) -> dict:
    """Layer defaults, an optional config file and flag overrides."""
    cfg = default_config()
    layers = []
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        layers.append(parse_config_text(p.read_text(), str(p)))
    layers.append(overrides or {})
    for layer in layers:
        for key, raw in layer.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, raw, cfg[key]) if isinstance(raw, str) else raw
    return cfg


def pipeline_config(cfg: dict, seed: int | None = None) -> PipelineConfig:
    values = {f.name: cfg[f.name] for f in fields(PipelineConfig)}
    if seed is not None:
        values["seed"] = seed
    return PipelineConfig(**values)


def gin_config(cfg: dict, input_dim: int) -> GinConfig:
    return GinConfig(input_dim=input_dim, num_layers=cfg["num_layers"], hidden_dim=cfg["hidden_dim"],
                     readout=cfg["readout"], epsilon=cfg["epsilon"])


def load_dataset(cfg: dict) -> Dataset:
    kind = cfg["dataset"]
    if kind == "synthetic":
        return make_synthetic_dataset(cfg["n_graphs"], cfg["anomaly_ratio"], seed=cfg["data_seed"])
    if kind == "tu":
        if not cfg["data_dir"] or not cfg["name"]:
            raise ConfigError("dataset = tu needs data_dir (or FRACAUG_DATA_DIR) and name")
        root = Path(cfg["data_dir"])
        directory = root / cfg["name"] if (root / cfg["name"]).is_dir() else root
        return load_tudataset(directory, cfg["name"])
    if kind == "archive":
        if not cfg["archive"]:
            raise ConfigError("dataset = archive needs archive = <path.npz>")
        return load_archive(cfg["archive"])
    raise ConfigError(f"dataset must be synthetic, tu or archive, got {kind!r}")


def _caches_for(dataset: Dataset, cfg: dict):
    path = cfg["cache"]
    if path:
        cached = load_caches(path, dataset.fingerprint(), cfg["k_l"], cfg["k_s"])
        if cached is not None:
            return cached
    caches = build_caches(dataset.graphs, cfg["k_l"], cfg["k_s"], jobs=cfg["jobs"], method=cfg["evd"])
    if path:
        save_caches(path, caches, dataset.fingerprint(), cfg["k_l"], cfg["k_s"])
    return caches


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1,2,5"`` or an inclusive range ``"1..5"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError(f"no seeds in {text!r}")
    return seeds


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    data_dir = args.data_dir or os.environ.get("FRACAUG_DATA_DIR", "")
    if not data_dir:
        raise ConfigError("--data-dir not given and FRACAUG_DATA_DIR unset")
    root = Path(data_dir)
    directory = root / args.name if (root / args.name).is_dir() else root
    dataset = load_tudataset(directory, args.name)
    s = dataset.summary()
    print(f"graphs={s['graphs']} normal={s['normal']} anomalous={s['anomalous']}")
    print(f"avg_nodes={s['avg_nodes']:.2f} avg_edges={s['avg_edges']:.2f} features={s['features']}")
    if args.out:
        save_archive(dataset, args.out)
        print(f"archive written to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    dataset = load_dataset(cfg)
    caches = build_caches(dataset.graphs, cfg["k_l"], cfg["k_s"], jobs=cfg["jobs"], method=cfg["evd"])
    save_caches(args.out, caches, dataset.fingerprint(), cfg["k_l"], cfg["k_s"])
    print(f"{len(caches)} spectral caches written to {args.out}")
    return EXIT_OK


def _summary_line(name: str, values: list[float]) -> str:
    return f"{name}={np.mean(values):.4f}±{np.std(values):.4f}"


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    seeds = parse_seeds(args.seed) if args.seed else [cfg["seed"]]
    method = "vanilla" if args.vanilla else "fracaug"
    dataset = load_dataset(cfg)
    caches = _caches_for(dataset, cfg) if method == "fracaug" else None
    out_root = Path(cfg["out_dir"])
    results = []
    for seed in seeds:
        pcfg = pipeline_config(cfg, seed)
        split = stratified_split(dataset, (cfg["train_frac"], cfg["val_frac"]), seed=seed)
        gcfg = gin_config(cfg, dataset.n_features)
        start = time.perf_counter()
        if method == "fracaug":
            record = run_fracaug(dataset, split, gcfg, pcfg, caches=caches)
        else:
            record = run_vanilla(dataset, split, gcfg, cfg=pcfg)
        run_dir = out_root / f"{dataset.name}-{method}-seed{seed}"
        snapshot = {**cfg, "seed": seed, "method": method}
        record.write(run_dir, snapshot)
        test = record.report()["test"]
        results.append(test)
        print(f"seed={seed} auroc={test['auroc']:.4f} auprc={test['auprc']:.4f} f1={test['f1']:.4f} "
              f"best_epoch={record.best_epoch} seconds={time.perf_counter() - start:.1f} dir={run_dir}")
    print(" ".join(_summary_line(k, [r[k] for r in results]) for k in ("auroc", "auprc", "f1")))
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    snap = run_dir / "config.snapshot"
    if not snap.is_file():
        raise ConfigError(f"{snap} not found")
    raw = parse_config_text(snap.read_text(), str(snap))
    raw.pop("method", None)
    cfg = resolve_config(None, raw)
    dataset = load_dataset(cfg)
    split = stratified_split(dataset, (cfg["train_frac"], cfg["val_frac"]), seed=cfg["seed"])
    model, _, _, _ = load_checkpoint(run_dir / "model.ckpt")
    out = {}
    for part, ids in (("val", split.val_ids), ("test", split.test_ids)):
        scores = predict_proba(model, [(dataset.graphs[i].dense_adjacency(), dataset.graphs[i].features)
                                       for i in ids])
        out[part] = evaluate(scores, dataset.labels[list(ids)], cfg["threshold"])
    print(json.dumps(out, indent=2, sort_keys=True))
    report = run_dir / "report.json"
    if report.is_file():
        stored = json.loads(report.read_text())
        same = all(np.isclose(stored[p][k], out[p][k], rtol=0, atol=1e-12)
                   for p in out for k in out[p])
        print("matches report.json" if same else "DIFFERS from report.json")
        return EXIT_OK if same else EXIT_CHECK
    return EXIT_OK


def cmd_verify(args) -> int:
    suite = args.suite
    kwargs: dict = {"seed": args.seed}
    if suite == "thm1":
        if args.alpha is not None:
            kwargs["alphas"] = tuple(args.alpha)
        if args.Tmax is not None:
            kwargs["T_max"] = args.Tmax
    elif suite == "prop1":
        if args.delta is not None:
            kwargs["deltas"] = tuple(args.delta)
        if args.rho is not None:
            kwargs["rhos"] = tuple(args.rho)
        if args.trials is not None:
            kwargs["trials"] = args.trials
    report = SUITES[suite](**kwargs)
    path = Path(args.report or f"verify-{suite}.json")
    path.write_text(json.dumps(report, indent=2, default=_jsonable))
    print(_verify_summary(report))
    print(f"report written to {path}")
    return EXIT_OK if report["pass"] else EXIT_CHECK


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _verify_summary(report: dict) -> str:
    s = report["suite"]
    verdict = "PASS" if report["pass"] else "FAIL"
    if s == "thm1":
        gammas = [c["gamma"] for c in report["cases"] if c["gamma"] != "inf"]
        r2 = min(c["r_squared"] for c in report["cases"])
        return (f"thm1 {verdict}: {len(report['cases'])} cases, min gamma={min(gammas):.4f}, "
                f"min r2={r2:.4f}, {report['seconds']:.2f}s")
    if s == "thm2":
        return f"thm2 {verdict}: {len(report['cases'])} instances, max gap={report['max_gap']:.3g}"
    if s == "prop1":
        worst = max(abs(c["z_score"]) for c in report["cases"])
        cells = " ".join(f"({c['delta']},{c['rho']}):{c['empirical_joint']:.5f}/{c['analytic_joint']:.5f}"
                         for c in report["cases"])
        return f"prop1 {verdict}: max |z|={worst:.2f} {cells}"
    return (f"gradcheck {verdict}: gin max rel err={report['gin']['max_rel_error']:.3g}, "
            f"wdml max rel err={report['wdml']['max_rel_error']:.3g}")


# ---------------------------------------------------------------------------
# argument parsing


def _config_keys() -> list[str]:
    return list(default_config())


def _flag_overrides(args) -> dict[str, str]:
    out = {}
    for key in _config_keys():
        value = getattr(args, f"cfg_{key}", None)
        if value is not None:
            out[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    group = p.add_argument_group("configuration keys")
    for key in _config_keys():
        if key == "seed":
            continue  # handled by --seed
        flag = "--" + key.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{key}", metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a TUDataset directory and write an archive")
    p.add_argument("--data-dir", default="")
    p.add_argument("--name", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="precompute spectral caches")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train with or without augmentation")
    _add_config_flags(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--fracaug", action="store_true", default=True)
    mode.add_argument("--vanilla", action="store_true")
    p.add_argument("--seed", help="seed list: 3, 1,2,5 or 1..5")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate the selected checkpoint of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="numerical verification suites")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--Tmax", type=int)
    p.add_argument("--delta", type=float, nargs="+")
    p.add_argument("--rho", type=float, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FracAugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
