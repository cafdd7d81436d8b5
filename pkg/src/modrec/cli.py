"""Command-line entry point.

Subcommands: gen-data, train, attack-eval, grid, constellation, gradcheck.
Configuration comes from a JSON file (--config) with optional presets and
flag overrides; every run writes a manifest beside its outputs recording
the resolved config, seeds, and sha256 of each artifact. Logs go to stderr,
machine-readable results to files; exit code 0 on success, 1 on a
configuration/validation problem, 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import analysis, attacks, dataset, dsp, evaluation, models, training
from .autodiff import gradcheck
from .errors import ConfigError, ModrecError


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


_DATASET_SCHEMA = {
    "schemes": list,
    "signals_per_class": int,
    "samples_per_signal": int,
    "samples_per_symbol": int,
    "snr_db": (int, float),
    "seed": int,
    "train_frac": (int, float),
    "val_frac_of_train": (int, float),
    "split_seed": int,
    "path": str,
}

_MODEL_SCHEMA = {
    "kind": str,
    "width_scale": (int, float),
    "dropout_p": (int, float),
    "n_stacks": int,
    "filters": int,
    "seed": int,
}

_ATTACK_SCHEMA = {
    "n_iters": int,
    "step_frac": (int, float),
    "use_sign": bool,
    "random_start": bool,
}

_TRAIN_SCHEMA = {
    "mode": str,
    "epochs": int,
    "batch_size": int,
    "lr": (int, float),
    "patience": int,
    "seed": int,
    "spr_db": (int, float),
    "attack": dict,
    "checkpoint": str,
    "history": str,
}

_EVAL_SCHEMA = {
    "framework": str,
    "attack_kind": str,
    "spr_db": (int, float),
    "spr_grid": list,
    "channel_snr_db": (int, float),
    "attack": dict,
    "checkpoint": str,
    "checkpoints": list,
    "batch_size": int,
    "seed": int,
    "report": str,
    "grid_report": str,
    "confusion_csv": str,
}

_CONSTELLATION_SCHEMA = {
    "standard_checkpoint": str,
    "robust_checkpoint": str,
    "target_class": str,
    "spr_db": (int, float),
    "n_signals": int,
    "signal_index": int,
    "report": str,
    "csv": str,
    "svg": str,
}

_TOP_SCHEMA = {
    "dataset": dict,
    "model": dict,
    "train": dict,
    "eval": dict,
    "constellation": dict,
}

_SECTION_SCHEMAS = {
    "dataset": _DATASET_SCHEMA,
    "model": _MODEL_SCHEMA,
    "train": _TRAIN_SCHEMA,
    "eval": _EVAL_SCHEMA,
    "constellation": _CONSTELLATION_SCHEMA,
}


def _check_section(section: dict, schema: dict, where: str) -> None:
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {where}.{key}")
        expected = schema[key]
        if expected is bool:
            ok = isinstance(value, bool)
        elif expected is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, expected)
        if not ok:
            name = getattr(expected, "__name__", "numeric")
            raise ConfigError(
                f"config key {where}.{key} must be {name}, "
                f"got {type(value).__name__}")
    if "attack" in section:
        _check_section(section["attack"], _ATTACK_SCHEMA, where + ".attack")


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for key in cfg:
        if key not in _TOP_SCHEMA:
            raise ConfigError(f"unknown config key {key}")
    for name, schema in _SECTION_SCHEMAS.items():
        if name in cfg:
            _check_section(cfg[name], schema, name)
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return validate_config(cfg)


def _dataset_spec(cfg: dict, preset: str | None, seed: int | None
                  ) -> tuple[dataset.DatasetSpec, dict]:
    section = dict(cfg.get("dataset", {}))
    if preset is not None:
        if preset not in dataset.PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = dataset.PRESETS[preset]
    else:
        base = dataset.DatasetSpec(schemes=dsp.DEFAULT_SCHEME_SET)
    spec = dataset.DatasetSpec(
        schemes=tuple(section.get("schemes", base.schemes)),
        signals_per_class=section.get("signals_per_class",
                                      base.signals_per_class),
        samples_per_signal=section.get("samples_per_signal",
                                       base.samples_per_signal),
        samples_per_symbol=section.get("samples_per_symbol",
                                       base.samples_per_symbol),
        snr_db=float(section.get("snr_db", base.snr_db)),
        seed=seed if seed is not None else section.get("seed", base.seed),
    )
    return spec, section


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required config key {where}.{key}")
    return section[key]


def _require_file(path: str, key: str):
    if not os.path.exists(path):
        raise ConfigError(f"file for {key} not found: {path}")
    return path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, command: str, cfg: dict, seeds: dict,
                    artifacts: list[str], started: float) -> str:
    manifest = {
        "command": command,
        "config": cfg,
        "seeds": seeds,
        "artifacts": {os.path.relpath(p, out_dir): _sha256(p)
                      for p in artifacts},
        "started_unix": started,
        "finished_unix": time.time(),
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _resolve(out_dir: str, rel: str) -> str:
    """Relative paths in configs live under the output directory."""
    return rel if os.path.isabs(rel) else os.path.join(out_dir, rel)


def _out_path(out_dir: str, configured: str | None, default: str) -> str:
    path = _resolve(out_dir, configured if configured is not None else default)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _load_dataset_for(cfg: dict, args) -> dataset.LabeledDataset:
    section = cfg.get("dataset", {})
    path = section.get("path")
    if path is None:
        raise ConfigError("missing required config key dataset.path")
    path = _resolve(args.out, path)
    _require_file(path, "dataset.path")
    return dataset.load(path)


def _attack_config(section: dict,
                   default: attacks.AttackConfig) -> attacks.AttackConfig:
    a = section.get("attack")
    if a is None:
        return default
    return attacks.AttackConfig(
        n_iters=a.get("n_iters", default.n_iters),
        step_frac=a.get("step_frac", default.step_frac),
        use_sign=a.get("use_sign", default.use_sign),
        random_start=a.get("random_start", default.random_start),
    )


def cmd_gen_data(cfg: dict, args) -> int:
    started = time.time()
    spec, section = _dataset_spec(cfg, args.preset, args.seed)
    _log(f"generating {len(spec.schemes)} classes x "
         f"{spec.signals_per_class} signals at {spec.snr_db} dB")
    ds = dataset.generate(spec)
    ds = dataset.split(ds,
                       train_frac=float(section.get("train_frac", 0.70)),
                       val_frac_of_train=float(
                           section.get("val_frac_of_train", 0.05)),
                       seed=section.get("split_seed", 0))
    path = _out_path(args.out, section.get("path"), "dataset.bin")
    dataset.save(ds, path)
    _log(f"wrote {path} ({len(ds)} signals)")
    snr = dataset.empirical_snr_db(ds, max_signals=1000)
    _log(f"empirical SNR over first signals: {snr:.3f} dB")
    _write_manifest(args.out, "gen-data", cfg, {"dataset": spec.seed},
                    [path], started)
    return 0


def _build_model(cfg: dict, n_classes: int, input_len: int) -> models.Model:
    section = cfg.get("model", {})
    kind = section.get("kind", "vt-cnn")
    seed = section.get("seed", 0)
    if kind == "vt-cnn":
        return models.build_vt_cnn(n_classes, input_len,
                                   width_scale=section.get("width_scale", 1.0),
                                   dropout_p=section.get("dropout_p", 0.5),
                                   seed=seed)
    if kind == "resnet":
        return models.build_resnet(n_classes, input_len,
                                   n_stacks=section.get("n_stacks", 3),
                                   filters=section.get("filters", 32),
                                   seed=seed)
    raise ConfigError(f"unknown config value model.kind = {kind!r}")


def cmd_train(cfg: dict, args) -> int:
    started = time.time()
    ds = _load_dataset_for(cfg, args)
    section = cfg.get("train", {})
    mode = section.get("mode", "standard")
    if mode not in ("standard", "adversarial"):
        raise ConfigError(f"unknown config value train.mode = {mode!r}")
    tc = training.TrainConfig(
        epochs=section.get("epochs", 30),
        batch_size=section.get("batch_size", 128),
        lr=float(section.get("lr", 1e-3)),
        patience=section.get("patience", 5),
        seed=args.seed if args.seed is not None else section.get("seed", 0),
    )
    model = _build_model(cfg, len(ds.class_names), ds.spec.samples_per_signal)
    _log(f"training {model.kind} ({model.param_count()} params, {mode}) "
         f"for up to {tc.epochs} epochs")
    if mode == "standard":
        hist = training.train_standard(model, ds, tc)
    else:
        hist = training.train_adversarial(
            model, ds, tc, spr_db=float(section.get("spr_db", 20.0)),
            attack_config=_attack_config(section, attacks.TRAIN_PGA))
    ckpt = _out_path(args.out, section.get("checkpoint"), "model.ckpt")
    model.save(ckpt)
    hist_path = _out_path(args.out, section.get("history"), "history.json")
    with open(hist_path, "w") as fh:
        json.dump(hist.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _log(f"best epoch {hist.best_epoch}, "
         f"val accuracy {hist.val_accuracy[hist.best_epoch]:.4f}")
    _write_manifest(args.out, "train", cfg, {"train": tc.seed,
                                             "model": cfg.get("model", {}).get("seed", 0)},
                    [ckpt, hist_path], started)
    return 0


def _eval_inputs(ds):
    idx = ds.indices("test")
    signals = [ds.signals[k] for k in idx]
    labels = ds.labels[idx]
    return signals, labels


def cmd_attack_eval(cfg: dict, args) -> int:
    started = time.time()
    ds = _load_dataset_for(cfg, args)
    section = cfg.get("eval", {})
    ckpt = _require_file(_resolve(args.out,
                                  _require(section, "checkpoint", "eval")),
                         "eval.checkpoint")
    model = models.load(ckpt)
    signals, labels = _eval_inputs(ds)
    framework = section.get("framework", "robustness")
    report = evaluation.evaluate(
        model, signals, labels,
        spr_db=float(section.get("spr_db", 20.0)),
        attack_kind=section.get("attack_kind", "pga"),
        attack_config=_attack_config(section, attacks.EVAL_PGA),
        framework=framework,
        channel_snr_db=(float(section["channel_snr_db"])
                        if "channel_snr_db" in section else None),
        seed=args.seed if args.seed is not None else section.get("seed", 0),
        batch_size=section.get("batch_size", 256),
        threads=args.threads,
        class_names=ds.class_names)
    out = _out_path(args.out, section.get("report"), "report.json")
    report.to_json(out)
    artifacts = [out]
    if "confusion_csv" in section:
        csv = _out_path(args.out, section["confusion_csv"], "confusion.csv")
        report.write_confusion_csv(csv)
        artifacts.append(csv)
    _log(f"clean {report.clean_accuracy:.4f}  adv {report.adv_accuracy:.4f}  "
         f"fooling {report.fooling_rate:.4f}")
    _write_manifest(args.out, "attack-eval", cfg,
                    {"eval": section.get("seed", 0)}, artifacts, started)
    return 0


def cmd_grid(cfg: dict, args) -> int:
    started = time.time()
    ds = _load_dataset_for(cfg, args)
    section = cfg.get("eval", {})
    ckpts = section.get("checkpoints")
    if ckpts is None:
        ckpts = [_require(section, "checkpoint", "eval")]
    signals, labels = _eval_inputs(ds)
    sprs = [float(v) for v in section.get("spr_grid", [15.0, 20.0, 25.0])]
    results = {}
    artifacts = []
    for ckpt in ckpts:
        ckpt = _resolve(args.out, ckpt)
        _require_file(ckpt, "eval.checkpoints")
        model = models.load(ckpt)
        _log(f"grid for {ckpt}: SPR {sprs}")
        results[ckpt] = evaluation.spr_grid(
            model, signals, labels, sprs,
            attack_config=_attack_config(section, attacks.EVAL_PGA),
            framework=section.get("framework", "robustness"),
            channel_snr_db=(float(section["channel_snr_db"])
                            if "channel_snr_db" in section else None),
            seed=args.seed if args.seed is not None else section.get("seed", 0),
            batch_size=section.get("batch_size", 256),
            threads=args.threads,
            class_names=ds.class_names)
    out = _out_path(args.out, section.get("grid_report"), "grid.json")
    with open(out, "w") as fh:
        json.dump(results, fh, sort_keys=True, indent=2)
        fh.write("\n")
    artifacts.append(out)
    _write_manifest(args.out, "grid", cfg, {"eval": section.get("seed", 0)},
                    artifacts, started)
    return 0


def cmd_constellation(cfg: dict, args) -> int:
    started = time.time()
    ds = _load_dataset_for(cfg, args)
    section = cfg.get("constellation", {})
    std = models.load(_require_file(
        _resolve(args.out, _require(section, "standard_checkpoint",
                                    "constellation")),
        "constellation.standard_checkpoint"))
    rob = models.load(_require_file(
        _resolve(args.out, _require(section, "robust_checkpoint",
                                    "constellation")),
        "constellation.robust_checkpoint"))
    target_name = section.get("target_class", "bpsk")
    if target_name not in ds.class_names:
        raise ConfigError(
            f"config key constellation.target_class: {target_name!r} "
            f"not in dataset classes {list(ds.class_names)}")
    target_idx = ds.class_names.index(target_name)
    spr = float(section.get("spr_db", 20.0))
    idx = ds.indices("test")
    n = section.get("n_signals", 200)
    take = [k for k in idx if ds.labels[k] != target_idx][:n]
    signals = [ds.signals[k] for k in take]
    labels = ds.labels[take]
    _log(f"alignment study: {len(signals)} signals toward {target_name} "
         f"at SPR {spr} dB")
    report = analysis.alignment_study(std, rob, signals, labels,
                                      ds.class_names, target_idx, spr)
    out = _out_path(args.out, section.get("report"), "alignment.json")
    with open(out, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    artifacts = [out]

    # constellation files for one example signal, oracle-perturbed
    k = section.get("signal_index", 0)
    if not 0 <= k < len(signals):
        raise ConfigError("config key constellation.signal_index out of range")
    sig = signals[k]
    eps = dsp.spr_to_epsilon(sig, spr)
    pert = analysis.oracle_targeted_perturbation(
        sig, dsp.constellation(target_name), eps)
    perturbed = dsp.IqSignal(sig.i + pert.delta[0].astype(sig.i.dtype),
                             sig.q + pert.delta[1].astype(sig.q.dtype),
                             samples_per_symbol=sig.samples_per_symbol)
    csv = _out_path(args.out, section.get("csv"), "constellation.csv")
    svg = _out_path(args.out, section.get("svg"), "constellation.svg")
    analysis.constellation_export(sig, perturbed,
                                  dsp.constellation(target_name),
                                  csv_path=csv, svg_path=svg)
    artifacts += [csv, svg]
    _write_manifest(args.out, "constellation", cfg, {}, artifacts, started)
    return 0


def cmd_gradcheck(cfg: dict, args) -> int:
    started = time.time()
    cases = 100
    _log(f"fuzzing primitives with {cases} cases each (float64)")
    report = gradcheck.run_primitive_suite(
        seed=args.seed if args.seed is not None else 0, cases_per_op=cases)
    worst_name = max(report, key=report.get)
    for name, err in sorted(report.items()):
        _log(f"  {name:24s} max rel err {err:.3e}")

    from .autodiff import Tensor, ops as adops
    model = models.build_vt_cnn(4, 64, width_scale=0.05, seed=1,
                                dtype=np.float64)
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 2, 64)), requires_grad=True)
    y = rng.integers(0, 4, size=2)
    model_err = gradcheck.gradcheck(
        lambda: adops.softmax_cross_entropy(model.forward(x), y,
                                            reduction="sum"),
        [x], n_coords=16, rng=rng)
    _log(f"  {'model input grad':24s} max rel err {model_err:.3e}")

    out = _out_path(args.out, None, "gradcheck.json")
    payload = dict(report, model_input_grad=model_err)
    with open(out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(args.out, "gradcheck", cfg, {"gradcheck": args.seed or 0},
                    [out], started)
    ok = max(report.values()) < 1e-4 and model_err < 1e-3
    if not ok:
        _log(f"FAILED: worst primitive {worst_name} = {report[worst_name]:.3e}")
        return 2
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack-eval": cmd_attack_eval,
    "grid": cmd_grid,
    "constellation": cmd_constellation,
    "gradcheck": cmd_gradcheck,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _log(f"error: {message}")
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modrec",
                     description="modulation recognition workbench")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config file")
        p.add_argument("--out", default="out",
                       help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's primary seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for evaluation")
        p.add_argument("--preset", choices=sorted(dataset.PRESETS),
                       default=None, help="dataset preset")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 1
    except ModrecError as exc:
        _log(f"error: {exc}")
        return 2
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
