"""Command line front end.

Commands: train, eval, theory (verify | toy | crossing), distribute-stats,
pairs, dataset (generate | info). All file paths are explicit flags and every
stochastic command takes a seed, so a repeated invocation with the same flags
produces byte-identical CSV and JSON outputs. Wall-clock timestamps live only
in the run manifest.

Exit codes: 0 on success, 2 on usage or configuration problems (including
missing input files), 1 on runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

from . import __version__, attacks, data, defense, ensemble, nnet, theory
from .attacks import AttackConfig, AttackKind
from .defense import AdpConfig, DistributionRule, IgatConfig
from .ensemble import CombinerKind


class ConfigError(Exception):
    """Bad flags or config content; maps to exit code 2."""


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json_atomic(path, payload) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _require(config: dict, dotted: str):
    node = config
    walked = []
    for part in dotted.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing required config key: {'.'.join(walked)}")
        node = node[part]
    return node


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _load_dataset_file(path) -> data.Dataset:
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    try:
        return data.load_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _attack_from_flags(args) -> AttackConfig:
    try:
        return AttackConfig(
            kind=AttackKind(args.attack),
            epsilon=args.eps,
            steps=args.steps,
            step_size=args.step_size,
            random_start=args.random_start,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _threads_value(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("ENSEMBLADE_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid thread count: {raw!r}") from None
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


# ---------------------------------------------------------------- train


def _dataset_from_config(cfg: dict, default_seed: int) -> tuple[data.Dataset, data.Dataset]:
    fraction = float(cfg.get("train_fraction", 0.8))
    split_seed = int(cfg.get("split_seed", default_seed))
    if "csv" in cfg:
        ds = _load_dataset_file(cfg["csv"])
    else:
        for key in ("kind", "n_per_class"):
            if key not in cfg:
                raise ConfigError(f"missing required config key: data.{key}")
        try:
            spec = data.SyntheticSpec(
                kind=data.SyntheticKind(cfg["kind"]),
                n_per_class=int(cfg["n_per_class"]),
                num_classes=int(cfg.get("num_classes", 2)),
                d=int(cfg.get("d", 2)),
                class_separation=float(cfg.get("class_separation", 1.0)),
                noise=float(cfg.get("noise", 0.1)),
                seed=int(cfg.get("seed", default_seed)),
            )
            ds = data.generate(spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return data.split(ds, fraction, seed=split_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _igat_from_config(defense_cfg: dict, seed: int) -> tuple[AdpConfig, IgatConfig, int]:
    n_members = int(_require(defense_cfg, "n_members"))
    igat_cfg = _require(defense_cfg, "igat")
    for key in ("alpha", "beta", "rule", "attack", "epochs_pretrain", "epochs_finetune"):
        _require(igat_cfg, key)
    attack_cfg = igat_cfg["attack"]
    for key in ("kind", "epsilon"):
        _require(attack_cfg, key)
    try:
        attack = AttackConfig(
            kind=AttackKind(attack_cfg["kind"]),
            epsilon=float(attack_cfg["epsilon"]),
            steps=int(attack_cfg.get("steps", 10)),
            step_size=attack_cfg.get("step_size"),
            random_start=bool(attack_cfg.get("random_start", False)),
        )
        adp_section = defense_cfg.get("adp", {})
        adp = AdpConfig(
            entropy_weight=float(adp_section.get("entropy_weight", 2.0)),
            diversity_weight=float(adp_section.get("diversity_weight", 0.5)),
            det_floor=float(adp_section.get("det_floor", 1e-12)),
        )
        igat = IgatConfig(
            attack=attack,
            seed=seed,
            alpha=float(igat_cfg["alpha"]),
            beta=float(igat_cfg["beta"]),
            rule=DistributionRule(igat_cfg["rule"]),
            combiner=CombinerKind(defense_cfg.get("combiner", "average")),
            epochs_pretrain=int(igat_cfg["epochs_pretrain"]),
            epochs_finetune=int(igat_cfg["epochs_finetune"]),
            lr_pretrain=float(igat_cfg.get("lr_pretrain", 0.05)),
            lr_finetune=float(igat_cfg.get("lr_finetune", 0.02)),
            momentum=float(igat_cfg.get("momentum", 0.0)),
            batch_size=int(igat_cfg.get("batch_size", 64)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return adp, igat, n_members


METRICS_HEADER = [
    "epoch", "phase", "natural_acc", "robust_acc", "loss_total", "loss_ce",
    "loss_entropy", "loss_diversity", "loss_global_adv", "loss_regularizer",
]


def cmd_train(args) -> int:
    started = _utc_now()
    config = _load_json(args.config)
    seed = int(_require(config, "seed"))
    arch_cfg = _require(config, "arch")
    widths = _require(arch_cfg, "widths")
    try:
        arch = nnet.MlpArchitecture(
            layer_widths=tuple(int(w) for w in widths),
            activation=nnet.Activation(arch_cfg.get("activation", "tanh")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    train_ds, eval_ds = _dataset_from_config(_require(config, "data"), seed)
    adp, igat, n_members = _igat_from_config(_require(config, "defense"), seed)

    os.makedirs(args.out, exist_ok=True)
    ens, metrics = defense.train_igat(train_ds, arch, n_members, adp, igat,
                                      eval_data=eval_ds)
    manifest_path = ensemble.save_ensemble(ens, args.out)
    metrics_path = os.path.join(args.out, "metrics.csv")
    _write_csv(metrics_path, METRICS_HEADER, [
        [m.epoch, m.phase, m.natural_acc, m.robust_acc, m.loss_total, m.loss_ce,
         m.loss_entropy, m.loss_diversity, m.loss_global_adv, m.loss_regularizer]
        for m in metrics
    ])
    outputs = sorted(os.listdir(args.out))
    run_manifest = {
        "command": ["train", "--config", args.config, "--out", args.out],
        "config": config,
        "seed": seed,
        "version": __version__,
        "started_utc": started,
        "finished_utc": _utc_now(),
        "outputs": [name for name in outputs if name != "run_manifest.json"],
    }
    _write_json_atomic(os.path.join(args.out, "run_manifest.json"), run_manifest)
    if metrics:
        last = metrics[-1]
        print(f"trained {n_members} members, final natural_acc={_fmt(last.natural_acc)} "
              f"robust_acc={_fmt(last.robust_acc)}")
    else:
        print(f"wrote untrained ensemble with {n_members} members")
    print(f"ensemble manifest: {manifest_path}")
    print(f"metrics: {metrics_path}")
    return 0


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    ens = ensemble.load_ensemble(args.model)
    ds = _load_dataset_file(args.data)
    cfg = _attack_from_flags(args)
    natural, robust = ensemble.robust_accuracy(ens, ds, cfg, seed=args.seed)
    payload = {
        "natural_acc": natural,
        "robust_acc": robust,
        "attack": {"kind": cfg.kind.value, "eps": cfg.epsilon, "steps": cfg.steps},
    }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


# ---------------------------------------------------------------- theory


def _parse_grid(raw: str) -> list[float]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must look like start:stop:step, got {raw!r}")
    try:
        start, stop, step = (float(v) for v in parts)
    except ValueError:
        raise ConfigError(f"grid must be numeric, got {raw!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError("grid needs step > 0 and stop >= start")
    values = []
    k = 0
    while True:
        p = start + k * step
        if p > stop + 1e-12:
            break
        values.append(min(p, 1.0))
        k += 1
    return values


def cmd_theory_verify(args) -> int:
    grid = _parse_grid(args.p_grid)
    rows = []
    for p in grid:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"grid value {p} outside [0, 1]")
        single, ens = theory.monte_carlo_risks(p, args.trials, args.seed)
        rows.append([
            p, theory.single_risk_closed_form(p), theory.ensemble_risk_upper_bound(p),
            single.mean, single.half_width_95, ens.mean, ens.half_width_95,
            args.trials, args.seed,
        ])
    header = ["p", "closed_single", "closed_ensemble", "mc_single", "mc_single_ci",
              "mc_ensemble", "mc_ensemble_ci", "trials", "seed"]
    _write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_theory_toy(args) -> int:
    report = theory.toy_example()
    print(f"single_model_loss={_fmt(report.single_model_loss)}")
    print(f"max_ensemble_loss={_fmt(report.max_ensemble_loss)}")
    print(f"average_ensemble_loss={_fmt(report.average_ensemble_loss)}")
    return 0


def cmd_theory_crossing(args) -> int:
    root = theory.crossing_point()
    print(f"crossing_p={_fmt(root)}")
    print(f"single_risk_at_crossing={_fmt(theory.single_risk_closed_form(root))}")
    return 0


# ---------------------------------------------------------------- distribute-stats


def cmd_distribute_stats(args) -> int:
    if args.scores is not None:
        try:
            scores = np.array([float(v) for v in args.scores.split(",")])
        except ValueError:
            raise ConfigError(f"could not parse scores {args.scores!r}") from None
        if len(scores) != args.n:
            raise ConfigError(f"expected {args.n} scores, got {len(scores)}")
    else:
        scores = np.random.default_rng((args.seed, 41)).random(args.n)
    ranks = defense.rank_members(scores)
    expected = defense.ranking_scores(ranks)
    rng = np.random.default_rng((args.seed, 42))
    counts = np.zeros(args.n, dtype=np.int64)
    for _ in range(args.draws):
        counts[defense.roulette_select(expected, rng)] += 1
    freqs = counts / args.draws
    print("member,score,rank,expected,observed")
    for i in range(args.n):
        print(f"{i},{_fmt(float(scores[i]))},{ranks[i]},{_fmt(float(expected[i]))},"
              f"{_fmt(float(freqs[i]))}")
    return 0


# ---------------------------------------------------------------- pairs


def cmd_pairs(args) -> int:
    ds = _load_dataset_file(args.data)
    try:
        # The constants need C >= 2 even when the data file happens to hold a
        # single class; the scan is still well defined (and empty).
        tc = theory.TheoryConstants(
            J=args.j, B=args.b, lambda_tilde=args.lambda_tilde, xi=args.xi,
            num_classes=max(ds.num_classes, 2),
        )
        pair_set = theory.build_ambiguous_pairs(ds, tc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _write_csv(args.out, ["i", "j"], [[i, j] for i, j in pair_set.pairs])
    print(f"threshold={_fmt(pair_set.threshold)}")
    print(f"pairs={len(pair_set.pairs)}")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- dataset


def cmd_dataset_generate(args) -> int:
    try:
        spec = data.SyntheticSpec(
            kind=data.SyntheticKind(args.kind),
            n_per_class=args.n_per_class,
            num_classes=args.classes,
            d=args.d,
            class_separation=args.separation,
            noise=args.noise,
            seed=args.seed,
        )
        ds = data.generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data.save_csv(ds, args.out)
    print(f"wrote {len(ds)} examples ({ds.num_classes} classes, d={ds.d}) to {args.out}")
    return 0


def cmd_dataset_info(args) -> int:
    ds = _load_dataset_file(args.data)
    counts = np.bincount(ds.labels_array(), minlength=ds.num_classes)
    print(f"examples={len(ds)}")
    print(f"dimension={ds.d}")
    print(f"classes={ds.num_classes}")
    for c, n in enumerate(counts):
        print(f"class_{c}={int(n)}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensemblade",
        description="ensemble adversarial defense and risk verification at desk scale",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (or ENSEMBLADE_THREADS); "
                             "results never depend on it")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an ensemble from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="natural and robust accuracy of a saved ensemble")
    p_eval.add_argument("--model", required=True, help="ensemble manifest path")
    p_eval.add_argument("--data", required=True, help="dataset CSV")
    p_eval.add_argument("--attack", required=True, choices=[k.value for k in AttackKind])
    p_eval.add_argument("--eps", type=float, required=True)
    p_eval.add_argument("--steps", type=int, default=20)
    p_eval.add_argument("--step-size", dest="step_size", type=float, default=None)
    p_eval.add_argument("--random-start", dest="random_start",
                        action=argparse.BooleanOptionalAction, default=False)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None, help="optional JSON output path")
    p_eval.set_defaults(func=cmd_eval)

    p_theory = sub.add_parser("theory", help="closed forms and Monte Carlo checks")
    theory_sub = p_theory.add_subparsers(dest="theory_command", required=True)
    p_verify = theory_sub.add_parser("verify", help="risk curves over a p grid")
    p_verify.add_argument("--p-grid", dest="p_grid", required=True,
                          help="start:stop:step, e.g. 0:1:0.1")
    p_verify.add_argument("--trials", type=int, default=1_000_000)
    p_verify.add_argument("--seed", type=int, required=True)
    p_verify.add_argument("--out", required=True, help="CSV output path")
    p_verify.set_defaults(func=cmd_theory_verify)
    p_toy = theory_sub.add_parser("toy", help="two-specialist worked example")
    p_toy.set_defaults(func=cmd_theory_toy)
    p_cross = theory_sub.add_parser("crossing", help="where the risk curves meet")
    p_cross.set_defaults(func=cmd_theory_crossing)

    p_stats = sub.add_parser("distribute-stats",
                             help="empirical vs expected soft-rule frequencies")
    p_stats.add_argument("--n", type=int, required=True, help="member count")
    p_stats.add_argument("--draws", type=int, default=100_000)
    p_stats.add_argument("--scores", default=None, help="comma-separated member scores")
    p_stats.add_argument("--seed", type=int, required=True)
    p_stats.set_defaults(func=cmd_distribute_stats)

    p_pairs = sub.add_parser("pairs", help="enumerate ambiguous pairs of a dataset")
    p_pairs.add_argument("--data", required=True)
    p_pairs.add_argument("--j", type=float, required=True)
    p_pairs.add_argument("--b", type=float, default=1.0)
    p_pairs.add_argument("--lambda-tilde", dest="lambda_tilde", type=float, default=1.0)
    p_pairs.add_argument("--xi", type=float, default=0.0)
    p_pairs.add_argument("--out", required=True, help="CSV output path")
    p_pairs.set_defaults(func=cmd_pairs)

    p_data = sub.add_parser("dataset", help="synthetic data utilities")
    data_sub = p_data.add_subparsers(dest="dataset_command", required=True)
    p_gen = data_sub.add_parser("generate")
    p_gen.add_argument("--kind", required=True,
                       choices=[k.value for k in data.SyntheticKind])
    p_gen.add_argument("--n-per-class", dest="n_per_class", type=int, required=True)
    p_gen.add_argument("--classes", type=int, default=2)
    p_gen.add_argument("--d", type=int, default=2)
    p_gen.add_argument("--separation", type=float, default=1.0)
    p_gen.add_argument("--noise", type=float, default=0.1)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_dataset_generate)
    p_info = data_sub.add_parser("info")
    p_info.add_argument("--data", required=True)
    p_info.set_defaults(func=cmd_dataset_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        _threads_value(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
