"""Command-line entry points: ``metastack {pretrain,adapt,eval,diagnose}``.

Exit codes: 0 success, 1 a hard diagnostic assertion failed, 2 configuration
or usage error, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import policy as pol
from .config import ConfigError, RunConfig, dump_config, load_config
from .diagnostics import (LIPSCHITZ_IDS, SampledObjectives, fose_residual, grad_check_suite, lipschitz_probe,
                          pl_probe, sc_check)
from .env import FLGame
from .game import AttackTypeSpec
from .meta import (MetaState, NumericalFailure, bse_baseline, init_state, make_sampler, meta_sl,
                   online_adapt, reptile_meta_rl)
from .rng import Streams

log = logging.getLogger("metastack")

METRICS_HEADER = ["iter", "round", "clean_loss", "clean_acc", "backdoor_acc", "rD_mean", "rA_mean",
                  "residual_D", "residual_A_max", "wallclock_s"]
ALGOS = {"meta-rl": reptile_meta_rl, "meta-sl": meta_sl, "bse": bse_baseline}
CHECKS = ("fose", "sc", "pl", "lipschitz", "gradcheck", "all")


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


class MetricsWriter:
    """Appends one CSV row per record; every column is always present."""

    def __init__(self, path: Path, header=METRICS_HEADER):
        self.path = path
        self.header = list(header)
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(self.header)

    def write(self, row: dict):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [row.get(k, "") if isinstance(row.get(k), (str, int)) else _fmt(row.get(k)) for k in self.header])


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get("METASTACK_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"METASTACK_WORKERS must be an integer, got {env!r}")
    return 1


def _load(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = load_config(args.config, seed=args.seed)
    cfg = dataclasses.replace(cfg, meta=dataclasses.replace(cfg.meta, workers=_workers(args)))
    print("# resolved configuration")
    print(dump_config(cfg))
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}")
    return out


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / "checkpoint_final.json"


def save_state(state: MetaState, path: Path, extra=None):
    pol.save_checkpoint(state.theta, path, extra)
    for tid, phi in sorted(state.phis.items()):
        pol.save_checkpoint(phi, path.parent / f"attacker_{tid}.json")


def _load_phi(ckpt: Path, xi: AttackTypeSpec, game: FLGame, cfg: RunConfig):
    if not xi.adaptive:
        return None
    path = ckpt.parent / f"attacker_{xi.id}.json"
    if path.exists():
        return pol.load_checkpoint(path)
    return pol.init_policy(game.attacker_arch(cfg.meta.hidden), Streams(cfg.seed).get("init", "attacker", xi.id),
                           "attacker", log_std_init=cfg.meta.log_std_init)


def _resolve_attack(args, cfg: RunConfig):
    if getattr(args, "attack_file", None):
        with open(args.attack_file) as fh:
            return AttackTypeSpec.from_dict(json.load(fh))
    if args.attack is None:
        raise UsageError("--attack is required (a type id from the prior, or 'none')")
    if str(args.attack).lower() == "none":
        return None
    try:
        return cfg.prior.by_id(int(args.attack))
    except (KeyError, ValueError):
        known = [xi.id for xi in cfg.prior.types]
        raise UsageError(f"unknown attack id {args.attack!r}; known ids: {known}")


# ---------------------------------------------------------------------- commands


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    if args.algo not in ALGOS:
        raise UsageError(f"unknown --algo {args.algo!r}; expected one of {sorted(ALGOS)}")
    if args.algo == "meta-rl":
        adaptive = [xi.id for xi in cfg.prior.types if xi.adaptive]
        if adaptive:
            raise UsageError(f"--algo meta-rl handles fixed attacks only, but types {adaptive} are adaptive; "
                             "use --algo meta-sl")
    out = _out_dir(args, cfg)
    (out / "run_config_resolved.toml").write_text(dump_config(cfg))
    game = FLGame(cfg.env, cfg.seed)
    metrics = MetricsWriter(out / "metrics.csv")
    start = time.perf_counter()
    objectives = None
    if cfg.diagnostics.cadence > 0:
        objectives = SampledObjectives(game, cfg.meta.eta, n_b=cfg.diagnostics.n_b,
                                       replicates=cfg.diagnostics.replicates, seed=cfg.seed)

    def on_iteration(state, rec):
        if objectives is not None and (rec.iteration + 1) % cfg.diagnostics.cadence == 0:
            rep = fose_residual(state.theta, state.phis, cfg.prior, objectives, key=("fose", rec.iteration))
            rec.defender_residual = rep.defender
            rec.attacker_residuals = dict(rep.per_type)
        if cfg.record_wallclock:
            rec.wallclock_s = time.perf_counter() - start
        row = {"iter": rec.iteration, "round": cfg.env.horizon, "residual_D": rec.defender_residual,
               "residual_A_max": rec.attacker_residual_max, "wallclock_s": rec.wallclock_s, **rec.extra}
        metrics.write(row)
        if cfg.checkpoint_every and (rec.iteration + 1) % cfg.checkpoint_every == 0:
            save_state(state, out / f"checkpoint_iter{rec.iteration + 1}.json")

    try:
        state = ALGOS[args.algo](cfg.meta, cfg.prior, game, callback=on_iteration)
    except NumericalFailure as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    save_state(state, out / "checkpoint_final.json")
    print(f"wrote {out / 'checkpoint_final.json'}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    ckpt = _checkpoint_path(args, out)
    if not ckpt.exists():
        raise UsageError(f"checkpoint {ckpt} does not exist; run pretrain first or pass --checkpoint")
    xi = _resolve_attack(args, cfg)
    target = out / "adapted_checkpoint.json"
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    if args.steps == 0:
        if ckpt.resolve() != target.resolve():
            shutil.copyfile(ckpt, target)
        print(f"wrote {target} (unchanged)")
        return 0
    theta = pol.load_checkpoint(ckpt)
    game = FLGame(cfg.env, cfg.seed)
    phi = _load_phi(ckpt, xi, game, cfg) if xi is not None else None
    theta2, rows = online_adapt(theta, make_sampler(game, xi), args.steps, cfg.meta.eta, cfg.meta.N_b,
                                Streams(cfg.seed).child("adapt"), phi, cfg.meta.baseline)
    pol.save_checkpoint(theta2, target)
    header = ["step", "return_D", "clean_loss", "clean_acc", "backdoor_acc", "rD_mean", "rA_mean"]
    writer = MetricsWriter(out / "adapt_metrics.csv", header)
    for r in rows:
        writer.write(r)
    print(f"wrote {target}")
    return 0


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return None, None
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def cmd_eval(args) -> int:
    cfg = _load(args)
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    out = _out_dir(args, cfg)
    game = FLGame(cfg.env, cfg.seed)
    xi = _resolve_attack(args, cfg)
    defense = args.defense
    theta = None
    ckpt = _checkpoint_path(args, out)
    if defense is None and cfg.env.defense == "rl":
        if not ckpt.exists():
            raise UsageError(f"checkpoint {ckpt} does not exist")
        theta = pol.load_checkpoint(ckpt)
    phi = _load_phi(ckpt, xi, game, cfg) if xi is not None else None
    batch = game.rollout(theta, phi, xi, args.episodes, Streams(cfg.seed).get("eval"), defense=defense)
    ret, ret_se = _mean_se(batch.returns("defender"))
    acc, acc_se = _mean_se(batch.info["clean_acc"])
    bd, bd_se = _mean_se(batch.info["backdoor_acc"])
    report = {"episodes": args.episodes, "attack": None if xi is None else xi.id,
              "defense": defense or cfg.env.defense,
              "defender_return": ret, "defender_return_se": ret_se,
              "clean_acc": acc, "clean_acc_se": acc_se, "backdoor_acc": bd, "backdoor_acc_se": bd_se}
    (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"defender return {ret:.4f} ± {ret_se:.4f}")
    print(f"clean accuracy  {acc:.4f} ± {acc_se:.4f}")
    if bd is not None:
        print(f"backdoor acc    {bd:.4f} ± {bd_se:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    if args.check not in CHECKS:
        raise UsageError(f"unknown check {args.check!r}; expected one of {list(CHECKS)}")
    checks = CHECKS[:-1] if args.check == "all" else (args.check,)
    report = {}
    hard_fail = False
    if "gradcheck" in checks:
        gc = grad_check_suite(seed=0 if args.seed is None else args.seed)
        print(gc.table())
        report["gradcheck"] = json.loads(gc.to_json())
        hard_fail |= not gc.passed
    env_checks = [c for c in checks if c != "gradcheck"]
    if env_checks:
        cfg = _load(args)
        out = _out_dir(args, cfg)
        game = FLGame(cfg.env, cfg.seed)
        streams = Streams(cfg.seed).child("diagnose")
        ckpt = _checkpoint_path(args, out)
        if ckpt.exists():
            state = MetaState(pol.load_checkpoint(ckpt),
                              {xi.id: _load_phi(ckpt, xi, game, cfg) for xi in cfg.prior.types if xi.adaptive})
        else:
            state = init_state(cfg.meta, cfg.prior, game)
        d = cfg.diagnostics
        obj = SampledObjectives(game, cfg.meta.eta, n_b=d.n_b, replicates=d.replicates, seed=cfg.seed,
                                br_steps=cfg.meta.N_A, kappa_A=cfg.meta.kappa_A)
        if "fose" in env_checks:
            rep = fose_residual(state.theta, state.phis, cfg.prior, obj)
            report["fose"] = rep.to_json()
            print(f"fose: defender residual {rep.defender:.6g} ± {rep.defender_se:.3g}; "
                  f"attackers {rep.per_type}")
        if "sc" in env_checks:
            report["sc"] = {}
            for xi in cfg.prior.types:
                fit = sc_check(game, xi, d.sc_samples, streams.get("sc", xi.id))
                report["sc"][str(xi.id)] = fit.to_json()
                print(f"sc type {xi.id} ({xi.category}): c={fit.c:.12g} d={fit.d:.6g} "
                      f"max_abs_residual={fit.max_abs_residual:.3g}")
                if xi.category == "untargeted" and cfg.env.reward_sign_mode == "consistent":
                    ok = abs(fit.c + 1) <= 1e-8 and abs(fit.d) <= 1e-8 and fit.max_abs_residual <= 1e-10
                    hard_fail |= not ok
        if "pl" in env_checks:
            report["pl"] = {}
            for xi in cfg.prior.types:
                if not xi.adaptive:
                    continue
                phi_star = obj.best_response(state.theta, state.phis[xi.id], xi, ("pl", xi.id))
                pl = pl_probe(state.theta, phi_star, xi, obj, d.n_probes, streams.get("pl", xi.id), radius=0.1)
                report["pl"][str(xi.id)] = pl.to_json()
                print(f"pl type {xi.id}: ratio={pl.ratio} status={pl.status}")
        if "lipschitz" in env_checks:
            report["lipschitz"] = {}
            for xi in cfg.prior.types:
                phi = state.phis.get(xi.id)
                ids = LIPSCHITZ_IDS if phi is not None else ("L11",)
                vals = {fid: lipschitz_probe(fid, state.theta, phi, xi, obj, d.n_pairs,
                                             streams.get("lip", xi.id, fid), radius=0.05) for fid in ids}
                report["lipschitz"][str(xi.id)] = vals
                print(f"lipschitz type {xi.id}: {vals}")
        (out / "diagnostics.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    return 1 if hard_fail else 0


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metastack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--out", help="output directory (default: output_dir from the config)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="thread pool size (fallback: METASTACK_WORKERS)")
        if checkpoint:
            sp.add_argument("--checkpoint", help="defender checkpoint (default: <out>/checkpoint_final.json)")

    sp = sub.add_parser("pretrain", help="meta-train a defense in simulation")
    common(sp, checkpoint=False)
    sp.add_argument("--algo", default="meta-sl", help="meta-rl | meta-sl | bse")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("adapt", help="online adaptation against one attack")
    common(sp)
    sp.add_argument("--attack", help="attack type id from the prior")
    sp.add_argument("--attack-file", help="JSON file with a single attack type (for unseen attacks)")
    sp.add_argument("--steps", type=int, default=10)
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("eval", help="evaluate a defense")
    common(sp)
    sp.add_argument("--attack", help="attack type id from the prior, or 'none'")
    sp.add_argument("--attack-file", help="JSON file with a single attack type")
    sp.add_argument("--episodes", "-n", type=int, default=32)
    sp.add_argument("--defense", help="evaluate a fixed aggregator instead of the checkpoint")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("diagnose", help="equilibrium and estimator diagnostics")
    common(sp)
    sp.add_argument("--check", default="all", help="fose | sc | pl | lipschitz | gradcheck | all")
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
