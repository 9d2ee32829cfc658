"""Command-line front end: experiment subcommands and artifact emission.

Each subcommand reads one YAML config (all defaults when omitted),
runs its experiment, and writes artifacts into ``<out>/<subcommand>/``:
delimited CSV data, a ``summary.json`` with a ``schema_version`` field,
the resolved config, and rendered figures.  Identical invocations
produce byte-identical data files; wall-clock time only ever appears
in the ``metadata.json`` sidecar.

With ``--check`` the exit status is zero only if every acceptance
assertion of that subcommand held.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import (
    RunConfig,
    build_control,
    build_episode,
    build_loss_pair,
    build_optimizer,
    build_pair_buffer,
    build_perception,
    build_trail,
    load_config,
    parse_config,
    serialize_config,
)
from .control import command_log_header, command_log_row
from .geo import SimilarityTransform
from .labels import Category
from .loss import LossConfig, finite_diff_check, smooth_labels
from .perception import (
    Head,
    accuracy,
    init_model,
    make_synthetic_dataset,
    mean_winning_probability,
    save_model,
    split_dataset,
    train_stage,
)
from .report import (
    save_gradcheck_figure,
    save_offset_figure,
    save_scale_figure,
    save_trajectory_figure,
    save_training_figure,
)
from .scale_align import make_synthetic_pair_stream, running_scale_estimate
from .sim import (
    RECOVERY_OFFSET,
    Disturbance,
    disturbance_experiment,
    episode_summary,
    export_episode_csv,
    run_episode,
)

__all__ = [
    "main",
    "train_experiment",
    "scale_experiment",
    "gradcheck_experiment",
]

SCHEMA_VERSION = 1


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_commands_csv(log, path: Path) -> None:
    lines = [command_log_header()]
    lines += [command_log_row(r.t, r.command) for r in log.records]
    path.write_text("\n".join(lines) + "\n")


def _perception_for(cfg: RunConfig, variant: str):
    sect = dataclasses.replace(cfg.perception, variant=variant)
    return build_perception(dataclasses.replace(cfg, perception=sect))


def _worst_recovery(times) -> float:
    """Max settling time over disturbances; an unrecovered one is infinite."""
    worst = 0.0
    for t in times:
        if t is None:
            return math.inf
        worst = max(worst, t)
    return worst


# ---------------------------------------------------------------------------
# Experiment harnesses (also driven directly by the test suite)

def train_experiment(cfg: RunConfig, seed: int) -> dict:
    """Two-stage training plus the unregularized baseline.

    Stage 1 fits trunk and orientation head on the heading-only task,
    once with the configured regularizers and once with plain cross
    entropy from the same init.  Stage 2 freezes the trunk and
    orientation head and fits the offset head on the offset-only task.
    Returns models, histories, and held-out metrics.
    """
    rng = np.random.default_rng(seed)
    tr = cfg.train
    orient = make_synthetic_dataset("orientation_only", tr.samples, rng,
                                    noise_std=tr.feature_noise)
    orient_train, orient_hold = split_dataset(orient, tr.holdout_fraction, rng)
    offset = make_synthetic_dataset("offset_only", tr.samples, rng,
                                    noise_std=tr.feature_noise)
    offset_train, offset_hold = split_dataset(offset, tr.holdout_fraction, rng)

    model0 = init_model(rng)
    loss_vo, loss_lo = build_loss_pair(cfg)
    plain = LossConfig.for_orientation_head(entropy_weight=0.0,
                                            side_swap_weight=0.0,
                                            label_smoothing=0.0)
    opt = build_optimizer(cfg)

    stage1, hist1 = train_stage(model0, orient_train, Head.VO, loss_vo, opt)
    baseline, hist1_plain = train_stage(model0, orient_train, Head.VO, plain, opt)
    stage2, hist2 = train_stage(stage1.with_frozen(trunk=True, vo_head=True),
                                offset_train, Head.LO, loss_lo, opt)

    return {
        "stage1": stage1,
        "baseline": baseline,
        "stage2": stage2,
        "histories": {
            "stage1 regularized": hist1,
            "stage1 plain CE": hist1_plain,
            "stage2 offset head": hist2,
        },
        "winprob_regularized": mean_winning_probability(stage1, orient_hold, Head.VO),
        "winprob_plain": mean_winning_probability(baseline, orient_hold, Head.VO),
        "acc_regularized": accuracy(stage1, orient_hold, Head.VO),
        "acc_plain": accuracy(baseline, orient_hold, Head.VO),
        "lo_holdout_accuracy": accuracy(stage2, offset_hold, Head.LO),
        "trunk_identical": (
            np.array_equal(stage2.trunk_weight, stage1.trunk_weight)
            and np.array_equal(stage2.trunk_bias, stage1.trunk_bias)),
        "vo_head_identical": (
            np.array_equal(stage2.vo_weight, stage1.vo_weight)
            and np.array_equal(stage2.vo_bias, stage1.vo_bias)),
    }


def _random_similarity(rng: np.random.Generator) -> SimilarityTransform:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, 2] = -q[:, 2]
    return SimilarityTransform(
        scale=rng.uniform(1.5, 3.0),
        rotation=q,
        translation=rng.uniform(-5.0, 5.0, 3),
    )


# Odometry-frame landmark whose metric distance the demo estimates.
_SCALE_TARGET = np.array([4.0, 1.0, 0.5])


def scale_experiment(cfg: RunConfig, seed: int) -> dict:
    """Seeded settling trials of the running metric-distance estimate.

    Each trial picks its own ground-truth similarity, streams noisy
    pose pairs through a fresh parallax-gated buffer, and records the
    estimated distance to a fixed odometry-frame target after every
    accepted pair.  Returns the per-trial series and ground truths.
    """
    sc = cfg.scale
    series_list, truths = [], []
    for k in range(sc.trials):
        rng = np.random.default_rng(seed + k)
        truth_tf = _random_similarity(rng)
        pairs = make_synthetic_pair_stream(truth_tf, sc.pairs, spacing=sc.spacing,
                                           noise_std=sc.noise, rng=rng)
        series = running_scale_estimate(pairs, build_pair_buffer(cfg), _SCALE_TARGET)
        series_list.append(series)
        truths.append(float(np.linalg.norm(truth_tf.apply(_SCALE_TARGET))))
    return {"series": series_list, "truths": truths}


def gradcheck_experiment(cfg: RunConfig, seed: int, trials: int) -> dict:
    """Analytic-vs-numeric gradient agreement over random instances."""
    rng = np.random.default_rng(seed)
    errors = np.empty(trials)
    for i in range(trials):
        z = rng.normal(0.0, 3.0, 3)
        truth = Category(int(rng.integers(3)))
        lcfg = LossConfig(
            entropy_weight=rng.uniform(0.0, 0.5),
            side_swap_weight=rng.uniform(0.0, 0.5),
            label_smoothing=rng.uniform(0.0, 0.3),
            apply_side_swap=bool(rng.integers(2)),
        )
        label = smooth_labels(truth, lcfg.label_smoothing)
        errors[i] = finite_diff_check(z, label, lcfg)
    return {"errors": errors}


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_run(cfg: RunConfig, outdir: Path) -> tuple[dict, dict]:
    trail = build_trail(cfg)
    log = run_episode(build_episode(cfg, trail, build_perception(cfg)), cfg.seed)
    export_episode_csv(log, outdir / "episode.csv")
    _write_commands_csv(log, outdir / "commands.csv")
    save_trajectory_figure(trail, {cfg.perception.variant: log},
                           outdir / "trajectory.png")
    save_offset_figure({cfg.perception.variant: log}, outdir / "offset.png")
    summary = episode_summary(log)
    summary["perception"] = cfg.perception.variant
    checks = {"episode_completed": log.completed}
    return summary, checks


def _cmd_disturbance(cfg: RunConfig, outdir: Path) -> tuple[dict, dict]:
    trail = build_trail(cfg)
    schedule = tuple(Disturbance(d.start, d.yaw_rate, d.duration)
                     for d in cfg.disturbance.schedule)
    control = build_control(cfg)
    degraded = dataclasses.replace(
        control,
        turn_gain_vo=control.turn_gain_vo * cfg.disturbance.degraded_gain_factor,
        turn_gain_lo=control.turn_gain_lo * cfg.disturbance.degraded_gain_factor,
    )
    results = disturbance_experiment(
        trail,
        {"oracle6": _perception_for(cfg, "oracle6"),
         "vo_only": _perception_for(cfg, "vo_only")},
        schedule, control=control, seed=cfg.seed,
        max_time=cfg.disturbance.max_time)
    results.update(disturbance_experiment(
        trail, {"vo_only_degraded": _perception_for(cfg, "vo_only")},
        schedule, control=degraded, seed=cfg.seed,
        max_time=cfg.disturbance.max_time))

    summary: dict = {"variants": {}}
    for name, log in results.items():
        export_episode_csv(log, outdir / f"disturbance_{name}.csv")
        summary["variants"][name] = episode_summary(log)
    save_offset_figure(results, outdir / "offset.png", disturbances=schedule,
                       recovery_band=RECOVERY_OFFSET)
    save_trajectory_figure(trail, results, outdir / "trajectory.png")

    peak = lambda log: max(abs(r.rel.lateral_offset) for r in log.records)
    full, vo = results["oracle6"], results["vo_only"]
    checks = {
        "max_offset_oracle6_lt_vo_only": peak(full) < peak(vo),
        "settling_oracle6_lt_vo_only":
            _worst_recovery(full.recovery_times) < _worst_recovery(vo.recovery_times),
        "oracle6_recovers_within_6s":
            all(r is not None and r < 6.0 for r in full.recovery_times),
    }
    return summary, checks


def _cmd_autonomy(cfg: RunConfig, outdir: Path,
                  only_variant: str | None) -> tuple[dict, dict]:
    trail = build_trail(cfg)
    variants = [only_variant] if only_variant else ["oracle6", "vo_only"]
    logs = {}
    summary: dict = {"variants": {}}
    for name in variants:
        ep = build_episode(cfg, trail, _perception_for(cfg, name),
                           start_offset=cfg.autonomy.start_offset,
                           max_time=cfg.autonomy.max_time)
        log = run_episode(ep, cfg.seed)
        logs[name] = log
        export_episode_csv(log, outdir / f"autonomy_{name}.csv")
        summary["variants"][name] = episode_summary(log)
    save_trajectory_figure(trail, logs, outdir / "trajectory.png")
    save_offset_figure(logs, outdir / "offset.png")

    checks = {f"{name}_completed": log.completed for name, log in logs.items()}
    if "oracle6" in logs:
        checks["oracle6_full_autonomy"] = logs["oracle6"].autonomy_percent == 100.0
    if "oracle6" in logs and "vo_only" in logs:
        checks["vo_only_below_full_autonomy"] = logs["vo_only"].autonomy_percent < 100.0
    return summary, checks


def _cmd_scale_demo(cfg: RunConfig, outdir: Path) -> tuple[dict, dict]:
    res = scale_experiment(cfg, cfg.seed)
    trials_ok, final10_ok = [], []
    summary: dict = {"trials": []}
    for k, (series, truth) in enumerate(zip(res["series"], res["truths"])):
        lines = ["accepted_index,t,estimate,truth,rel_error"]
        rel = []
        for i, (t, est) in enumerate(series):
            if est is None:
                lines.append(f"{i},{_fmt(t)},,{_fmt(truth)},")
                rel.append(None)
            else:
                r = abs(est - truth) / truth
                rel.append(r)
                lines.append(f"{i},{_fmt(t)},{_fmt(est)},{_fmt(truth)},{_fmt(r)}")
        (outdir / f"scale_trial{k}.csv").write_text("\n".join(lines) + "\n")

        after20 = [r for r in rel[20:] if r is not None]
        settled = bool(after20) and all(r < 0.05 for r in after20)
        last10 = [r for r in rel[-10:] if r is not None]
        final_ok = len(last10) == 10 and all(r < 0.05 for r in last10)
        trials_ok.append(settled)
        final10_ok.append(final_ok)
        summary["trials"].append({
            "truth_distance": truth,
            "accepted_pairs": len(series),
            "max_rel_error_after_20": max(after20) if after20 else None,
            "settled_within_5pct": settled,
            "final_10_within_5pct": final_ok,
        })
    save_scale_figure(res["series"], res["truths"], outdir / "settling.png")

    need = max(1, math.ceil(0.8 * len(trials_ok)))
    summary["trials_settled"] = sum(trials_ok)
    summary["trials_required"] = need
    checks = {
        "settles_in_enough_trials": sum(trials_ok) >= need,
        "final_estimates_within_5pct": all(final10_ok),
    }
    return summary, checks


def _cmd_train(cfg: RunConfig, outdir: Path) -> tuple[dict, dict]:
    res = train_experiment(cfg, cfg.seed)
    lines = ["stage,epoch,loss"]
    for name, hist in res["histories"].items():
        tag = name.replace(" ", "_")
        lines += [f"{tag},{e},{_fmt(v)}" for e, v in enumerate(hist)]
    (outdir / "training_history.csv").write_text("\n".join(lines) + "\n")
    save_model(res["stage2"], outdir / "model.txt")
    save_training_figure(res["histories"], outdir / "training.png")

    acc_drop = res["acc_plain"] - res["acc_regularized"]
    summary = {
        "winprob_regularized": res["winprob_regularized"],
        "winprob_plain": res["winprob_plain"],
        "holdout_accuracy_regularized": res["acc_regularized"],
        "holdout_accuracy_plain": res["acc_plain"],
        "accuracy_drop_pp": 100.0 * acc_drop,
        "lo_holdout_accuracy": res["lo_holdout_accuracy"],
        "trunk_identical_after_stage2": res["trunk_identical"],
        "vo_head_identical_after_stage2": res["vo_head_identical"],
    }
    checks = {
        "regularization_lowers_winning_probability":
            res["winprob_regularized"] < res["winprob_plain"],
        "accuracy_drop_below_5pp": acc_drop < 0.05,
        "frozen_blocks_bit_identical":
            res["trunk_identical"] and res["vo_head_identical"],
        "lo_holdout_accuracy_ge_0.7": res["lo_holdout_accuracy"] >= 0.7,
    }
    return summary, checks


def _cmd_gradcheck(cfg: RunConfig, outdir: Path, trials: int) -> tuple[dict, dict]:
    res = gradcheck_experiment(cfg, cfg.seed, trials)
    errors = res["errors"]
    lines = ["instance,rel_error"]
    lines += [f"{i},{_fmt(e)}" for i, e in enumerate(errors)]
    (outdir / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    save_gradcheck_figure(errors, outdir / "gradcheck.png")
    summary = {
        "instances": int(trials),
        "max_rel_error": float(errors.max()),
        "mean_rel_error": float(errors.mean()),
        "threshold": 1e-5,
    }
    checks = {"max_rel_error_below_1e-5": bool(errors.max() < 1e-5)}
    return summary, checks


# ---------------------------------------------------------------------------
# Argument plumbing

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trailnav",
        description="Trail-following experiments: closed-loop runs, "
                    "disturbance recovery, autonomy comparison, scale "
                    "settling, training, and gradient verification.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="YAML config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="override the output directory")
        p.add_argument("--check", action="store_true",
                       help="exit non-zero unless every acceptance "
                            "assertion of this subcommand passes")

    run = sub.add_parser("run", help="fly one closed-loop episode")
    disturbance = sub.add_parser("disturbance",
                                 help="shared shove schedule across perception variants")
    autonomy = sub.add_parser("autonomy", help="autonomy comparison on a scenario")
    scale = sub.add_parser("scale-demo", help="metric scale settling trials")
    train = sub.add_parser("train", help="two-stage training with baseline")
    gradcheck = sub.add_parser("gradcheck", help="analytic vs numeric gradients")

    for p in (run, disturbance, autonomy, scale, train, gradcheck):
        common(p)
    for p in (run, disturbance, autonomy):
        p.add_argument("--scenario", default=None,
                       help="trail scenario name (overrides config)")
    for p in (run, autonomy):
        p.add_argument("--perception", default=None,
                       choices=("oracle6", "vo_only", "model"),
                       help="perception variant (overrides config)")
    scale.add_argument("--noise", type=float, default=None,
                       help="position noise sigma in meters (overrides config)")
    gradcheck.add_argument("--trials", type=int, default=1000,
                           help="number of random instances")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=str(args.out))
    if getattr(args, "scenario", None) is not None:
        trail = dataclasses.replace(cfg.trail, scenario=args.scenario, file=None)
        cfg = dataclasses.replace(cfg, trail=trail)
    if getattr(args, "perception", None) is not None:
        per = dataclasses.replace(cfg.perception, variant=args.perception)
        cfg = dataclasses.replace(cfg, perception=per)
    if getattr(args, "noise", None) is not None:
        cfg = dataclasses.replace(cfg, scale=dataclasses.replace(cfg.scale,
                                                                 noise=args.noise))
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cfg = load_config(args.config) if args.config is not None else parse_config("")
    cfg = _apply_overrides(cfg, args)

    outdir = Path(cfg.out) / args.cmd
    outdir.mkdir(parents=True, exist_ok=True)

    if args.cmd == "run":
        summary, checks = _cmd_run(cfg, outdir)
    elif args.cmd == "disturbance":
        summary, checks = _cmd_disturbance(cfg, outdir)
    elif args.cmd == "autonomy":
        summary, checks = _cmd_autonomy(cfg, outdir, args.perception)
    elif args.cmd == "scale-demo":
        summary, checks = _cmd_scale_demo(cfg, outdir)
    elif args.cmd == "train":
        summary, checks = _cmd_train(cfg, outdir)
    else:
        summary, checks = _cmd_gradcheck(cfg, outdir, args.trials)

    summary = {"schema_version": SCHEMA_VERSION, "subcommand": args.cmd,
               "seed": cfg.seed, **summary, "checks": checks}
    _write_json(outdir / "summary.json", summary)
    (outdir / "config.yaml").write_text(serialize_config(cfg))
    _write_json(outdir / "metadata.json", {
        "written_at": datetime.now(timezone.utc).isoformat(),
        "argv": list(argv) if argv is not None else sys.argv[1:],
    })

    for name, ok in checks.items():
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")
    print(f"artifacts in {outdir}")
    if args.check and not all(checks.values()):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
