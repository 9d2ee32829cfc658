"""Acceptance suite: the ten checks this package must satisfy.

Each test prints one pass/fail line (run with -s to see them all) and
asserts the same condition, so a red test and a FAIL line always agree.
Shared expensive work (training) runs once per module.
"""

import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from trailnav.cli import gradcheck_experiment, main, scale_experiment, train_experiment
from trailnav.config import parse_config
from trailnav.control import ControlConfig, turn_angle
from trailnav.geo import Frame, Pose3, SimilarityTransform
from trailnav.labels import Category, SoftLabel3
from trailnav.loss import LossConfig, loss_value, smooth_labels
from trailnav.perception import TrailEstimate
from trailnav.scale_align import (
    DegenerateGeometryError,
    PairBuffer,
    PosePair,
    solve_similarity,
)
from trailnav.sim import (
    Disturbance,
    EpisodeConfig,
    OraclePerception,
    VoOnlyOraclePerception,
    disturbance_experiment,
    run_episode,
)
from trailnav.trail import make_scenario


def check(criterion: int, description: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {criterion:2d}] {description}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def train_result():
    return train_experiment(parse_config(""), seed=0)


def _estimate(vo, lo, t=0.0) -> TrailEstimate:
    return TrailEstimate(SoftLabel3.from_array(np.asarray(vo, dtype=float)),
                         SoftLabel3.from_array(np.asarray(lo, dtype=float)), t)


def test_criterion_01_turn_angle_exactness():
    cfg = ControlConfig()  # both gains 10 degrees
    b = math.radians(10.0)
    symmetric = turn_angle(_estimate([0.2, 0.6, 0.2], [0.3, 0.4, 0.3]), cfg)
    right_vo = turn_angle(_estimate([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]), cfg)
    both_left = turn_angle(_estimate([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), cfg)
    exact = (symmetric == 0.0 and right_vo == b and both_left == -(b + b)
             and abs(both_left + math.radians(20.0)) < 1e-15)

    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        vo = rng.dirichlet(np.ones(3))
        lo = rng.dirichlet(np.ones(3))
        est = _estimate(vo, lo)
        mirror = TrailEstimate(est.vo.swapped(), est.lo.swapped(), est.timestamp)
        worst = max(worst, abs(turn_angle(mirror, cfg) + turn_angle(est, cfg)))
    check(1, "turn angle worked examples and mirror antisymmetry",
          exact and worst <= 1e-12, f"mirror worst {worst:.2e}")


def test_criterion_02_loss_value_and_gradients():
    # Uniform prediction, side-class truth, the default weights.
    uniform = SoftLabel3.from_array(np.full(3, 1.0 / 3.0))
    target = smooth_labels(Category.LEFT, 0.1)
    worked = loss_value(uniform, target, LossConfig(0.1, 0.3, 0.1))
    worked_ok = abs(worked - 1.0887511) < 1e-6

    rng = np.random.default_rng(5)
    ce_worst = 0.0
    plain = LossConfig(0.0, 0.0, 0.0)
    for _ in range(200):
        p = rng.dirichlet(np.ones(3) * 2.0)
        truth = Category(int(rng.integers(3)))
        value = loss_value(SoftLabel3.from_array(p), smooth_labels(truth, 0.0), plain)
        ce_worst = max(ce_worst, abs(value + math.log(p[int(truth)])))

    errors = gradcheck_experiment(parse_config(""), seed=0, trials=1000)["errors"]
    check(2, "loss worked value, CE reduction, gradient agreement",
          worked_ok and ce_worst < 1e-12 and errors.max() < 1e-5,
          f"worked {worked:.7f}, CE dev {ce_worst:.2e}, "
          f"grad max {errors.max():.2e}")


def test_criterion_03_anti_overconfidence(train_result):
    r = train_result
    drop = r["acc_plain"] - r["acc_regularized"]
    check(3, "regularization lowers winning probability, accuracy kept",
          r["winprob_regularized"] < r["winprob_plain"] and drop < 0.05,
          f"winprob {r['winprob_regularized']:.3f} < {r['winprob_plain']:.3f}, "
          f"drop {100.0 * drop:.2f} pp")


def test_criterion_04_transfer_staging(train_result):
    r = train_result
    check(4, "frozen blocks bit-identical and offset head transfers",
          r["trunk_identical"] and r["vo_head_identical"]
          and r["lo_holdout_accuracy"] >= 0.7,
          f"lo holdout accuracy {r['lo_holdout_accuracy']:.3f}")


def _random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, 2] = -q[:, 2]
    return q


def _pairs_from_points(points, transform):
    return [PosePair(Pose3(p, 0.0, Frame.CAMERA),
                     Pose3(transform.apply(p), 0.0, Frame.ENU), float(i))
            for i, p in enumerate(points)]


def test_criterion_05_similarity_recovery():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(200):
        truth = SimilarityTransform(scale=rng.uniform(0.3, 4.0),
                                    rotation=_random_rotation(rng),
                                    translation=rng.uniform(-10.0, 10.0, 3))
        points = rng.uniform(-10.0, 10.0, (8, 3))
        buf = PairBuffer(capacity=16, parallax_threshold=1e-12)
        for pair in _pairs_from_points(points, truth):
            buf.push(pair)
        got = solve_similarity(buf)
        worst = max(worst,
                    abs(got.scale - truth.scale),
                    float(np.linalg.norm(got.rotation - truth.rotation)),
                    float(np.linalg.norm(got.translation - truth.translation)))

    line = np.outer(np.arange(6.0), np.array([1.0, 2.0, -0.5]))
    buf = PairBuffer(capacity=16, parallax_threshold=1e-12)
    for pair in _pairs_from_points(line, SimilarityTransform.identity()):
        buf.push(pair)
    try:
        solve_similarity(buf)
        raised = False
    except DegenerateGeometryError:
        raised = True
    check(5, "exact similarity recovery and collinear rejection",
          worst < 1e-9 and raised, f"worst error {worst:.2e}")


def test_criterion_06_scale_settling():
    cfg = parse_config("")  # noise 0.02, five trials
    res = scale_experiment(cfg, seed=0)
    settled = []
    worsts = []
    for series, truth in zip(res["series"], res["truths"]):
        rel = [abs(est - truth) / truth for _, est in series[20:] if est is not None]
        settled.append(bool(rel) and max(rel) < 0.05)
        worsts.append(max(rel) if rel else math.inf)
    check(6, "scale estimate settles within 5% after 20 accepted pairs",
          sum(settled) >= 4,
          f"{sum(settled)}/5 trials, worst rel errors "
          + ", ".join(f"{w:.4f}" for w in worsts))


DISTURBANCE_SCHEDULE = (
    Disturbance(start=8.0, yaw_rate=0.5),
    Disturbance(start=20.0, yaw_rate=-0.5),
    Disturbance(start=32.0, yaw_rate=0.5),
)


def _worst_settling(times):
    return max((math.inf if t is None else t) for t in times)


def test_criterion_07_disturbance_recovery():
    results = disturbance_experiment(
        make_scenario("straight100"),
        {"oracle6": OraclePerception(), "vo_only": VoOnlyOraclePerception()},
        DISTURBANCE_SCHEDULE, seed=0, max_time=60.0)
    full, vo = results["oracle6"], results["vo_only"]
    peak = lambda log: max(abs(r.rel.lateral_offset) for r in log.records)
    quick = all(t is not None and t < 6.0 for t in full.recovery_times)
    check(7, "six-class recovers faster and tighter than heading-only",
          peak(full) < peak(vo)
          and _worst_settling(full.recovery_times) < _worst_settling(vo.recovery_times)
          and quick,
          f"peak {peak(full):.3f} < {peak(vo):.3f}, settling "
          f"{_worst_settling(full.recovery_times):.2f} s vs "
          f"{_worst_settling(vo.recovery_times):.2f} s")


def test_criterion_08_autonomy_ordering():
    trail = make_scenario("zigzag250")
    logs = {}
    for name, per in (("oracle6", OraclePerception()),
                      ("vo_only", VoOnlyOraclePerception())):
        cfg = EpisodeConfig(trail=trail, perception=per,
                            start_offset=0.5, max_time=240.0)
        logs[name] = run_episode(cfg, 0)
    full, vo = logs["oracle6"], logs["vo_only"]
    check(8, "full perception reaches 100% autonomy, heading-only does not",
          full.completed and full.interventions == 0
          and full.autonomy_percent == 100.0
          and vo.completed and vo.autonomy_percent < 100.0,
          f"oracle6 {full.autonomy_percent:.1f}%, "
          f"vo_only {vo.autonomy_percent:.1f}% "
          f"({vo.interventions} intervention(s))")


def test_criterion_09_heading_only_ambiguity():
    cfg = EpisodeConfig(trail=make_scenario("straight100"),
                        perception=VoOnlyOraclePerception(),
                        start_offset=0.6, max_time=20.0)
    log = run_episode(cfg, 0)
    turns = [r.turn for r in log.records if r.turn is not None]
    offsets = [r.rel.lateral_offset for r in log.records]
    check(9, "heading-only never corrects a parallel offset",
          turns and max(abs(t) for t in turns) <= 1e-9 and min(offsets) >= 0.5,
          f"max |turn| {max(abs(t) for t in turns):.2e}, "
          f"min offset {min(offsets):.3f}")


def _tree_hashes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "metadata.json"
    }


def test_criterion_10_byte_identical_reruns(tmp_path):
    invocations = [
        ["run"],
        ["disturbance"],
        ["autonomy", "--scenario", "zigzag250"],
        ["scale-demo"],
        ["train"],
        ["gradcheck"],
    ]
    mismatches = []
    for argv in invocations:
        out = tmp_path / argv[0]
        full = argv + ["--out", str(out)]
        assert main(list(full)) == 0
        first = _tree_hashes(out)
        assert main(list(full)) == 0
        second = _tree_hashes(out)
        if first != second:
            mismatches.append(argv[0])
    check(10, "every subcommand reruns byte-identically",
          not mismatches,
          "all data files matched" if not mismatches
          else "mismatch in: " + ", ".join(mismatches))
