import itertools
import json
import math
import random

import pytest

import psym


def brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting():
    rng = random.Random(4)
    for _ in range(20):
        labels = [0, 1] + [rng.randint(0, 1) for _ in range(40)]
        scores = [round(rng.random() + 0.3 * y, 1) for y in labels]
        assert psym.auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def test_auc_with_one_class_raises():
    with pytest.raises(psym.UndefinedMetricError):
        psym.auc([0.1, 0.2], [1, 1])


def test_cutoff_sweep_with_scores_equal_to_areas_is_perfect():
    areas = [i / 20 for i in range(21)]
    sweep = psym.average_auc_over_cutoffs(areas, areas, 10)
    assert sweep["mean_auc"] == 1.0
    assert sweep["evaluated"] + sweep["skipped"] == 10


def test_planted_mixture_is_recovered():
    rng = random.Random(11)
    values = [rng.gauss(8.0, 1.0) if rng.random() < 0.2 else rng.gauss(2.0, 0.5) for _ in range(500)]
    fit = psym.fit_gmm(values)
    assert abs(fit.params.mean_low - 2.0) <= 0.3
    assert abs(fit.params.mean_high - 8.0) <= 0.3
    assert abs(fit.params.weight_high - 0.2) <= 0.05
    ll = fit.log_likelihood
    assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))
    assert psym.posterior_abnormal(fit.params, 9.0) > 0.99


def test_losses_match_hand_values():
    assert psym.soft_bce_loss(0.632, 0.149) == pytest.approx(
        -(0.368 * math.log(0.149) + 0.632 * math.log(0.851)), abs=1e-12
    )
    L1, L2, L = psym.cross_losses(0.3, 1.0, 0.074, 0.5)
    assert L1 == pytest.approx(-math.log(1 - 0.074), abs=1e-12)
    assert L == pytest.approx((L1 + L2) / 2)
    assert psym.soft_triplet_loss(0.2, 3.0, 0.5) == pytest.approx(2.3, abs=1e-12)
    assert psym.ssl_mix_loss(0.25, (0.2, 0.4, 1.0, 1.2, 0.8, 1.0)) == pytest.approx(0.825, abs=1e-12)


def test_abnormal_area():
    assert psym.abnormal_area((0, 96, 0, 96), (48, 144, 48, 144)) == 0.25
    assert psym.abnormal_area((0, 10, 0, 10), (20, 30, 20, 30)) == 0.0


def test_cli_round_trip(tmp_path):
    data, run, out = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    small = ["--cases", "10", "--height", "128", "--width", "96", "--patch-size", "16", "--lesion-probability", "1"]
    tiny = ["--channels", "4", "--embedding-dim", "4", "--batch-size", "16", "--epochs", "2"]
    assert psym.run_cli(["synth", "--out", str(data), *small]) == 0
    assert psym.run_cli(["pretrain", "--data", str(data), "--out", str(run), *tiny]) == 0
    assert psym.run_cli(["eval", "--checkpoint", str(run / "best.psym"), "--data", str(data), "--task", "pair-auc",
                         "--score", "oracle", "--out", str(out)]) == 0
    report = json.loads((out / "pair-auc.json").read_text())
    assert report["metrics"]["avg_auc"] == 1.0
    assert psym.run_cli(["synth", "--bogus"]) == 2
