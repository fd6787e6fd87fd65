import numpy as np
import pytest
from scipy.stats import binomtest

from core.cnn import evaluate, train_toy
from core.evaluation import EvalSettings, evaluate_dataset
from core.masks import MaskConfig
from core.saliency import SaliencyConfig
from core.video import generate_dataset, normalize

MEAN, STD = 0.5, 0.25
ALPHA = 0.05


def sign_test(better, worse):
    """One-sided paired sign test that `better` exceeds `worse`; ties dropped"""
    wins = sum(1 for b, w in zip(better, worse) if b > w)
    losses = sum(1 for b, w in zip(better, worse) if b < w)
    if wins + losses == 0:
        return 1.0
    return binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue


def column(report, method, name):
    return [getattr(r, name) for r in report.rows if r.method == method]


@pytest.fixture(scope="module")
def report():
    train = generate_dataset(16, 16, 32, 32, seed=0)
    result = train_toy([(normalize(v, MEAN, STD), label) for v, _, label in train],
                       learning_rate=0.05, epochs=30, batch_size=16, seed=0)
    assert result.accuracies[-1] >= 0.9

    held_out = generate_dataset(3, 16, 32, 32, seed=1)
    assert len(held_out) >= 20
    videos = np.stack([normalize(v, MEAN, STD).data for v, _, _ in held_out])
    labels = np.array([label for _, _, label in held_out])
    _, accuracy = evaluate(result.model, videos, labels)
    assert accuracy >= 0.75

    samples = [(normalize(v, MEAN, STD), boxes) for v, boxes, _ in held_out]
    settings = EvalSettings(saliency=SaliencyConfig(masks=MaskConfig(s=8, h=8, w=8, K=5)), steps=16)
    return evaluate_dataset(samples, result.model, settings, ["aosa", "cuboid", "random"], workers=2)


@pytest.mark.slow
def test_deletion_drops_faster_than_random(report):
    aosa, rand = column(report, "aosa", "auc_del"), column(report, "random", "auc_del")
    assert np.mean(aosa) < np.mean(rand)
    assert sign_test(rand, aosa) < ALPHA


@pytest.mark.slow
def test_insertion_rises_faster_than_random(report):
    aosa, rand = column(report, "aosa", "auc_ins"), column(report, "random", "auc_ins")
    assert np.mean(aosa) > np.mean(rand)
    assert sign_test(aosa, rand) < ALPHA


@pytest.mark.slow
def test_pointing_beats_random_and_holds_against_cuboid(report):
    aosa, rand = column(report, "aosa", "spt"), column(report, "random", "spt")
    cuboid = column(report, "cuboid", "spt")
    assert np.mean(aosa) > np.mean(rand)
    assert sign_test(aosa, rand) < ALPHA
    # no significant evidence that the cuboid baseline points better
    assert sign_test(cuboid, aosa) >= ALPHA
