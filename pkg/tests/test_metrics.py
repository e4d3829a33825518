import numpy as np
import pytest

from src.core.errors import ConfigError, ContractError
from src.core.metrics import (
    EvalSet,
    average_precision,
    evaluate,
    export_curves,
    pairwise_distances,
    read_curves,
)
from src.core.oracles import brute_force_evaluate, naive_distances, random_eval_set, run_metric_trials


def clustered_eval_set(rng, num_ids=5, per_cam=2, dim=6):
    """Identities as tight clusters, queries on camera 0 and gallery on camera 1."""
    centers = rng.normal(size=(num_ids, dim)) * 5
    query_ids = np.repeat(np.arange(num_ids), per_cam)
    gallery_ids = np.repeat(np.arange(num_ids), per_cam)
    return EvalSet(
        query=centers[query_ids] + rng.normal(scale=0.01, size=(len(query_ids), dim)),
        query_ids=query_ids,
        query_cams=np.zeros(len(query_ids), dtype=int),
        gallery=centers[gallery_ids] + rng.normal(scale=0.01, size=(len(gallery_ids), dim)),
        gallery_ids=gallery_ids,
        gallery_cams=np.ones(len(gallery_ids), dtype=int),
    )


class TestDistances:
    def test_self_distance(self):
        np.testing.assert_array_equal(pairwise_distances([[0.4, -1.0]], [[0.4, -1.0]]), [[0.0]])

    def test_orthogonal_unit_vectors(self):
        assert pairwise_distances([[1.0, 0.0]], [[0.0, 1.0]])[0, 0] == pytest.approx(2.0)

    def test_matches_loop(self, rng):
        q, g = rng.normal(size=(7, 5)), rng.normal(size=(11, 5))
        np.testing.assert_allclose(pairwise_distances(q, g, chunk_size=3), naive_distances(q, g), atol=1e-12)


class TestAveragePrecision:
    def test_hand_evaluated(self):
        assert average_precision(np.array([True, False, True])) == pytest.approx((1 + 2 / 3) / 2)

    def test_evaluate_ranks_by_distance(self):
        eval_set = EvalSet(
            query=np.zeros((1, 1)), query_ids=[0], query_cams=[0],
            gallery=np.array([[1.0], [2.0], [3.0]]), gallery_ids=[0, 1, 0], gallery_cams=[1, 1, 1],
        )
        report = evaluate(eval_set)
        assert report.mAP == pytest.approx(0.8333, abs=1e-4)
        np.testing.assert_array_equal(report.cmc, [1.0, 1.0, 1.0])


class TestEvaluate:
    def test_perfect_retrieval(self, rng):
        report = evaluate(clustered_eval_set(rng))
        assert report.rank(1) == 1.0
        assert report.mAP == 1.0
        np.testing.assert_array_equal(report.cmc, 1.0)

    def test_same_camera_matches_are_excluded(self):
        eval_set = EvalSet(
            query=np.zeros((1, 1)), query_ids=[0], query_cams=[0],
            gallery=np.array([[0.0], [1.0], [2.0]]), gallery_ids=[0, 1, 0], gallery_cams=[0, 1, 1],
        )
        report = evaluate(eval_set)
        # the distance-0 entry shares id and camera and is dropped
        assert report.rank(1) == 0.0
        assert report.mAP == pytest.approx(0.5)

    def test_unmatched_queries_are_skipped(self):
        eval_set = EvalSet(
            query=np.zeros((2, 1)), query_ids=[0, 3], query_cams=[0, 0],
            gallery=np.array([[0.0], [1.0]]), gallery_ids=[0, 1], gallery_cams=[1, 1],
        )
        report = evaluate(eval_set)
        assert report.num_valid == 1
        assert report.num_skipped == 1
        assert report.mAP == 1.0

    def test_no_valid_query(self):
        eval_set = EvalSet(
            query=np.zeros((1, 1)), query_ids=[0], query_cams=[0],
            gallery=np.ones((2, 1)), gallery_ids=[1, 2], gallery_cams=[1, 1],
        )
        with pytest.raises(ContractError):
            evaluate(eval_set)

    def test_default_max_rank_capped_by_gallery(self, rng):
        assert len(evaluate(clustered_eval_set(rng)).cmc) == 10
        assert len(evaluate(clustered_eval_set(rng, num_ids=30)).cmc) == 50

    def test_cmc_is_monotone(self, rng):
        eval_set = clustered_eval_set(rng)
        eval_set.gallery = rng.normal(size=eval_set.gallery.shape)
        cmc = evaluate(eval_set).cmc
        assert np.all(np.diff(cmc) >= 0) and cmc[-1] == 1.0

    def test_rotation_and_translation_invariance(self, rng):
        eval_set = clustered_eval_set(rng)
        eval_set.gallery = eval_set.gallery + rng.normal(scale=3.0, size=eval_set.gallery.shape)
        base = evaluate(eval_set)
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        shift = rng.normal(size=6)
        moved = EvalSet(eval_set.query @ q + shift, eval_set.query_ids, eval_set.query_cams,
                        eval_set.gallery @ q + shift, eval_set.gallery_ids, eval_set.gallery_cams)
        other = evaluate(moved)
        np.testing.assert_array_equal(base.cmc, other.cmc)
        assert base.mAP == pytest.approx(other.mAP, abs=1e-12)

    def test_workers_do_not_change_result(self, rng):
        eval_set = clustered_eval_set(rng)
        eval_set.gallery = rng.normal(size=eval_set.gallery.shape)
        a, b = evaluate(eval_set, workers=1), evaluate(eval_set, workers=4)
        np.testing.assert_array_equal(a.cmc, b.cmc)
        assert a.mAP == b.mAP

    def test_agrees_with_brute_force_oracle(self):
        mismatches, checked = run_metric_trials(200, seed=11)
        assert checked > 100
        assert mismatches == 0

    def test_tied_distances_agree_with_oracle(self):
        rng = np.random.default_rng(8)
        tied_rows = 0
        for _ in range(60):
            eval_set = random_eval_set(rng, quantized=True)
            distmat = naive_distances(eval_set.query, eval_set.gallery)
            tied_rows += sum(len(np.unique(row)) < len(row) for row in distmat)
            try:
                expected = brute_force_evaluate(eval_set, distmat=distmat)
            except ContractError:
                continue
            actual = evaluate(eval_set, distmat=distmat)
            np.testing.assert_array_equal(actual.cmc, expected.cmc)
            assert actual.mAP == expected.mAP
        assert tied_rows > 0


class TestExport:
    def test_round_trip(self, rng, tmp_path):
        eval_set = clustered_eval_set(rng)
        eval_set.gallery = rng.normal(size=eval_set.gallery.shape)
        report = evaluate(eval_set)
        export_curves(report, tmp_path / "cmc.csv")
        cmc, mAP = read_curves(tmp_path / "cmc.csv")
        np.testing.assert_array_equal(cmc, report.cmc)
        assert mAP == report.mAP

    def test_perfect_retrieval_column(self, rng, tmp_path):
        written = export_curves(evaluate(clustered_eval_set(rng)), tmp_path / "out" / "cmc.csv", svg=True)
        cmc, mAP = read_curves(written[0])
        np.testing.assert_array_equal(cmc, 1.0)
        assert mAP == 1.0
        assert written[1].suffix == ".svg" and written[1].stat().st_size > 0

    def test_missing_columns(self, tmp_path):
        (tmp_path / "bad.csv").write_text("k,value\n1,0.5\n")
        with pytest.raises(ConfigError, match="Missing required columns"):
            read_curves(tmp_path / "bad.csv")
