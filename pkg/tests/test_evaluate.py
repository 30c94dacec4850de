import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmguard.backends import ScriptedBackend
from helmguard.candidates import SamplingParams, generate_candidates
from helmguard.evaluate import (
    AlignmentResult,
    Consensus,
    HazardAnnotation,
    JudgeScores,
    JudgingError,
    RaterData,
    RatingsError,
    accept_set,
    alignment_metrics,
    awareness,
    best_set,
    build_consensus,
    judge_aggregate,
    load_ratings_csv,
    load_ratings_json,
    risk_relief,
    risk_relief_for_choice,
    wilson_interval,
)
from helmguard.frames import CameraModel, NavPose, WorldPoint
from helmguard.water import clearance_map


def ratings_from_votes(n, k_max, best_votes, accept_ids=None):
    """Build RaterData where best picks follow a vote table.

    Every rater accepts accept_ids (default: all non-station ids), so the
    vote structure alone decides the BEST set.
    """
    best = []
    for k, count in best_votes.items():
        best.extend([k] * count)
    assert len(best) == n
    accepted = frozenset(accept_ids) if accept_ids is not None else frozenset(range(1, k_max + 1))
    accept = [accepted | {b} for b in best]
    return RaterData(scene_id="s", k_max=k_max, accept_sets=tuple(accept),
                     best_picks=tuple(best))


class TestAcceptSet:
    def test_seven_of_eleven_included(self):
        sets = [frozenset({1}) for _ in range(7)] + [frozenset() for _ in range(4)]
        ratings = RaterData("s", 3, tuple(sets), tuple([1] * 7 + [0] * 4))
        ids, p_hat = accept_set(ratings)
        assert 1 in ids
        assert p_hat[1] == pytest.approx(7 / 11)

    def test_six_of_eleven_excluded(self):
        sets = [frozenset({1}) for _ in range(6)] + [frozenset() for _ in range(5)]
        ratings = RaterData("s", 3, tuple(sets), tuple([1] * 6 + [0] * 5))
        ids, p_hat = accept_set(ratings)
        assert 1 not in ids
        assert p_hat[1] == pytest.approx(6 / 11)

    def test_unanimous_always_in(self):
        sets = [frozenset({2}) for _ in range(5)]
        ratings = RaterData("s", 2, tuple(sets), tuple([2] * 5))
        ids, _ = accept_set(ratings, tau_acc=1.0)
        assert 2 in ids

    def test_boundary_inclusive(self):
        # 3 of 5 raters accept -> exactly 0.6 -> included.
        sets = [frozenset({1})] * 3 + [frozenset()] * 2
        ratings = RaterData("s", 1, tuple(sets), tuple([1, 1, 1, 0, 0]))
        ids, p_hat = accept_set(ratings, tau_acc=0.6)
        assert p_hat[1] == 0.6
        assert 1 in ids


class TestBestSet:
    def test_fixture_n12_votes_6321(self):
        ratings = ratings_from_votes(12, 4, {1: 6, 2: 3, 3: 2, 4: 1})
        accept, _ = accept_set(ratings)
        best, votes, v_max, theta = best_set(ratings, accept)
        assert v_max == 6
        assert theta == 3
        assert best == frozenset({1, 2})

    def test_unanimous_best_is_singleton(self):
        ratings = ratings_from_votes(12, 3, {2: 12})
        consensus = build_consensus(ratings)
        assert consensus.best == frozenset({2})

    def test_four_way_tie_trims_to_three_smallest(self):
        # N=16, four ids at 4 votes each: theta = max(ceil(2), ceil(4)) = 4, all
        # four clear it, the cap keeps the three smallest ids at equal p_hat.
        ratings = ratings_from_votes(16, 4, {1: 4, 2: 4, 3: 4, 4: 4})
        consensus = build_consensus(ratings)
        assert consensus.theta == 4
        assert consensus.best == frozenset({1, 2, 3})

    def test_theta_floor_quarter_n(self):
        ratings = ratings_from_votes(12, 5, {1: 2, 2: 2, 3: 2, 4: 2, 5: 2, 0: 2})
        consensus = build_consensus(ratings)
        assert consensus.theta >= math.ceil(0.25 * 12)
        assert consensus.best == frozenset()

    def test_best_requires_acceptance(self):
        best_picks = tuple([1] * 8 + [2] * 4)
        accept_sets = tuple([frozenset({2})] * 12)  # nobody finds 1 acceptable
        ratings = RaterData("s", 2, accept_sets, best_picks)
        consensus = build_consensus(ratings)
        assert 1 not in consensus.best

    def test_abstention_votes_to_station_by_default(self):
        sets = tuple([frozenset({0})] * 7 + [frozenset({0, 1})] * 5)
        best = tuple([0] * 7 + [1] * 5)
        abstained = tuple([True] * 7 + [False] * 5)
        ratings = RaterData("s", 1, sets, best, abstained)
        consensus = build_consensus(ratings)
        assert consensus.votes[0] == 7
        excl_best, excl_votes, _, _ = best_set(ratings, consensus.accept,
                                               count_abstentions=False)
        assert excl_votes[0] == 0

    @given(st.data())
    @settings(max_examples=400, deadline=None)
    def test_best_subset_of_accept_property(self, data):
        n = data.draw(st.integers(1, 15))
        k_max = data.draw(st.integers(0, 6))
        accept_sets = tuple(
            frozenset(data.draw(st.sets(st.integers(0, k_max), max_size=k_max + 1)))
            for _ in range(n)
        )
        best_picks = tuple(data.draw(st.integers(0, k_max)) for _ in range(n))
        ratings = RaterData("s", k_max, accept_sets, best_picks)
        consensus = build_consensus(ratings)
        assert consensus.best <= consensus.accept
        assert len(consensus.best) <= 3
        assert consensus.theta >= math.ceil(0.25 * n)
        for k in consensus.best:
            assert consensus.votes[k] >= consensus.theta


class TestAlignment:
    def consensus_fixture(self):
        ratings = ratings_from_votes(12, 4, {1: 6, 2: 3, 3: 2, 4: 1})
        return build_consensus(ratings)

    def test_all_in_accept_saturates(self):
        c = self.consensus_fixture()
        res = alignment_metrics({f"s{i}": 1 for i in range(5)}, {f"s{i}": c for i in range(5)})
        assert res.accept_at_1 == 1.0

    def test_best_implies_accept(self):
        c = self.consensus_fixture()
        choices = {"a": 1, "b": 2}
        res = alignment_metrics(choices, {"a": c, "b": c})
        assert res.best_at_1 == 1.0 and res.accept_at_1 == 1.0

    def test_count_ratio(self):
        c = self.consensus_fixture()
        choices = {}
        consensus = {}
        for i in range(40):
            choices[f"s{i}"] = 1 if i < 27 else 0
            consensus[f"s{i}"] = c
        res = alignment_metrics(choices, consensus)
        assert res.accept_successes == 27
        assert res.accept_at_1 == pytest.approx(0.675)

    def test_missing_consensus_excluded_and_reported(self):
        c = self.consensus_fixture()
        res = alignment_metrics({"a": 1, "b": 2}, {"a": c})
        assert res.n_scenes == 1
        assert res.excluded_scenes == ("b",)


class TestWilson:
    def test_paper_interval_at_two_decimals(self):
        lo, hi = wilson_interval(27, 40)
        assert round(lo, 2) == 0.52
        assert round(hi, 2) == 0.80

    def test_zero_successes_lower_bound(self):
        lo, hi = wilson_interval(0, 10)
        assert lo == 0.0
        assert hi > 0.0

    def test_matches_quadratic_root_oracle(self):
        # Independent derivation: the endpoints are the roots of
        # (p - phat)^2 * n = z^2 * p * (1 - p).
        rng = np.random.default_rng(0)
        z = 1.96
        for _ in range(100):
            n = int(rng.integers(1, 500))
            s = int(rng.integers(0, n + 1))
            phat = s / n
            a = 1 + z * z / n
            b = -(2 * phat + z * z / n)
            c = phat * phat
            disc = math.sqrt(b * b - 4 * a * c)
            lo_oracle = (-b - disc) / (2 * a)
            hi_oracle = (-b + disc) / (2 * a)
            lo, hi = wilson_interval(s, n, z)
            assert lo == pytest.approx(max(0.0, lo_oracle), abs=1e-9)
            assert hi == pytest.approx(min(1.0, hi_oracle), abs=1e-9)

    def test_contains_point_estimate_and_shrinks(self):
        widths = []
        for n in (10, 40, 160, 640):
            s = int(round(0.3 * n))
            lo, hi = wilson_interval(s, n)
            assert lo <= s / n <= hi
            widths.append(hi - lo)
        assert widths == sorted(widths, reverse=True)

    def test_validation(self):
        with pytest.raises(ValueError):
            wilson_interval(1, 0)
        with pytest.raises(ValueError):
            wilson_interval(5, 4)


class TestRiskRelief:
    def test_station_is_zero_for_all_horizons(self):
        for H in (0.0, 10.0, 60.0, 1e6):
            assert risk_relief(None, (10.0, 0.0), H) == 0.0

    def test_zero_horizon_is_zero(self):
        assert risk_relief((10.0, 0.0), (10.0, 0.0), 0.0) == 0.0

    def test_hand_derived_approach_case(self):
        delta = risk_relief((10.0, 0.0), (10.0, 0.0), 10.0)
        assert delta == pytest.approx(-5.14, abs=1e-6)

    def test_flee_directly_away_exact(self):
        # Endpoint reached before the horizon: gain equals the path length.
        assert risk_relief((24.0, 0.0), (0.0, 0.0), 100.0) == 20.0
        # Horizon caps the travel: gain equals u_anom * H (exact-friendly speed).
        assert risk_relief((24.0, 0.0), (0.0, 0.0), 10.0, u_anom=0.5) == 5.0

    def test_negative_horizon_rejected(self):
        with pytest.raises(ValueError):
            risk_relief((10.0, 0.0), (0.0, 0.0), -1.0)

    def test_for_choice_maps_world_hazard(self):
        camera = CameraModel.forward_looking()
        grid = clearance_map(np.ones((camera.height, camera.width), dtype=bool))
        pose = NavPose.from_position_yaw(100.0, 50.0, 0.0)
        cset = generate_candidates(grid, camera, pose, SamplingParams(rng_seed=4))
        hazard = HazardAnnotation(point=WorldPoint(110.0, 50.0, 0.0), scene_id="s")
        assert risk_relief_for_choice(cset, 0, hazard, 10.0) == 0.0
        cand = cset.candidates[0]
        got = risk_relief_for_choice(cset, cand.id, hazard, 10.0)
        want = risk_relief((cand.endpoint_body.x, cand.endpoint_body.y), (10.0, 0.0), 10.0)
        assert got == pytest.approx(want, abs=1e-9)
        with pytest.raises(KeyError):
            risk_relief_for_choice(cset, 99, hazard, 10.0)


class TestAwareness:
    def test_perfect_score(self):
        assert awareness(JudgeScores(1.0, 1.0, 1.0)) == 1.0

    def test_weighted_example(self):
        assert awareness(JudgeScores(1.0, 0.5, 0.5)) == pytest.approx(0.75)

    def test_component_rounding_consistency(self):
        # Component means near 0.83/0.83/0.84 aggregate to ~0.83.
        assert 0.50 * 0.83 + 0.25 * 0.83 + 0.25 * 0.84 == pytest.approx(0.8325)

    def test_monotone_and_bounded(self):
        scale = (0.0, 0.25, 0.5, 0.75, 1.0)
        for h in scale:
            for i in scale:
                for a in scale:
                    v = awareness(JudgeScores(h, i, a))
                    assert 0.0 <= v <= 1.0
                    if h < 1.0:
                        up = awareness(JudgeScores(scale[scale.index(h) + 1], i, a))
                        assert up > v

    def test_off_scale_rejected(self):
        with pytest.raises(ValueError):
            JudgeScores(0.6, 0.5, 0.5)


class TestJudge:
    def good(self):
        return json.dumps({"hazard_score": 1.0, "implication_score": 0.75,
                           "action_score": 0.5, "notes": "ok"})

    def report(self):
        return {"see": "smoke on dock", "implications": "fire risk", "action": "stand off"}

    def test_replay_passthrough(self):
        scores = judge_aggregate(ScriptedBackend(self.good()), "policy text", self.report())
        assert scores == JudgeScores(1.0, 0.75, 0.5)

    def test_off_scale_is_error(self):
        bad = json.dumps({"hazard_score": 0.6, "implication_score": 0.5,
                          "action_score": 0.5, "notes": ""})
        with pytest.raises(JudgingError):
            judge_aggregate(ScriptedBackend(bad), "policy", self.report())

    def test_missing_key_is_error(self):
        bad = json.dumps({"hazard_score": 1.0, "action_score": 0.5, "notes": ""})
        with pytest.raises(JudgingError):
            judge_aggregate(ScriptedBackend(bad), "policy", self.report())

    def test_prompt_carries_policy_and_fields(self):
        seen = {}

        def capture(prompt, image, seed):
            seen["prompt"] = prompt
            return self.good()

        judge_aggregate(ScriptedBackend(capture), "THE POLICY", self.report())
        assert "THE POLICY" in seen["prompt"]
        assert "smoke on dock" in seen["prompt"]
        assert "STRICT JSON ONLY" in seen["prompt"]


class TestRatingsIngest:
    CSV = (
        "scene_id,rater_id,accepted,best\n"
        "s1,r1,1;2,1\n"
        "s1,r2,2,2\n"
        "s1,r3,,\n"
        "s2,r1,0,0\n"
    )

    def test_csv_happy_path(self, tmp_path):
        p = tmp_path / "ratings.csv"
        p.write_text(self.CSV)
        by_scene = load_ratings_csv(p, k_max=3)
        assert set(by_scene) == {"s1", "s2"}
        s1 = by_scene["s1"]
        assert s1.n_raters == 3
        assert s1.abstained == (False, False, True)
        assert s1.accept_sets[2] == frozenset({0})
        assert s1.best_picks[2] == 0

    def test_csv_out_of_range_best_names_row(self, tmp_path):
        p = tmp_path / "ratings.csv"
        p.write_text("scene_id,rater_id,accepted,best\ns1,r1,1,9\n")
        with pytest.raises(RatingsError, match="row 2"):
            load_ratings_csv(p, k_max=3)

    def test_csv_missing_columns(self, tmp_path):
        p = tmp_path / "ratings.csv"
        p.write_text("scene,who\na,b\n")
        with pytest.raises(RatingsError):
            load_ratings_csv(p, k_max=3)

    def test_json_form(self, tmp_path):
        p = tmp_path / "ratings.json"
        p.write_text(json.dumps({
            "scene_id": "s9", "k_max": 4,
            "raters": [
                {"rater_id": "a", "accepted": [1, 2], "best": 2},
                {"rater_id": "b"},
            ],
        }))
        data = load_ratings_json(p)
        assert data.scene_id == "s9"
        assert data.abstained == (False, True)
        assert data.best_picks == (2, 0)

    def test_rater_data_validation(self):
        with pytest.raises(RatingsError):
            RaterData("s", 2, (frozenset({5}),), (0,))
        with pytest.raises(RatingsError):
            RaterData("s", 2, (frozenset(),), (7,))
        with pytest.raises(RatingsError):
            RaterData("s", 2, (), ())
