import numpy as np
import pytest

from divmarl.config import Config
from divmarl.heuristic import Strengths
from divmarl.match import (MatchStats, match_policies, play_heuristic_match,
                           play_soccer_matches, ChaserSideController)
from divmarl.models import load_policy_group
from divmarl.tasks import SoccerTask
from divmarl.training import train


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    cfg = Config({
        "task.id": "soccer",
        "train.total_frames": 4000,
        "train.frames_per_iteration": 2000,
        "train.num_envs": 10,
        "train.minibatch_size": 512,
        "train.epochs": 1,
        "dico.mode": "equality",
        "dico.snd_des": 0.2,
        "opponent.curriculum": "0:0.2,1,1",
        "run.seed": 21,
    })
    res = train(cfg, run_dir=tmp_path_factory.mktemp("ck") / "run")
    return res.checkpoints["team"]


class TestMatchStats:
    def test_merge_associative_and_exact(self):
        rng = np.random.default_rng(0)

        def random_stats():
            s = MatchStats()
            s.matches = int(rng.integers(1, 10))
            s.wins = rng.integers(0, 5, size=2)
            s.draws = int(rng.integers(0, 3))
            s.goals = rng.integers(0, 6, size=2)
            s.possession_steps = rng.integers(0, 100, size=2)
            s.presence_samples = rng.integers(1, 100, size=2)
            s.presence_in_opp_half = rng.integers(0, 50, size=2)
            s.touches = rng.integers(0, 20, size=2)
            s.steps = int(rng.integers(0, 500))
            s.heatmap = rng.integers(0, 5, size=s.heatmap.shape)
            return s

        a, b, c = random_stats(), random_stats(), random_stats()
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        for field in ("matches", "draws", "steps"):
            assert getattr(left, field) == getattr(right, field)
        np.testing.assert_array_equal(left.wins, right.wins)
        np.testing.assert_array_equal(left.heatmap, right.heatmap)

    def test_normalized_score_definition(self):
        s = MatchStats()
        s.matches = 10
        s.wins = np.array([8, 1])
        s.draws = 1
        assert s.normalized_score(0) == pytest.approx(0.7)
        assert s.normalized_score(1) == pytest.approx(-0.7)

    def test_empty_stats(self):
        s = MatchStats()
        assert s.matches == 0
        assert s.normalized_score() == 0.0
        d = s.to_dict()
        assert d["wins"] == [0, 0]


class TestPlayMatches:
    def test_possession_fractions_sum_to_one(self):
        task = SoccerTask(team_size=2, opponent_mode="heuristic",
                          strengths=Strengths(0.5, 1.0, 1.0))
        blue = ChaserSideController(task, "blue")
        stats = play_soccer_matches(task, blue, None, 6, seed=3)
        assert stats.matches == 6
        assert stats.possession_fraction().sum() == pytest.approx(1.0)
        assert stats.wins.sum() + stats.draws == 6

    def test_heatmap_total_equals_steps(self):
        task = SoccerTask(team_size=2, opponent_mode="heuristic",
                          strengths=Strengths(0.5, 1.0, 1.0))
        blue = ChaserSideController(task, "blue")
        stats = play_soccer_matches(task, blue, None, 4, seed=4)
        assert stats.heatmap.sum() == stats.steps

    def test_zero_matches_empty_stats(self):
        task = SoccerTask(team_size=2, opponent_mode="heuristic")
        blue = ChaserSideController(task, "blue")
        stats = play_soccer_matches(task, blue, None, 0, seed=5)
        assert stats.matches == 0

    def test_stats_accumulate_across_halves(self):
        # n matches equal the merge of two n/2 batches (same seeds per round)
        task = SoccerTask(team_size=2, opponent_mode="heuristic",
                          strengths=Strengths(0.3, 1.0, 1.0))
        blue = ChaserSideController(task, "blue")
        full = play_soccer_matches(task, blue, None, 8, seed=6, max_parallel=4)
        a = play_soccer_matches(task, blue, None, 4, seed=6, max_parallel=4)
        b = play_soccer_matches(task, blue, None, 4, seed=6 + 7717,
                                max_parallel=4)
        merged = a.merge(b)
        assert full.matches == merged.matches
        np.testing.assert_array_equal(full.goals, merged.goals)
        np.testing.assert_array_equal(full.heatmap, merged.heatmap)


class TestPolicyMatches:
    def test_self_play_roughly_symmetric(self, tiny_checkpoint):
        a, meta_a = load_policy_group(tiny_checkpoint)
        b, meta_b = load_policy_group(tiny_checkpoint)
        stats = match_policies(a, meta_a, b, meta_b, 30, seed=1)
        assert stats.matches == 30
        assert stats.wins.sum() + stats.draws == 30

    def test_incompatible_checkpoints_rejected(self, tiny_checkpoint, tmp_path):
        from divmarl.errors import CheckpointError
        a, meta_a = load_policy_group(tiny_checkpoint)
        b, meta_b = load_policy_group(tiny_checkpoint)
        meta_b = dict(meta_b)
        meta_b["task_config"] = dict(meta_b["task_config"])
        meta_b["task_config"]["task.soccer.kicking"] = True
        with pytest.raises(CheckpointError):
            match_policies(a, meta_a, b, meta_b, 2, seed=0)

    def test_dump_written(self, tiny_checkpoint, tmp_path):
        a, meta_a = load_policy_group(tiny_checkpoint)
        b, meta_b = load_policy_group(tiny_checkpoint)
        dump = tmp_path / "match.bin"
        match_policies(a, meta_a, b, meta_b, 2, seed=2, dump_path=dump)
        assert dump.exists()
        assert dump.with_suffix(".json").exists()


class TestHeuristicPlay:
    def test_stronger_side_wins_more(self):
        stats = play_heuristic_match(2, 10, 0, Strengths(1.0, 1.0, 1.0),
                                     Strengths(0.0, 1.0, 1.0))
        # blue at full strength against stationary red
        assert stats.wins[0] > stats.wins[1]
