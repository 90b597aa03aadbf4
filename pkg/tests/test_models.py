import numpy as np
import pytest
import torch

from divmarl.config import Config
from divmarl.dico import estimate_snd_hat
from divmarl.models import SetGnnEncoder
from divmarl.tasks import SoccerTask
from divmarl.training import (GroupRuntime, TrainingConfig, _build_group,
                              collect, ppo_update, train)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestSetGnnEncoder:
    def test_shapes_and_determinism(self):
        enc = SetGnnEncoder(core_dim=6, opp_dim=4, n_agents=5, gen=gen(1),
                            hidden=(16,), out_dim=8)
        core = torch.randn(5, 3, 6, generator=gen(2))
        opp = torch.randn(5, 3, 5, 4, generator=gen(3))
        pos = torch.randn(5, 3, 2, generator=gen(4))
        vel = torch.randn(5, 3, 2, generator=gen(5))
        a = enc(core, opp, pos, vel)
        b = enc(core, opp, pos, vel)
        assert a.shape == (5, 3, 8)
        assert torch.equal(a, b)

    def test_opponent_permutation_invariance(self):
        enc = SetGnnEncoder(core_dim=6, opp_dim=4, n_agents=3, gen=gen(1),
                            hidden=(16,), out_dim=8)
        core = torch.randn(3, 2, 6, generator=gen(2))
        opp = torch.randn(3, 2, 5, 4, generator=gen(3))
        pos = torch.randn(3, 2, 2, generator=gen(4))
        vel = torch.randn(3, 2, 2, generator=gen(5))
        base = enc(core, opp, pos, vel)
        perm = torch.randperm(5, generator=gen(6))
        out = enc(core, opp[:, :, perm], pos, vel)
        assert torch.equal(out, base)

    def test_teammate_relabeling_equivariance(self):
        enc = SetGnnEncoder(core_dim=6, opp_dim=4, n_agents=4, gen=gen(1),
                            hidden=(16,), out_dim=8).double()
        core = torch.randn(4, 2, 6, generator=gen(2), dtype=torch.float64)
        opp = torch.randn(4, 2, 3, 4, generator=gen(3), dtype=torch.float64)
        pos = torch.randn(4, 2, 2, generator=gen(4), dtype=torch.float64)
        vel = torch.randn(4, 2, 2, generator=gen(5), dtype=torch.float64)
        base = enc(core, opp, pos, vel)
        perm = torch.tensor([2, 0, 3, 1])
        out = enc(core[perm], opp[perm], pos[perm], vel[perm])
        assert torch.equal(out, base[perm])


class TestFiveVsFiveTrainingPath:
    def test_setgnn_policy_trains_and_keeps_constraint(self):
        task = SoccerTask(team_size=5, kicking=True, spawn_mode="formation",
                          context_mode="setgnn", opponent_mode="heuristic")
        cfg = Config({"model.context_dim": 32,
                      "model.encoder_hidden": "32",
                      "dico.hidden": "32"})
        group = _build_group("team", task, cfg, "mappo", seed=0,
                             snd_des=0.2, mode="equality")
        assert group.encoder is not None
        opt = torch.optim.Adam(group.parameters(), lr=1e-3)
        rt = GroupRuntime(group, "team", opt)
        obs, ctx = task.reset(4, 0)
        ctx_t, _ = group.context_tensors(task, obs["team"], obs["team"])
        estimate_snd_hat(group.policy, ctx_t.numpy().reshape(-1, 32).astype(np.float64))
        batches, obs, ctx, _ = collect(task, {"team": rt}, 30, obs, ctx, gen(1))
        batch = batches["team"]
        assert batch.raw is not None
        assert batch.ctx.shape == (30, 5, 4, 32)
        group.policy.buffer.append(batch.ctx.reshape(-1, 32).astype(np.float64))
        enc_before = [p.detach().clone() for p in group.encoder.parameters()]
        tcfg = TrainingConfig(minibatch_size=64, epochs=1)
        diags = ppo_update(rt, batch, tcfg, gen(2))
        # the shared encoder learns (it is inside the differentiated graph)
        assert any(not torch.equal(p0, p1) for p0, p1 in
                   zip(enc_before, group.encoder.parameters()))
        report = diags["report"]
        assert report.satisfied
        assert abs(report.measured_snd - 0.2) < 1e-5

    def test_full_train_checkpoint_roundtrip(self, tmp_path):
        cfg = Config({
            "task.id": "soccer",
            "task.soccer.team_size": 5,
            "task.soccer.kicking": True,
            "task.soccer.spawn": "formation",
            "task.soccer.context": "setgnn",
            "task.soccer.embodiments": "phys_diff",
            "model.context_dim": 32,
            "model.encoder_hidden": "32",
            "dico.hidden": "32",
            "train.total_frames": 1200,
            "train.frames_per_iteration": 600,
            "train.num_envs": 4,
            "train.minibatch_size": 256,
            "train.epochs": 1,
            "dico.mode": "equality",
            "dico.snd_des": 0.2,
            "opponent.curriculum": "0:0.3,1,1",
            "run.seed": 9,
        })
        res = train(cfg, run_dir=tmp_path / "run")
        from divmarl.models import load_policy_group
        group, meta = load_policy_group(res.checkpoints["team"])
        assert group.encoder is not None
        assert meta["n_agents"] == 5
        # loaded encoder + policy reproduce the training composition
        task = SoccerTask(team_size=5, kicking=True, spawn_mode="formation",
                          context_mode="setgnn", opponent_mode="heuristic")
        obs, _ = task.reset(2, 3)
        ctx_t, _ = group.context_tensors(task, obs["team"], obs["team"])
        assert ctx_t.shape == (5, 2, 32)
