"""Proximal policy optimization with manual gradients on small tanh MLPs.

The actor is a shared trunk with one categorical head of K+1 logits per
UAV (index K means idle); an optional continuous block of Gaussian heads
(state-independent log-std) serves the flat baseline controller. UAVs
sample sequentially in index order with already-claimed GUs masked, so a
sampled joint action never violates the one-GU-per-UAV rule.

Both the clipped surrogate (default) and the KL-penalty variant are
implemented. Everything is numpy; gradients are hand-derived and checked
against finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_NEG_BIG = -1e30          # additive mask; exp() underflows to exactly 0
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

class MLP:
    """Fully connected tanh network with explicit forward/backward.

    Glorot-uniform initialization; the final layer can be down-scaled so a
    fresh actor starts near the uniform policy.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 out_scale: float = 1.0):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(sizes) - 1):
            bound = math.sqrt(6.0 / (sizes[i] + sizes[i + 1]))
            w = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
            if i == len(sizes) - 2:
                w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(sizes[i + 1]))

    def forward(self, x: np.ndarray):
        """x (B, in) -> (out (B, out), cache of layer inputs)."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list, dout: np.ndarray):
        """Accumulate parameter gradients for dL/dout; returns (grads, dx)."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        dh = dout
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                dh = dh * (1.0 - acts[i + 1] ** 2)   # tanh'
            grads_w[i] = acts[i].T @ dh
            grads_b[i] = dh.sum(axis=0)
            dh = dh @ self.weights[i].T
        return list(zip(grads_w, grads_b)), dh

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, arrays: list[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = arrays[2 * i].copy()
            self.biases[i] = arrays[2 * i + 1].copy()


class Adam:
    """Adam over a flat list of arrays (kept in caller order)."""

    def __init__(self, shapes: list[tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)


class RunningNorm:
    """Per-dimension running mean/variance (parallel Welford merge).

    Updated only while collecting training rollouts; evaluation uses the
    frozen statistics.
    """

    def __init__(self, dim: int):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.ones(dim)          # yields unit variance before any update

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = float(len(batch))
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        if self.count == 0.0:
            self.count = n
            self.mean = b_mean.copy()
            self.m2 = b_m2 if n > 1 else b_m2 + 1e-8
            return
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * (n / tot)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / tot)
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        var = self.m2 / max(self.count, 1.0)
        return np.clip((x - self.mean) / np.sqrt(var + 1e-8), -10.0, 10.0)

    def state(self) -> dict:
        return {"count": np.array([self.count]), "mean": self.mean, "m2": self.m2}

    def load(self, count, mean, m2) -> None:
        self.count = float(count[0])
        self.mean = np.asarray(mean, dtype=float).copy()
        self.m2 = np.asarray(m2, dtype=float).copy()


# ---------------------------------------------------------------------------
# masked categorical
# ---------------------------------------------------------------------------

def _masked_probs(logits: np.ndarray, taken_mask: np.ndarray) -> np.ndarray:
    """Softmax over one UAV's K+1 logits with claimed GUs masked out.

    Batch form: logits (B, K+1), taken_mask (B, K+1) bool. The idle column
    (last) is never masked, so a distribution always exists.
    """
    z = np.where(taken_mask, _NEG_BIG, logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sample_masked(logits: np.ndarray, rng: np.random.Generator,
                  deterministic: bool = False):
    """Sample per-UAV choices sequentially in index order.

    logits is (M, K+1); entry K is idle. A GU claimed by an earlier UAV is
    masked for all later ones. Returns (picks (M,), joint logprob).
    """
    nm, kp1 = logits.shape
    picks = np.empty(nm, dtype=int)
    taken = np.zeros(kp1, dtype=bool)
    total = 0.0
    for i in range(nm):
        p = _masked_probs(logits[i][None, :], taken[None, :])[0]
        if deterministic:
            a = int(np.argmax(p))
        else:
            cum = np.cumsum(p)
            a = int(np.searchsorted(cum, rng.random(), side="right"))
            a = min(a, kp1 - 1)
        picks[i] = a
        total += math.log(max(p[a], 1e-300))
        if a < kp1 - 1:
            taken[a] = True
    return picks, total


def _taken_masks(picks: np.ndarray, kp1: int) -> np.ndarray:
    """Reconstruct the per-UAV masks implied by stored joint picks.

    picks (B, M) -> masks (B, M, K+1); masks[b, i] covers the GUs claimed
    by UAVs before i in sample b.
    """
    b, nm = picks.shape
    masks = np.zeros((b, nm, kp1), dtype=bool)
    for i in range(1, nm):
        masks[:, i, :] = masks[:, i - 1, :]
        prev = picks[:, i - 1]
        rows = prev < kp1 - 1
        masks[rows, i, prev[rows]] = True
    return masks


# ---------------------------------------------------------------------------
# clip objective (reference form; the update uses its derivative cases)
# ---------------------------------------------------------------------------

def clip_objective(ratio: float, advantage: float, clip_eps: float) -> float:
    """min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)."""
    if not 0.0 < clip_eps < 1.0:
        raise ValueError("clip range must lie in (0, 1)")
    clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
    return min(ratio * advantage, clipped * advantage)


def clip_grad_active(ratio: np.ndarray, advantage: np.ndarray,
                     clip_eps: float) -> np.ndarray:
    """1 where the surrogate still depends on the ratio, 0 where clipped out:
    active unless (A>0 and ratio>1+eps) or (A<0 and ratio<1-eps)."""
    out_hi = (advantage > 0.0) & (ratio > 1.0 + clip_eps)
    out_lo = (advantage < 0.0) & (ratio < 1.0 - clip_eps)
    return np.where(out_hi | out_lo, 0.0, 1.0)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                gamma: float, lam: float):
    """Generalized advantage estimation over a flat rollout.

    dones marks episode boundaries; the value after a terminal step is 0.
    Returns (advantages, returns) with returns = advantages + values.
    """
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        next_v = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
    return adv, adv + values


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

@dataclass
class PPOConfig:
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip: float = 0.5
    hidden: int = 64
    reward_scale: float = 1e-2      # critic-side scaling; logged rewards stay raw
    use_kl_penalty: bool = False    # KL-penalty variant instead of clipping
    kl_coef: float = 1.0
    kl_target: float = 0.01


class RolloutBuffer:
    """Flat on-policy storage; cleared after every update round."""

    def __init__(self):
        self.obs: list = []
        self.picks: list = []
        self.cont: list = []
        self.logp: list = []
        self.value: list = []
        self.reward: list = []
        self.done: list = []
        self.old_probs: list = []
        self.old_means: list = []

    def __len__(self) -> int:
        return len(self.obs)

    def add(self, obs, picks, cont, logp, value, reward, done,
            probs, means) -> None:
        self.obs.append(np.asarray(obs, dtype=float))
        self.picks.append(np.asarray(picks, dtype=int))
        self.cont.append(None if cont is None else np.asarray(cont, dtype=float))
        self.logp.append(float(logp))
        self.value.append(float(value))
        self.reward.append(float(reward))
        self.done.append(float(done))
        self.old_probs.append(np.asarray(probs, dtype=float))
        self.old_means.append(None if means is None else np.asarray(means, dtype=float))

    def clear(self) -> None:
        self.__init__()


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    aborted: bool = False
    kl_coef: float = 0.0


class PPOAgent:
    """Actor-critic PPO over the association action (plus optional
    continuous heads for the flat baseline controller)."""

    def __init__(self, obs_dim: int, num_uavs: int, num_gus: int,
                 cont_dim: int = 0, cfg: PPOConfig | None = None,
                 seed: int = 0):
        self.cfg = cfg or PPOConfig()
        self.obs_dim = obs_dim
        self.num_uavs = num_uavs
        self.num_gus = num_gus
        self.cont_dim = cont_dim
        self.disc_dim = num_uavs * (num_gus + 1)
        rng = np.random.default_rng(seed)
        h = self.cfg.hidden
        self.actor = MLP([obs_dim, h, h, self.disc_dim + cont_dim], rng, out_scale=0.01)
        self.logstd = np.full(cont_dim, math.log(0.5))
        self.critic = MLP([obs_dim, h, h, 1], rng)
        self.obs_norm = RunningNorm(obs_dim)
        self.kl_coef = self.cfg.kl_coef
        self.pending_buffer = RolloutBuffer()   # filled by training episodes
        self.last_grads: list[np.ndarray] = []  # raw grads of the latest step

    # -- forward passes

    def policy_forward(self, obs: np.ndarray):
        """(logits (M, K+1), value) at one raw observation, frozen stats."""
        x = self.obs_norm.normalize(np.asarray(obs, dtype=float))[None, :]
        out, _ = self.actor.forward(x)
        v, _ = self.critic.forward(x)
        logits = out[0, :self.disc_dim].reshape(self.num_uavs, self.num_gus + 1)
        return logits, float(v[0, 0])

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            deterministic: bool = False, update_norm: bool = False):
        """Sample (or take the mode of) the joint action at one observation.

        Returns a dict with picks, continuous raws, joint logprob, value,
        the normalized observation, per-UAV probabilities, and the
        continuous means (the latter two feed the KL-penalty variant).
        """
        raw = np.asarray(obs, dtype=float)
        if update_norm:
            self.obs_norm.update(raw[None, :])
        x = self.obs_norm.normalize(raw)
        out, _ = self.actor.forward(x[None, :])
        out = out[0]
        logits = out[:self.disc_dim].reshape(self.num_uavs, self.num_gus + 1)
        picks, logp = sample_masked(logits, rng, deterministic=deterministic)
        probs = self._probs_for(logits[None, ...], picks[None, :])[0]
        cont = None
        means = None
        if self.cont_dim:
            means = out[self.disc_dim:]
            if deterministic:
                cont = means.copy()
            else:
                cont = means + np.exp(self.logstd) * rng.standard_normal(self.cont_dim)
            z = (cont - means) / np.exp(self.logstd)
            logp += float(np.sum(-0.5 * z * z - self.logstd - 0.5 * _LOG_2PI))
        v, _ = self.critic.forward(x[None, :])
        return {"picks": picks, "cont": cont, "logp": logp,
                "value": float(v[0, 0]), "obs_norm": x, "probs": probs,
                "means": means}

    def _probs_for(self, logits: np.ndarray, picks: np.ndarray) -> np.ndarray:
        """Per-UAV masked probabilities consistent with stored picks.
        logits (B, M, K+1), picks (B, M) -> (B, M, K+1)."""
        masks = _taken_masks(picks, self.num_gus + 1)
        b, nm, kp1 = logits.shape
        out = np.empty_like(logits)
        for i in range(nm):
            out[:, i, :] = _masked_probs(logits[:, i, :], masks[:, i, :])
        return out

    # -- update

    def update(self, buffer: RolloutBuffer) -> UpdateStats:
        """One PPO round over the buffer (epochs x minibatches).

        Rewards are scaled by cfg.reward_scale for the critic; advantages
        are normalized per round, so the actor is scale-invariant. A NaN in
        any minibatch loss aborts the round and restores the pre-round
        parameters.
        """
        cfg = self.cfg
        n = len(buffer)
        if n == 0:
            raise ValueError("empty rollout buffer")
        obs = np.stack(buffer.obs)
        picks = np.stack(buffer.picks)
        logp_old = np.array(buffer.logp)
        values = np.array(buffer.value)
        rewards = np.array(buffer.reward) * cfg.reward_scale
        dones = np.array(buffer.done)
        old_probs = np.stack(buffer.old_probs)
        has_cont = self.cont_dim > 0
        cont = np.stack(buffer.cont) if has_cont else None
        old_means = np.stack(buffer.old_means) if has_cont else None
        old_logstd = self.logstd.copy()

        adv, returns = compute_gae(rewards, values, dones, cfg.gamma, cfg.gae_lambda)
        if n > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        snapshot = [p.copy() for p in self._all_params()]
        if not hasattr(self, "_opt"):
            self._opt = Adam([p.shape for p in self._all_params()], cfg.lr)
        self._opt.lr = cfg.lr

        rng = np.random.default_rng(int(abs(logp_old.sum() * 1e6)) % (2 ** 32))
        stats = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, cfg.minibatch):
                idx = order[lo:lo + cfg.minibatch]
                ok, st = self._minibatch_step(
                    obs[idx], picks[idx], None if cont is None else cont[idx],
                    logp_old[idx], adv[idx], returns[idx], old_probs[idx],
                    None if old_means is None else old_means[idx], old_logstd)
                if not ok:
                    self._set_all_params(snapshot)
                    return UpdateStats(math.nan, math.nan, math.nan, math.nan,
                                       math.nan, aborted=True, kl_coef=self.kl_coef)
                stats.append(st)
        agg = np.mean(np.array(stats), axis=0)
        if cfg.use_kl_penalty:
            mean_kl = float(agg[3])
            if mean_kl > 1.5 * cfg.kl_target:
                self.kl_coef *= 2.0
            elif mean_kl < cfg.kl_target / 1.5:
                self.kl_coef *= 0.5
        return UpdateStats(float(agg[0]), float(agg[1]), float(agg[2]),
                           float(agg[3]), float(agg[4]), kl_coef=self.kl_coef)

    def _minibatch_step(self, obs, picks, cont, logp_old, adv, returns,
                        old_probs, old_means, old_logstd):
        cfg = self.cfg
        b = len(obs)
        kp1 = self.num_gus + 1

        out, actor_cache = self.actor.forward(obs)
        v_out, critic_cache = self.critic.forward(obs)
        v = v_out[:, 0]

        logits = out[:, :self.disc_dim].reshape(b, self.num_uavs, kp1)
        probs = self._probs_for(logits, picks)
        rows = np.arange(b)
        logp_new = np.zeros(b)
        ent = np.zeros(b)
        safe_log = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), 0.0)
        for i in range(self.num_uavs):
            logp_new += safe_log[rows, i, picks[:, i]]
            ent += -(probs[:, i, :] * safe_log[:, i, :]).sum(axis=1)
        if cont is not None:
            means = out[:, self.disc_dim:]
            std = np.exp(self.logstd)
            z = (cont - means) / std
            logp_new += (-0.5 * z * z - self.logstd - 0.5 * _LOG_2PI).sum(axis=1)
            ent += float(np.sum(self.logstd + 0.5 * (_LOG_2PI + 1.0)))

        ratio = np.exp(logp_new - logp_old)
        if cfg.use_kl_penalty:
            # exact KL(old||new) summed over heads
            kl = np.zeros(b)
            for i in range(self.num_uavs):
                po = old_probs[:, i, :]
                pn = probs[:, i, :]
                term = np.where(po > 0.0,
                                po * (np.log(np.maximum(po, 1e-300))
                                      - np.log(np.maximum(pn, 1e-300))), 0.0)
                kl += term.sum(axis=1)
            if cont is not None:
                so = np.exp(old_logstd)
                sn = np.exp(self.logstd)
                kl += ((self.logstd - old_logstd)
                       + (so * so + (old_means - means) ** 2) / (2.0 * sn * sn)
                       - 0.5).sum(axis=1)
            policy_loss = float(np.mean(-ratio * adv) + self.kl_coef * np.mean(kl))
            dlogp = -ratio * adv / b
            clip_frac = 0.0
            kl_stat = float(np.mean(kl))
        else:
            active = clip_grad_active(ratio, adv, cfg.clip_eps)
            clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            policy_loss = float(np.mean(-np.minimum(ratio * adv, clipped * adv)))
            dlogp = -(active * ratio * adv) / b
            clip_frac = float(np.mean(1.0 - active))
            kl_stat = float(np.mean(logp_old - logp_new))

        value_err = v - returns
        value_loss = float(0.5 * cfg.value_coef * np.mean(value_err ** 2))
        entropy = float(np.mean(ent))
        total_loss = policy_loss + value_loss - cfg.entropy_coef * entropy
        if not math.isfinite(total_loss):
            return False, None

        # backward: actor
        dout = np.zeros_like(out)
        ent_coef = cfg.entropy_coef / b
        for i in range(self.num_uavs):
            p = probs[:, i, :]
            onehot = np.zeros((b, kp1))
            onehot[rows, picks[:, i]] = 1.0
            dlogits = dlogp[:, None] * (onehot - p)
            h_i = -(p * safe_log[:, i, :]).sum(axis=1, keepdims=True)
            d_ent = -p * (safe_log[:, i, :] + h_i)
            dlogits -= ent_coef * d_ent
            if cfg.use_kl_penalty:
                dlogits += (self.kl_coef / b) * (p - old_probs[:, i, :])
            dout[:, i * kp1:(i + 1) * kp1] += dlogits
        dlogstd = np.zeros(self.cont_dim)
        if cont is not None:
            std = np.exp(self.logstd)
            z = (cont - means) / std
            dmeans = dlogp[:, None] * (z / std)
            dlogstd += (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
            dlogstd -= cfg.entropy_coef * np.ones(self.cont_dim)   # dH/dlogstd = 1 per dim
            if cfg.use_kl_penalty:
                so = np.exp(old_logstd)
                dmeans += (self.kl_coef / b) * (means - old_means) / (std * std)
                dlogstd += (self.kl_coef / b) * (
                    b * 1.0 - ((so * so + (old_means - means) ** 2) / (std * std)).sum(axis=0))
            dout[:, self.disc_dim:] += dmeans
        actor_grads, _ = self.actor.backward(actor_cache, dout)
        dv = (cfg.value_coef * value_err / b)[:, None]
        critic_grads, _ = self.critic.backward(critic_cache, dv)

        flat = []
        for gw, gb in actor_grads:
            flat += [gw, gb]
        flat.append(dlogstd)
        for gw, gb in critic_grads:
            flat += [gw, gb]
        self.last_grads = [g.copy() for g in flat]
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in flat))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
            flat = [g * scale for g in flat]
        self._opt.step(self._all_params(), flat)
        return True, (policy_loss, value_loss, entropy, kl_stat, clip_frac)

    # -- parameter plumbing

    def _all_params(self) -> list[np.ndarray]:
        return self.actor.params() + [self.logstd] + self.critic.params()

    def _set_all_params(self, arrays: list[np.ndarray]) -> None:
        na = len(self.actor.params())
        self.actor.set_params(arrays[:na])
        self.logstd = arrays[na].copy()
        self.critic.set_params(arrays[na + 1:])

    # -- checkpointing

    CHECKPOINT_VERSION = 1

    def save(self, path: str) -> None:
        """Versioned flat-array checkpoint (npz): layout documented by key."""
        arrays = {"version": np.array([self.CHECKPOINT_VERSION]),
                  "dims": np.array([self.obs_dim, self.num_uavs, self.num_gus,
                                    self.cont_dim, self.cfg.hidden]),
                  "logstd": self.logstd}
        for i, (w, b) in enumerate(zip(self.actor.weights, self.actor.biases)):
            arrays[f"actor_w{i}"] = w
            arrays[f"actor_b{i}"] = b
        for i, (w, b) in enumerate(zip(self.critic.weights, self.critic.biases)):
            arrays[f"critic_w{i}"] = w
            arrays[f"critic_b{i}"] = b
        ns = self.obs_norm.state()
        arrays["norm_count"] = ns["count"]
        arrays["norm_mean"] = ns["mean"]
        arrays["norm_m2"] = ns["m2"]
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str, cfg: PPOConfig | None = None) -> "PPOAgent":
        data = np.load(path)
        version = int(data["version"][0])
        if version != cls.CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        obs_dim, nm, nk, cont_dim, hidden = (int(x) for x in data["dims"])
        cfg = cfg or PPOConfig()
        cfg.hidden = hidden
        agent = cls(obs_dim, nm, nk, cont_dim=cont_dim, cfg=cfg)
        for i in range(len(agent.actor.weights)):
            agent.actor.weights[i] = data[f"actor_w{i}"].copy()
            agent.actor.biases[i] = data[f"actor_b{i}"].copy()
        for i in range(len(agent.critic.weights)):
            agent.critic.weights[i] = data[f"critic_w{i}"].copy()
            agent.critic.biases[i] = data[f"critic_b{i}"].copy()
        agent.logstd = data["logstd"].copy()
        agent.obs_norm.load(data["norm_count"], data["norm_mean"], data["norm_m2"])
        return agent
