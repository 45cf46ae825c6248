"""Q-learning over encoded grid states: subgoal values and the action baseline.

Two value functions share one convolutional trunk architecture:

* the subgoal scorer rates (state, candidate subgoal) pairs; the agent
  picks the argmin, so lower means "try this subgoal sooner",
* the action baseline rates (state, action) pairs through an auxiliary
  orientation/action one-hot fed into the first dense layer, and the
  agent picks the argmax.

Both are trained offline from recorded transitions with prioritized
replay, a frozen target network, and double-Q bootstrap targets. States
enter the nets as one-hot (30, 30, 7) tensors; orientation and the
collected-gem count are deliberately not part of the spatial encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .grid import (
    MAX_SIDE,
    Action,
    GameState,
    Orientation,
    Subgoal,
    formulate_goals,
    state_fingerprint,
)

ENCODED_SHAPE = (MAX_SIDE, MAX_SIDE, 7)

# Channel layout of the encoded tensor, indexed [x, y, channel].
CH_PLAYER, CH_EXIT, CH_BOULDER, CH_GEM, CH_WALL, CH_DIRT, CH_SUBGOAL = range(7)

# One-hot layouts follow enum declaration order; ties break the same way.
ORIENTATION_ORDER = tuple(Orientation)
ACTION_ORDER = tuple(Action)
AUX_UNITS = len(ORIENTATION_ORDER) + len(ACTION_ORDER)

_ORIENTATION_INDEX = {o: i for i, o in enumerate(ORIENTATION_ORDER)}
_ACTION_INDEX = {a: i for i, a in enumerate(ACTION_ORDER)}


@dataclass(frozen=True)
class TransitionG:
    """Subgoal-level sample: ``g`` attempted in ``s`` cost ``r`` plan steps.

    ``r`` is the plan length, the penalization value for unattainable
    subgoals, or plan length plus the final reward when the episode
    ended; the last two leave ``s_next`` as None.
    """

    s: GameState
    g: Subgoal
    r: float
    s_next: GameState | None


@dataclass(frozen=True)
class TransitionA:
    """Action-level sample for the baseline: one executed action."""

    s: GameState
    a: Action
    r: float
    s_next: GameState | None


def encode_pair(state: GameState, subgoal: Subgoal | None = None) -> np.ndarray:
    """One-hot (30, 30, 7) uint8 tensor for a state and optional subgoal.

    Indexed [x, y, channel] with channels player, exit, boulder, gem,
    wall, dirt, subgoal. Cells outside the level footprint stay zero.
    Channels 0..5 are mutually exclusive per cell: the player tile wins
    over the exit tile when standing on it. Without a subgoal the last
    channel is all zeros, which is exactly the action-baseline encoding.
    """
    if state.width > MAX_SIDE or state.height > MAX_SIDE:
        raise ValueError(
            f"level {state.width}x{state.height} exceeds the "
            f"{MAX_SIDE}x{MAX_SIDE} encoding canvas"
        )
    enc = np.zeros(ENCODED_SHAPE, dtype=np.uint8)
    for channel, cells in (
        (CH_WALL, state.wall_cells),
        (CH_DIRT, state.dirt_cells),
        (CH_GEM, state.gem_cells),
        (CH_BOULDER, state.boulder_cells),
    ):
        for x, y in cells:
            enc[x, y, channel] = 1
    if state.exit_cell != state.player_cell:
        enc[state.exit_cell[0], state.exit_cell[1], CH_EXIT] = 1
    enc[state.player_cell[0], state.player_cell[1], CH_PLAYER] = 1
    if subgoal is not None:
        enc[subgoal.cell[0], subgoal.cell[1], CH_SUBGOAL] = 1
    return enc


class EncodingPool:
    """Cache of subgoal-free encodings keyed by orientation-free state identity.

    Returned arrays are shared; callers must copy before writing the
    subgoal channel.
    """

    def __init__(self) -> None:
        self._cache: dict[tuple, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._cache)

    def base(self, state: GameState) -> np.ndarray:
        key = state_fingerprint(state, include_orientation=False)
        enc = self._cache.get(key)
        if enc is None:
            enc = encode_pair(state)
            enc.setflags(write=False)
            self._cache[key] = enc
        return enc


def aux_vector(orientation: Orientation, action: Action) -> np.ndarray:
    """Orientation one-hot (4) followed by action one-hot (5), float32."""
    v = np.zeros(AUX_UNITS, dtype=np.float32)
    v[_ORIENTATION_INDEX[orientation]] = 1.0
    v[len(ORIENTATION_ORDER) + _ACTION_INDEX[action]] = 1.0
    return v


@dataclass
class QNet:
    """A layer chain plus its parameters, evaluated in infer mode."""

    specs: tuple[nn.LayerSpec, ...]
    params: list[dict[str, np.ndarray]]

    def infer(self, x: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        out, _ = nn.forward(self.params, self.specs, x, mode="infer", aux=aux)
        return np.asarray(out, dtype=np.float64).reshape(-1)

    def clone(self) -> "QNet":
        return QNet(self.specs, nn.clone_params(self.params))


def new_dqp_net(seed: int) -> QNet:
    specs = nn.q_network()
    return QNet(specs, nn.init_params(specs, ENCODED_SHAPE, seed))


def new_dql_net(seed: int) -> QNet:
    specs = nn.dql_network(AUX_UNITS)
    return QNet(specs, nn.init_params(specs, ENCODED_SHAPE, seed))


def _split_at_concat(net: QNet):
    """Split a net into (trunk, head) at its Concat layer.

    The trunk output depends only on the state encoding, so evaluating
    many (orientation, action) pairs for one state costs one trunk pass.
    """
    for i, spec in enumerate(net.specs):
        if isinstance(spec, nn.Concat):
            return (net.specs[:i], net.params[:i]), (net.specs[i:], net.params[i:])
    raise ValueError("net has no Concat layer to split at")


def q_values_g(
    net: QNet,
    state: GameState,
    subgoals: tuple[Subgoal, ...] | None = None,
    pool: EncodingPool | None = None,
) -> list[tuple[Subgoal, float]]:
    """Q(s, g) per candidate subgoal, in canonical goal order.

    Defaults to the state's full open-subgoal set. All candidates are
    scored in one batched infer pass; per-sample outputs match one-at-a-
    time evaluation because infer mode has no cross-batch coupling.
    """
    if subgoals is None:
        subgoals = formulate_goals(state).subgoals
    base = pool.base(state) if pool is not None else encode_pair(state)
    batch = np.repeat(base[None, ...], len(subgoals), axis=0)
    for i, goal in enumerate(subgoals):
        batch[i, goal.cell[0], goal.cell[1], CH_SUBGOAL] = 1
    values = net.infer(batch)
    return list(zip(subgoals, values.tolist()))


def rank_subgoals(
    net: QNet, state: GameState, pool: EncodingPool | None = None
) -> list[tuple[Subgoal, float]]:
    """Open subgoals ordered by ascending Q.

    The underlying sort is stable over the canonical goal order, so ties
    resolve to the gem with the lowest (row, column) and EXIT last.
    """
    return sorted(q_values_g(net, state, pool=pool), key=lambda pair: pair[1])


def select_subgoal(
    net: QNet, state: GameState, pool: EncodingPool | None = None
) -> Subgoal:
    """The subgoal the agent should try next: deterministic argmin of Q."""
    return rank_subgoals(net, state, pool)[0][0]


def q_values_a(
    net: QNet, state: GameState, pool: EncodingPool | None = None
) -> list[tuple[Action, float]]:
    """Q(s, a) for every action, in declaration order, via one trunk pass."""
    (trunk_specs, trunk_params), (head_specs, head_params) = _split_at_concat(net)
    base = pool.base(state) if pool is not None else encode_pair(state)
    feats, _ = nn.forward(trunk_params, trunk_specs, base[None, ...], mode="infer")
    feats = np.repeat(feats, len(ACTION_ORDER), axis=0)
    aux = np.stack([aux_vector(state.orientation, a) for a in ACTION_ORDER])
    out, _ = nn.forward(head_params, head_specs, feats, mode="infer", aux=aux)
    values = np.asarray(out, dtype=np.float64).reshape(-1)
    return list(zip(ACTION_ORDER, values.tolist()))


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters for offline Q-learning.

    Defaults are the subgoal-scorer settings; ``dql_trainer_config``
    swaps in the action baseline's discount and learning rate. ``lam``
    is both the unattainable-subgoal penalty and its target value, and
    must match the value used during data collection.
    """

    gamma: float = 0.7
    lam: float = 200.0
    r_f: float = -200.0
    tau: int = 10_000
    alpha: float = 1e-5
    batch_size: int = 32
    iterations: int = 200_000
    alpha_per: float = 0.6
    beta_per_start: float = 0.4
    beta_per_end: float = 1.0
    eps_per: float = 1e-3
    is_weights: bool = True
    double_q: bool = True
    log_every: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")
        if self.alpha <= 0:
            raise ValueError(f"learning rate must be positive, got {self.alpha}")
        if self.alpha_per < 0:
            raise ValueError(f"alpha_per must be >= 0, got {self.alpha_per}")
        for name in ("beta_per_start", "beta_per_end"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.eps_per <= 0:
            raise ValueError(f"eps_per must be positive, got {self.eps_per}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")


def dqp_trainer_config(**overrides) -> TrainerConfig:
    return TrainerConfig(**overrides)


def dql_trainer_config(**overrides) -> TrainerConfig:
    overrides.setdefault("gamma", 0.99)
    overrides.setdefault("alpha", 5e-6)
    return TrainerConfig(**overrides)


def q_target_g(
    transition: TransitionG,
    online: QNet,
    target: QNet,
    cfg: TrainerConfig,
    pool: EncodingPool | None = None,
) -> float:
    """Bootstrap target for one subgoal-level sample.

    Unattainable samples (marked by r equal to the penalty) regress to
    the penalty itself; terminal samples regress to their recorded
    reward; interior samples bootstrap through the minimum target-net
    value at the next state, with the online net choosing the argmin
    when double-Q selection is enabled.
    """
    if transition.r == cfg.lam:
        return float(cfg.lam)
    if transition.s_next is None:
        return float(transition.r)
    subgoals = formulate_goals(transition.s_next).subgoals
    if cfg.double_q:
        online_vals = [v for _, v in q_values_g(online, transition.s_next, subgoals, pool)]
        best = subgoals[int(np.argmin(online_vals))]
        value = q_values_g(target, transition.s_next, (best,), pool)[0][1]
    else:
        value = min(v for _, v in q_values_g(target, transition.s_next, subgoals, pool))
    return float(transition.r + cfg.gamma * value)


def q_target_a(
    transition: TransitionA,
    online: QNet,
    target: QNet,
    cfg: TrainerConfig,
    pool: EncodingPool | None = None,
) -> float:
    """Bootstrap target for one action-level sample (argmax, not argmin)."""
    if transition.s_next is None:
        return float(transition.r)
    if cfg.double_q:
        online_vals = [v for _, v in q_values_a(online, transition.s_next, pool)]
        best = int(np.argmax(online_vals))
        value = q_values_a(target, transition.s_next, pool)[best][1]
    else:
        value = max(v for _, v in q_values_a(target, transition.s_next, pool))
    return float(transition.r + cfg.gamma * value)


class ReplayBuffer:
    """Proportional prioritized replay over an offline transition set.

    Sampling probability is priority**alpha_per normalized; importance
    weights are (N * p)**-beta normalized by the largest weight in the
    whole buffer. All entries start at priority 1.0 so the first epoch
    is unbiased.
    """

    def __init__(self, transitions, alpha_per: float = 0.6, eps_per: float = 1e-3, seed=0):
        self._items = list(transitions)
        if not self._items:
            raise ValueError("replay buffer needs at least one transition")
        self._priorities = np.ones(len(self._items), dtype=np.float64)
        self._alpha = float(alpha_per)
        self._eps = float(eps_per)
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._items)

    def add(self, transition) -> None:
        self._items.append(transition)
        self._priorities = np.append(self._priorities, self._priorities.max())

    def probabilities(self) -> np.ndarray:
        scaled = self._priorities**self._alpha
        return scaled / scaled.sum()

    def sample(self, batch_size: int, beta: float):
        """Draw (indices, transitions, normalized IS weights) with replacement."""
        probs = self.probabilities()
        idx = self._rng.choice(len(self._items), size=batch_size, replace=True, p=probs)
        weights = (len(self._items) * probs[idx]) ** -beta
        weights /= (len(self._items) * probs.min()) ** -beta
        return idx, [self._items[i] for i in idx], weights

    def update_priorities(self, indices, td_abs) -> None:
        self._priorities[np.asarray(indices)] = np.abs(np.asarray(td_abs)) + self._eps


def _targets_g(
    batch,
    online: QNet,
    target: QNet,
    cfg: TrainerConfig,
    pool: EncodingPool,
    target_cache: dict | None = None,
):
    """Vectorized q_target_g over a batch; one big infer pass per net.

    ``target_cache`` memoizes frozen-target evaluations between tau
    syncs (the trainer clears it whenever the target net changes), so
    repeatedly sampled transitions skip the second net pass.
    """
    targets = np.empty(len(batch), dtype=np.float64)
    interior: list[tuple[int, TransitionG]] = []
    for i, tr in enumerate(batch):
        if tr.r == cfg.lam:
            targets[i] = cfg.lam
        elif tr.s_next is None:
            targets[i] = tr.r
        else:
            interior.append((i, tr))
    if not interior:
        return targets
    # prioritized resampling repeats successor states, so the net passes
    # run over distinct s' only; item_group maps each item back
    encodings: list[np.ndarray] = []
    spans: list[tuple[int, int]] = []
    goal_lists: list[tuple] = []
    group_keys: list[tuple] = []
    group_of: dict[tuple, int] = {}
    item_group: list[int] = []
    for _, tr in interior:
        key = state_fingerprint(tr.s_next, include_orientation=False)
        g = group_of.get(key)
        if g is None:
            g = len(group_keys)
            group_of[key] = g
            group_keys.append(key)
            subgoals = formulate_goals(tr.s_next).subgoals
            base = pool.base(tr.s_next)
            start = len(encodings)
            for goal in subgoals:
                enc = base.copy()
                enc[goal.cell[0], goal.cell[1], CH_SUBGOAL] = 1
                encodings.append(enc)
            spans.append((start, len(encodings)))
            goal_lists.append(subgoals)
        item_group.append(g)
    stacked = np.stack(encodings)
    values = np.empty(len(group_keys), dtype=np.float64)
    if cfg.double_q:
        online_vals = online.infer(stacked)
        # argmin per span is first-occurrence, matching the canonical order
        best = [int(np.argmin(online_vals[a:b])) for a, b in spans]
        cache_keys = [
            (key, goal_lists[g][best[g]]) for g, key in enumerate(group_keys)
        ]
        misses = [
            g
            for g, ck in enumerate(cache_keys)
            if target_cache is None or ck not in target_cache
        ]
        if misses:
            rows = np.asarray([spans[g][0] + best[g] for g in misses])
            fresh = target.infer(stacked[rows])
            for g, value in zip(misses, fresh):
                values[g] = float(value)
                if target_cache is not None:
                    target_cache[cache_keys[g]] = float(value)
        if target_cache is not None:
            for g, ck in enumerate(cache_keys):
                values[g] = target_cache[ck]
    else:
        misses = [
            g
            for g, key in enumerate(group_keys)
            if target_cache is None or key not in target_cache
        ]
        if misses:
            rows: list[int] = []
            bounds = []
            for g in misses:
                a, b = spans[g]
                bounds.append((len(rows), len(rows) + (b - a)))
                rows.extend(range(a, b))
            fresh = target.infer(stacked[np.asarray(rows)])
            for g, (a, b) in zip(misses, bounds):
                value = float(fresh[a:b].min())
                values[g] = value
                if target_cache is not None:
                    target_cache[group_keys[g]] = value
        if target_cache is not None:
            for g, key in enumerate(group_keys):
                values[g] = target_cache[key]
    for (i, tr), g in zip(interior, item_group):
        targets[i] = tr.r + cfg.gamma * values[g]
    return targets


def _targets_a(batch, online: QNet, target: QNet, cfg: TrainerConfig, pool: EncodingPool):
    """Vectorized q_target_a over a batch via the trunk/head split."""
    targets = np.empty(len(batch), dtype=np.float64)
    interior = [(i, tr) for i, tr in enumerate(batch) if tr.s_next is not None]
    for i, tr in enumerate(batch):
        if tr.s_next is None:
            targets[i] = tr.r
    if not interior:
        return targets
    bases = np.stack([pool.base(tr.s_next) for _, tr in interior])
    aux = np.stack(
        [
            aux_vector(tr.s_next.orientation, action)
            for _, tr in interior
            for action in ACTION_ORDER
        ]
    )
    n_actions = len(ACTION_ORDER)

    def head_values(net: QNet) -> np.ndarray:
        (ts, tp), (hs, hp) = _split_at_concat(net)
        feats, _ = nn.forward(tp, ts, bases, mode="infer")
        feats = np.repeat(feats, n_actions, axis=0)
        out, _ = nn.forward(hp, hs, feats, mode="infer", aux=aux)
        return np.asarray(out, dtype=np.float64).reshape(len(interior), n_actions)

    if cfg.double_q:
        online_vals = head_values(online)
        best = np.argmax(online_vals, axis=1)
        target_vals = head_values(target)
        chosen = target_vals[np.arange(len(interior)), best]
    else:
        chosen = head_values(target).max(axis=1)
    for (i, tr), value in zip(interior, chosen):
        targets[i] = tr.r + cfg.gamma * value
    return targets


def _train_inputs(batch, pool: EncodingPool):
    """Stack network inputs for a sampled batch of either transition kind."""
    first = batch[0]
    if isinstance(first, TransitionG):
        rows = []
        for tr in batch:
            enc = pool.base(tr.s).copy()
            enc[tr.g.cell[0], tr.g.cell[1], CH_SUBGOAL] = 1
            rows.append(enc)
        return np.stack(rows), None
    x = np.stack([pool.base(tr.s) for tr in batch])
    aux = np.stack([aux_vector(tr.s.orientation, tr.a) for tr in batch])
    return x, aux


@dataclass
class TrainResult:
    """Trained network, optimizer state, and the thinned loss history."""

    net: QNet
    adam: nn.AdamState
    history: list[tuple[int, float, float]]


def train(
    transitions,
    cfg: TrainerConfig,
    seed: int,
    net: QNet | None = None,
    on_progress=None,
) -> TrainResult:
    """Offline prioritized Q-learning over a fixed transition set.

    Per iteration: sample a prioritized batch, compute targets against
    the frozen target net (double-Q selection through the online net),
    take one ADAM step on importance-weighted squared error, update the
    sampled priorities to |TD| + eps, and copy online to target every
    tau iterations. The history records (iteration, loss, mean |TD|)
    every log_every iterations plus the first and last.

    The transition kind picks the mode: TransitionG trains the subgoal
    scorer, TransitionA the action baseline.
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("training needs a nonempty dataset")
    subgoal_mode = isinstance(transitions[0], TransitionG)
    wanted = TransitionG if subgoal_mode else TransitionA
    if not all(isinstance(tr, wanted) for tr in transitions):
        raise ValueError("mixed transition kinds in one dataset")
    if net is None:
        net = new_dqp_net(seed) if subgoal_mode else new_dql_net(seed)
    target = net.clone()
    adam = nn.AdamState.for_params(net.params, lr=cfg.alpha)
    buffer = ReplayBuffer(transitions, cfg.alpha_per, cfg.eps_per, seed=seed)
    pool = EncodingPool()
    history: list[tuple[int, float, float]] = []
    span = max(1, cfg.iterations - 1)
    # frozen-target memo, valid until the next tau sync
    target_cache: dict = {}
    for it in range(1, cfg.iterations + 1):
        beta = cfg.beta_per_start + (cfg.beta_per_end - cfg.beta_per_start) * (
            (it - 1) / span
        )
        idx, batch, weights = buffer.sample(cfg.batch_size, beta)
        if not cfg.is_weights:
            weights = np.ones(len(batch))
        if subgoal_mode:
            targets = _targets_g(batch, net, target, cfg, pool, target_cache)
        else:
            targets = _targets_a(batch, net, target, cfg, pool)
        x, aux = _train_inputs(batch, pool)
        out, cache = nn.forward(net.params, net.specs, x, mode="train", aux=aux)
        q = np.asarray(out, dtype=np.float64).reshape(-1)
        td = q - targets
        # overflow here is reported through the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean(weights * td * td))
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss at iteration {it}: loss={loss!r}, "
                f"q range [{q.min()!r}, {q.max()!r}], "
                f"target range [{targets.min()!r}, {targets.max()!r}]"
            )
        dout = (2.0 / len(batch)) * weights * td
        grads, _ = nn.backward(cache, dout.astype(np.asarray(out).dtype)[:, None])
        nn.adam_step(adam, net.params, grads)
        buffer.update_priorities(idx, np.abs(td))
        if it % cfg.tau == 0:
            target = net.clone()
            target_cache.clear()
        if it == 1 or it == cfg.iterations or it % cfg.log_every == 0:
            row = (it, loss, float(np.mean(np.abs(td))))
            history.append(row)
            if on_progress is not None:
                on_progress(*row)
    return TrainResult(net=net, adam=adam, history=history)
