"""Synthetic closed-loop pick-and-place with tunable ambiguity dials.

A gridworld agent must pick up a target object and drop it on a receptacle.
Two controlled failure channels mirror the regimes adaptive inference is
meant to fix:

* Perceptual ambiguity — distractor features are interpolated toward the
  target's by ``distractor_similarity``, and candidate tokens carry noise
  that grows with their distance from the agent (walking closer
  disambiguates). The policy locates the target purely through attention:
  its perceived position is the task token's attention-weighted centroid
  over candidate cells, so a sharp attention row can lock onto the wrong
  object while a broadened one mixes toward the candidate centroid.
* Action multimodality — when an obstacle blocks the direct ray toward the
  goal, the expert switches to unit-step detour costing and several detours
  can be near-equally good. Greedy decoding then commits to a fixed choice
  and can oscillate in pocket geometries until the horizon; sampling escapes.

Everything is deterministic given (config seed, action sequence).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import attention
from .attention import EncodeResult, EncoderParams
from .decoding import LogitProvider, VocabLayout
from .rng import RngState

__all__ = [
    "ActionCommand",
    "EnvConfig",
    "EnvState",
    "ExpertPolicy",
    "GRIP_ACTIONS",
    "Observation",
    "SimEnv",
    "detokenize",
    "expert_logits",
    "export_scene",
    "make_layout",
    "perceive",
]

GRIP_ACTIONS = ("noop", "close", "open")

D_MODEL = 32
_CLASS_DIM = 24
_POS_DIM = 8
_CLS_SCALE = 12.0
_POS_SCALE = 0.8
# Class jitter lives in a ring at intermediate viewing distance: far
# objects give a stable coarse impression, touched ones a stable fine
# one, and the in-between zone — where the rival candidate sits while the
# agent inspects a cluster — is where recognition is least reliable.
_NOISE_PEAK_DIST = 2.5
_NOISE_WIDTH = 1.5
# A misleading impression is an aspect of the scene, not sensor flicker:
# each object's jitter is an AR(1) stream that decorrelates over a few
# steps, so re-checking immediately tends to confirm the same mistake and
# real insurance against it must come from stricter evidence, not a
# second glance.
_IMPRESSION_PERSIST = 0.75
# Structural attenuation of class features with distance: far objects are
# ranked by a weakened but unbiased signal, so distant preferences are
# usually right while near-field contests are decided by noisy texture.
_ATTEN_SCALE = 3.0
_ATTENUATION = 0.8
# Attention mass the landing cell must hold before closing the gripper
# outranks doing nothing. Proximity locks on the wrong object typically
# concentrate just past this bar at gamma=1 while a gamma=2 broadening
# keeps them below it, so the temperature decides whether a marginal lock
# commits now or defers for more evidence; true-target locks concentrate
# well past the bar (their runner-up is similarity-discounted) and commit
# at any temperature.
_COMMIT_THRESHOLD = 0.93
# Slope of the close logit in attention mass, in units of beta.
_COMMIT_SLOPE = 10.0
# Mass estimated for a landing cell far from where the observation was
# taken is discounted (quartic falloff with this scale): grasping requires
# near-range verification, so a long approach move cannot commit in the
# same step and every grasp is preceded by at least one close-range look.
_GRASP_SIGHT = 2.5
# Cost assigned to blocked unit moves, relative to the best admissible one.
_BLOCK_COST = 4.0
_STAY_PENALTY = 0.25
# Fraction of cells blocked at obstacle_density=1; calibrated so the default
# greedy success rate sits mid-range (measurable headroom both ways).
_OBSTACLE_FILL = 0.6
# Distractors spawn within this radius of the target: ambiguity then plays
# out inside the one-step displacement window, where it is visible to the
# decoder as near-tie bin logits rather than being clipped away.
_CLUSTER_RADIUS = 3.0
# The agent starts at least this far from the target, so every episode has
# a multi-step approach through the distance regime where observations are
# noisy and commitment decisions are live.
_MIN_APPROACH = 5.0
_PLACEMENT_RETRIES = 200


@dataclass(frozen=True)
class EnvConfig:
    """World geometry, ambiguity dials and the expert's logit sharpness."""

    grid_w: int = 8
    grid_h: int = 8
    n_distractors: int = 2
    distractor_similarity: float = 0.8
    obstacle_density: float = 0.3
    ambiguity_noise: float = 1.2
    horizon: int = 80
    bins_per_axis: int = 5
    seed: int = 0
    beta: float = 4.0

    def __post_init__(self):
        if self.grid_w < 2 or self.grid_h < 2:
            raise ValueError("grid must be at least 2x2")
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be >= 0")
        for name in ("distractor_similarity", "obstacle_density"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")
        if self.ambiguity_noise < 0.0:
            raise ValueError("ambiguity_noise must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        b = self.bins_per_axis
        if b < 3 or b % 2 == 0:
            raise ValueError("bins_per_axis must be odd and >= 3 (zero-motion bin)")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError("beta must be a positive finite real")
        n_obstacles = round(self.obstacle_density * self.grid_w * self.grid_h * _OBSTACLE_FILL)
        if 3 + self.n_distractors + n_obstacles > self.grid_w * self.grid_h:
            raise ValueError("grid too small for agent, objects and obstacles")

    @property
    def max_step(self) -> int:
        return (self.bins_per_axis - 1) // 2

    @property
    def n_obstacles(self) -> int:
        return round(self.obstacle_density * self.grid_w * self.grid_h * _OBSTACLE_FILL)


@dataclass(frozen=True)
class ActionCommand:
    dx: int
    dy: int
    grip: str

    def __post_init__(self):
        if self.grip not in GRIP_ACTIONS:
            raise ValueError(f"grip must be one of {GRIP_ACTIONS}, got {self.grip!r}")


@dataclass(frozen=True)
class EnvState:
    agent: tuple[int, int]
    gripper: str  # "open" | "closed" | "holding"
    holding: Optional[str]  # None | "target" | "distractor<i>"
    target_pos: Optional[tuple[int, int]]  # None while held
    distractor_pos: tuple[Optional[tuple[int, int]], ...]
    receptacle_pos: tuple[int, int]
    obstacles: frozenset
    step: int
    # Cell where a grasp is armed: closing is a two-tick motion, so a
    # pickup happens only on the second consecutive close at the same
    # cell; any other action (or a move) disarms the gripper.
    pending_grasp: Optional[tuple[int, int]] = None


@dataclass(frozen=True, eq=False)
class Observation:
    """Scene tokens: row 0 is the task token, one row per visible object."""

    tokens: np.ndarray               # (n, D_MODEL) float64
    candidate_rows: np.ndarray       # token rows of on-grid target/distractors
    candidate_cells: np.ndarray      # (n_candidates, 2) float64 cell coords
    target_row: int                  # row of the true target (diagnostics only)
    state: EnvState                  # kinematic view for the expert


def make_layout(bins_per_axis: int) -> VocabLayout:
    """Factorized action vocabulary: dx bins, dy bins, 3 grip tokens."""
    return VocabLayout.factorized([bins_per_axis, bins_per_axis, 3],
                                  names=("dx", "dy", "grip"))


def detokenize(tokens: Sequence[int], layout: VocabLayout, bins_per_axis: int) -> ActionCommand:
    """Map (dx-bin, dy-bin, grip) token indices to an ActionCommand."""
    if len(tokens) != 3:
        raise ValueError(f"expected 3 tokens, got {len(tokens)}")
    if len(layout.segments) != 3:
        raise ValueError("layout is not the 3-segment action layout")
    half = (bins_per_axis - 1) // 2
    vals = []
    for pos, tok in enumerate(tokens):
        seg = layout.segments[pos]
        if not (seg.start <= tok < seg.stop):
            raise ValueError(f"token {tok} outside segment {seg.name!r} [{seg.start},{seg.stop})")
        vals.append(int(tok) - seg.start)
    return ActionCommand(dx=vals[0] - half, dy=vals[1] - half, grip=GRIP_ACTIONS[vals[2]])


def _unit_pos_features(x: float, y: float, w: int, h: int) -> np.ndarray:
    return np.array([
        x / w - 0.5, y / h - 0.5,
        math.sin(2.0 * math.pi * x / w), math.cos(2.0 * math.pi * x / w),
        math.sin(2.0 * math.pi * y / h), math.cos(2.0 * math.pi * y / h),
        (x + y) / (w + h) - 0.5, 1.0,
    ])


def _normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("zero-norm feature vector")
    return v / n


def _ray_cells(start: tuple[int, int], disp: tuple[int, int]) -> list[tuple[int, int]]:
    """Integer waypoints swept by a straight move, excluding the start cell."""
    steps = max(abs(disp[0]), abs(disp[1]))
    out = []
    for s in range(1, steps + 1):
        out.append((start[0] + int(np.rint(s * disp[0] / steps)),
                    start[1] + int(np.rint(s * disp[1] / steps))))
    return out


class SimEnv:
    """Deterministic pick-and-place environment (one instance per episode)."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.horizon = cfg.horizon
        self.state: Optional[EnvState] = None
        self._protos: Optional[np.ndarray] = None
        self._obs_rng: Optional[RngState] = None
        self._impressions: dict = {}

    # -- layout ---------------------------------------------------------

    def reset(self) -> Observation:
        cfg = self.cfg
        rng = RngState(cfg.seed).spawn(1)
        n_cells = cfg.grid_w * cfg.grid_h
        n_reserved = 3 + cfg.n_distractors

        placed = None
        for _ in range(_PLACEMENT_RETRIES):
            perm = rng.permutation(n_cells)
            cells = [(int(i % cfg.grid_w), int(i // cfg.grid_w)) for i in perm]
            agent, target, receptacle = cells[0], cells[1], cells[2]
            if math.dist(agent, target) < _MIN_APPROACH:
                continue
            rest = cells[3:]
            near = [c for c in rest if math.dist(c, target) <= _CLUSTER_RADIUS]
            if len(near) < cfg.n_distractors:
                near = rest  # degenerate geometry: relax the cluster
            distractors = tuple(near[:cfg.n_distractors])
            pool = [c for c in rest if c not in distractors]
            obstacles = frozenset(pool[:cfg.n_obstacles])
            if self._connected(agent, target, obstacles) and \
                    self._connected(target, receptacle, obstacles):
                placed = (agent, target, receptacle, distractors, obstacles)
                break
        if placed is None:
            raise ValueError(
                f"infeasible placement after {_PLACEMENT_RETRIES} retries (seed {cfg.seed})"
            )
        agent, target, receptacle, distractors, obstacles = placed

        self.state = EnvState(agent=agent, gripper="open", holding=None,
                              target_pos=target, distractor_pos=distractors,
                              receptacle_pos=receptacle, obstacles=obstacles, step=0)
        self._protos = self._make_prototypes(rng)
        self._obs_rng = RngState(cfg.seed).spawn(2)
        self._impressions = {}
        return self._observe()

    def _connected(self, a, b, obstacles) -> bool:
        # 4-neighbour BFS over non-obstacle cells.
        if a in obstacles or b in obstacles:
            return False
        w, h = self.cfg.grid_w, self.cfg.grid_h
        seen = {a}
        frontier = [a]
        while frontier:
            nxt = []
            for (x, y) in frontier:
                if (x, y) == b:
                    return True
                for cx, cy in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    c = (cx, cy)
                    if 0 <= cx < w and 0 <= cy < h and c not in obstacles and c not in seen:
                        seen.add(c)
                        nxt.append(c)
            frontier = nxt
        return b in seen

    def _make_prototypes(self, rng: RngState) -> np.ndarray:
        # Unit prototypes; each distractor has cosine similarity to the
        # target EXACTLY equal to distractor_similarity (the base vector is
        # orthogonalized against the target before mixing).
        cfg = self.cfg
        n_protos = 3 + cfg.n_distractors  # target, receptacle, obstacle, distractor bases
        raw = rng.normals(n_protos * _CLASS_DIM).reshape(n_protos, _CLASS_DIM)
        protos = np.stack([_normalize(row) for row in raw])
        s = cfg.distractor_similarity
        for i in range(cfg.n_distractors):
            base = protos[3 + i] - (protos[3 + i] @ protos[0]) * protos[0]
            protos[3 + i] = s * protos[0] + math.sqrt(1.0 - s * s) * _normalize(base)
        return protos

    # -- observation ----------------------------------------------------

    def _observe(self) -> Observation:
        cfg, st = self.cfg, self.state
        protos = self._protos
        rows: list[np.ndarray] = []
        cand_rows: list[int] = []
        cand_cells: list[tuple[float, float]] = []
        target_row = -1

        task = np.zeros(D_MODEL)
        task[:_CLASS_DIM] = _CLS_SCALE * protos[0]
        rows.append(task)

        def obj_cell(kind: str, grid_pos):
            return st.agent if st.holding == kind else grid_pos

        def add_token(proto: np.ndarray, cell, noise_key: Optional[str]) -> int:
            vec = np.zeros(D_MODEL)
            vec[:_CLASS_DIM] = _CLS_SCALE * proto
            if noise_key is not None:
                d = math.dist(st.agent, cell)
                f = d / (d + _ATTEN_SCALE)
                amp = math.exp(-(((d - _NOISE_PEAK_DIST) / _NOISE_WIDTH) ** 2))
                fresh = self._obs_rng.normals(_CLASS_DIM) / math.sqrt(_CLASS_DIM)
                prev = self._impressions.get(noise_key)
                if prev is None:
                    eta = fresh
                else:
                    eta = (_IMPRESSION_PERSIST * prev +
                           math.sqrt(1.0 - _IMPRESSION_PERSIST ** 2) * fresh)
                self._impressions[noise_key] = eta
                vec[:_CLASS_DIM] *= 1.0 - _ATTENUATION * f
                vec[:_CLASS_DIM] += cfg.ambiguity_noise * amp * _CLS_SCALE * eta
            vec[_CLASS_DIM:] = _POS_SCALE * _unit_pos_features(cell[0], cell[1], cfg.grid_w, cfg.grid_h)
            rows.append(vec)
            return len(rows) - 1

        # Target and distractors; on-grid (not held) ones are candidates.
        t_cell = obj_cell("target", st.target_pos)
        target_row = add_token(protos[0], t_cell, "target")
        if st.holding != "target":
            cand_rows.append(target_row)
            cand_cells.append((float(t_cell[0]), float(t_cell[1])))
        for i, pos in enumerate(st.distractor_pos):
            kind = f"distractor{i}"
            cell = obj_cell(kind, pos)
            r = add_token(protos[3 + i], cell, kind)
            if st.holding != kind:
                cand_rows.append(r)
                cand_cells.append((float(cell[0]), float(cell[1])))
        add_token(protos[1], st.receptacle_pos, None)
        for cell in sorted(st.obstacles):
            add_token(protos[2], cell, None)

        return Observation(
            tokens=np.ascontiguousarray(np.stack(rows)),
            candidate_rows=np.asarray(cand_rows, dtype=np.int64),
            candidate_cells=np.asarray(cand_cells, dtype=np.float64).reshape(len(cand_cells), 2),
            target_row=target_row,
            state=st,
        )

    # -- dynamics -------------------------------------------------------

    def _move(self, agent: tuple[int, int], dx: int, dy: int) -> tuple[int, int]:
        cfg = self.cfg
        tx = min(max(agent[0] + dx, 0), cfg.grid_w - 1)
        ty = min(max(agent[1] + dy, 0), cfg.grid_h - 1)
        disp = (tx - agent[0], ty - agent[1])
        if disp == (0, 0):
            return agent
        for cell in _ray_cells(agent, disp):
            if cell in self.state.obstacles:
                return agent  # blocked: position unchanged
        return (tx, ty)

    def step(self, action: ActionCommand) -> tuple[Observation, bool, bool, str]:
        """Apply one action; returns (observation, done, success, reason)."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        cfg, st = self.cfg, self.state
        m = cfg.max_step
        if abs(action.dx) > m or abs(action.dy) > m:
            raise ValueError(f"displacement {(action.dx, action.dy)} exceeds bin range +-{m}")

        agent = self._move(st.agent, action.dx, action.dy)
        gripper, holding = st.gripper, st.holding
        target_pos, dist_pos = st.target_pos, list(st.distractor_pos)
        done = False
        success = False
        reason = ""

        pending = None
        if action.grip == "close" and holding is None:
            if st.pending_grasp != agent:
                # First tick of the two-tick close: arm the grasp here; it
                # fires only if the next action is a close at this cell.
                pending, gripper = agent, "closed"
            elif target_pos == agent:
                holding, target_pos, gripper = "target", None, "holding"
            else:
                picked = None
                for i, pos in enumerate(dist_pos):
                    if pos == agent:
                        picked = i
                        break
                if picked is not None:
                    holding, gripper = f"distractor{picked}", "holding"
                    dist_pos[picked] = None
                else:
                    gripper = "closed"
        elif action.grip == "open":
            if holding is not None:
                if agent == st.receptacle_pos:
                    done = True
                    success = holding == "target"
                    reason = "success" if success else "wrong_drop"
                if holding == "target":
                    target_pos = agent
                else:
                    dist_pos[int(holding[len("distractor"):])] = agent
                holding = None
            gripper = "open"

        step_n = st.step + 1
        if not done and step_n >= cfg.horizon:
            done, success, reason = True, False, "timeout"

        self.state = EnvState(agent=agent, gripper=gripper, holding=holding,
                              target_pos=target_pos, distractor_pos=tuple(dist_pos),
                              receptacle_pos=st.receptacle_pos, obstacles=st.obstacles,
                              step=step_n, pending_grasp=pending)
        return self._observe(), done, success, reason


# -- perception ---------------------------------------------------------


@dataclass(frozen=True)
class Percept:
    """Task-token attention over candidate object cells.

    ``weights`` is the head-averaged attention distribution over
    ``cells`` (one row per candidate), ``point`` its centroid. The
    centroid steers movement; commitment decisions (closing the gripper)
    read the concentration of the distribution instead, so a broadened
    attention row withholds commitment while a sharpened one accelerates
    it.
    """

    point: tuple[float, float]
    weights: np.ndarray
    cells: np.ndarray

    def mass_at(self, cell: tuple[int, int]) -> float:
        """Total attention weight on candidates occupying ``cell``."""
        hit = np.all(np.abs(self.cells - np.asarray(cell, dtype=float)) < 0.5, axis=1)
        return float(self.weights[hit].sum())


def attend(observation: Observation, encoder: EncoderParams, gamma: float,
           target: str = "encoder_unimodal", enc: Optional[EncodeResult] = None) -> Percept:
    """Attention distribution of the task token over candidate cells.

    Weights come from the final-layer attention of the task token over the
    candidate rows at temperature gamma. For the unimodal target the encoder
    itself runs at gamma; for the crossmodal target it runs at gamma=1 and
    gamma scales only this readout. Pass a precomputed ``enc`` to reuse an
    encoder pass already performed at the appropriate temperature.
    """
    rows = observation.candidate_rows
    if rows.size == 0:
        raise ValueError("no candidate object cells to perceive")
    if enc is None:
        enc_gamma = gamma if target == "encoder_unimodal" else 1.0
        enc = attention.encode_with_readout(observation.tokens, encoder, enc_gamma)
    cells = observation.candidate_cells
    n_heads = enc.task_query.shape[0]
    weights = np.zeros(len(rows))
    for h in range(n_heads):
        q = enc.task_query[h:h + 1]
        k = enc.keys[h][rows]
        weights += attention.attention_weights(q, k, gamma)[0]
    weights /= n_heads
    point = weights @ cells
    return Percept(point=(float(point[0]), float(point[1])), weights=weights, cells=cells)


def perceive(observation: Observation, encoder: EncoderParams, gamma: float,
             target: str = "encoder_unimodal", enc: Optional[EncodeResult] = None) -> tuple[float, float]:
    """Attention-weighted centroid of candidate cells (see :func:`attend`)."""
    return attend(observation, encoder, gamma, target=target, enc=enc).point


# -- expert policy ------------------------------------------------------


def _base_axis_logits(err: float, half: int, beta: float) -> np.ndarray:
    # The expert commits to one intended displacement per axis; a goal
    # sitting between two displacements is resolved by rounding, so open
    # ground is walked decisively and near-tie movement choices arise only
    # from detours around obstacles.
    e = int(np.rint(min(max(err, -float(half)), float(half))))
    return np.array([-beta * abs(d - e) for d in range(-half, half + 1)],
                    dtype=float)


def expert_logits(percept: Optional[Percept], state: EnvState,
                  cfg: EnvConfig) -> LogitProvider:
    """Procedural expert emitting per-position logits for (dx, dy, grip).

    Open ground: logits fall off linearly (slope beta) with distance from
    the straight-line move toward the goal — the perceived centroid when
    empty-handed, the receptacle when holding. When the direct ray is
    blocked by an obstacle, the expert switches to unit-step detour
    costing, so near-tie movement choices arise exactly where several
    detours are comparably good. The grip position conditions on the
    already-decoded displacement prefix: it anticipates the landing cell;
    closing there is scored by the attention mass on that cell (commitment
    only when perception has concentrated), opening by proximity to the
    receptacle.
    """
    half = cfg.max_step
    beta = cfg.beta
    layout = make_layout(cfg.bins_per_axis)
    agent = state.agent
    goal: tuple[float, float]
    if state.holding is not None:
        goal = (float(state.receptacle_pos[0]), float(state.receptacle_pos[1]))
    else:
        if percept is None:
            raise ValueError("a percept is required when not holding")
        goal = (float(percept.point[0]), float(percept.point[1]))

    ex, ey = goal[0] - agent[0], goal[1] - agent[1]
    intended = (int(np.rint(min(max(ex, -half), half))),
                int(np.rint(min(max(ey, -half), half))))

    def in_grid(c):
        return 0 <= c[0] < cfg.grid_w and 0 <= c[1] < cfg.grid_h

    def blocked_ray(disp) -> bool:
        for cell in _ray_cells(agent, disp):
            if not in_grid(cell) or cell in state.obstacles:
                return True
        return False

    detour = intended != (0, 0) and blocked_ray(intended)

    unit_cost: dict[tuple[int, int], float] = {}
    if detour:
        for vx in (-1, 0, 1):
            for vy in (-1, 0, 1):
                land = (agent[0] + vx, agent[1] + vy)
                if (vx, vy) == (0, 0):
                    unit_cost[(vx, vy)] = math.dist(agent, goal) + _STAY_PENALTY
                elif in_grid(land) and land not in state.obstacles:
                    unit_cost[(vx, vy)] = math.dist(land, goal)
                else:
                    unit_cost[(vx, vy)] = math.inf
        c_min = min(unit_cost.values())
        for v, c in unit_cost.items():
            if not math.isfinite(c):
                unit_cost[v] = c_min + _BLOCK_COST

    def detour_axis_logits(axis: int, fixed: Optional[int]) -> np.ndarray:
        c_best = min(unit_cost.values()) if fixed is None else \
            min(unit_cost[(fixed, d)] for d in (-1, 0, 1))
        out = np.empty(cfg.bins_per_axis)
        for i, d in enumerate(range(-half, half + 1)):
            du = min(max(d, -1), 1)
            if fixed is None:
                c = min(unit_cost[(du, vy)] for vy in (-1, 0, 1))
            else:
                c = unit_cost[(fixed, du)]
            out[i] = -beta * (c - c_best + max(abs(d) - 1, 0))
        return out

    def landing_for(dx: int, dy: int) -> tuple[int, int]:
        tx = min(max(agent[0] + dx, 0), cfg.grid_w - 1)
        ty = min(max(agent[1] + dy, 0), cfg.grid_h - 1)
        disp = (tx - agent[0], ty - agent[1])
        if disp == (0, 0):
            return agent
        for cell in _ray_cells(agent, disp):
            if cell in state.obstacles:
                return agent
        return (tx, ty)

    def grip_logits(dx: int, dy: int) -> np.ndarray:
        land = landing_for(dx, dy)
        noop, close, open_ = 0.0, -2.0 * beta, -2.0 * beta
        if state.holding is None:
            # Close only where perception has concentrated: the logit
            # crosses noop when the landing cell holds _COMMIT_THRESHOLD of
            # the attention mass, so a broadened attention row withholds
            # the grasp and a sharpened one commits sooner. Mass observed
            # from far away is discounted — commitment needs a close look.
            d_view = math.dist(agent, land)
            m_eff = percept.mass_at(land) / (1.0 + (d_view / _GRASP_SIGHT) ** 4)
            close = _COMMIT_SLOPE * beta * (m_eff - _COMMIT_THRESHOLD)
        else:
            open_ = beta * (1.0 - 2.0 * math.dist(land, state.receptacle_pos))
        return np.array([noop, close, open_])

    def provider(k: int, prefix: tuple) -> np.ndarray:
        full = np.zeros(layout.vocab_size)
        seg = layout.segments[k]
        if k == 0:
            vals = detour_axis_logits(0, None) if detour else _base_axis_logits(ex, half, beta)
        elif k == 1:
            if detour:
                dx_u = min(max(int(prefix[0]) - seg_offset_dx(), -1), 1)
                vals = detour_axis_logits(1, dx_u)
            else:
                vals = _base_axis_logits(ey, half, beta)
        elif k == 2:
            dx = int(prefix[0]) - layout.segments[0].start - half
            dy = int(prefix[1]) - layout.segments[1].start - half
            vals = grip_logits(dx, dy)
        else:
            raise ValueError(f"position {k} out of range for 3-token actions")
        full[seg.start:seg.stop] = vals
        return full

    def seg_offset_dx() -> int:
        return layout.segments[0].start + half

    return provider


class ExpertPolicy:
    """Adapter exposing the simworld expert through the controller's
    policy protocol: perception via the encoder's task-token attention,
    logits from the procedural expert, actions via detokenize."""

    def __init__(self, cfg: EnvConfig, encoder: EncoderParams):
        if encoder.d_model != D_MODEL:
            raise ValueError(f"encoder d_model must be {D_MODEL}")
        self.cfg = cfg
        self.encoder = encoder
        self.layout = make_layout(cfg.bins_per_axis)
        self.n_tokens = 3

    def logit_provider(self, observation: Observation, enc: EncodeResult,
                       gamma: float, target: str) -> LogitProvider:
        st = observation.state
        percept = None
        if st.holding is None:
            percept = attend(observation, self.encoder, gamma, target=target, enc=enc)
        return expert_logits(percept, st, self.cfg)

    def to_action(self, tokens: Sequence[int]) -> ActionCommand:
        return detokenize(tokens, self.layout, self.cfg.bins_per_axis)


# -- scene export -------------------------------------------------------


def export_scene(env: SimEnv) -> dict:
    """JSON-able scene layout for debugging replay."""
    if env.state is None:
        raise ValueError("environment not reset")
    st = env.state
    cfg = env.cfg
    return {
        "grid": [cfg.grid_w, cfg.grid_h],
        "seed": cfg.seed,
        "step": st.step,
        "agent": list(st.agent),
        "gripper": st.gripper,
        "holding": st.holding,
        "pending_grasp": list(st.pending_grasp) if st.pending_grasp is not None else None,
        "target": list(st.target_pos) if st.target_pos is not None else None,
        "distractors": [list(p) if p is not None else None for p in st.distractor_pos],
        "receptacle": list(st.receptacle_pos),
        "obstacles": sorted(list(c) for c in st.obstacles),
    }


def scene_to_json(env: SimEnv) -> str:
    return json.dumps(export_scene(env), indent=2, sort_keys=True)
