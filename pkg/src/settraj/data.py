"""Trajectory datasets: schema and CSV I/O, coordinate normalization,
deterministic splits, a synthetic possession-game generator with per-frame
state labels, and the constant-velocity extrapolation baseline.

CSV schema (one file holds a set of sequences):

    seq_id,frame,agent_id,agent_type,x,y,valid,state

``state`` is empty when unlabeled; rows with ``valid=0`` may carry empty
position cells and load as NaN. Positions are written with 6 decimal places.
A sidecar ``<file>.meta.json`` records pitch dimensions and frame rate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .masking import NanLike, ObservationMask, nan_entries

STATE_NAMES = ("pass", "possession", "uncontrolled", "out_of_play")
PASS, POSSESSION, UNCONTROLLED, OUT_OF_PLAY = range(4)

BALL, OFFENSE, DEFENSE = 0, 1, 2


@dataclass
class PitchSpec:
    """Playing-field rectangle [0, length] x [0, width]."""

    length: float = 105.0
    width: float = 68.0
    unit: str = "meters"

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ConfigError("pitch dimensions must be positive")
        if self.unit not in ("meters", "feet"):
            raise ConfigError(f"unknown unit {self.unit!r}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.length / 2.0, self.width / 2.0])


@dataclass
class TrajectorySequence:
    """One multi-agent tracking sequence in field units.

    ``validity`` marks genuinely absent observations (0 = absent) and is the
    source of the NaN mask; positions must be finite wherever validity is 1.
    """

    seq_id: int
    positions: np.ndarray          # [T x N x 2]
    agent_types: np.ndarray        # [N], values in {0 ball, 1 off, 2 def}
    states: Optional[np.ndarray]   # [T] in {0..3}, or None
    validity: np.ndarray = None    # [T x N] binary
    frame_rate_hz: float = 6.25
    pitch: PitchSpec = field(default_factory=PitchSpec)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise DataError(f"positions must be [T x N x 2], "
                            f"got {self.positions.shape}")
        self.agent_types = np.asarray(self.agent_types, dtype=np.int64)
        if self.agent_types.shape != (self.N,):
            raise DataError("agent_types length must match agent count")
        if not np.isin(self.agent_types, (BALL, OFFENSE, DEFENSE)).all():
            raise DataError("agent types must be 0 (ball), 1 (off) or 2 (def)")
        if (self.agent_types == BALL).sum() > 1:
            raise DataError("at most one ball agent per sequence")
        if self.validity is None:
            self.validity = np.ones((self.T, self.N), dtype=np.int8)
        self.validity = np.asarray(self.validity).astype(np.int8)
        if self.validity.shape != (self.T, self.N):
            raise DataError("validity shape must be [T x N]")
        if not np.isfinite(self.positions[self.validity == 1]).all():
            raise DataError("positions must be finite where validity=1")
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=np.int64)
            if self.states.shape != (self.T,):
                raise DataError("states length must match frame count")
            if not np.isin(self.states, range(len(STATE_NAMES))).all():
                raise DataError("states must lie in {0, 1, 2, 3}")

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def ball_index(self) -> Optional[int]:
        idx = np.flatnonzero(self.agent_types == BALL)
        return int(idx[0]) if idx.size else None

    def nan_mask(self) -> np.ndarray:
        return (self.validity == 0).astype(np.int8)

    def inputs(self, channels: int = 3, normalized: bool = True) -> np.ndarray:
        """Model inputs [T x N x C]: normalized (x, y) plus, with C=3, the
        raw agent-type channel."""
        xy = normalize(self.positions, self.pitch) if normalized \
            else self.positions.copy()
        xy = np.where(np.isfinite(xy), xy, 0.0)
        if channels == 2:
            return xy
        if channels == 3:
            types = np.broadcast_to(self.agent_types.astype(np.float64),
                                    (self.T, self.N))[..., None]
            return np.concatenate([xy, types], axis=2)
        raise ConfigError("channels must be 2 or 3")

    def one_hot_states(self, n_classes: int) -> np.ndarray:
        if self.states is None:
            raise DataError(f"sequence {self.seq_id} has no state labels")
        one_hot = np.zeros((self.T, n_classes), dtype=np.float64)
        one_hot[np.arange(self.T), self.states] = 1.0
        return one_hot


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize(positions: np.ndarray, pitch: PitchSpec) -> np.ndarray:
    """Affine map of field coordinates into [-1, 1]^2 (center to origin)."""
    half = np.array([pitch.length / 2.0, pitch.width / 2.0])
    return (np.asarray(positions, dtype=np.float64) - half) / half


def denormalize(positions: np.ndarray, pitch: PitchSpec) -> np.ndarray:
    """Exact inverse of :func:`normalize`."""
    half = np.array([pitch.length / 2.0, pitch.width / 2.0])
    return np.asarray(positions, dtype=np.float64) * half + half


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_HEADER = ["seq_id", "frame", "agent_id", "agent_type", "x", "y", "valid",
           "state"]


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def save_sequences(sequences: Sequence[TrajectorySequence], path) -> None:
    """Write sequences to one CSV file (plus a metadata sidecar)."""
    if not sequences:
        raise DataError("refusing to save an empty sequence list")
    rate = sequences[0].frame_rate_hz
    pitch = sequences[0].pitch
    for s in sequences:
        if s.frame_rate_hz != rate or s.pitch != pitch:
            raise DataError("all sequences in one file must share frame rate "
                            "and pitch")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for s in sequences:
            for t in range(s.T):
                state = "" if s.states is None else str(int(s.states[t]))
                for n in range(s.N):
                    valid = int(s.validity[t, n])
                    if np.isfinite(s.positions[t, n]).all():
                        x, y = (f"{s.positions[t, n, 0]:.6f}",
                                f"{s.positions[t, n, 1]:.6f}")
                    else:
                        x, y = "", ""
                    writer.writerow([s.seq_id, t, n, int(s.agent_types[n]),
                                     x, y, valid, state])
    meta = {"frame_rate_hz": rate,
            "pitch": {"length": pitch.length, "width": pitch.width,
                      "unit": pitch.unit}}
    _meta_path(path).write_text(json.dumps(meta, indent=2))


def load_sequences(path) -> list[TrajectorySequence]:
    """Parse a sequence CSV, reporting violations with their line number.

    Agents are reordered at load time to the standard layout: ball first,
    then offense, then defense, each sorted by original agent id; ids are
    remapped to 0..N-1 accordingly.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    meta_file = _meta_path(path)
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        pitch = PitchSpec(**meta["pitch"])
        rate = float(meta["frame_rate_hz"])
    else:
        pitch, rate = PitchSpec(), 6.25

    rows_by_seq: dict = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: line 1: empty file") from None
        if header != _HEADER:
            raise DataError(f"{path}: line 1: expected header "
                            f"{','.join(_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_HEADER):
                raise DataError(f"{path}: line {lineno}: expected "
                                f"{len(_HEADER)} fields, got {len(row)}")
            rec = _parse_row(row, path, lineno)
            rows_by_seq.setdefault(rec["seq_id"], []).append((lineno, rec))

    return [_assemble(seq_id, rows, path, pitch, rate)
            for seq_id, rows in rows_by_seq.items()]


def _parse_row(row, path, lineno) -> dict:
    def fail(msg):
        raise DataError(f"{path}: line {lineno}: {msg}")

    seq_id, frame, agent_id, agent_type, x, y, valid, state = row
    try:
        rec = {"seq_id": int(seq_id), "frame": int(frame),
               "agent_id": int(agent_id), "agent_type": int(agent_type)}
    except ValueError:
        fail("seq_id, frame, agent_id and agent_type must be integers")
    if rec["agent_type"] not in (BALL, OFFENSE, DEFENSE):
        fail(f"agent_type {agent_type} not in {{0, 1, 2}}")
    if valid not in ("0", "1"):
        fail(f"valid must be 0 or 1, got {valid!r}")
    rec["valid"] = int(valid)
    if (x == "") != (y == ""):
        fail("x and y must both be present or both empty")
    if x == "":
        if rec["valid"]:
            fail("valid rows need position values")
        rec["x"], rec["y"] = np.nan, np.nan
    else:
        try:
            rec["x"], rec["y"] = float(x), float(y)
        except ValueError:
            fail(f"positions must be numeric, got ({x!r}, {y!r})")
        if rec["valid"] and not (np.isfinite(rec["x"]) and np.isfinite(rec["y"])):
            fail("valid rows need finite positions")
    if state == "":
        rec["state"] = None
    else:
        try:
            rec["state"] = int(state)
        except ValueError:
            fail(f"state must be an integer or empty, got {state!r}")
        if rec["state"] not in range(len(STATE_NAMES)):
            fail(f"state {state} not in 0..{len(STATE_NAMES) - 1}")
    return rec


def _assemble(seq_id, rows, path, pitch, rate) -> TrajectorySequence:
    frames = sorted({r["frame"] for _, r in rows})
    agents = sorted({r["agent_id"] for _, r in rows})
    T, N = len(frames), len(agents)
    if frames != list(range(T)):
        raise DataError(f"{path}: sequence {seq_id}: frames must cover "
                        f"0..T-1, got {frames[:5]}...")
    if agents != list(range(N)):
        raise DataError(f"{path}: sequence {seq_id}: agent ids must cover "
                        f"0..N-1")
    positions = np.full((T, N, 2), np.nan)
    validity = np.zeros((T, N), dtype=np.int8)
    types = np.full(N, -1, dtype=np.int64)
    states = np.full(T, -1, dtype=np.int64)
    seen = np.zeros((T, N), dtype=bool)
    any_state = False
    for lineno, r in rows:
        t, n = r["frame"], r["agent_id"]
        if seen[t, n]:
            raise DataError(f"{path}: line {lineno}: duplicate entry for "
                            f"frame {t}, agent {n}")
        seen[t, n] = True
        positions[t, n] = (r["x"], r["y"])
        validity[t, n] = r["valid"]
        if types[n] == -1:
            types[n] = r["agent_type"]
        elif types[n] != r["agent_type"]:
            raise DataError(f"{path}: line {lineno}: agent {n} changes type")
        if r["state"] is not None:
            any_state = True
            if states[t] == -1:
                states[t] = r["state"]
            elif states[t] != r["state"]:
                raise DataError(f"{path}: line {lineno}: conflicting state "
                                f"labels at frame {t}")
    if not seen.all():
        t, n = np.argwhere(~seen)[0]
        raise DataError(f"{path}: sequence {seq_id}: missing entry for "
                        f"frame {t}, agent {n}")
    if any_state and (states == -1).any():
        t = int(np.flatnonzero(states == -1)[0])
        raise DataError(f"{path}: sequence {seq_id}: frame {t} lacks a state "
                        f"label while others have one")

    order = sorted(range(N), key=lambda n: (types[n], n))
    return TrajectorySequence(
        seq_id=seq_id,
        positions=positions[:, order, :],
        agent_types=types[order],
        states=states if any_state else None,
        validity=validity[:, order],
        frame_rate_hz=rate,
        pitch=pitch,
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int


def split_dataset(sequences: Sequence, ratios, seed: int,
                  group_keys: Optional[Sequence] = None) -> DatasetSplit:
    """Deterministic shuffled train/val/test partition by index.

    With ``group_keys`` (one hashable per sequence, e.g. a match id), whole
    groups are assigned to a single split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or \
            abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be 3 nonnegative values summing to 1, "
                          f"got {ratios}")
    n = len(sequences)
    rng = np.random.default_rng(seed)
    if group_keys is None:
        order = rng.permutation(n)
        b1 = int(round(ratios[0] * n))
        b2 = b1 + int(round(ratios[1] * n))
        return DatasetSplit(train=sorted(order[:b1].tolist()),
                            val=sorted(order[b1:b2].tolist()),
                            test=sorted(order[b2:].tolist()), seed=seed)

    if len(group_keys) != n:
        raise ConfigError("group_keys length must match sequence count")
    by_group: dict = {}
    for i, key in enumerate(group_keys):
        by_group.setdefault(key, []).append(i)
    keys = sorted(by_group)
    rng.shuffle(keys)
    quota = [ratios[0] * n, (ratios[0] + ratios[1]) * n]
    splits = ([], [], [])
    assigned = 0
    for key in keys:
        members = by_group[key]
        if assigned < quota[0]:
            splits[0].extend(members)
        elif assigned < quota[1]:
            splits[1].extend(members)
        else:
            splits[2].extend(members)
        assigned += len(members)
    return DatasetSplit(train=sorted(splits[0]), val=sorted(splits[1]),
                        test=sorted(splits[2]), seed=seed)


# ---------------------------------------------------------------------------
# synthetic possession game
# ---------------------------------------------------------------------------

_PASS_SPEED = 20.0       # m/s along a pass, before frame quantization
_MAX_PLAYER_AXIS_SPEED = 5.5  # m/s per-axis cap on player motion
_MARGIN = 2.0            # players keep this distance from the boundary


def generate_possession_game(n_sequences: int, T: int, n_per_team: int,
                             frame_rate: float = 6.25, rng_seed: int = 0,
                             pitch: Optional[PitchSpec] = None
                             ) -> list[TrajectorySequence]:
    """Synthesize ball-possession sequences with per-frame state labels.

    Players follow smooth bounded oscillations around home spots. The ball
    alternates possession segments (carried by a player), ballistic passes to
    a teammate (always faster than the carrier), occasional decaying loose
    balls, and boundary exits; frames with the ball outside the pitch are
    labeled out-of-play. Every sequence contains at least one possession and
    one pass segment, which needs ``T >= 8``. Deterministic per seed.
    """
    if n_per_team < 2:
        raise ConfigError("need at least 2 players per team")
    if T < 8:
        raise ConfigError("possession script needs T >= 8 frames")
    if frame_rate < 2.5:
        raise ConfigError("frame rate below 2.5 Hz breaks the pass-speed "
                          "construction")
    pitch = pitch or PitchSpec()
    sequences = []
    for i in range(n_sequences):
        rng = np.random.default_rng([int(rng_seed), i])
        seq = _one_possession_game(i, rng, T, n_per_team, frame_rate, pitch)
        check_sequence_labels(seq)  # construction guarantee, verified
        sequences.append(seq)
    return sequences


def _player_paths(rng, T, n_players, dt, pitch) -> np.ndarray:
    """Smooth bounded trajectories around a shared drifting play focus.

    Every player tracks one slow team-level focus path (scaled by a personal
    pull factor) plus a small personal oscillation around a home spot, so the
    squad flows coherently with the play. Per-axis frequency and amplitude
    caps keep every player's vector speed safely below the pass speed."""
    lo = np.array([_MARGIN, _MARGIN])
    hi = np.array([pitch.length - _MARGIN, pitch.width - _MARGIN])
    span = np.array([pitch.length, pitch.width]) - 2 * _MARGIN
    t = np.arange(T)[:, None, None] * dt  # [T x 1 x 1]

    # shared focus: large-amplitude, very low frequency drift about center
    focus_amp = np.minimum(0.25 * span, 12.0)
    focus_omega = rng.uniform(0.03, 0.08, size=2)
    focus_phase = rng.uniform(0.0, 2 * np.pi, size=2)
    focus = focus_amp * np.sin(focus_omega * t + focus_phase)  # [T x 1 x 2]
    pull = rng.uniform(0.4, 0.7, size=(n_players, 1))

    # personal oscillation: small amplitude but fast, so linear extrapolation
    # rides a transient velocity far off target while the true path stays in
    # a tight band; (focus + personal) per-axis speed stays well below the
    # pass speed
    amp_max = min(1.2, float(span.min()) / 8.0)
    if amp_max <= 0.2:
        raise ConfigError("pitch too small for the possession generator")
    amp = rng.uniform(0.5 * amp_max, amp_max, size=(n_players, 2))
    personal_axis_speed = _MAX_PLAYER_AXIS_SPEED - focus_amp.max() * 0.08
    omega = rng.uniform(2.0, np.minimum(4.5, personal_axis_speed / amp))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_players, 2))
    slack = pull * focus_amp + amp
    home = rng.uniform(lo + slack, hi - slack)

    paths = home + pull * focus + amp * np.sin(omega * t + phase)
    return np.clip(paths, lo, hi)


def _one_possession_game(seq_id, rng, T, n_per_team, frame_rate,
                         pitch) -> TrajectorySequence:
    dt = 1.0 / frame_rate
    n_players = 2 * n_per_team
    players = _player_paths(rng, T, n_players, dt, pitch)
    types = np.array([BALL] + [OFFENSE] * n_per_team + [DEFENSE] * n_per_team)
    teams = {OFFENSE: list(range(0, n_per_team)),
             DEFENSE: list(range(n_per_team, n_players))}

    ball = np.zeros((T, 2))
    states = np.zeros(T, dtype=np.int64)
    lo = np.array([_MARGIN, _MARGIN])
    hi = np.array([pitch.length - _MARGIN, pitch.width - _MARGIN])
    center = pitch.center
    # Minimum pass length such that after frame quantization the ball always
    # outpaces any player (vector player speed is capped well below this).
    min_pass = 1.1 * _PASS_SPEED * dt

    def player_team(p):
        return OFFENSE if p < n_per_team else DEFENSE

    def hold_offset(p, t):
        v = players[t, p] - players[t - 1, p] if t > 0 else np.array([1.0, 0.0])
        nv = np.linalg.norm(v)
        u = v / nv if nv > 1e-9 else np.array([1.0, 0.0])
        return np.clip(players[t, p] + 0.25 * u, lo, hi)

    holder = int(rng.choice(teams[OFFENSE]))
    t = 0
    first_possess = int(min(rng.integers(4, 9), T - 2))
    forced_pass_done = False
    segment = ("possess", first_possess)
    while t < T:
        kind, dur = segment
        if kind == "possess":
            end = min(t + dur, T)
            for k in range(t, end):
                ball[k] = hold_offset(holder, k)
                states[k] = POSSESSION
            t = end
            if t >= T:
                break
            if not forced_pass_done:
                choice = "pass"
                forced_pass_done = True
            else:
                choice = rng.choice(["pass", "loose", "out"],
                                    p=[0.72, 0.16, 0.12])
            if choice == "pass":
                segment = ("pass", 0)
            elif choice == "loose":
                segment = ("loose", int(rng.integers(3, 7)))
            else:
                segment = ("out", int(rng.integers(3, 6)))
        elif kind == "pass":
            mates = [p for p in teams[player_team(holder)] if p != holder]
            gaps = np.array([np.linalg.norm(players[t - 1, p] - ball[t - 1])
                             for p in mates])
            weights = 1.0 / (gaps + 8.0)
            receiver = int(rng.choice(mates, p=weights / weights.sum()))
            start = ball[t - 1]
            aim = players[min(t + 3, T - 1), receiver]
            delta = aim - start
            length = np.linalg.norm(delta)
            if length < 1e-9:
                delta, length = center - start, np.linalg.norm(center - start)
            u = delta / length
            length = max(length, min_pass)
            target = np.clip(start + u * length, lo, hi)
            delta = target - start
            length = np.linalg.norm(delta)
            if length < min_pass:  # clamped into a corner: re-aim inward
                u = (center - start) / np.linalg.norm(center - start)
                target = start + u * min_pass
                delta = target - start
                length = min_pass
            k = max(1, int(round(length / (_PASS_SPEED * dt))))
            k = min(k, T - t)
            step = delta / k
            for j in range(k):
                ball[t + j] = start + step * (j + 1)
                states[t + j] = PASS
            t += k
            holder = receiver
            segment = ("possess", int(rng.integers(5, 13)))
        elif kind == "loose":
            start = ball[t - 1]
            target_p = int(rng.choice(n_players))
            target = players[min(t + dur - 1, T - 1), target_p]
            q = 0.8
            total = (1.0 - q ** dur) / (1.0 - q)
            v0 = (target - start) / total
            for j in range(min(dur, T - t)):
                ball[t + j] = start + v0 * (1.0 - q ** (j + 1)) / (1.0 - q)
                states[t + j] = UNCONTROLLED
            t += min(dur, T - t)
            holder = target_p
            segment = ("possess", int(rng.integers(5, 13)))
        else:  # out: ball sails over the nearest boundary, then is thrown in
            start = ball[t - 1]
            sides = np.array([start[0], pitch.length - start[0],
                              start[1], pitch.width - start[1]])
            side = int(np.argmin(sides))
            u = np.array([[-1.0, 0.0], [1.0, 0.0],
                          [0.0, -1.0], [0.0, 1.0]])[side]
            travel = sides[side] + 4.0
            k_total = max(2, int(round(travel / (_PASS_SPEED * dt))))
            step = u * travel / k_total
            frames = min(k_total + dur, T - t)
            pos = start.copy()
            for j in range(frames):
                if j < k_total:
                    pos = start + step * (j + 1)
                ball[t + j] = pos
                inside = (0.0 <= pos[0] <= pitch.length
                          and 0.0 <= pos[1] <= pitch.width)
                states[t + j] = UNCONTROLLED if inside else OUT_OF_PLAY
            t += frames
            if t < T:
                reentry = np.clip(pos, lo, hi)
                dists = np.linalg.norm(players[t] - reentry, axis=1)
                holder = int(np.argmin(dists))
                segment = ("possess", int(rng.integers(5, 13)))

    positions = np.concatenate([ball[:, None, :], players], axis=1)
    return TrajectorySequence(seq_id=seq_id, positions=positions,
                              agent_types=types, states=states,
                              frame_rate_hz=frame_rate, pitch=pitch)


def generate_constant_velocity(n_sequences: int, T: int, n_per_team: int,
                               frame_rate: float = 6.25, rng_seed: int = 0,
                               pitch: Optional[PitchSpec] = None
                               ) -> list[TrajectorySequence]:
    """Unlabeled sequences where every agent (ball included) moves with a
    constant per-frame velocity and stays on the pitch; the null fixture on
    which the velocity baseline is exact."""
    pitch = pitch or PitchSpec()
    n_agents = 2 * n_per_team + 1
    types = np.array([BALL] + [OFFENSE] * n_per_team + [DEFENSE] * n_per_team)
    out = []
    for i in range(n_sequences):
        rng = np.random.default_rng([int(rng_seed), i])
        lo = np.array([_MARGIN, _MARGIN])
        hi = np.array([pitch.length - _MARGIN, pitch.width - _MARGIN])
        p0 = rng.uniform(lo, hi, size=(n_agents, 2))
        v_max = np.minimum(p0 - lo, hi - p0) / max(T - 1, 1)
        v = rng.uniform(-v_max, v_max)
        positions = p0[None] + np.arange(T)[:, None, None] * v[None]
        out.append(TrajectorySequence(seq_id=i, positions=positions,
                                      agent_types=types, states=None,
                                      frame_rate_hz=frame_rate, pitch=pitch))
    return out


def check_sequence_labels(seq: TrajectorySequence) -> None:
    """Verify the generator's label/kinematics guarantees on one sequence."""
    if seq.states is None:
        raise DataError("sequence has no state labels to check")
    b = seq.ball_index
    ball = seq.positions[:, b, :]
    outside = ((ball[:, 0] < 0) | (ball[:, 0] > seq.pitch.length)
               | (ball[:, 1] < 0) | (ball[:, 1] > seq.pitch.width))
    if not ((seq.states == OUT_OF_PLAY) == outside).all():
        raise DataError("out-of-play labels disagree with ball position")
    if POSSESSION not in seq.states or PASS not in seq.states:
        raise DataError("sequence lacks a possession or a pass segment")

    players = np.delete(seq.positions, b, axis=1)
    on_pass = np.flatnonzero(seq.states == PASS)
    runs = np.split(on_pass, np.flatnonzero(np.diff(on_pass) > 1) + 1)
    for run in runs:
        t0 = int(run[0])
        if t0 == 0 or seq.states[t0 - 1] != POSSESSION:
            raise DataError("pass segment does not start from a possession")
        carrier = int(np.argmin(
            np.linalg.norm(players[t0 - 1] - ball[t0 - 1], axis=1)))
        for t in run:
            ball_speed = np.linalg.norm(ball[t] - ball[t - 1])
            carrier_speed = np.linalg.norm(players[t][carrier]
                                           - players[t - 1][carrier])
            if ball_speed <= carrier_speed:
                raise DataError(f"pass frame {t}: ball ({ball_speed:.2f}) "
                                f"not faster than carrier "
                                f"({carrier_speed:.2f})")


# ---------------------------------------------------------------------------
# velocity baseline
# ---------------------------------------------------------------------------

def velocity_baseline(x_partial: np.ndarray, m: ObservationMask,
                      nan_mask: NanLike = None) -> np.ndarray:
    """Constant-velocity extrapolation.

    Each maximal hidden run of an agent is projected forward from the two
    visible frames preceding it; with a single preceding visible frame the
    last position is held. Runs with no visible history hold the first
    visible frame after the run, or (0, 0) for fully hidden agents.
    """
    x = np.asarray(x_partial, dtype=np.float64)
    T, N = m.entries.shape
    if x.shape[:2] != (T, N):
        raise DataError(f"positions {x.shape} do not match mask ({T}, {N})")
    nan = nan_entries(nan_mask, (T, N))
    visible = (m.entries == 0) & (nan == 0)
    x_hat = np.where(visible[..., None], x, 0.0)
    for n in range(N):
        hidden_ts = np.flatnonzero(~visible[:, n])
        if hidden_ts.size == 0:
            continue
        runs = np.split(hidden_ts, np.flatnonzero(np.diff(hidden_ts) > 1) + 1)
        for run in runs:
            a = int(run[0])
            if a >= 2 and visible[a - 1, n] and visible[a - 2, n]:
                v = x[a - 1, n] - x[a - 2, n]
                steps = (run - a + 1)[:, None]
                x_hat[run, n] = x[a - 1, n] + steps * v
            elif a >= 1 and visible[a - 1, n]:
                x_hat[run, n] = x[a - 1, n]
            else:
                later = np.flatnonzero(visible[:, n])
                x_hat[run, n] = x[later[0], n] if later.size else 0.0
    return x_hat
