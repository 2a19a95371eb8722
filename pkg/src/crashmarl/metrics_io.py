"""Persistence and rendering: CSV logs, binary checkpoints, trajectory dumps.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"CMARLCKP"
    uint32    format version (1)
    uint32    header length H
    H bytes   UTF-8 JSON header: architecture, array manifest, free-form meta
    payload   float64 LE arrays, concatenated in manifest order

Shapes in the manifest govern loading; the meta block is informational.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .env_core import CrashMask
from .errors import CheckpointError, LogParseError
from .gridworld import ACTION_NAMES, GridButtonsConfig, GridButtonsEnv

MAGIC = b"CMARLCKP"
VERSION = 1


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# training log
# ---------------------------------------------------------------------------


@dataclass
class TrainingLogRow:
    round: int
    env_steps: int
    alpha: float
    e: float
    loss: float
    epsilon: float
    wall_ms: float = 0.0


LOG_HEADER = [f.name for f in fields(TrainingLogRow)]
_INT_COLUMNS = {"round", "env_steps"}


def format_training_log(rows):
    buf = io.StringIO()
    buf.write(",".join(LOG_HEADER) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(getattr(row, name)) for name in LOG_HEADER) + "\n")
    return buf.getvalue()


def write_training_log(rows, path):
    Path(path).write_text(format_training_log(rows), newline="")


def read_training_log(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",") != LOG_HEADER:
        raise LogParseError(f"expected header {','.join(LOG_HEADER)}", line=1)
    rows = []
    last_round = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(LOG_HEADER):
            raise LogParseError(f"expected {len(LOG_HEADER)} fields, got {len(cells)}", line=lineno)
        values = {}
        try:
            for name, cell in zip(LOG_HEADER, cells):
                values[name] = int(cell) if name in _INT_COLUMNS else float(cell)
        except ValueError as exc:
            raise LogParseError(f"bad number: {exc}", line=lineno) from None
        row = TrainingLogRow(**values)
        if last_round is not None and row.round <= last_round:
            raise LogParseError("round indices must be strictly increasing", line=lineno)
        if not 0.0 <= row.alpha <= 1.0:
            raise LogParseError(f"alpha {row.alpha} outside [0, 1]", line=lineno)
        last_round = row.round
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------

MATRIX_HEADER = ["crash_rate", "mean", "std", "n_seeds", "episodes"]
SWEEP_HEADER = ["beta", "rho"] + MATRIX_HEADER


def _format_table(rows, header):
    lines = [",".join(header)]
    lines += [",".join(_fmt(r[h]) for h in header) for r in rows]
    return "\n".join(lines) + "\n"


def _write_table(rows, header, path):
    with open(path, "w", newline="") as fh:
        fh.write(_format_table(rows, header))


def _read_table(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise LogParseError(f"expected header {','.join(header)}", line=1)
        out = []
        for lineno, cells in enumerate(reader, start=2):
            try:
                out.append({h: (int(c) if h in ("n_seeds", "episodes") else float(c)) for h, c in zip(header, cells)})
            except ValueError as exc:
                raise LogParseError(str(exc), line=lineno) from None
        return out


def format_test_matrix(rows):
    return _format_table(rows, MATRIX_HEADER)


def write_test_matrix_csv(rows, path):
    _write_table(rows, MATRIX_HEADER, path)


def read_test_matrix_csv(path):
    return _read_table(path, MATRIX_HEADER)


def write_sweep_csv(rows, path):
    _write_table(rows, SWEEP_HEADER, path)


def read_sweep_csv(path):
    return _read_table(path, SWEEP_HEADER)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _architecture(params):
    a, m = params.agent, params.mixer
    return {
        "n_agents": a.n_agents,
        "n_actions": a.n_actions,
        "obs_dim": a.obs_dim,
        "use_prev_action": a.use_prev_action,
        "mixer": m.variant,
        "state_dim": m.state_dim,
        "embed": m.embed,
        "gamma": params.gamma,
        "target_period": params.target_period,
        "updates": params.updates,
    }


def checkpoint_bytes(params, meta=None):
    arrays = params.named_arrays()
    header = {
        "architecture": _architecture(params),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + payload


def save_checkpoint(params, path, meta=None):
    Path(path).write_bytes(checkpoint_bytes(params, meta))


def _expected_shapes(arch, arrays_by_name):
    """Shapes the architecture implies, using the stored hidden width."""
    n, A, d = arch["n_agents"], arch["n_actions"], arch["obs_dim"]
    in_dim = d + n + (A if arch["use_prev_action"] else 0)
    H = arrays_by_name.get("agent.W1", (in_dim, 0))[1]
    S, E = arch["state_dim"], arch["embed"]
    agent = {"W1": (in_dim, H), "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (H, A), "b3": (A,)}
    mixer = {}
    if arch["mixer"] == "qmix":
        mixer = {
            "w1_W": (S, n * E), "w1_b": (n * E,), "b1_W": (S, E), "b1_b": (E,),
            "wf_W": (S, E), "wf_b": (E,), "v1_W": (S, E), "v1_b": (E,),
            "v2_W": (E, 1), "v2_b": (1,),
        }
    out = {}
    for prefix, spec in (("agent", agent), ("mixer", mixer), ("target_agent", agent), ("target_mixer", mixer)):
        out.update({f"{prefix}.{k}": tuple(v) for k, v in spec.items()})
    return out


def checkpoint_from_bytes(data, template=None):
    """Decode checkpoint bytes; returns ``(params, meta)``.

    With ``template`` (a LearnerParams) every array shape must match it.
    """
    from .learner import AgentNet, LearnerParams, Mixer

    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 16 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        arch = header["architecture"]
        manifest = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    shapes = dict(manifest)
    expected = _expected_shapes(arch, shapes)
    if shapes != expected:
        raise CheckpointError("array manifest does not match the declared architecture")
    if template is not None:
        want = {k: v.shape for k, v in template.named_arrays().items()}
        if want != shapes:
            diff = sorted(k for k in set(want) | set(shapes) if want.get(k) != shapes.get(k))
            raise CheckpointError(f"shape mismatch against template for {diff}")
    total = sum(int(np.prod(s)) for _, s in manifest)
    payload = data[16 + hlen :]
    if len(payload) != 8 * total:
        raise CheckpointError(f"payload holds {len(payload)} bytes, expected {8 * total}")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        arrays[name] = flat[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size

    def group(prefix):
        return {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + ".")}

    def agent(prefix):
        return AgentNet(group(prefix), arch["n_agents"], arch["n_actions"], arch["obs_dim"], arch["use_prev_action"])

    def mixer(prefix):
        return Mixer(arch["mixer"], group(prefix), arch["n_agents"], arch["state_dim"], arch["embed"])

    params = LearnerParams(
        agent("agent"),
        mixer("mixer"),
        agent("target_agent"),
        mixer("target_mixer"),
        gamma=arch["gamma"],
        target_period=arch["target_period"],
        updates=arch["updates"],
    )
    return params, header.get("meta", {})


def load_checkpoint(path, template=None, with_meta=False):
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    params, meta = checkpoint_from_bytes(p.read_bytes(), template)
    return (params, meta) if with_meta else params


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryDump:
    layout: dict
    mask: list
    positions: list  # (T + 1) x n x (x, y)
    actions: list  # T x n executed
    rewards: list
    success: bool
    label: str = ""

    @property
    def length(self):
        return len(self.actions)

    @property
    def episode_return(self):
        return float(sum(self.rewards))

    @classmethod
    def from_episode(cls, env_config, episode, label=""):
        """Rebuild positions by replaying the executed actions."""
        env = GridButtonsEnv(env_config)
        state = env.initial_state()
        positions = [list(map(list, state.agent_positions))]
        for a in episode.executed:
            state, _, _ = env.transition(state, [int(x) for x in a])
            positions.append(list(map(list, state.agent_positions)))
        return cls(
            layout=env_config.to_dict(),
            mask=list(episode.mask.bits),
            positions=positions,
            actions=[[int(x) for x in a] for a in episode.executed],
            rewards=[float(r) for r in episode.rewards],
            success=bool(episode.success),
            label=label,
        )

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def save_trajectory(dump, path):
    Path(path).write_text(dump.to_json())


def load_trajectory(path):
    return TrajectoryDump.from_json(Path(path).read_text())


def replay_trajectory(dump):
    """Feed the dumped actions back through the environment.

    Returns ``(positions, rewards, final_state)`` as the environment produces them.
    """
    env = GridButtonsEnv(GridButtonsConfig.from_dict(dump.layout))
    state = env.initial_state()
    positions = [list(map(list, state.agent_positions))]
    rewards = []
    for a in dump.actions:
        state, r, _ = env.transition(state, a)
        positions.append(list(map(list, state.agent_positions)))
        rewards.append(float(r))
    return positions, rewards, state


def touched_buttons(dump):
    _, _, final = replay_trajectory(dump)
    return list(final.button_touched)


def render_trajectory_ascii(dump):
    """Text raster of a trajectory.

    Agent ``i`` starts on digit ``i`` and leaves lowercase letter ``a + i``
    on every cell it moves into; crashed agents start on ``X``. Buttons are
    ``B`` when never touched and ``*`` when touched.
    """
    layout = GridButtonsConfig.from_dict(dump.layout)
    touched = touched_buttons(dump)
    grid = [["." for _ in range(layout.width)] for _ in range(layout.height)]
    n = layout.n_agents
    for i in range(n):
        glyph = chr(ord("a") + i % 26)
        for step in dump.positions[1:]:
            x, y = step[i]
            if (x, y) != tuple(dump.positions[0][i]):
                grid[y][x] = glyph
    for i, (x, y) in enumerate(dump.positions[0]):
        grid[y][x] = "X" if dump.mask[i] else str(i % 10)
    for j, (x, y) in enumerate(layout.button_positions):
        grid[y][x] = "*" if touched[j] else "B"

    lines = []
    if dump.label:
        lines.append(f"== {dump.label} ==")
    border = "+" + "-" * layout.width + "+"
    lines.append(border)
    lines.extend("|" + "".join(row) + "|" for row in grid)
    lines.append(border)
    for i in range(n):
        status = "CRASHED" if dump.mask[i] else "active"
        lines.append(f"agent {i}: start {'X' if dump.mask[i] else i % 10}, path {chr(ord('a') + i % 26)}, {status}")
    lines.append(f"buttons touched: {sum(touched)}/{len(touched)}")
    lines.append(
        f"outcome: {'success' if dump.success else 'failure'}, steps {dump.length}, return {dump.episode_return:g}"
    )
    if dump.actions:
        moves = " ".join("/".join(ACTION_NAMES[a][0].upper() for a in step) for step in dump.actions)
        lines.append(f"actions: {moves}")
    return "\n".join(lines) + "\n"


def mask_from_dump(dump):
    return CrashMask(tuple(dump.mask))
