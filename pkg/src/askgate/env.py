"""Deterministic frozen-lake grid world with per-episode map contexts.

A context is a full map layout; the episode dynamics are deterministic.
The policy never sees the layout — observations encode position only
(see :func:`encode_observation`) — so each map acts as a hidden context
drawn per episode.

Map text format: ``n`` lines of ``n`` characters from ``{S,F,H,G}``.
Context-set files start with a header line ``size {n} seed {k} count {m}``
followed by the maps separated by blank lines; split boundaries are implied
by index order (first third Train, second Eval, third Test).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_MAX_STEPS = 100
OBS_DIM = 64
HOLE_PROBABILITY = 0.2
GENERATION_BUDGET = 10_000


class TileKind(enum.Enum):
    START = "S"
    FROZEN = "F"
    HOLE = "H"
    GOAL = "G"

    @property
    def char(self) -> str:
        return self.value

    @property
    def label(self) -> str:
        """Tile name as it appears in prompts (START/FROZEN/HOLE/GOAL)."""
        return self.name


# Label used in prompts for a neighbor that lies outside the grid.
EDGE_LABEL = "EDGE"

_VALID_CHARS = {t.value for t in TileKind}


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class Outcome(enum.Enum):
    RUNNING = "running"
    GOAL = "goal"
    HOLE = "hole"
    TRUNCATED = "truncated"


class Split(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    TEST = "test"


class TerminalStateError(RuntimeError):
    """Raised when stepping an episode that has already ended."""


class MapGenerationError(RuntimeError):
    """Raised when the rejection-sampling budget cannot satisfy a request."""


@dataclass(frozen=True)
class GridMap:
    """Square tile grid stored as a tuple of row strings."""

    rows: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.rows)

    def tile(self, row: int, col: int) -> TileKind:
        return TileKind(self.rows[row][col])

    def in_bounds(self, row: int, col: int) -> bool:
        n = self.size
        return 0 <= row < n and 0 <= col < n

    def to_text(self) -> str:
        return "\n".join(self.rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridMap":
        rows = tuple(line for line in text.strip("\n").split("\n"))
        grid = cls(rows)
        _validate_grid(grid)
        return grid


def _validate_grid(grid: GridMap) -> None:
    n = grid.size
    if n < 2:
        raise ValueError(f"grid must be at least 2x2, got {n}")
    if any(len(r) != n for r in grid.rows):
        raise ValueError("grid is not square")
    chars = "".join(grid.rows)
    bad = set(chars) - _VALID_CHARS
    if bad:
        raise ValueError(f"invalid tile characters: {sorted(bad)}")
    if grid.rows[0][0] != TileKind.START.value:
        raise ValueError("top-left tile must be S")
    if grid.rows[n - 1][n - 1] != TileKind.GOAL.value:
        raise ValueError("bottom-right tile must be G")
    if chars.count("S") != 1 or chars.count("G") != 1:
        raise ValueError("grid must contain exactly one S and one G")


@dataclass(frozen=True)
class Context:
    id: int
    grid: GridMap
    split: Split


@dataclass(frozen=True)
class ContextSet:
    size: int
    seed: int
    contexts: tuple[Context, ...]

    @property
    def count(self) -> int:
        return len(self.contexts)

    def split(self, which: Split) -> tuple[Context, ...]:
        return tuple(c for c in self.contexts if c.split == which)


@dataclass(frozen=True)
class EnvState:
    context: Context
    row: int
    col: int
    step_count: int
    outcome: Outcome

    @property
    def done(self) -> bool:
        return self.outcome is not Outcome.RUNNING


def reset(context: Context) -> EnvState:
    """Start an episode at the map's S tile (always the top-left corner)."""
    return EnvState(context=context, row=0, col=0, step_count=0, outcome=Outcome.RUNNING)


def step(state: EnvState, action: Action, max_steps: int = DEFAULT_MAX_STEPS) -> tuple[EnvState, int, bool]:
    """Apply one deterministic move; returns (next_state, reward, done).

    Moves that would leave the grid keep the agent in place but still count
    against the step cap. Outcome precedence: Goal, then Hole, then the cap.
    """
    if state.done:
        raise TerminalStateError(f"episode already ended with outcome {state.outcome.value}")
    grid = state.context.grid
    dr, dc = action.delta
    row, col = state.row + dr, state.col + dc
    if not grid.in_bounds(row, col):
        row, col = state.row, state.col
    steps = state.step_count + 1
    tile = grid.tile(row, col)
    if tile is TileKind.GOAL:
        outcome = Outcome.GOAL
    elif tile is TileKind.HOLE:
        outcome = Outcome.HOLE
    elif steps >= max_steps:
        outcome = Outcome.TRUNCATED
    else:
        outcome = Outcome.RUNNING
    next_state = replace(state, row=row, col=col, step_count=steps, outcome=outcome)
    reward = 1 if outcome is Outcome.GOAL else 0
    return next_state, reward, next_state.done


def encode_observation(state: EnvState, dim: int = OBS_DIM) -> np.ndarray:
    """Position-only projection: one-hot of row*n + col in a fixed-size vector.

    The map layout is deliberately absent so the same policy input space
    covers every context of a given size (and every size up to sqrt(dim)).
    """
    n = state.context.grid.size
    index = state.row * n + state.col
    if index >= dim:
        raise ValueError(f"observation index {index} does not fit dim {dim} (grid size {n})")
    obs = np.zeros(dim, dtype=np.float64)
    obs[index] = 1.0
    return obs


def _neighbor_label(grid: GridMap, row: int, col: int) -> str:
    if not grid.in_bounds(row, col):
        return EDGE_LABEL
    return grid.tile(row, col).label


def local_view(state: EnvState) -> dict[str, int | str]:
    """Symbolic neighborhood used to fill the prompt template.

    Reports the four adjacent tiles and the four two-step-ahead tiles
    (same direction twice); anything off-grid reads EDGE.
    """
    grid = state.context.grid
    n = grid.size
    view: dict[str, int | str] = {
        "agent_row": state.row,
        "agent_col": state.col,
        "goal_row": n - 1,
        "goal_col": n - 1,
    }
    for action in Action:
        dr, dc = action.delta
        name = action.name.lower()
        view[f"{name}_tile"] = _neighbor_label(grid, state.row + dr, state.col + dc)
        view[f"{name}_{name}_tile"] = _neighbor_label(grid, state.row + 2 * dr, state.col + 2 * dc)
    return view


def bfs_solvable(grid: GridMap) -> bool:
    """Breadth-first reachability from S to G over non-hole tiles."""
    n = grid.size
    seen = {(0, 0)}
    queue = deque([(0, 0)])
    while queue:
        row, col = queue.popleft()
        if grid.tile(row, col) is TileKind.GOAL:
            return True
        for dr, dc in _DELTAS.values():
            nr, nc = row + dr, col + dc
            if (nr, nc) in seen or not grid.in_bounds(nr, nc):
                continue
            if grid.tile(nr, nc) is TileKind.HOLE:
                continue
            seen.add((nr, nc))
            queue.append((nr, nc))
    return False


def corridor_cells(n: int) -> tuple[tuple[int, int], ...]:
    """Zig-zag diagonal path from (0,0) to (n-1,n-1), kept hole-free.

    Solvable maps share this corridor; holes are sampled everywhere else.
    A shared safe path is what makes unseen maps of the same size tractable
    for a policy that cannot observe the layout.
    """
    cells = [(0, 0)]
    row, col = 0, 0
    move_right = True
    while (row, col) != (n - 1, n - 1):
        if move_right and col < n - 1:
            col += 1
        elif row < n - 1:
            row += 1
        else:
            col += 1
        move_right = not move_right
        cells.append((row, col))
    return tuple(cells)


def _sample_grid(n: int, rng: np.random.Generator, solvable: bool, hole_probability: float) -> GridMap:
    safe = set(corridor_cells(n)) if solvable else set()
    cells = [[TileKind.FROZEN.value] * n for _ in range(n)]
    holes = rng.random((n, n)) < hole_probability
    for row in range(n):
        for col in range(n):
            if holes[row, col] and (row, col) not in safe:
                cells[row][col] = TileKind.HOLE.value
    cells[0][0] = TileKind.START.value
    cells[n - 1][n - 1] = TileKind.GOAL.value
    return GridMap(tuple("".join(r) for r in cells))


def generate_context_set(
    n: int,
    count: int,
    seed: int,
    solvable: bool = True,
    hole_probability: float = HOLE_PROBABILITY,
) -> ContextSet:
    """Rejection-sample ``count`` distinct maps of size ``n``.

    Solvable sets keep a shared zig-zag corridor hole-free and every map is
    additionally verified with BFS; unsolvable sets sample cells independently
    with no reachability requirement. Duplicates are always rejected. Raises
    :class:`MapGenerationError` if any single map exhausts the attempt budget.
    """
    rng = np.random.default_rng(seed)
    seen: set[tuple[str, ...]] = set()
    grids: list[GridMap] = []
    while len(grids) < count:
        for _ in range(GENERATION_BUDGET):
            grid = _sample_grid(n, rng, solvable, hole_probability)
            if grid.rows in seen:
                continue
            if solvable and not bfs_solvable(grid):
                continue
            seen.add(grid.rows)
            grids.append(grid)
            break
        else:
            raise MapGenerationError(
                f"exhausted {GENERATION_BUDGET} attempts at map {len(grids) + 1}/{count} "
                f"(size {n}, solvable={solvable})"
            )
    contexts = tuple(
        Context(id=i, grid=g, split=_split_for_index(i, count)) for i, g in enumerate(grids)
    )
    return ContextSet(size=n, seed=seed, contexts=contexts)


def _split_for_index(index: int, count: int) -> Split:
    third = count // 3
    if index < third:
        return Split.TRAIN
    if index < 2 * third:
        return Split.EVAL
    return Split.TEST


def save_context_set(context_set: ContextSet, path: str) -> None:
    parts = [f"size {context_set.size} seed {context_set.seed} count {context_set.count}\n"]
    for ctx in context_set.contexts:
        parts.append("\n")
        parts.append(ctx.grid.to_text())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(parts))


def load_context_set(path: str) -> ContextSet:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    header, _, body = text.partition("\n")
    tokens = header.split()
    if len(tokens) != 6 or tokens[0] != "size" or tokens[2] != "seed" or tokens[4] != "count":
        raise ValueError(f"malformed context-set header: {header!r}")
    size, seed, count = int(tokens[1]), int(tokens[3]), int(tokens[5])
    blocks = [b for b in body.split("\n\n") if b.strip()]
    if len(blocks) != count:
        raise ValueError(f"context-set file holds {len(blocks)} maps, header says {count}")
    contexts = []
    for i, block in enumerate(blocks):
        grid = GridMap.from_text(block)
        if grid.size != size:
            raise ValueError(f"map {i} has size {grid.size}, header says {size}")
        contexts.append(Context(id=i, grid=grid, split=_split_for_index(i, count)))
    return ContextSet(size=size, seed=seed, contexts=tuple(contexts))
