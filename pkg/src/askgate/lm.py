"""Prompt construction, response parsing, and pluggable deciders.

Three interchangeable clients answer prompts:

* :class:`EndpointClient` — POSTs a chat-completions request to a server
  configured via ``ASK_LM_URL`` / ``ASK_LM_TOKEN``.
* :class:`ScriptedClient` — replays queued literal responses (tests/offline).
* :class:`RuleClient` — deterministically applies the prompt's own RULES
  section; it reads the same prompt text a model would.

All transport-level failures raise :class:`LmTransportError` subclasses; the
episode loop treats any of them as "keep the policy's action".
"""

from __future__ import annotations

import os
import re
from collections import deque
from dataclasses import dataclass

import requests

from .env import Action, EDGE_LABEL

DEFAULT_TIMEOUT = 10.0
DEFAULT_COMPLETIONS_PATH = "/v1/chat/completions"
URL_ENV_VAR = "ASK_LM_URL"
TOKEN_ENV_VAR = "ASK_LM_TOKEN"

PROMPT_TEMPLATE = """You are a robot navigation policy.
Your task is to choose exactly ONE action.

VALID ACTIONS:
UP
DOWN
LEFT
RIGHT

RULES:
- Do NOT explain.
- Do NOT add text.
- Do NOT add markdown.
- Do NOT add JSON keys other than "action".
- EDGE tiles are unsafe and must not be chosen.
- If the suggested action is unsafe, choose a safe alternative.
- If multiple safe actions exist, choose the one that moves closer to the goal.

STATE:
Agent position: row {agent_row}, col {agent_col}
Goal position: row {goal_row}, col {goal_col}

IMMEDIATE NEIGHBORS:
UP: {up_tile}
DOWN: {down_tile}
LEFT: {left_tile}
RIGHT: {right_tile}

LOOK AHEAD:
UP->UP: {up_up_tile}
DOWN->DOWN: {down_down_tile}
LEFT->LEFT: {left_left_tile}
RIGHT->RIGHT: {right_right_tile}
AUTOPILOT SUGGESTION: {autopilot}

OUTPUT FORMAT (MANDATORY):
{{"action":"UP"}} OR {{"action":"DOWN"}} OR {{"action":"LEFT"}} OR {{"action":"RIGHT"}}"""

UNSAFE_TILES = frozenset({"HOLE", EDGE_LABEL})

_ACTION_OBJECT = re.compile(r"\{\s*\"action\"\s*:\s*\"([^\"]*)\"\s*\}")


class LmTransportError(RuntimeError):
    """Request never produced a usable response body."""


class LmTimeoutError(LmTransportError):
    """Request exceeded its timeout."""


class LmHttpError(LmTransportError):
    """Server answered with a non-2xx status."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned status {status}")
        self.status = status
        self.body = body


@dataclass(frozen=True)
class PromptContext:
    """Everything substituted into the prompt template."""

    agent_row: int
    agent_col: int
    goal_row: int
    goal_col: int
    up_tile: str
    down_tile: str
    left_tile: str
    right_tile: str
    up_up_tile: str
    down_down_tile: str
    left_left_tile: str
    right_right_tile: str
    autopilot: Action

    def tile(self, action: Action) -> str:
        return getattr(self, f"{action.name.lower()}_tile")


@dataclass(frozen=True)
class LmDecision:
    """Parse outcome: ok (with an action), parse_failure, or invalid_action."""

    status: str
    action: Action | None = None
    detail: str = ""

    @property
    def is_action(self) -> bool:
        return self.status == "ok"


def build_prompt(ctx: PromptContext) -> str:
    return PROMPT_TEMPLATE.format(
        agent_row=ctx.agent_row,
        agent_col=ctx.agent_col,
        goal_row=ctx.goal_row,
        goal_col=ctx.goal_col,
        up_tile=ctx.up_tile,
        down_tile=ctx.down_tile,
        left_tile=ctx.left_tile,
        right_tile=ctx.right_tile,
        up_up_tile=ctx.up_up_tile,
        down_down_tile=ctx.down_down_tile,
        left_left_tile=ctx.left_left_tile,
        right_right_tile=ctx.right_right_tile,
        autopilot=ctx.autopilot.name,
    )


def parse_decision(raw: str) -> LmDecision:
    """First {"action":"X"} object decides; anything around it is ignored."""
    match = _ACTION_OBJECT.search(raw)
    if match is None:
        return LmDecision(status="parse_failure", detail="no action object found")
    token = match.group(1)
    try:
        return LmDecision(status="ok", action=Action[token])
    except KeyError:
        return LmDecision(status="invalid_action", detail=token)


def render_action(action: Action) -> str:
    """The mandated output format for a chosen action."""
    return f'{{"action":"{action.name}"}}'


def rule_decide(ctx: PromptContext) -> Action:
    """Deterministic realization of the prompt's RULES section.

    An action is safe iff its immediate tile is neither HOLE nor EDGE. A safe
    autopilot suggestion is kept; otherwise the safe action closest to the
    goal wins (Manhattan distance, ties in UP, DOWN, LEFT, RIGHT order). With
    no safe action the autopilot suggestion is returned unchanged.
    """
    safe = {a: ctx.tile(a) not in UNSAFE_TILES for a in Action}
    if safe[ctx.autopilot]:
        return ctx.autopilot
    best: Action | None = None
    best_dist = None
    for action in Action:
        if not safe[action]:
            continue
        dr, dc = action.delta
        dist = abs(ctx.agent_row + dr - ctx.goal_row) + abs(ctx.agent_col + dc - ctx.goal_col)
        if best_dist is None or dist < best_dist:
            best, best_dist = action, dist
    return best if best is not None else ctx.autopilot


def query(client, prompt: str, timeout: float = DEFAULT_TIMEOUT) -> str:
    """Ask a client for a raw response; transport problems raise."""
    return client.query(prompt, timeout=timeout)


class EndpointClient:
    """Chat-completions HTTP client (temperature 0 for determinism)."""

    def __init__(
        self,
        base_url: str | None = None,
        model: str = "default",
        token: str | None = None,
        path: str = DEFAULT_COMPLETIONS_PATH,
        temperature: float = 0.0,
        max_tokens: int = 16,
    ):
        self.base_url = base_url if base_url is not None else os.environ.get(URL_ENV_VAR, "")
        if not self.base_url:
            raise ValueError(f"no endpoint URL: pass base_url or set {URL_ENV_VAR}")
        self.model = model
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self.path = path
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.name = f"endpoint:{model}"

    def query(self, prompt: str, timeout: float = DEFAULT_TIMEOUT) -> str:
        url = self.base_url.rstrip("/") + self.path
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise LmTimeoutError(f"request timed out after {timeout}s") from exc
        except requests.RequestException as exc:
            raise LmTransportError(f"request failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise LmHttpError(resp.status_code, resp.text[:200])
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LmTransportError(f"malformed response body: {exc}") from exc


class ScriptedClient:
    """Replays queued responses in order; an empty queue is a transport error."""

    name = "scripted"

    def __init__(self, responses):
        self._queue = deque(responses)

    def __len__(self) -> int:
        return len(self._queue)

    def query(self, prompt: str, timeout: float = DEFAULT_TIMEOUT) -> str:
        if not self._queue:
            raise LmTransportError("scripted client has no responses left")
        return self._queue.popleft()


_PROMPT_FIELDS = re.compile(
    r"Agent position: row (?P<agent_row>\d+), col (?P<agent_col>\d+)\n"
    r"Goal position: row (?P<goal_row>\d+), col (?P<goal_col>\d+)\n"
    r"\nIMMEDIATE NEIGHBORS:\n"
    r"UP: (?P<up_tile>\w+)\nDOWN: (?P<down_tile>\w+)\n"
    r"LEFT: (?P<left_tile>\w+)\nRIGHT: (?P<right_tile>\w+)\n"
    r"\nLOOK AHEAD:\n"
    r"UP->UP: (?P<up_up_tile>\w+)\nDOWN->DOWN: (?P<down_down_tile>\w+)\n"
    r"LEFT->LEFT: (?P<left_left_tile>\w+)\nRIGHT->RIGHT: (?P<right_right_tile>\w+)\n"
    r"AUTOPILOT SUGGESTION: (?P<autopilot>\w+)\n"
)


def _context_from_prompt(prompt: str) -> PromptContext:
    match = _PROMPT_FIELDS.search(prompt)
    if match is None:
        raise ValueError("prompt does not follow the expected template")
    fields = match.groupdict()
    return PromptContext(
        agent_row=int(fields["agent_row"]),
        agent_col=int(fields["agent_col"]),
        goal_row=int(fields["goal_row"]),
        goal_col=int(fields["goal_col"]),
        up_tile=fields["up_tile"],
        down_tile=fields["down_tile"],
        left_tile=fields["left_tile"],
        right_tile=fields["right_tile"],
        up_up_tile=fields["up_up_tile"],
        down_down_tile=fields["down_down_tile"],
        left_left_tile=fields["left_left_tile"],
        right_right_tile=fields["right_right_tile"],
        autopilot=Action[fields["autopilot"]],
    )


class RuleClient:
    """Follows the prompt's RULES section exactly, reading the prompt itself."""

    name = "rule"

    def query(self, prompt: str, timeout: float = DEFAULT_TIMEOUT) -> str:
        ctx = _context_from_prompt(prompt)
        return render_action(rule_decide(ctx))
