"""LLM orchestration loop.

The model sees only the query and the tools' text summaries. Each reply
carries four sections (observation, reasoning, plan, self-critique) and
exactly one action line::

    OBSERVATION: ...
    REASONING: ...
    PLAN: ...
    SELF-CRITIQUE: ...
    ACTION: target_finder("chair")

Tool calls run through :mod:`spatialground.grounder`; the loop ends on a
``final_answer(<id>)`` citing a candidate the tools returned. Budget
exhaustion, unparseable replies and upstream failures all fall back to the
deterministic resolver.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

from .chat import ChatClient
from .errors import ReplyFormatError, UpstreamError
from .geometry import PointCloud
from .grounder import (LANDMARK_FINDER, TARGET_FINDER, Candidate, GrounderParams, RelevanceBackend,
                       landmark_finder, target_finder)
from .resolver import FAILED, FALLBACK, FINAL_ANSWER, GroundingResult, resolve
from .spatial import VolumeFilterConfig

logger = logging.getLogger(__name__)

SECTIONS = ("observation", "reasoning", "plan", "self_critique")

SYSTEM_PROMPT = """\
You are a 3D visual grounding agent. You cannot see the scene: you locate the
object a user refers to by calling tools and reasoning about what they return.

TOOLS
target_finder(phrase)
    input: a simple noun phrase for the target object, e.g. "wooden chair".
    output: a list of candidate boxes, each with an id, its centroid and size
    (Cx, Cy, Cz, dX, dY, dZ) in meters, and its volume in m^3.
landmark_finder(phrase, relation)
    input: a noun phrase for a landmark object and its spatial relation to the
    target (between, near, in, on, above, below, closest, farthest).
    output: the landmark box (Cx, Cy, Cz, dX, dY, dZ) and the Euclidean distance
    from every candidate of the latest target_finder call to the landmark centroid.

Pass only simple noun phrases to the tools, never the whole query. Use volumes
and distances to reject implausible candidates (a chair of 0.01 m^3 is a false
positive) and candidates that violate the stated relation.

Reply in exactly this format, with exactly one ACTION line:
OBSERVATION: <what you know so far>
REASONING: <high-level plan>
PLAN: <concrete next steps, tool calls, comparisons>
SELF-CRITIQUE: <check the plan and correct it>
ACTION: target_finder("<noun phrase>")
     or landmark_finder("<noun phrase>", relation="<relation>")
     or final_answer(<candidate id>)
"""

FORMAT_REPROMPT = (
    "Your reply could not be parsed: {error}. Reply again using the OBSERVATION / REASONING / "
    "PLAN / SELF-CRITIQUE sections and exactly one ACTION line."
)
UNKNOWN_ID_REPROMPT = (
    "Candidate {cid} was not returned by the latest target_finder call (valid ids: {valid}). "
    "Choose one of the returned candidates."
)


@dataclass(frozen=True)
class Budget:
    max_rounds: int = 5
    max_tool_calls: int = 10
    timeout: float = 60.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_rounds < 1 or self.max_tool_calls < 1 or not self.timeout > 0:
            raise ValueError("budget limits must be positive")


@dataclass(frozen=True)
class ToolCall:
    tool: str
    phrase: str
    relation: str | None = None

    def __post_init__(self) -> None:
        if self.tool not in (TARGET_FINDER, LANDMARK_FINDER):
            raise ValueError(f"unknown tool {self.tool!r}")
        if not self.phrase.strip():
            raise ValueError("tool phrase must be non-empty")


@dataclass(frozen=True)
class FinalAnswer:
    candidate_id: int


Action = Union[ToolCall, FinalAnswer]


@dataclass(frozen=True)
class AgentStep:
    round: int
    observation: str = ""
    reasoning: str = ""
    plan: str = ""
    self_critique: str = ""
    action: Action | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("round", *SECTIONS)}
        if isinstance(self.action, ToolCall):
            d["action"] = {"type": "tool_call", **asdict(self.action)}
        elif isinstance(self.action, FinalAnswer):
            d["action"] = {"type": "final_answer", "candidate_id": self.action.candidate_id}
        return d


_HEADER_RE = re.compile(r"^[\s#*>_-]*(observation|reasoning|plan|self[\s_-]*critique)[\s*_]*:[*_]*\s?(.*)$",
                        re.IGNORECASE)
_ACTION_RE = re.compile(r"^[\s#*>_-]*action[\s*_]*:[*_]*\s*(.*?)\s*$", re.IGNORECASE)
_CALL_RE = re.compile(r"^`?\s*([a-z_]+)\s*\((.*)\)\s*`?$", re.IGNORECASE | re.DOTALL)


def _parse_call(src: str) -> Action:
    m = _CALL_RE.match(src)
    if not m:
        raise ReplyFormatError("action does not match the tool-call grammar", src)
    name = m.group(1).lower()
    try:
        call = ast.parse(f"f({m.group(2)})", mode="eval").body
        args = [ast.literal_eval(a) for a in call.args]
        kwargs = {k.arg: ast.literal_eval(k.value) for k in call.keywords}
    except (SyntaxError, ValueError) as exc:
        raise ReplyFormatError(f"cannot parse action arguments: {exc}", src) from None

    if name == "final_answer":
        cid = kwargs.get("candidate_id", kwargs.get("id", args[0] if args else None))
        if isinstance(cid, str) and cid.strip().isdigit():
            cid = int(cid)
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise ReplyFormatError("final_answer needs an integer candidate id", src)
        return FinalAnswer(cid)
    if name in (TARGET_FINDER, LANDMARK_FINDER):
        phrase = kwargs.get("phrase", args[0] if args else None)
        relation = kwargs.get("relation", args[1] if len(args) > 1 else None)
        if not isinstance(phrase, str) or not phrase.strip():
            raise ReplyFormatError(f"{name} needs a non-empty phrase", src)
        if relation is not None and not isinstance(relation, str):
            raise ReplyFormatError("relation must be a string", src)
        return ToolCall(name, phrase.strip(), relation.strip().lower() if relation else None)
    raise ReplyFormatError(f"unknown action {name!r}", src)


def parse_agent_reply(text: str, round_index: int = 0) -> AgentStep:
    """Split a model reply into its sections and its single action.

    Headers are case-insensitive and may come in any order; missing sections
    are empty.

    Raises:
        ReplyFormatError: zero or several ACTION lines, or an action outside
            the grammar.
    """
    sections = {k: [] for k in SECTIONS}
    actions: list[str] = []
    current = None
    for line in text.splitlines():
        am = _ACTION_RE.match(line)
        if am:
            actions.append(am.group(1))
            current = None
            continue
        hm = _HEADER_RE.match(line)
        if hm:
            key = hm.group(1).lower()
            current = "self_critique" if key.startswith("self") else key
            sections[current].append(hm.group(2))
        elif current is not None:
            sections[current].append(line)
    if not actions:
        raise ReplyFormatError("reply has no ACTION line", text[-200:])
    if len(actions) > 1:
        raise ReplyFormatError(f"reply has {len(actions)} ACTION lines, expected one", "\n".join(actions))
    action = _parse_call(actions[0])
    body = {k: "\n".join(v).strip() for k, v in sections.items()}
    return AgentStep(round=round_index, action=action, **body)


@dataclass
class Transcript:
    query: str
    model: str
    steps: list[AgentStep] = field(default_factory=list)
    tool_responses: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    outcome: dict = field(default_factory=dict)
    accounting: dict = field(default_factory=lambda: {"rounds": 0, "chat_calls": 0, "tool_calls": 0,
                                                      "prompt_tokens": 0, "completion_tokens": 0})

    def to_dict(self) -> dict:
        return {"query": self.query, "model": self.model, "steps": [s.to_dict() for s in self.steps],
                "tool_responses": self.tool_responses, "events": self.events, "outcome": self.outcome,
                "accounting": self.accounting}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def tool_calls(self) -> list[ToolCall]:
        return [s.action for s in self.steps if isinstance(s.action, ToolCall)]

    def save(self, directory: str | Path, name: str | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        name = name or hashlib.sha256(self.query.encode()).hexdigest()[:16]
        path = directory / f"{name}.json"
        path.write_text(self.to_json() + "\n")
        return path


def _outcome_dict(result: GroundingResult) -> dict:
    d = {"kind": result.outcome, "reason": result.reason}
    if result.candidate is not None:
        d["candidate_id"] = result.candidate.candidate_id
    d["box"] = result.box.to_dict() if result.box is not None else None
    return d


def run_agent(
    query: str,
    scene: PointCloud,
    client: ChatClient,
    params: GrounderParams | None = None,
    budget: Budget | None = None,
    backend: RelevanceBackend | None = None,
    volume_config: VolumeFilterConfig | None = None,
) -> tuple[GroundingResult, Transcript]:
    """Ground ``query`` in ``scene`` with the chat model driving the tools."""
    params = params or GrounderParams()
    budget = budget or Budget()
    tr = Transcript(query=query, model=client.model)
    acc = tr.accounting
    messages = [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": f"QUERY: {query}"}]
    targets: list[Candidate] = []
    format_reprompted = answer_reprompted = False

    def finish(result: GroundingResult) -> tuple[GroundingResult, Transcript]:
        tr.outcome = _outcome_dict(result)
        return result, tr

    def fallback(reason: str) -> tuple[GroundingResult, Transcript]:
        logger.info("agent falling back for %r: %s", query, reason)
        tr.events.append({"type": "fallback", "reason": reason})
        res = resolve(query, scene, params, volume_config, backend)
        kind = FALLBACK if res.ok else FAILED
        why = reason if res.ok else f"{reason}; resolver: {res.reason}"
        return finish(GroundingResult(kind, res.box, res.candidate, why, res.parsed, res.selection))

    for rnd in range(budget.max_rounds):
        acc["rounds"] = rnd + 1
        try:
            reply = client.chat(messages, timeout=budget.timeout)
        except UpstreamError as exc:
            return fallback(f"upstream failure: {exc}")
        acc["chat_calls"] += 1
        for k in ("prompt_tokens", "completion_tokens"):
            acc[k] += int(client.last_usage.get(k, 0))
        messages.append({"role": "assistant", "content": reply})
        tr.events.append({"type": "reply", "round": rnd, "text": reply})

        try:
            step = parse_agent_reply(reply, rnd)
        except ReplyFormatError as exc:
            tr.events.append({"type": "format_error", "round": rnd, "error": str(exc), "span": exc.span})
            if format_reprompted:
                return fallback("unparseable reply after reprompt")
            format_reprompted = True
            messages.append({"role": "user", "content": FORMAT_REPROMPT.format(error=exc)})
            continue

        action = step.action
        if isinstance(action, ToolCall):
            if acc["tool_calls"] >= budget.max_tool_calls:
                tr.events.append({"type": "refused_tool_call", "round": rnd, "tool": action.tool})
                return fallback("tool-call budget exhausted")
            tr.steps.append(step)
            acc["tool_calls"] += 1
            if action.tool == TARGET_FINDER:
                resp = target_finder(scene, action.phrase, params, backend)
                targets = resp.candidates
            else:
                resp = landmark_finder(scene, action.phrase, params, targets, backend, action.relation)
                if resp.landmark is not None:
                    targets = resp.candidates
            tr.tool_responses.append(resp.to_dict())
            text = resp.to_text()
            tr.events.append({"type": "tool_result", "round": rnd, "tool": action.tool, "text": text})
            messages.append({"role": "user", "content": f"TOOL RESULT:\n{text}"})
            continue

        tr.steps.append(step)
        chosen = next((c for c in targets if c.candidate_id == action.candidate_id), None)
        if chosen is None:
            tr.events.append({"type": "unknown_candidate", "round": rnd, "candidate_id": action.candidate_id})
            if answer_reprompted:
                return fallback(f"final answer cited unknown candidate {action.candidate_id}")
            answer_reprompted = True
            valid = ", ".join(str(c.candidate_id) for c in targets) or "none"
            messages.append({"role": "user",
                             "content": UNKNOWN_ID_REPROMPT.format(cid=action.candidate_id, valid=valid)})
            continue
        return finish(GroundingResult(FINAL_ANSWER, chosen.box, chosen))

    return fallback("round budget exhausted")
