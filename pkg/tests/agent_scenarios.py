"""Scripted agent conversations over the three-chair room scene.

Each scenario is a list of canned model replies plus the budget to run
under and the outcome it should produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from spatialground.agent import Budget

QUERY = "a chair between the table and window"


def reply(action: str, observation: str = "", plan: str = "", critique: str = "") -> str:
    return (f"OBSERVATION: {observation or 'Working on the query.'}\n"
            f"REASONING: Find the target candidates, then check them against the landmarks.\n"
            f"PLAN: {plan or 'Call the next tool.'}\n"
            f"SELF-CRITIQUE: {critique or 'Only simple noun phrases go to the tools.'}\n"
            f"ACTION: {action}")


@dataclass
class Scenario:
    name: str
    replies: list[str]
    outcome: str
    budget: Budget = field(default_factory=Budget)
    # candidate the final answer names, when the outcome is final_answer
    answer: int | None = None


SCENARIOS = [
    Scenario("full_protocol", [
        reply('target_finder("chair")', "The query asks for a chair."),
        reply('landmark_finder("table", relation="between")', "Three chair candidates."),
        reply('landmark_finder("window", relation="between")', "Table distances received."),
        reply("final_answer(1)", "Candidate 1 looks best.", critique="Double-checked distances."),
    ], "final_answer", answer=1),
    Scenario("reprompt_after_bad_format", [
        "I think it's the chair near the window.",
        reply('target_finder("chair")'),
        reply('landmark_finder("table", relation="between")'),
        reply('landmark_finder("window", relation="between")'),
        reply("final_answer(0)"),
    ], "final_answer", answer=0),
    Scenario("round_budget_exhausted", [
        reply('target_finder("chair")'),
        reply('target_finder("wooden chair")'),
        reply('target_finder("chair")'),
        reply('landmark_finder("table", relation="between")'),
        reply('landmark_finder("window", relation="between")'),
    ], "fallback"),
    Scenario("unknown_candidate_twice", [
        reply('target_finder("chair")'),
        reply("final_answer(7)"),
        reply("final_answer(9)"),
    ], "fallback"),
    Scenario("tool_budget_exhausted", [
        reply('target_finder("chair")'),
        reply('landmark_finder("table", relation="between")'),
        reply('landmark_finder("window", relation="between")'),
    ], "fallback", budget=Budget(max_rounds=5, max_tool_calls=2)),
]
