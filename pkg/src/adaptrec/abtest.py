"""Simulated A/B preference test between exploration-off and exploration-on lists.

A judge sees the user's recent watch history and two anonymised sets and
answers "A" or "B". Which list is shown as "A" is randomized per user and
recorded, and the letter is mapped back to ``off``/``on`` afterwards.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Mapping, Sequence

import requests

from .embedding import tokenize
from .recommender import user_rng

logger = logging.getLogger(__name__)

PROMPT_VERSION = "ab-prompt-v1"
INVALID = "invalid"
_LABEL_RE = re.compile(r"\b([AB])\b")
_PATH_RE = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


@dataclass
class JudgeConfig:
    kind: str = "stub"  # "stub" or "http-chat"
    endpoint: str = ""
    model: str = "deepseek-chat"
    temperature: float = 0.4
    max_retries: int = 3
    timeout: float = 60.0
    api_key_env: str = "JUDGE_API_KEY"
    reply_path: str = "choices[0].message.content"
    parallelism: int = 4
    retry_backoff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("stub", "http-chat"):
            raise ValueError(f"unknown judge kind {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.kind == "http-chat" and not self.endpoint:
            raise ValueError("http-chat judge needs an endpoint")
        if self.max_retries < 1 or self.parallelism < 1:
            raise ValueError("max_retries and parallelism must be at least 1")


@dataclass
class AbTrial:
    user_id: object
    set_off: list
    set_on: list
    a_is: str  # which list was shown as "A": "off" or "on"
    verdict: str = INVALID  # "off", "on" or "invalid"
    reply: str = ""
    label: str = INVALID
    k: int | None = None
    h: int | None = None
    prompt_version: str = PROMPT_VERSION


@dataclass
class AbResult:
    trials: list[AbTrial] = field(default_factory=list)

    @property
    def valid(self) -> list[AbTrial]:
        return [t for t in self.trials if t.verdict != INVALID]

    @property
    def invalid_count(self) -> int:
        return len(self.trials) - len(self.valid)

    def percent(self, verdict: str) -> float | None:
        valid = self.valid
        if not valid:
            return None
        return 100.0 * sum(t.verdict == verdict for t in valid) / len(valid)

    @property
    def on_pct(self) -> float | None:
        return self.percent("on")

    @property
    def off_pct(self) -> float | None:
        return self.percent("off")


def _clean(title: str) -> str:
    return " ".join(str(title).split())


def build_prompt(history_titles: Sequence[str], a_titles: Sequence[str], b_titles: Sequence[str]) -> str:
    if not a_titles or not b_titles:
        raise ValueError("both recommendation sets must be non-empty")
    history = "; ".join(_clean(t) for t in history_titles) or "nothing yet"
    lines = [
        f"You are a movie viewer. These are the titles you watched most recently: {history}.",
        "",
        "Set A:",
        *(f"{i}. {_clean(t)}" for i, t in enumerate(a_titles, 1)),
        "",
        "Set B:",
        *(f"{i}. {_clean(t)}" for i, t in enumerate(b_titles, 1)),
        "",
        "Based on your personal taste, which set would you find more appealing and "
        "be more likely to actually watch? Answer with exactly one letter: A or B.",
    ]
    return "\n".join(lines)


def parse_sets(prompt: str) -> tuple[list[str], list[str]]:
    """Recover the two enumerations from a prompt made by :func:`build_prompt`."""
    sets: dict[str, list[str]] = {"A": [], "B": []}
    current = None
    for line in prompt.splitlines():
        if line in ("Set A:", "Set B:"):
            current = line[4]
            continue
        m = re.match(r"^\d+\. (.*)$", line)
        if current and m:
            sets[current].append(m.group(1))
        elif not line:
            current = None
    return sets["A"], sets["B"]


def parse_label(reply: str) -> str:
    """First standalone capital A or B in the reply, else ``invalid``."""
    m = _LABEL_RE.search(reply or "")
    return m.group(1) if m else INVALID


def title_overlap(titles: Sequence[str]) -> float:
    """Mean pairwise Jaccard overlap of title token sets (0 for one title)."""
    token_sets = [set(tokenize(t)) for t in titles]
    pairs = list(combinations(token_sets, 2))
    if not pairs:
        return 0.0
    total = 0.0
    for x, y in pairs:
        union = x | y
        total += len(x & y) / len(union) if union else 0.0
    return total / len(pairs)


def stub_reply(prompt: str) -> str:
    """Offline stand-in for an LLM: prefers the set whose titles overlap less.

    Not a model of user behaviour; it only exists so the pipeline runs
    deterministically without network access. Ties go to "B".
    """
    a, b = parse_sets(prompt)
    return "A" if title_overlap(a) < title_overlap(b) else "B"


def _dig(doc, path: str):
    for name, index in _PATH_RE.findall(path):
        doc = doc[int(index)] if index else doc[name]
    return doc


def chat_completion(config: JudgeConfig, prompt: str, session=None) -> str:
    session = session or requests
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": config.model,
        "temperature": config.temperature,
        "messages": [{"role": "user", "content": prompt}],
    }
    resp = session.post(config.endpoint, json=payload, headers=headers, timeout=config.timeout)
    resp.raise_for_status()
    return str(_dig(resp.json(), config.reply_path))


def judge_preference(config: JudgeConfig, prompt: str, session=None) -> tuple[str, str]:
    """Ask the judge for a verdict.

    Returns:
        ``(label, raw_reply)`` with ``label`` one of ``"A"``, ``"B"`` or
        ``"invalid"`` once retries are exhausted. Never raises on transport
        problems.
    """
    if config.kind == "stub":
        reply = stub_reply(prompt)
        return parse_label(reply), reply
    reply = ""
    for attempt in range(config.max_retries):
        try:
            reply = chat_completion(config, prompt, session)
            label = parse_label(reply)
            if label != INVALID:
                return label, reply
            logger.warning("unparsable judge reply (attempt %d): %.80r", attempt + 1, reply)
        except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
            logger.warning("judge call failed (attempt %d): %s", attempt + 1, exc)
            reply = f"<error: {exc}>"
        if attempt + 1 < config.max_retries and config.retry_backoff > 0:
            time.sleep(config.retry_backoff * 2**attempt)
    return INVALID, reply


def map_verdict(label: str, a_is: str) -> str:
    """Translate an A/B letter back to ``off``/``on`` given the presentation."""
    if label not in ("A", "B"):
        return INVALID
    other = "on" if a_is == "off" else "off"
    return a_is if label == "A" else other


def run_ab_test(
    users: Sequence,
    lists: Mapping,
    titles: Mapping,
    config: JudgeConfig,
    seed: int = 0,
    history_titles: int = 10,
    k: int | None = None,
    h: int | None = None,
    judge: Callable[[JudgeConfig, str], tuple[str, str]] = judge_preference,
) -> AbResult:
    """Judge each user's (off, on) pair and collect trials in input order.

    ``lists`` maps user id to ``(off_items, on_items)``. Presentation order
    is drawn from a per-user stream, so results do not depend on how many
    judge calls run concurrently.
    """

    def one(user) -> AbTrial:
        off, on = lists[user.id]
        off, on = list(off), list(on)
        if not off or not on:
            raise ValueError(f"user {user.id} is missing a recommendation list")
        a_is = "on" if user_rng(seed, user.id, stream=1).random() < 0.5 else "off"
        a, b = (on, off) if a_is == "on" else (off, on)
        recent = [titles[i] for i in user.history_items[-history_titles:]]
        prompt = build_prompt(recent, [titles[i] for i in a], [titles[i] for i in b])
        label, reply = judge(config, prompt)
        return AbTrial(user.id, off, on, a_is, map_verdict(label, a_is), reply, label, k, h)

    if config.parallelism > 1 and config.kind != "stub":
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            trials = list(pool.map(one, users))
    else:
        trials = [one(u) for u in users]
    return AbResult(trials)


def write_trials(path, results: Sequence[AbResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            for trial in result.trials:
                fh.write(json.dumps(asdict(trial), sort_keys=True) + "\n")
