"""Instruction templates and prompt rendering.

Five instruction kinds are supported, addressable by short name:

    qg       query generation (completion; the query is the scored suffix)
    rg-few   relevance generation with four in-context demonstrations
    rg-zero  relevance generation, zero-shot
    pg-text  permutation generation as a single completion prompt
    pg-chat  permutation generation as an interleaved chat exchange

Template text is embedded verbatim below and only `{{placeholder}}`
substitution is applied, so rendered bytes are stable across releases.
Rendering is pure: identical inputs produce identical output.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .types import Candidate, CandidateList, MAX_WINDOW, Passage, Query

DEFAULT_MAX_WORDS = 120


class InstructionKind(enum.Enum):
    QUERY_GEN = "qg"
    RELEVANCE_GEN_FEW_SHOT = "rg-few"
    RELEVANCE_GEN_ZERO_SHOT = "rg-zero"
    PERMUTATION_TEXT = "pg-text"
    PERMUTATION_CHAT = "pg-chat"

    @property
    def key(self) -> str:
        return self.value

    @property
    def is_chat(self) -> bool:
        return self is InstructionKind.PERMUTATION_CHAT

    @property
    def is_permutation(self) -> bool:
        return self in (InstructionKind.PERMUTATION_TEXT, InstructionKind.PERMUTATION_CHAT)

    @staticmethod
    def from_key(key: str) -> "InstructionKind":
        for kind in InstructionKind:
            if kind.value == key:
                return kind
        known = ", ".join(k.value for k in InstructionKind)
        raise ValueError(f"unknown instruction kind {key!r} (known: {known})")


@dataclass(frozen=True)
class PromptMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role: {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class RenderedPrompt:
    """A prompt ready for the gateway.

    Chat kinds carry `messages`; completion kinds carry `text`.
    `identifier_map[i-1]` is the docid assigned identifier [i]; it is
    present exactly for the permutation kinds. `echo_suffix` marks the
    trailing span of `text` whose token log-probabilities are wanted.
    """

    kind: InstructionKind
    text: Optional[str] = None
    messages: Optional[tuple[PromptMessage, ...]] = None
    identifier_map: Optional[tuple[str, ...]] = None
    echo_suffix: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.messages is None):
            raise ValueError("exactly one of text or messages must be set")
        if self.kind.is_permutation != (self.identifier_map is not None):
            raise ValueError("identifier_map is required for permutation kinds only")
        if self.echo_suffix is not None:
            if self.text is None or not self.text.endswith(self.echo_suffix):
                raise ValueError("echo_suffix must be a suffix of text")


QUERY_GEN_TEMPLATE = """\
Please write a question based on this passage.

Passage: {{passage}}

Question: {{query}}"""

RELEVANCE_GEN_FEW_SHOT_TEMPLATE = """\
Given a passage and a query, predict whether the passage includes an answer to the query by producing either `Yes` or `No`.

Passage: Its 25 drops per ml, you guys are all wrong. If it is water, the standard was changed 15 - 20 years ago to make 20 drops = 1mL. The viscosity of most things is temperature dependent, so this would be at room temperature. Hope this helps.

Query: how many eye drops per ml

Does the passage answer the query?

Answer: Yes

Passage: RE: How many eyedrops are there in a 10 ml bottle of Cosopt? My Kaiser pharmacy insists that 2 bottles should last me 100 days but I run out way before that time when I am using 4 drops per day.In the past other pharmacies have given me 3 10-ml bottles for 100 days.E: How many eyedrops are there in a 10 ml bottle of Cosopt? My Kaiser pharmacy insists that 2 bottles should last me 100 days but I run out way before that time when I am using 4 drops per day.

Query: how many eye drops per ml

Does the passage answer the query?

Answer: No

Passage: : You can transfer money to your checking account from other Wells Fargo. accounts through Wells Fargo Mobile Banking with the mobile app, online, at any. Wells Fargo ATM, or at a Wells Fargo branch. 1 Money in — deposits.

Query: can you open a wells fargo account online

Does the passage answer the query?

Answer: No

Passage: You can open a Wells Fargo banking account from your home or even online. It is really easy to do, provided you have all of the appropriate documentation. Wells Fargo has so many bank account options that you will be sure to find one that works for you. They offer free checking accounts with free online banking.

Query: can you open a wells fargo account online

Does the passage answer the query?

Answer: Yes

Passage: {{passage}}

Query:{{query}}

Does the passage answer the query?

Answer:"""

RELEVANCE_GEN_ZERO_SHOT_TEMPLATE = """\
Given a passage and a query, predict whether the passage includes an answer to the query by producing either `Yes` or `No`.

Passage: {{passage}}

Query: {{query}}

Does the passage answer the query?

Answer:"""

PERMUTATION_TEXT_PREAMBLE = """\
This is RankGPT, an intelligent assistant that can rank passages based on their relevancy to the query.

The following are {{num}} passages, each indicated by number identifier []. I can rank them based on their relevance to query: {{query}}
"""

PERMUTATION_TEXT_POSTAMBLE = """\
The search query is: {{query}}

I will rank the {{num}} passages above based on their relevance to the search query. The passages will be listed in descending order using identifiers, and the most relevant passages should be listed first, and the output format should be [] > [] > etc, e.g., [1] > [2] > etc.

The ranking results of the {{num}} passages (only identifiers) is:"""

PERMUTATION_CHAT_SYSTEM = (
    "You are RankGPT, an intelligent assistant that can rank passages based on "
    "their relevancy to the query."
)

PERMUTATION_CHAT_PREAMBLE = (
    "I will provide you with {{num}} passages, each indicated by number "
    "identifier []. Rank them based on their relevance to query: {{query}}."
)

PERMUTATION_CHAT_READY = "Okay, please provide the passages."

PERMUTATION_CHAT_ACK = "Received passage [{{i}}]"

PERMUTATION_CHAT_FINAL = (
    "Search Query: {{query}}.\n"
    "Rank the {{num}} passages above based on their relevance to the search "
    "query. The passages should be listed in descending order using "
    "identifiers, and the most relevant passages should be listed first, and "
    "the output format should be [] > [], e.g., [1] > [2]. Only response the "
    "ranking results, do not say any word or explain."
)

TEMPLATES_BY_KIND: dict[InstructionKind, str] = {
    InstructionKind.QUERY_GEN: QUERY_GEN_TEMPLATE,
    InstructionKind.RELEVANCE_GEN_FEW_SHOT: RELEVANCE_GEN_FEW_SHOT_TEMPLATE,
    InstructionKind.RELEVANCE_GEN_ZERO_SHOT: RELEVANCE_GEN_ZERO_SHOT_TEMPLATE,
}


def _fill(template: str, values: dict[str, str]) -> str:
    out = template
    for name, value in values.items():
        out = out.replace("{{" + name + "}}", value)
    return out


def truncate_passage(text: str, max_words: int) -> str:
    """First max_words whitespace tokens, rejoined with single spaces."""
    if max_words < 1:
        raise ValueError(f"max_words must be >= 1, got {max_words}")
    return " ".join(text.split()[:max_words])


def _passage_content(passage: Passage, max_words: int) -> str:
    content = f"{passage.title} {passage.text}" if passage.title else passage.text
    return truncate_passage(content, max_words)


def _window_passages(
    target: Union[CandidateList, Sequence[Candidate], Sequence[Passage]],
) -> list[Passage]:
    if isinstance(target, CandidateList):
        return [c.passage for c in target.candidates]
    out = []
    for item in target:
        out.append(item.passage if isinstance(item, Candidate) else item)
    return out


def render(
    kind: InstructionKind,
    query: Query,
    target: Union[CandidateList, Sequence[Candidate], Sequence[Passage], Passage],
    max_words: int = DEFAULT_MAX_WORDS,
    window: int = MAX_WINDOW,
) -> RenderedPrompt:
    """Render one instruction.

    Permutation kinds take a window of candidates (identifiers assigned
    1..n in window order); the other kinds take a single passage.
    """
    if kind.is_permutation:
        if isinstance(target, Passage):
            raise ValueError(f"{kind.key} requires a candidate window, got a single passage")
        passages = _window_passages(target)
        if not passages:
            raise ValueError(f"{kind.key} requires a non-empty candidate window")
        if len(passages) > window:
            raise ValueError(f"window holds {len(passages)} passages, limit is {window}")
        if kind is InstructionKind.PERMUTATION_TEXT:
            return _render_permutation_text(query, passages, max_words)
        return _render_permutation_chat(query, passages, max_words)

    if not isinstance(target, Passage):
        raise ValueError(f"{kind.key} takes a single passage")
    filled = _fill(
        TEMPLATES_BY_KIND[kind],
        {"passage": _passage_content(target, max_words), "query": query.text},
    )
    echo = query.text if kind is InstructionKind.QUERY_GEN else None
    return RenderedPrompt(kind=kind, text=filled, echo_suffix=echo)


def _render_permutation_text(query: Query, passages: Sequence[Passage], max_words: int) -> RenderedPrompt:
    num = str(len(passages))
    parts = [_fill(PERMUTATION_TEXT_PREAMBLE, {"num": num, "query": query.text})]
    for i, passage in enumerate(passages, start=1):
        parts.append(f"[{i}] {_passage_content(passage, max_words)}\n")
    parts.append(_fill(PERMUTATION_TEXT_POSTAMBLE, {"num": num, "query": query.text}))
    return RenderedPrompt(
        kind=InstructionKind.PERMUTATION_TEXT,
        text="\n".join(parts),
        identifier_map=tuple(p.docid for p in passages),
    )


def _render_permutation_chat(query: Query, passages: Sequence[Passage], max_words: int) -> RenderedPrompt:
    num = str(len(passages))
    messages = [
        PromptMessage("system", PERMUTATION_CHAT_SYSTEM),
        PromptMessage("user", _fill(PERMUTATION_CHAT_PREAMBLE, {"num": num, "query": query.text})),
        PromptMessage("assistant", PERMUTATION_CHAT_READY),
    ]
    for i, passage in enumerate(passages, start=1):
        messages.append(PromptMessage("user", f"[{i}] {_passage_content(passage, max_words)}"))
        messages.append(PromptMessage("assistant", _fill(PERMUTATION_CHAT_ACK, {"i": str(i)})))
    messages.append(
        PromptMessage("user", _fill(PERMUTATION_CHAT_FINAL, {"num": num, "query": query.text}))
    )
    return RenderedPrompt(
        kind=InstructionKind.PERMUTATION_CHAT,
        messages=tuple(messages),
        identifier_map=tuple(p.docid for p in passages),
    )
