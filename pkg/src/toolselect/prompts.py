"""Query-generation prompt templates (unambiguous and ambiguous variants).

The rendered text is sent to an external LLM by the caller; this module only
builds it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from .registry import ModelCard

BASE_PROHIBITED = ("API", "tools", "model")

_HEADER = """\
### User: You are an NLP task expert. Given an API, you need to generate 20 different user queries that utilize the API function, adhering to the following input and output format for each query:
Input:
API Name: This is the name of the API Function.
Description: This is a detailed description of the model.
Prohibit Words: These are words that are prohibited from appearing in the output.

Output:
Query1: This is an instruction that can utilize the API function.
Query2: This is an instruction that can utilize the API function.
Query3: This is an instruction that can utilize the API function.
Query4: This is an instruction that can utilize the API function.
Query5: This is an instruction that can utilize the API function.
...
Query20: This is an instruction that can utilize the API function.

Below are some examples:"""

_RULES = (
    "1. When crafting queries, avoid including the API's name;",
    "2. Ensure that the queries are varied and diverse;",
    "3. When processing an input, any words listed in the Prohibited Words must be strictly excluded from the response",
)
_AMBIGUOUS_RULE = "4. The queries should not convey or imply multimodal information."


@dataclass(frozen=True)
class ExemplarBlock:
    api_name: str
    description: str
    prohibit_words: tuple[str, ...]
    # query number -> text; gaps in numbering render as an ellipsis line
    queries: dict[int, str]


def default_exemplars(ambiguous: bool) -> tuple[ExemplarBlock, ExemplarBlock]:
    """The two bundled expert-written example blocks for the chosen variant."""
    raw = json.loads(resources.files("toolselect").joinpath("data/exemplars.json").read_text(encoding="utf-8"))
    blocks = raw["ambiguous" if ambiguous else "unambiguous"]
    first, second = (
        ExemplarBlock(
            api_name=b["api_name"],
            description=b["description"],
            prohibit_words=tuple(b["prohibit_words"]),
            queries={int(k): v for k, v in b["queries"].items()},
        )
        for b in blocks
    )
    return first, second


def prohibited_words(extra: Iterable[str] = ()) -> tuple[str, ...]:
    words = list(BASE_PROHIBITED)
    for w in extra:
        w = w.strip()
        if w and w not in words:
            words.append(w)
    return tuple(words)


def _input_block(name: str, description: str, words: Sequence[str]) -> list[str]:
    return [
        "Input:",
        f"API Name: {name}",
        f"Description: {description}",
        f'Prohibit Words: "{", ".join(words)}"',
    ]


def _example(index: int, block: ExemplarBlock) -> list[str]:
    lines = [f"Example {index}:"]
    lines += _input_block(block.api_name, block.description, block.prohibit_words)
    lines += ["", "Output:"]
    previous = 0
    for n in sorted(block.queries):
        if n != previous + 1:
            lines.append("...")
        lines.append(f"Query{n}: {block.queries[n]}")
        previous = n
    return lines


def build_generation_prompt(
    card: ModelCard,
    ambiguous: bool,
    exemplars: Sequence[ExemplarBlock] | None = None,
    extra_prohibited: Iterable[str] = (),
) -> str:
    """Render the query-generation prompt for one API.

    The ambiguous variant adds a fourth rule forbidding queries that reveal
    the non-text input. Exemplars default to the bundled blocks for the
    chosen variant; callers normally pick two at random from their own pool.
    """
    if exemplars is None:
        exemplars = default_exemplars(ambiguous)
    if len(exemplars) != 2:
        raise ValueError("exactly two exemplar blocks are required")

    lines = [_HEADER]
    for i, block in enumerate(exemplars, start=1):
        lines += _example(i, block)
        lines.append("")
    rules = list(_RULES)
    if ambiguous:
        rules[-1] += ";"
        rules.append(_AMBIGUOUS_RULE)
    else:
        rules[-1] += "."
    lines += ["Note that:", *rules, "", "Now, let’s start."]
    lines += _input_block(card.api_name, card.description, prohibited_words(extra_prohibited))
    return "\n".join(lines) + "\n"
