"""Prompt construction for the vanilla / CoT / scene-graph methods and
answer-label extraction."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from .environments import BLOCKS, FREETEXT, MAZE, SHUFFLE

METHODS = ("vanilla", "cot", "sg", "sgi")
TASKS = ("step", "error")
UNPARSEABLE = "unparseable"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    method: str = "sgi"
    error_threshold: float = 0.75
    template_set: str = "default"
    deterministic: bool = True
    exclude_errors: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.error_threshold < 1.0:
            raise ValueError("error_threshold must lie in (0, 1)")


# CoT templates. {context} and {options} are filled per instance.
_MAZE_COT = """Please analyze this grid-based image following these specific instructions along with the provided context:

You are looking at a grid pattern image that contains:
- A grid structure (e.g., 3x3 or 4x4 etc)
- A designated start point (e.g., marked by a green circle)
- A designated end point (e.g., marked by a blue circle)
- Obstacles (e.g., represented as red rectangular blocks)

Determine a path from the start point to the end point, avoiding obstacles. Provide your answer in two formats:

Path Coordinates:
Start at the designated start point and list all coordinates as [(row,col)], where (0,0) is the top-left cell.

Directional Instructions:
Starting from the designated start point, provide step-by-step directions.

For example, if a path from top-left to bottom-right around an obstacle is observed, the response should be structured as:
Path Coordinates: [(0,0), (0,1), (0,2), (1,2), (2,2)]

Please verify that:
- The path originates from the start point.
- The path terminates at the end point.
- The path circumvents all obstacles.
- Only horizontal and vertical movements are utilized.

Identify the path present in the image.

The path has already started with the initial step: {context}

You will be presented with a set of options, each representing a potential path. Select the option that correctly guides from the start to the end point. Options are provided as: {{Option Label: 'Path Description', ...}}.
{options}"""

_BLOCKS_COT = """Given an image depicting a Block Manipulation transformation, identify the correct sequence of moves to transition from the initial state (left) to the final state (right).

In this Block Manipulation scenario:
- Blocks are uniquely identified (e.g., by numbers and colors).
- Columns are labelled from 0 - 4 from left to right
- Blocks can only be moved onto the top of other blocks or into empty columns.
- A block can only be moved if it is clear of blocks above it.
- Each move is described as: Move block [Identifier] from column [Source Column] to column [Destination Column].

The following steps have already been performed:
Preceding Steps: {context}

From the current state, select the correct option from the provided choices.
Options: {options}

Analyze the image and determine the correct option. Consider:
1. The initial configuration of blocks.
2. Which blocks are currently movable (unobstructed).
3. The feasibility of each move.
4. Whether the sequence of moves results in the depicted final state.

Provide only the label of the correct option (e.g., A, B, C, or D) without any explanation."""

_SHUFFLE_COT = """Given information about image patches, determine the subsequent steps required to rearrange a shuffled image into a target image.

The image is composed of patches, and each patch is identified by its row and column index, starting from (0,0) for the top-left patch.

The following rearrangement steps have already been executed:
Preceding Steps: {context}

Select the correct option that outlines the subsequent steps to correctly rearrange the patches from the current shuffled state to the target image.
Options: {options}

Provide only the option label as the answer, without any explanation."""

_FREETEXT_COT = """Review the provided composite image, which illustrates two states: the initial state (left) and the completed state (right). A robotic arm has performed a sequence of actions to transition between these states. Your task is to identify any errors within the executed actions that would prevent reaching the completed state, or to detect any unnecessary steps. It is assumed that all listed actions have been completed, and any subsequent actions must build upon this sequence.

The sequence of actions already performed is given as:
Actions Taken: {context}

From the provided options, select the step(s) that best contribute to achieving the completed state.
Possible Steps: {options}

The answer should be in the form of the option label (e.g., A, B, C, ...) representing the correct choice(s), without any explanation."""

COT_TEMPLATES = {MAZE: _MAZE_COT, BLOCKS: _BLOCKS_COT, SHUFFLE: _SHUFFLE_COT, FREETEXT: _FREETEXT_COT}

_VANILLA = """The image shows an initial state (left) and a goal state (right).
Actions already performed: {context}
{question}
{options}
Answer with the option label only."""

_ERROR_QUESTION = ("Exactly one of the performed actions may be erroneous (illegal or leading away from the goal). "
                   "Which action is the error? Choose \"None of the above\" if every action is fine.")
_STEP_QUESTION = "Which option continues from the current state and reaches the goal state?"

_ERROR_COT_SUFFIX = """
Check each performed action in order: is it legal in the state it was taken from, and does it move closer to the goal?
Options: {options}
Provide only the label of the erroneous action, or the label of "None of the above"."""

_SG_BLOCK = """
Scene graph of the initial state:
{initial}

Scene graph of the goal state:
{goal}
"""

_TEXT_ONLY = """Initial state:
{initial}

Goal state:
{goal}
"""


def _format_context(domain: str, actions) -> str:
    if not actions:
        return "(none)"
    texts = [a.text for a in actions]
    if domain == BLOCKS:
        return ", ".join(f"{i}. {t}" for i, t in enumerate(texts))
    if domain == SHUFFLE:
        return ", ".join(f"Step {i}: {t}" for i, t in enumerate(texts, 1))
    if domain == FREETEXT:
        return ", ".join(f"{i}- {t}" for i, t in enumerate(texts, 1))
    return ", ".join(texts)


def format_option(domain: str, value) -> str:
    if isinstance(value, str):
        return value
    texts = [a.text for a in value]
    if domain == SHUFFLE:
        return ", ".join(f"Step {i}: {t}" for i, t in enumerate(texts, 1))
    if domain == MAZE:
        return ", ".join(texts)
    return ", ".join(f"{i}. {t}" for i, t in enumerate(texts, 1))


def _format_options(domain: str, mcq) -> str:
    return "\n".join(f"Option {label}: {format_option(domain, v)}" for label, v in mcq.options.items())


@dataclass
class PromptDocument:
    instance: Any
    task: str
    method: str
    text: str
    labels: List[str]
    text_only: bool = False
    image_refs: List[str] = field(default_factory=list)
    _images: Optional[List[bytes]] = field(default=None, repr=False)

    def images(self) -> List[bytes]:
        """PNG payloads, rendered lazily (text-only prompts have none)."""
        if self.text_only:
            return []
        if self._images is None:
            from .renderer import pair_png

            self._images = [pair_png(self.instance)] if self.instance.initial is not None else []
        return self._images


def build_prompt(instance, method: str, task: str, graphs: Optional[Sequence] = None,
                 text_only: Optional[bool] = None) -> PromptDocument:
    """Prompt for one MCQ. ``graphs`` (initial, goal) is required for the sg method."""
    if method == "sgi":
        raise PromptError("sgi issues its own per-call prompts")
    if method not in METHODS:
        raise PromptError(f"unknown method {method!r}")
    if task not in TASKS:
        raise PromptError(f"unknown task {task!r}")
    mcq = instance.step_mcq if task == "step" else instance.error_mcq
    if mcq is None:
        raise PromptError(f"{instance.id} has no {task} question")
    domain = instance.domain
    if text_only is None:
        text_only = bool(instance.flags.get("text_only"))
    context = _format_context(domain, instance.context)
    options = _format_options(domain, mcq)
    if method == "vanilla":
        question = _STEP_QUESTION if task == "step" else _ERROR_QUESTION
        text = _VANILLA.format(context=context, question=question, options=options)
    else:
        template = COT_TEMPLATES.get(domain)
        if template is None:
            raise PromptError(f"no CoT template for {domain}")
        if task == "step":
            text = template.format(context=context, options=options)
        else:
            if domain == SHUFFLE:
                raise PromptError("no error-detection template for shuffle")
            head = template.split("\n\n")[0]
            text = head + "\n\nActions already performed: " + context + _ERROR_COT_SUFFIX.format(options=options)
        if method == "sg":
            if not graphs or len(graphs) != 2:
                raise PromptError("the sg method needs initial and goal scene graphs")
            text += _SG_BLOCK.format(initial=graphs[0].to_json(indent=2), goal=graphs[1].to_json(indent=2))
    if text_only:
        from .renderer import text_serialize

        text = _TEXT_ONLY.format(initial=text_serialize(instance.initial), goal=text_serialize(instance.goal)) + \
            "\n" + text.replace("image", "description")
    return PromptDocument(instance, task, method, text, list(mcq.options), text_only, list(instance.render_refs))


# -- answer parsing ------------------------------------------------------------


@dataclass(frozen=True)
class Choice:
    label: Optional[str]
    ambiguous: bool
    raw: str

    @property
    def parsed(self) -> bool:
        return self.label is not None


def parse_choice(raw: str, labels: Sequence[str]) -> Choice:
    """First standalone valid label in ``raw``; flags answers naming more than one."""
    valid = set(labels)
    found = []
    for m in re.finditer(r"(?<![A-Za-z])([A-J])(?![A-Za-z])", raw or ""):
        tok = m.group(1)
        if tok in valid:
            found.append(tok)
    if not found:
        return Choice(None, False, raw or "")
    return Choice(found[0], len(set(found)) > 1, raw)


def graph_request(role: str, domain: str) -> str:
    """Per-call prompt asking for one scene graph."""
    return (f"Analyze the {role} state ({'left' if role == 'initial' else 'right'} half of the image) and return its "
            f"scene graph as JSON with keys objects, relationships, environment and action_history. "
            f"Domain: {domain}. Reply with JSON only.")


def simulate_request(graph_json: str, action_text: str) -> str:
    return ("Given the scene graph below, simulate the action and return the updated scene graph as JSON, "
            "appending one action_history entry with its state_changes and a validity flag.\n"
            f"Action: {action_text}\nScene graph:\n{graph_json}\nReply with JSON only.")


def similarity_request(graph_json: str, goal_json: str) -> str:
    return ("Compare the scene graph with the target scene graph and score their similarity from 0 to 100, "
            "accounting for goal achievement and any invalid actions in the history. "
            'Reply with JSON: {"similarity": <number>}.\n'
            f"Scene graph:\n{graph_json}\nTarget scene graph:\n{goal_json}")


def to_json(obj: Any) -> str:
    return json.dumps(obj, indent=2)
