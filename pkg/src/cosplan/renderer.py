"""Rasterize states to PNG and serialize maze/blocks states as plain text."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

from PIL import Image, ImageDraw, ImageFont

from .environments import (
    BLOCKS,
    MAZE,
    BlocksLayout,
    BlocksState,
    MazeLayout,
    MazeState,
    ShuffleState,
)

RGB = Tuple[int, int, int]


class RenderError(ValueError):
    pass


class UnsupportedDomain(RenderError):
    pass


DEFAULT_BLOCK_PALETTE: Dict[str, RGB] = {
    "red": (220, 50, 47),
    "green": (76, 175, 80),
    "blue": (33, 110, 220),
    "yellow": (245, 205, 40),
    "purple": (128, 70, 170),
    "orange": (245, 140, 30),
    "pink": (240, 120, 170),
    "light_pink": (250, 190, 210),
    "cyan": (40, 190, 200),
    "brown": (140, 90, 50),
    "gray": (150, 150, 150),
}

# nine tile colours for the built-in shuffle source
SHUFFLE_PATTERN = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25),
    (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60),
)


@dataclass(frozen=True)
class RenderTheme:
    cell_px: int = 100
    start: RGB = (40, 170, 60)
    goal: RGB = (30, 90, 230)
    obstacle: RGB = (215, 35, 35)
    checker: Tuple[RGB, RGB] = ((245, 245, 245), (25, 25, 25))
    background: RGB = (255, 255, 255)
    ink: RGB = (0, 0, 0)
    block_palette: Dict[str, RGB] = field(default_factory=lambda: dict(DEFAULT_BLOCK_PALETTE))
    font_scale: float = 0.45

    def __hash__(self):
        return hash((self.cell_px, self.start, self.goal, self.obstacle, self.checker,
                     tuple(sorted(self.block_palette.items())), self.font_scale))


@lru_cache(maxsize=8)
def _font(size: int):
    return ImageFont.load_default(size=size)


def _disc(draw: ImageDraw.ImageDraw, r: int, c: int, cell: int, color: RGB, frac: float):
    pad = cell * (1 - frac) / 2
    x0, y0 = c * cell + pad, r * cell + pad
    draw.ellipse([x0, y0, x0 + cell * frac, y0 + cell * frac], fill=color, outline=(255, 255, 255), width=2)


def _render_maze(state: MazeState, theme: RenderTheme) -> Image.Image:
    lay, cell = state.layout, theme.cell_px
    img = Image.new("RGB", (lay.cols * cell, lay.rows * cell), theme.background)
    draw = ImageDraw.Draw(img)
    for r in range(lay.rows):
        for c in range(lay.cols):
            draw.rectangle([c * cell, r * cell, (c + 1) * cell - 1, (r + 1) * cell - 1],
                           fill=theme.checker[(r + c) % 2])
    m = cell // 10
    for r, c in lay.obstacles:
        draw.rectangle([c * cell + m, r * cell + m, (c + 1) * cell - 1 - m, (r + 1) * cell - 1 - m],
                       fill=theme.obstacle)
    _disc(draw, *lay.goal, cell, theme.goal, 0.7)
    # the agent disc is drawn smaller so it stays visible when it sits on the goal
    _disc(draw, *state.agent, cell, theme.start, 0.45 if state.agent == lay.goal else 0.7)
    return img


def _render_blocks(state: BlocksState, theme: RenderTheme) -> Image.Image:
    lay, cell = state.layout, theme.cell_px
    for color in lay.colors:
        if color not in theme.block_palette:
            raise RenderError(f"theme has no colour {color!r}")
    rows = lay.num_blocks + 1  # tallest possible stack plus the label band
    img = Image.new("RGB", (lay.num_columns * cell, rows * cell), theme.background)
    draw = ImageDraw.Draw(img)
    font = _font(int(cell * theme.font_scale))
    floor = lay.num_blocks * cell
    draw.line([0, floor, lay.num_columns * cell, floor], fill=theme.ink, width=3)
    for c in range(lay.num_columns):
        draw.text(((c + 0.5) * cell, floor + cell / 2), str(c), fill=theme.ink, font=font, anchor="mm")
        for level, b in enumerate(state.columns[c]):
            y1 = floor - level * cell
            m = cell // 12
            rgb = theme.block_palette[lay.colors[b]]
            draw.rectangle([c * cell + m, y1 - cell + m, (c + 1) * cell - m, y1 - m], fill=rgb,
                           outline=theme.ink, width=2)
            light = sum(rgb) / 3 > 140
            draw.text(((c + 0.5) * cell, y1 - cell / 2), str(b), fill=(0, 0, 0) if light else (255, 255, 255),
                      font=font, anchor="mm")
    return img


def shuffle_source(grid: Tuple[int, int], theme: RenderTheme, image: Optional[Image.Image] = None) -> Image.Image:
    """The unshuffled picture: ``image`` resized to the grid, or the built-in pattern."""
    rows, cols = grid
    size = (cols * theme.cell_px, rows * theme.cell_px)
    if image is not None:
        return image.convert("RGB").resize(size, Image.Resampling.BILINEAR)
    cell = theme.cell_px
    img = Image.new("RGB", size, theme.background)
    draw = ImageDraw.Draw(img)
    for i in range(rows * cols):
        r, c = divmod(i, cols)
        draw.rectangle([c * cell, r * cell, (c + 1) * cell - 1, (r + 1) * cell - 1],
                       fill=SHUFFLE_PATTERN[i % len(SHUFFLE_PATTERN)])
    # one large ring across the whole picture so a solved image reads as whole
    w, h = size
    draw.ellipse([w * 0.15, h * 0.15, w * 0.85, h * 0.85], outline=(255, 255, 255), width=max(2, cell // 12))
    draw.line([0, 0, w, h], fill=(0, 0, 0), width=max(2, cell // 20))
    return img


def _render_shuffle(state: ShuffleState, theme: RenderTheme, source: Optional[Image.Image]) -> Image.Image:
    src = shuffle_source(state.grid, theme, source)
    cell = theme.cell_px
    out = Image.new("RGB", src.size)
    cols = state.grid[1]
    for pos, tile in enumerate(state.perm):
        tr, tc = divmod(tile, cols)
        pr, pc = divmod(pos, cols)
        patch = src.crop((tc * cell, tr * cell, (tc + 1) * cell, (tr + 1) * cell))
        out.paste(patch, (pc * cell, pr * cell))
    return out


def render_state(state, theme: Optional[RenderTheme] = None, source: Optional[Image.Image] = None) -> Image.Image:
    theme = theme or RenderTheme()
    if isinstance(state, MazeState):
        return _render_maze(state, theme)
    if isinstance(state, BlocksState):
        return _render_blocks(state, theme)
    if isinstance(state, ShuffleState):
        return _render_shuffle(state, theme, source)
    raise UnsupportedDomain(f"cannot render {type(state).__name__}")


def compose_pair(initial_img: Image.Image, goal_img: Image.Image) -> Image.Image:
    """Side-by-side composite with the initial state on the left."""
    if initial_img.height != goal_img.height:
        raise RenderError(f"height mismatch {initial_img.height} vs {goal_img.height}")
    out = Image.new("RGB", (initial_img.width + goal_img.width, initial_img.height))
    out.paste(initial_img, (0, 0))
    out.paste(goal_img, (initial_img.width, 0))
    return out


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def pair_png(instance, theme: Optional[RenderTheme] = None) -> bytes:
    return png_bytes(compose_pair(render_state(instance.initial, theme), render_state(instance.goal, theme)))


def write_pair(instance, out_dir, theme: Optional[RenderTheme] = None) -> Path:
    path = Path(out_dir) / f"{instance.id}_pair.png"
    path.write_bytes(pair_png(instance, theme))
    return path


# -- text form ----------------------------------------------------------------


def text_serialize(state) -> str:
    """Maze: row-major grid of ``.`` free, ``#`` obstacle, ``S`` start, ``G`` goal,
    with the agent (when away from the start) shown as ``a`` on a free cell,
    ``x`` inside an obstacle and ``g`` on the goal. Blocks: bottom-to-top ids per column."""
    if isinstance(state, MazeState):
        lay = state.layout
        grid = [["." for _ in range(lay.cols)] for _ in range(lay.rows)]
        for r, c in lay.obstacles:
            grid[r][c] = "#"
        grid[lay.start[0]][lay.start[1]] = "S"
        grid[lay.goal[0]][lay.goal[1]] = "G"
        if state.agent != lay.start:
            r, c = state.agent
            grid[r][c] = {"#": "x", "G": "g"}.get(grid[r][c], "a")
        return "\n".join("".join(row) for row in grid)
    if isinstance(state, BlocksState):
        return " | ".join(f"col{i}: {' '.join(map(str, s))}".rstrip() for i, s in enumerate(state.columns))
    raise UnsupportedDomain(f"{getattr(state, 'domain', type(state).__name__)} has no text-only form")


_COL = re.compile(r"^col(\d+):\s*([\d ]*)$")


def parse_text(text: str, domain: str, layout: Optional[BlocksLayout] = None):
    """Inverse of :func:`text_serialize`. Blocks text carries no colours, so the
    layout may be supplied; otherwise colours default to the palette order."""
    if domain == MAZE:
        rows = text.strip("\n").split("\n")
        obstacles, start, goal, agent = [], None, None, None
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                if ch in "#x":
                    obstacles.append((r, c))
                if ch == "S":
                    start = (r, c)
                if ch in "Gg":
                    goal = (r, c)
                if ch in "axg":
                    agent = (r, c)
        if start is None or goal is None:
            raise ValueError("maze text needs both S and G")
        lay = MazeLayout(len(rows), len(rows[0]), obstacles, start, goal)
        return MazeState(lay, agent or start)
    if domain == BLOCKS:
        columns = []
        for part in text.split("|"):
            m = _COL.match(part.strip())
            if not m or int(m.group(1)) != len(columns):
                raise ValueError(f"bad column text {part!r}")
            columns.append(tuple(int(x) for x in m.group(2).split()))
        n = sum(len(c) for c in columns)
        if layout is None:
            layout = BlocksLayout(n, list(DEFAULT_BLOCK_PALETTE)[:n], len(columns))
        return BlocksState(layout, columns)
    raise UnsupportedDomain(f"{domain} has no text-only form")


__all__ = [
    "RenderTheme", "RenderError", "UnsupportedDomain", "render_state", "compose_pair", "text_serialize",
    "parse_text", "pair_png", "png_bytes", "write_pair", "shuffle_source",
]
