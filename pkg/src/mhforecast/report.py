"""Tiny indented key/value tree format for run reports.

Human-readable, dependency-free, and byte-exact to diff: scalars are
written with ``repr`` so floats round-trip, sections are two-space
indented. ``parse_report`` inverts ``format_report``.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ParseError

INDENT = "  "


def _leaf(value):
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, list):
        return repr([_py(v) for v in value])
    return repr(_py(value))


def _py(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def format_report(tree: dict, level: int = 0) -> str:
    lines = []
    for key, value in tree.items():
        pad = INDENT * level
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(format_report(value, level + 1))
        else:
            lines.append(f"{pad}{key}: {_leaf(value)}")
    return "\n".join(line for line in lines if line != "")


def write_report(path, tree: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_report(tree))
        fh.write("\n")


def parse_report(text: str) -> dict:
    root: dict = {}
    stack = [(-1, root)]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        depth = (len(raw) - len(raw.lstrip(" "))) // len(INDENT)
        key, sep, rest = raw.strip().partition(":")
        if not sep:
            raise ParseError(f"line {lineno}: missing ':' separator")
        while stack and stack[-1][0] >= depth:
            stack.pop()
        if not stack:
            raise ParseError(f"line {lineno}: bad indentation")
        parent = stack[-1][1]
        rest = rest.strip()
        if rest == "":
            child: dict = {}
            parent[key] = child
            stack.append((depth, child))
        else:
            try:
                parent[key] = ast.literal_eval(rest)
            except (ValueError, SyntaxError):
                parent[key] = rest
    return root


def read_report(path) -> dict:
    with open(path) as fh:
        return parse_report(fh.read())
