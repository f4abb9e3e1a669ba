"""Versioned prompt assets.

Templates use ``string.Template`` placeholders (``$name``) so JSON examples
inside prompts need no escaping.  Because prompt text ends up inside every
request, editing an asset changes the cache keys of the requests built from
it.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path
from string import Template
from typing import Mapping

NAMES = (
    "knowledge",
    "decompose",
    "decompose_repair",
    "templatize",
    "standard",
    "cot",
    "example",
    "fact_verify",
    "fact_verify_batch",
    "reason_nl",
    "reason_sy",
    "judge_correctness",
    "judge_faithfulness",
)


def _packaged() -> dict[str, str]:
    root = resources.files(__name__)
    return {name: root.joinpath(f"{name}.txt").read_text(encoding="utf-8") for name in NAMES}


class PromptLibrary:
    def __init__(self, texts: Mapping[str, str] | None = None):
        self.texts = dict(_packaged() if texts is None else texts)
        missing = set(NAMES) - set(self.texts)
        if missing:
            raise KeyError(f"missing prompt assets: {sorted(missing)}")

    @classmethod
    def from_directory(cls, directory: str | Path) -> "PromptLibrary":
        """Packaged assets, overridden by any ``<name>.txt`` found in ``directory``."""
        texts = _packaged()
        for name in NAMES:
            p = Path(directory) / f"{name}.txt"
            if p.exists():
                texts[name] = p.read_text(encoding="utf-8")
        return cls(texts)

    def with_override(self, name: str, text: str) -> "PromptLibrary":
        texts = dict(self.texts)
        texts[name] = text
        return PromptLibrary(texts)

    def raw(self, name: str) -> str:
        return self.texts[name]

    def render(self, name: str, **values: object) -> str:
        return Template(self.texts[name]).substitute({k: str(v) for k, v in values.items()}).strip()

    def hashes(self) -> dict[str, str]:
        return {name: hashlib.sha256(self.texts[name].encode("utf-8")).hexdigest() for name in NAMES}


DEFAULT = PromptLibrary()
