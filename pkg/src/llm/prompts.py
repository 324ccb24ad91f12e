"""
Versioned prompt templates.

Each template is a UTF-8 file `<name>.txt`:

    version: 1
    === system ===
    ...
    === user ===
    ...

`{{placeholder}}` markers are substituted from a variables mapping; a marker
without a value raises PromptTemplateError.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Tuple

from config.settings import PROMPT_DIR
from src.utils.errors import PromptTemplateError

_PLACEHOLDER = re.compile(r"\{\{\s*(\w+)\s*\}\}")
_SECTION = re.compile(r"^=== (system|user) ===\s*$", re.MULTILINE)


def render_text(text: str, variables: Mapping[str, object]) -> str:
    def _substitute(match):
        name = match.group(1)
        if name not in variables:
            raise PromptTemplateError(f"missing value for placeholder '{name}'")
        return str(variables[name])

    return _PLACEHOLDER.sub(_substitute, text)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: int
    system: str
    user: str

    @property
    def placeholders(self) -> set:
        return set(_PLACEHOLDER.findall(self.system)) | set(_PLACEHOLDER.findall(self.user))

    def render(self, variables: Mapping[str, object]) -> Tuple[str, str]:
        return render_text(self.system, variables).strip(), render_text(self.user, variables).strip()

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        first, _, rest = text.partition("\n")
        m = re.match(r"^version:\s*(\d+)\s*$", first.strip())
        if not m:
            raise PromptTemplateError(f"template '{name}' must start with 'version: N'")
        parts = _SECTION.split(rest)
        sections: Dict[str, str] = {}
        for i in range(1, len(parts) - 1, 2):
            sections[parts[i]] = parts[i + 1]
        if "user" not in sections:
            raise PromptTemplateError(f"template '{name}' has no user section")
        return cls(name=name, version=int(m.group(1)),
                   system=sections.get("system", ""), user=sections["user"])


class PromptLibrary:
    """Loads templates from a directory on first use."""

    def __init__(self, prompt_dir=PROMPT_DIR):
        self.prompt_dir = Path(prompt_dir)
        self._templates: Dict[str, PromptTemplate] = {}

    def get(self, name: str) -> PromptTemplate:
        if name not in self._templates:
            path = self.prompt_dir / f"{name}.txt"
            if not path.exists():
                raise PromptTemplateError(f"no prompt template named '{name}' in {self.prompt_dir}")
            self._templates[name] = PromptTemplate.parse(name, path.read_text(encoding="utf-8"))
        return self._templates[name]

    def render(self, name: str, variables: Mapping[str, object]) -> Tuple[str, str]:
        return self.get(name).render(variables)
