"""On-disk prompt pack: one text template per prompt.

Prompts are data, not code. A pack is a directory of ``*.txt`` templates
with ``{placeholder}`` variables; its content hash goes into every run
manifest so curricula record exactly which prompts produced them.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from .gateway import ChatMessage

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

DEFAULT_PACK_DIR = Path(__file__).parent / "prompt_pack"


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt: template id, messages, and the bindings used."""

    template_id: str
    messages: tuple[ChatMessage, ...]
    variables: dict

    @property
    def text(self) -> str:
        return self.messages[-1].content


class PromptPack:
    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"prompt pack directory missing: {self.directory}")
        self._templates: dict[str, str] = {}
        for path in sorted(self.directory.glob("*.txt")):
            self._templates[path.stem] = path.read_text(encoding="utf-8")
        if not self._templates:
            raise TemplateError(f"prompt pack is empty: {self.directory}")

    @classmethod
    def default(cls) -> "PromptPack":
        return cls(DEFAULT_PACK_DIR)

    @property
    def names(self) -> list[str]:
        return sorted(self._templates)

    @property
    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self._templates):
            digest.update(name.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(self._templates[name].encode("utf-8"))
            digest.update(b"\x00")
        return digest.hexdigest()

    def placeholders(self, name: str) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.template(name)))

    def template(self, name: str) -> str:
        if name not in self._templates:
            raise TemplateError(f"unknown prompt template {name!r}; have {self.names}")
        return self._templates[name]

    def render(self, name: str, **variables) -> PromptBundle:
        """Render one template into a single user message.

        Every placeholder must be bound exactly once: unbound or unused
        variables are template bugs and fail loudly.
        """
        template = self.template(name)
        needed = self.placeholders(name)
        given = set(variables)
        if needed - given:
            raise TemplateError(f"{name}: unbound placeholders {sorted(needed - given)}")
        if given - needed:
            raise TemplateError(f"{name}: unused variables {sorted(given - needed)}")

        def substitute(match):
            return str(variables[match.group(1)])

        text = _PLACEHOLDER_RE.sub(substitute, template)
        return PromptBundle(name, (ChatMessage("user", text),), dict(variables))
