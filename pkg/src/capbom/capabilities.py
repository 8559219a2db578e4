"""Capability vocabulary and the mapping from Node.js surface names to capabilities.

Seven capability groups cover the privileged surface of the runtime. Three
avenues map onto them: built-in module specifiers, global variable names, and
process.binding names. Everything not mapped here is allowed by default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path


class Capability(Enum):
    ADDON = "addon"
    CODE = "code"
    COMMAND = "command"
    CRYPTO = "crypto"
    FILE_SYSTEM = "file-system"
    NETWORK = "network"
    SYSTEM = "system"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Capability":
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown capability: {text!r}")


# Module specifiers are stored bare; the "node:" prefix is folded off before
# lookup. Subpaths of a privileged module inherit its capability.
PRIVILEGED_MODULES: dict[str, Capability] = {
    "vm": Capability.CODE,
    "child_process": Capability.COMMAND,
    "worker_threads": Capability.COMMAND,
    "crypto": Capability.CRYPTO,
    "fs": Capability.FILE_SYSTEM,
    "fs/promises": Capability.FILE_SYSTEM,
    "net": Capability.NETWORK,
    "http": Capability.NETWORK,
    "http2": Capability.NETWORK,
    "https": Capability.NETWORK,
    "dns": Capability.NETWORK,
    "dns/promises": Capability.NETWORK,
    "tls": Capability.NETWORK,
    "dgram": Capability.NETWORK,
    "os": Capability.SYSTEM,
    "process": Capability.SYSTEM,
}

GLOBAL_RULES: dict[str, Capability] = {
    "eval": Capability.CODE,
    "Function": Capability.CODE,
    "Crypto": Capability.CRYPTO,
    "crypto": Capability.CRYPTO,
    "CryptoKey": Capability.CRYPTO,
    "SubtleCrypto": Capability.CRYPTO,
    "fetch": Capability.NETWORK,
    "process": Capability.SYSTEM,
}

BINDING_RULES: dict[str, Capability] = {
    "spawn": Capability.COMMAND,
    "spawn_sync": Capability.COMMAND,
    "crypto": Capability.CRYPTO,
}

#: Global names the capability model treats as sensitive (prunable from hosts,
#: one-time-delivered to guests).
SENSITIVE_GLOBALS: frozenset[str] = frozenset(GLOBAL_RULES)


def normalize_specifier(specifier: str) -> str:
    """Fold the optional "node:" prefix off a module specifier."""
    if specifier.startswith("node:"):
        return specifier[len("node:"):]
    return specifier


def _load_data(name: str, key: str) -> tuple[str, ...]:
    with resources.files("capbom.data").joinpath(name).open("r", encoding="utf-8") as f:
        doc = json.load(f)
    return tuple(doc[key])


@dataclass(frozen=True)
class CapabilityMap:
    """The total mapping plus the default-allowed builtin manifest.

    The manifest is versioned data: it pins which builtin specifiers the
    target runtime ships, so policy output does not drift with the runtime
    the tool happens to run beside.
    """

    builtin_manifest: frozenset[str]
    default_globals: tuple[str, ...] = field(default=(), repr=False)

    @classmethod
    def bundled(cls) -> "CapabilityMap":
        return cls(
            builtin_manifest=frozenset(_load_data("builtin_modules.json", "modules")),
            default_globals=_load_data("default_globals.json", "globals"),
        )

    @classmethod
    def with_manifest_file(cls, path: Path) -> "CapabilityMap":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        modules = doc["modules"] if isinstance(doc, dict) else doc
        return cls(
            builtin_manifest=frozenset(modules),
            default_globals=_load_data("default_globals.json", "globals"),
        )

    def capability_of_import(self, specifier: str) -> Capability | None:
        if not specifier:
            return None
        if specifier.endswith(".node"):
            return Capability.ADDON
        bare = normalize_specifier(specifier)
        if bare in PRIVILEGED_MODULES:
            return PRIVILEGED_MODULES[bare]
        # Unlisted subpath of a privileged module inherits its capability.
        head = bare.split("/", 1)[0]
        if "/" in bare and head in PRIVILEGED_MODULES:
            return PRIVILEGED_MODULES[head]
        return None

    def capability_of_global(self, name: str) -> Capability | None:
        return GLOBAL_RULES.get(name)

    def capability_of_binding(self, name: str) -> Capability | None:
        return BINDING_RULES.get(name)

    def builtin_is_default_allowed(self, specifier: str) -> bool:
        bare = normalize_specifier(specifier)
        return bare in self.builtin_manifest and self.capability_of_import(bare) is None

    def default_allowed_builtins(self) -> tuple[str, ...]:
        """Ic: every manifest builtin that carries no capability, sorted."""
        return tuple(sorted(
            m for m in self.builtin_manifest if self.capability_of_import(m) is None
        ))

    def privileged_builtins_for(self, capability: Capability) -> tuple[str, ...]:
        """Id contribution of one granted capability, sorted bare names."""
        return tuple(sorted(
            m for m, cap in PRIVILEGED_MODULES.items() if cap is capability
        ))

    def granted_globals(self, capabilities: frozenset[Capability]) -> tuple[str, ...]:
        return tuple(sorted(
            name for name, cap in GLOBAL_RULES.items() if cap in capabilities
        ))

    def granted_bindings(self, capabilities: frozenset[Capability]) -> tuple[str, ...]:
        return tuple(sorted(
            name for name, cap in BINDING_RULES.items() if cap in capabilities
        ))


_BUNDLED: CapabilityMap | None = None


def bundled_map() -> CapabilityMap:
    global _BUNDLED
    if _BUNDLED is None:
        _BUNDLED = CapabilityMap.bundled()
    return _BUNDLED


def capability_of_import(specifier: str) -> Capability | None:
    return bundled_map().capability_of_import(specifier)


def capability_of_global(name: str) -> Capability | None:
    return bundled_map().capability_of_global(name)


def capability_of_binding(name: str) -> Capability | None:
    return bundled_map().capability_of_binding(name)


def builtin_is_default_allowed(specifier: str) -> bool:
    return bundled_map().builtin_is_default_allowed(specifier)
