"""Resource quantities, requests and device-attribute predicates."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Mapping

CPU = "cpu"
MEMORY = "memory"
BYTE_RESOURCES = {MEMORY, "ephemeral-storage", "storage"}

_BINARY = {"Ki": 2**10, "Mi": 2**20, "Gi": 2**30, "Ti": 2**40, "Pi": 2**50, "Ei": 2**60}
_DECIMAL = {"k": 10**3, "M": 10**6, "G": 10**9, "T": 10**12, "P": 10**15, "E": 10**18}


class QuantityError(ValueError):
    pass


def _decimal(text: str) -> Decimal:
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise QuantityError(f"not a number: {text!r}") from None
    if not d.is_finite() or d < 0:
        raise QuantityError(f"quantity must be finite and non-negative: {text!r}")
    return d


def parse_quantity(resource: str, value: Any) -> int:
    """Canonical integer amount: millicores for cpu, bytes for memory, counts otherwise."""
    if isinstance(value, bool):
        raise QuantityError(f"{resource}: boolean is not a quantity")
    text = str(value).strip()
    if not text:
        raise QuantityError(f"{resource}: empty quantity")
    if resource == CPU:
        if text.endswith("m"):
            d = _decimal(text[:-1])
        else:
            d = _decimal(text) * 1000
        if d != d.to_integral_value():
            raise QuantityError(f"cpu quantity {text!r} is finer than 1m")
        return int(d)
    if resource in BYTE_RESOURCES:
        for suffixes in (_BINARY, _DECIMAL):
            for suf, mult in suffixes.items():
                if text.endswith(suf):
                    d = _decimal(text[: -len(suf)]) * mult
                    break
            else:
                continue
            break
        else:
            d = _decimal(text)
        if d != d.to_integral_value():
            raise QuantityError(f"{resource} quantity {text!r} is not a whole number of bytes")
        return int(d)
    d = _decimal(text)
    if d != d.to_integral_value():
        raise QuantityError(f"{resource} count {text!r} must be an integer")
    return int(d)


def format_quantity(resource: str, amount: int) -> str:
    if resource == CPU:
        return f"{amount // 1000}" if amount % 1000 == 0 else f"{amount}m"
    if resource in BYTE_RESOURCES:
        for suf in ("Gi", "Mi", "Ki"):
            mult = _BINARY[suf]
            if amount and amount % mult == 0:
                return f"{amount // mult}{suf}"
        return str(amount)
    return str(amount)


_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    "<=": operator.le,
    ">": operator.gt,
    "<": operator.lt,
}


@dataclass(frozen=True)
class AttributePredicate:
    attribute: str
    operator: str
    value: Any

    def __post_init__(self) -> None:
        if self.operator not in _OPS:
            raise ValueError(f"unknown operator {self.operator!r}; expected one of {sorted(_OPS)}")

    def __call__(self, attributes: Mapping[str, Any]) -> bool:
        if self.attribute not in attributes:
            return False
        have = attributes[self.attribute]
        if self.operator in ("==", "!="):
            return _OPS[self.operator](have, self.value)
        numeric = (int, float)
        if isinstance(have, bool) or isinstance(self.value, bool):
            return False
        if isinstance(have, numeric) and isinstance(self.value, numeric):
            return _OPS[self.operator](have, self.value)
        if isinstance(have, str) and isinstance(self.value, str):
            return _OPS[self.operator](have, self.value)
        return False

    def to_dict(self) -> dict:
        return {"attribute": self.attribute, "operator": self.operator, "value": self.value}


def matches_all(predicates, attributes: Mapping[str, Any]) -> bool:
    return all(p(attributes) for p in predicates)


@dataclass(frozen=True)
class DeviceClaim:
    class_name: str
    count: int = 1
    constraints: tuple[AttributePredicate, ...] = ()


@dataclass(frozen=True)
class ResourceRequest:
    requests: dict[str, int] = field(default_factory=dict)
    limits: dict[str, int] = field(default_factory=dict)
    device_claims: tuple[DeviceClaim, ...] = ()

    def problems(self) -> list[str]:
        out = []
        for name, amount in {**self.requests, **self.limits}.items():
            if amount < 0:
                out.append(f"{name} must be >= 0")
        for name, req in self.requests.items():
            if name in self.limits and self.limits[name] < req:
                out.append(f"limit for {name} is below its request")
        for c in self.device_claims:
            if c.count < 0:
                out.append(f"device claim {c.class_name} count must be >= 0")
        return out

    def charge(self) -> dict[str, int]:
        """Amounts charged against quota and node capacity: requests plus claimed devices."""
        out = {k: v for k, v in self.requests.items() if v}
        for c in self.device_claims:
            if c.count:
                out[c.class_name] = out.get(c.class_name, 0) + c.count
        return out
