"""Candidate generation: seed expansion, the 10 generic byte-level parameter
mutators and the 3 special payload mutators."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .model import (
    Candidate,
    EndpointConfig,
    HASH_LOCATION_ORDER,
    MarkerToken,
    ParamMode,
    VulnClass,
    candidate_hash,
    new_feedback_id,
)

MAX_INITIAL_CANDIDATES = 1024
MAX_VALUE_LEN = 64 * 1024

# Printable ASCII without CR/LF; header values must stay single-line.
PRINTABLE = "".join(chr(i) for i in range(0x20, 0x7F))
DIGITS = "0123456789"

PROTOCOL_PREFIXES = ("http://", "https://", "ftp://")
PATR_PAYLOADS = ("../", "/etc/passwd")
XSS_TEMPLATES = (
    "<script>TOKEN()</script>",
    '"><img src=x onerror=TOKEN()>',
    "'onmouseover='TOKEN()",
)

# Draw probabilities for the special mutators (sequential draws).
PATR_RATE = 0.05
XSS_RATE = 1 / 20
PROTOCOL_RATE = 1 / 40


class MutatorKind(str, Enum):
    INSERT_CHAR = "insert_char"
    DELETE_CHAR = "delete_char"
    REPLACE_CHAR = "replace_char"
    SWAP_CHARS = "swap_chars"
    INSERT_DIGIT = "insert_digit"
    DELETE_DIGIT = "delete_digit"
    REPLACE_DIGIT = "replace_digit"
    SWAP_DIGITS = "swap_digits"
    DUPLICATE_SLICE = "duplicate_slice"
    TRUNCATE_TAIL = "truncate_tail"
    PROTOCOL_PREFIX = "protocol_prefix"
    PATR_PAYLOAD = "patr_payload"
    XSS_PAYLOAD = "xss_payload"


GENERIC_KINDS = tuple(MutatorKind)[:10]
SPECIAL_KINDS = tuple(MutatorKind)[10:]


class EmptyConfig(ValueError):
    pass


class NoFuzzParams(ValueError):
    pass


@dataclass(frozen=True)
class MutationBudget:
    energy: int
    rng_seed: int

    def __post_init__(self):
        if self.energy < 1:
            raise ValueError("energy must be >= 1")


def expand_seeds(cfg: EndpointConfig) -> list[Candidate]:
    """Initial candidates: Cartesian product of methods x per-param seed
    choices, capped at MAX_INITIAL_CANDIDATES in product order."""
    params = []
    for loc in HASH_LOCATION_ORDER:
        group = cfg.param_groups.get(loc)
        if group:
            params.extend(group.params)
    if not cfg.methods:
        raise EmptyConfig("config defines no HTTP methods")
    if not params and not cfg.methods:
        raise EmptyConfig("config defines no params and no methods")

    choices = []
    for p in params:
        if p.mode is ParamMode.FIXED:
            choices.append((p.seeds[0],))
        else:
            choices.append(p.seeds or ("",))

    out = []
    for method, combo in itertools.product(cfg.methods, itertools.product(*choices)):
        values = {(p.location, p.name): v for p, v in zip(params, combo)}
        out.append(Candidate(endpoint=cfg, method=method, values=values,
                             feedback_id=new_feedback_id()))
        if len(out) >= MAX_INITIAL_CANDIDATES:
            break
    return out


def _insert_char(value: str, rng: random.Random) -> str:
    pos = rng.randint(0, len(value))
    return value[:pos] + rng.choice(PRINTABLE) + value[pos:]


def _delete_char(value: str, rng: random.Random) -> str:
    if not value:
        return value
    pos = rng.randrange(len(value))
    return value[:pos] + value[pos + 1:]


def _replace_char(value: str, rng: random.Random) -> str:
    if not value:
        return _insert_char(value, rng)
    pos = rng.randrange(len(value))
    old = value[pos]
    new = rng.choice(PRINTABLE.replace(old, "") or PRINTABLE)
    return value[:pos] + new + value[pos + 1:]


def _swap_positions(value: str, i: int, j: int) -> str:
    if i > j:
        i, j = j, i
    return value[:i] + value[j] + value[i + 1:j] + value[i] + value[j + 1:]


def _swap_chars(value: str, rng: random.Random) -> str:
    if len(value) < 2:
        return value
    i = rng.randrange(len(value))
    # prefer a partner with a different character so the swap is visible
    others = [j for j in range(len(value)) if value[j] != value[i]]
    j = rng.choice(others) if others else rng.randrange(len(value))
    return _swap_positions(value, i, j)


def _digit_positions(value: str) -> list[int]:
    return [i for i, ch in enumerate(value) if ch.isdigit()]


def _insert_digit(value: str, rng: random.Random) -> str:
    if not _digit_positions(value):
        return _insert_char(value, rng)
    pos = rng.randint(0, len(value))
    return value[:pos] + rng.choice(DIGITS) + value[pos:]


def _delete_digit(value: str, rng: random.Random) -> str:
    positions = _digit_positions(value)
    if not positions:
        return _delete_char(value, rng)
    pos = rng.choice(positions)
    return value[:pos] + value[pos + 1:]


def _replace_digit(value: str, rng: random.Random) -> str:
    positions = _digit_positions(value)
    if not positions:
        return _replace_char(value, rng)
    pos = rng.choice(positions)
    new = rng.choice(DIGITS.replace(value[pos], ""))
    return value[:pos] + new + value[pos + 1:]


def _swap_digits(value: str, rng: random.Random) -> str:
    positions = _digit_positions(value)
    if len(positions) < 2:
        return _swap_chars(value, rng)
    i, j = rng.sample(positions, 2)
    return _swap_positions(value, i, j)


def _duplicate_slice(value: str, rng: random.Random) -> str:
    if not value:
        return _insert_char(value, rng)
    i = rng.randrange(len(value))
    j = rng.randint(i + 1, len(value))
    return value[:j] + value[i:j] + value[j:]


def _truncate_tail(value: str, rng: random.Random) -> str:
    if not value:
        return value
    keep = rng.randrange(len(value))
    return value[:keep]


_GENERIC_FUNCS = {
    MutatorKind.INSERT_CHAR: _insert_char,
    MutatorKind.DELETE_CHAR: _delete_char,
    MutatorKind.REPLACE_CHAR: _replace_char,
    MutatorKind.SWAP_CHARS: _swap_chars,
    MutatorKind.INSERT_DIGIT: _insert_digit,
    MutatorKind.DELETE_DIGIT: _delete_digit,
    MutatorKind.REPLACE_DIGIT: _replace_digit,
    MutatorKind.SWAP_DIGITS: _swap_digits,
    MutatorKind.DUPLICATE_SLICE: _duplicate_slice,
    MutatorKind.TRUNCATE_TAIL: _truncate_tail,
}


def new_marker_token(rng: random.Random) -> str:
    return "fz" + "".join(rng.choice("0123456789abcdef") for _ in range(8))


def apply_mutator(value: str, kind: MutatorKind, rng: random.Random) -> tuple[str, Optional[str]]:
    """Mutate one value; returns (new_value, marker_token_or_None)."""
    if len(value) > MAX_VALUE_LEN:
        value = value[:MAX_VALUE_LEN]
    if kind in _GENERIC_FUNCS:
        return _GENERIC_FUNCS[kind](value, rng), None
    if kind is MutatorKind.PROTOCOL_PREFIX:
        return rng.choice(PROTOCOL_PREFIXES) + value, None
    if kind is MutatorKind.PATR_PAYLOAD:
        payload = rng.choice(PATR_PAYLOADS)
        pos = rng.randint(0, len(value))
        return value[:pos] + payload + value[pos:], None
    if kind is MutatorKind.XSS_PAYLOAD:
        token = new_marker_token(rng)
        payload = rng.choice(XSS_TEMPLATES).replace("TOKEN", token)
        pos = rng.randint(0, len(value))
        return value[:pos] + payload + value[pos:], token
    raise ValueError(f"unknown mutator kind {kind}")


def mutate_param(value: str, kind: MutatorKind, rng: random.Random) -> str:
    return apply_mutator(value, kind, rng)[0]


def _pick_fuzz_target(parent: Candidate, rng: random.Random):
    groups = [(loc, g) for loc, g in parent.endpoint.param_groups.items() if g.fuzz_params()]
    if not groups:
        raise NoFuzzParams("parent candidate has no fuzz params")
    if len(groups) == 1:
        loc, group = groups[0]
    else:
        total = sum(g.weight for _, g in groups)
        r = rng.random() * total
        acc = 0.0
        loc, group = groups[-1]
        for cand_loc, g in groups:
            acc += g.weight
            if r < acc:
                loc, group = cand_loc, g
                break
    param = rng.choice(group.fuzz_params())
    return loc, param


def _pick_kind(rng: random.Random) -> MutatorKind:
    if rng.random() < PATR_RATE:
        return MutatorKind.PATR_PAYLOAD
    if rng.random() < XSS_RATE:
        return MutatorKind.XSS_PAYLOAD
    if rng.random() < PROTOCOL_RATE:
        return MutatorKind.PROTOCOL_PREFIX
    return GENERIC_KINDS[rng.randrange(len(GENERIC_KINDS))]


_SPECIAL_VULN_CLASS = {
    MutatorKind.PATR_PAYLOAD: VulnClass.PATR,
    MutatorKind.PROTOCOL_PREFIX: VulnClass.OPRE,
    MutatorKind.XSS_PAYLOAD: VulnClass.XSS,
}


def mutate_candidate(parent: Candidate, budget: MutationBudget, dedup) -> list[Candidate]:
    """Derive up to E children from parent; each child changes exactly one
    fuzz param. Children already known to the dedup store are discarded,
    surviving hashes are claimed in the store immediately."""
    rng = random.Random(budget.rng_seed)
    parent_h = candidate_hash(parent)
    children = []
    for _ in range(budget.energy):
        loc, param = _pick_fuzz_target(parent, rng)
        kind = _pick_kind(rng)
        key = (loc, param.name)
        new_value, token = apply_mutator(parent.values[key], kind, rng)

        values = dict(parent.values)
        values[key] = new_value
        markers = [m for m in parent.markers
                   if m.param != key or m.token in new_value]
        if token is not None:
            markers.append(MarkerToken(token=token, vuln_class=VulnClass.XSS, param=key))

        child = Candidate(endpoint=parent.endpoint, method=parent.method,
                          values=values, feedback_id=new_feedback_id(rng),
                          parent_hash=parent_h, markers=markers)
        h = candidate_hash(child)
        if h in dedup.seen_hashes:
            continue
        dedup.add_hash(h)
        children.append(child)
    return children
