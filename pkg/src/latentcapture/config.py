"""Parser for the declarative model/simulation config.

Grammar (one statement per line, ``#`` starts a comment)::

    [section]
    key = value

Sections
--------
``[model]``
    ``classes`` (int >= 1), ``family`` (``recursive`` | ``loglinear``),
    ``partition`` (recursive only: ``none``, ``captured_before``,
    ``example1``, ``occasion``, ``saturated`` or ``table``),
    ``interactions`` (log-linear only, e.g. ``1:2, 2:4``), ``name``.
``[latent]``
    ``covariates`` -- comma list of covariates entering the class weights
    (an intercept is always included for classes 2..C).
``[partition]``
    With ``partition = table``: one line per partial history, written as a
    bit string (``-`` for the empty history), mapping it to a class number.
``[restriction]``
    ``delta[c,v] = expr`` where expr is a sum of terms; a term is a product
    of an optional number, exactly one parameter name and optionally
    ``@covariate``: ``a1 + 0.5*gap - trend*@year``. ``0`` fixes the
    coordinate. Unlisted coordinates are an error. Without this section each
    class gets its own free delta vector.
``[population]`` / ``[pool]`` / ``[truth]`` (simulation specs only)
    ``lists``, ``covariates``; pool rows ``v1, v2 = weight``; ``zeta`` and
    ``lambda`` as comma lists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    BUILTIN_PARTITIONS,
    ModelError,
    ModelSpec,
    Restriction,
    Term,
    loglinear_design,
    recursive_design,
    table_classifier,
)

_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_DELTA = re.compile(r"^delta\[\s*(\d+)\s*,\s*(\d+)\s*\]$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_FACTOR = r"(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|@?[A-Za-z_][A-Za-z0-9_.]*)"
_TERM = re.compile(rf"([+-])?({_FACTOR}(?:\*{_FACTOR})*)")

KNOWN_SECTIONS = {"model", "latent", "partition", "restriction", "population", "pool", "truth"}


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "<config>", line: int | None = None):
        where = path if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass
class Entry:
    key: str
    value: str
    line: int


@dataclass
class RawConfig:
    path: str
    sections: dict[str, list[Entry]] = field(default_factory=dict)
    section_lines: dict[str, int] = field(default_factory=dict)

    def get(self, section: str, key: str, default: str | None = None) -> tuple[str | None, int | None]:
        for e in self.sections.get(section, []):
            if e.key == key:
                return e.value, e.line
        return default, self.section_lines.get(section)

    def error(self, message: str, line: int | None = None) -> ConfigError:
        return ConfigError(message, self.path, line)


def parse_text(text: str, path: str = "<config>") -> RawConfig:
    raw = RawConfig(path=path)
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current not in KNOWN_SECTIONS:
                raise ConfigError(f"unknown section [{current}]", path, lineno)
            if current in raw.sections:
                raise ConfigError(f"section [{current}] appears twice", path, lineno)
            raw.sections[current] = []
            raw.section_lines[current] = lineno
            continue
        if current is None:
            raise ConfigError("statement outside any [section]", path, lineno)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", path, lineno)
        if any(e.key == key for e in raw.sections[current]):
            raise ConfigError(f"duplicate key {key!r} in [{current}]", path, lineno)
        raw.sections[current].append(Entry(key, value, lineno))
    return raw


def read_config(path: str | Path) -> RawConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_text(text, str(path))


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _parse_int(raw: RawConfig, value: str, line: int | None, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise raw.error(f"{what} must be an integer, got {value!r}", line) from None


def _parse_terms(raw: RawConfig, expr: str, line: int, covariates: Sequence[str] | None) -> list[Term]:
    if re.search(r"[\w.@]\s+[\w.@]", expr):
        raise raw.error(f"missing operator in {expr.strip()!r}", line)
    expr = re.sub(r"\s+", "", expr)
    if expr in ("0", "0.0"):
        return []
    if not expr:
        raise raw.error("empty restriction expression", line)
    parts = []
    pos = 0
    while pos < len(expr):
        m = _TERM.match(expr, pos)
        if not m or (pos > 0 and not m.group(1)):
            raise raw.error(f"cannot parse restriction expression {expr!r} near {expr[pos:]!r}", line)
        parts.append((m.group(1) or "+", m.group(2)))
        pos = m.end()
    terms = []
    for sign_text, part in parts:
        sign = -1.0 if sign_text == "-" else 1.0
        coef, param, cov = sign, None, None
        for factor in part.split("*"):
            if _NUMBER.match(factor):
                coef *= float(factor)
            elif factor.startswith("@"):
                name = factor[1:]
                if cov is not None:
                    raise raw.error(f"term {part!r} has more than one covariate", line)
                if covariates is not None and name not in covariates:
                    raise raw.error(f"unknown covariate {name!r}; data has {list(covariates)}", line)
                cov = name
            elif _NAME.match(factor):
                if param is not None:
                    raise raw.error(f"term {part!r} multiplies two parameters", line)
                param = factor
            else:
                raise raw.error(f"cannot parse factor {factor!r}", line)
        if param is None:
            raise raw.error(f"term {part!r} has no parameter; delta must be linear in lambda", line)
        terms.append(Term(coef, param, cov))
    return terms


def build_spec(raw: RawConfig, J: int, covariates: Sequence[str] | None = None) -> ModelSpec:
    if "model" not in raw.sections:
        raise raw.error("missing [model] section")
    cval, cline = raw.get("model", "classes", "1")
    C = _parse_int(raw, cval, cline, "classes")
    if C < 1:
        raise raw.error("classes must be at least 1", cline)
    family, fline = raw.get("model", "family", "recursive")
    name, _ = raw.get("model", "name", Path(raw.path).stem)
    known = {"classes", "family", "partition", "interactions", "name"}
    for e in raw.sections["model"]:
        if e.key not in known:
            raise raw.error(f"unknown key {e.key!r} in [model]", e.line)

    try:
        if family == "recursive":
            part, pline = raw.get("model", "partition", "none")
            if raw.get("model", "interactions")[0]:
                raise raw.error("interactions apply only to family = loglinear", raw.get("model", "interactions")[1])
            if part == "table":
                table = {}
                for e in raw.sections.get("partition", []):
                    bits = "" if e.key == "-" else e.key
                    if not re.fullmatch(r"[01]*", bits) or len(bits) >= J:
                        raise raw.error(f"bad partial history {e.key!r} for J={J}", e.line)
                    table[tuple(int(b) for b in bits)] = _parse_int(raw, e.value, e.line, "class")
                design = recursive_design(J, table_classifier(table))
            elif part in BUILTIN_PARTITIONS:
                design = recursive_design(J, part)
            else:
                raise raw.error(f"unknown partition {part!r}", pline)
        elif family == "loglinear":
            ival, iline = raw.get("model", "interactions", "")
            pairs = []
            for item in _split_list(ival or ""):
                bits = item.split(":")
                if len(bits) != 2:
                    raise raw.error(f"interaction {item!r} is not a pair 'a:b' (only two-way terms)", iline)
                pairs.append((_parse_int(raw, bits[0], iline, "list"), _parse_int(raw, bits[1], iline, "list")))
            design = loglinear_design(J, pairs)
        else:
            raise raw.error(f"family must be 'recursive' or 'loglinear', got {family!r}", fline)
    except ModelError as exc:
        raise raw.error(str(exc), fline) from None

    lat_val, lat_line = raw.get("latent", "covariates", "")
    latent = tuple(_split_list(lat_val or ""))
    for cov in latent:
        if covariates is not None and cov not in covariates:
            raise raw.error(f"unknown latent covariate {cov!r}; data has {list(covariates)}", lat_line)
    if latent and C == 1:
        raise raw.error("latent covariates need at least two classes", lat_line)

    restriction = None
    if "restriction" in raw.sections:
        rows: dict[tuple[int, int], tuple[Term, ...]] = {}
        names: list[str] = []
        dd = design.dim_delta
        for e in raw.sections["restriction"]:
            m = _DELTA.match(e.key.replace(" ", ""))
            if not m:
                raise raw.error(f"restriction keys look like delta[c,v], got {e.key!r}", e.line)
            c, v = int(m.group(1)), int(m.group(2))
            if not (1 <= c <= C and 1 <= v <= dd):
                raise raw.error(f"delta[{c},{v}] outside classes 1..{C} and coordinates 1..{dd}", e.line)
            terms = _parse_terms(raw, e.value, e.line, covariates)
            for t in terms:
                if t.param not in names:
                    names.append(t.param)
            if terms:
                rows[(c - 1, v - 1)] = tuple(terms)
            else:
                rows.setdefault((c - 1, v - 1), ())
        declared = {(c, v) for c, v in rows}
        missing = [(c + 1, v + 1) for c in range(C) for v in range(dd) if (c, v) not in declared]
        if missing:
            c, v = missing[0]
            raise raw.error(f"restriction leaves delta[{c},{v}] undefined (write '= 0' to fix it)",
                            raw.section_lines["restriction"])
        if not names:
            raise raw.error("restriction defines no parameters", raw.section_lines["restriction"])
        restriction = Restriction(tuple(names), {k: v for k, v in rows.items() if v})
    return ModelSpec(C=C, conditional=design, latent_covariates=latent, restriction=restriction, name=name)


def load_model(path: str | Path, J: int, covariates: Sequence[str] | None = None) -> ModelSpec:
    return build_spec(read_config(path), J, covariates)


@dataclass(frozen=True)
class SimSpec:
    spec: ModelSpec
    J: int
    covariate_names: tuple[str, ...]
    pool: np.ndarray
    weights: np.ndarray
    beta: np.ndarray


def load_sim_spec(path: str | Path) -> SimSpec:
    raw = read_config(path)
    if "population" not in raw.sections:
        raise raw.error("simulation spec needs a [population] section")
    jval, jline = raw.get("population", "lists")
    if jval is None:
        raise raw.error("[population] needs 'lists'", jline)
    J = _parse_int(raw, jval, jline, "lists")
    cval, _ = raw.get("population", "covariates", "")
    names = tuple(_split_list(cval or ""))
    rows, weights = [], []
    for e in raw.sections.get("pool", []):
        vals = _split_list(e.key)
        if len(vals) != len(names):
            raise raw.error(f"pool row has {len(vals)} values for {len(names)} covariates", e.line)
        try:
            rows.append([float(v) for v in vals])
            weights.append(float(e.value))
        except ValueError:
            raise raw.error("pool rows must be numeric", e.line) from None
    if not rows:
        if names:
            raise raw.error("covariates declared but [pool] is empty")
        rows, weights = [[]], [1.0]
    w = np.array(weights)
    if np.any(w < 0) or w.sum() <= 0:
        raise raw.error("pool weights must be non-negative with positive sum", raw.section_lines.get("pool"))
    spec = build_spec(raw, J, names)

    def vector(key: str, size: int) -> np.ndarray:
        val, line = raw.get("truth", key, "")
        try:
            out = np.array([float(v) for v in _split_list(val or "")])
        except ValueError:
            raise raw.error(f"{key} must be a comma list of numbers", line) from None
        if out.size != size:
            raise raw.error(f"{key} needs {size} values, got {out.size}", line)
        return out

    beta = np.concatenate([vector("zeta", spec.dim_zeta), vector("lambda", spec.dim_lambda)])
    pool = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return SimSpec(spec=spec, J=J, covariate_names=names, pool=pool, weights=w / w.sum(), beta=beta)
