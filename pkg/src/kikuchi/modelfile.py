"""Plain-text model and beliefs documents, trace CSV, atomic writes.

Model document::

    # kikuchi model v1
    vertices 3
    cardinalities 2 2 2
    values energy
    region 0 1 : 0.5 -0.5 -0.5 0.5
    region 1 2 : 0.1 0.2 0.3 0.4
    region 1

Each ``region`` line names a generating region by its vertex ids and may
carry its table of values, one number per configuration (row-major over the
ascending vertex ids, last vertex fastest).  ``values factor`` declares
positive factors ``f`` instead of energies; the potential is ``-ln f``.
Blank lines and ``#`` comments are ignored.  The hypergraph is the
intersection closure of the listed regions plus the empty region, and
regions without a table get zero potential.

Beliefs documents use the same header with the kind ``beliefs`` and one
``region`` line per region of the hypergraph.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .complex import Complex, Shape
from .errors import DomainError, InputError
from .hypergraph import closure, members, region

MODEL_HEADER = "# kikuchi model v1"
BELIEFS_HEADER = "# kikuchi beliefs v1"
TRACE_HEADER = "# kikuchi trace v1"


@dataclass
class Model:
    omega_size: int
    cardinalities: tuple
    generators: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    mode: str = "energy"

    def complex(self) -> Complex:
        return Complex(closure(self.generators, self.omega_size), Shape(self.cardinalities))

    def potentials(self, C: Complex | None = None) -> np.ndarray:
        C = C or self.complex()
        h = np.zeros(C.dim(0))
        for a, values in self.tables.items():
            block = C.block(h, 0, (a,))
            if self.mode == "factor":
                with np.errstate(divide="ignore"):
                    block += -np.log(values)
            else:
                block += values
        return h

    def build(self):
        C = self.complex()
        return C, self.potentials(C)


def _numbers(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise InputError(f"line {lineno}: expected numbers, got {' '.join(tokens)!r}") from None


def _integers(tokens, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise InputError(f"line {lineno}: expected integers, got {' '.join(tokens)!r}") from None


def _parse(text: str, kind: str):
    omega = None
    cards = None
    mode = "energy"
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        words = line.lstrip("#").split()
        if line.startswith("#") and len(words) >= 2 and words[0] == "kikuchi" and words[1] != kind:
            raise InputError(f"line {lineno}: expected a {kind} document, found {words[1]}")
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "vertices":
            vals = _integers(rest.split(), lineno)
            if len(vals) != 1 or vals[0] < 0:
                raise InputError(f"line {lineno}: vertices takes one non-negative integer")
            omega = vals[0]
        elif key == "cardinalities":
            cards = tuple(_integers(rest.split(), lineno))
            if any(c < 1 for c in cards):
                raise InputError(f"line {lineno}: cardinalities must be positive")
        elif key == "values":
            mode = rest.strip()
            if mode not in ("energy", "factor"):
                raise InputError(f"line {lineno}: values must be 'energy' or 'factor'")
        elif key == "region":
            verts, colon, nums = rest.partition(":")
            ids = _integers(verts.split(), lineno)
            if len(set(ids)) != len(ids):
                raise InputError(f"line {lineno}: repeated vertex")
            table = np.array(_numbers(nums.split(), lineno)) if colon else None
            entries.append((lineno, ids, table))
        else:
            raise InputError(f"line {lineno}: unknown keyword {key!r}")
    if omega is None:
        raise InputError("missing 'vertices' line")
    if cards is None:
        raise InputError("missing 'cardinalities' line")
    if len(cards) != omega:
        raise InputError(f"{len(cards)} cardinalities for {omega} vertices")
    shape = Shape(cards)
    regions, tables = [], {}
    for lineno, ids, table in entries:
        if any(v >= omega for v in ids):
            raise InputError(f"line {lineno}: vertex outside 0..{omega - 1}")
        a = region(ids)
        if a in tables or a in regions:
            raise InputError(f"line {lineno}: region listed twice")
        regions.append(a)
        if table is not None:
            if table.size != shape.size(a):
                raise InputError(f"line {lineno}: {table.size} values, region has {shape.size(a)} configurations")
            if not np.all(np.isfinite(table)):
                raise InputError(f"line {lineno}: non-finite value")
            if mode == "factor" and np.any(table < 0):
                raise InputError(f"line {lineno}: negative factor")
            tables[a] = table
    return omega, cards, mode, regions, tables


def parse_model(text: str) -> Model:
    omega, cards, mode, regions, tables = _parse(text, "model")
    if not regions:
        raise InputError("a model needs at least one region")
    return Model(omega, cards, regions, tables, mode)


def _fmt(x: float) -> str:
    return repr(float(x))


def _region_line(a, values) -> str:
    verts = " ".join(map(str, members(a)))
    head = f"region {verts}".rstrip()
    if values is None:
        return head
    return f"{head} : " + " ".join(_fmt(x) for x in values)


def format_model(model: Model) -> str:
    lines = [MODEL_HEADER, f"vertices {model.omega_size}",
             "cardinalities " + " ".join(map(str, model.cardinalities)), f"values {model.mode}"]
    for a in model.generators:
        lines.append(_region_line(a, model.tables.get(a)))
    return "\n".join(lines) + "\n"


def format_beliefs(C: Complex, p: np.ndarray) -> str:
    lines = [BELIEFS_HEADER, f"vertices {C.K.omega_size}",
             "cardinalities " + " ".join(map(str, C.shape.cardinalities))]
    for (a,), block in C.split(p, 0).items():
        lines.append(_region_line(a, block))
    return "\n".join(lines) + "\n"


def parse_beliefs(text: str):
    """Returns ``(C, p)``; the hypergraph is the closure of the listed regions."""
    omega, cards, _, regions, tables = _parse(text, "beliefs")
    C = Complex(closure(regions, omega), Shape(cards))
    p = C.join({a: t for a, t in tables.items()}, 0)
    for (a,), block in C.split(p, 0).items():
        if a not in tables:
            raise InputError(f"no beliefs given for region {list(members(a))}")
        if np.any(block < 0):
            raise DomainError("negative belief")
    return C, p


def format_trace(rows, columns) -> str:
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def parse_trace(text: str):
    lines = text.splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise InputError("not a kikuchi trace")
    reader = csv.reader(lines[1:])
    columns = next(reader)
    return columns, [[float(x) for x in row] for row in reader]


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kikuchi-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_text(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
