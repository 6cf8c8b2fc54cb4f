"""Binary response matrices, item metadata and dimension partitions.

Item indices exposed by this module are 1-based, matching the item
numbering used in questionnaires and reports. Arrays are 0-based.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lcirt.errors import DataValidationError


@dataclass(frozen=True)
class ItemMeta:
    index: int
    code: str
    description: str = ""
    initial_dimension: int | None = None


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """An ``n x J`` matrix of 0/1 responses plus the metadata of its columns."""

    values: np.ndarray
    items: tuple[ItemMeta, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DataValidationError("response matrix must be two-dimensional")
        n, J = values.shape
        if n < 1 or J < 1:
            raise DataValidationError(f"response matrix must be non-empty, got shape {values.shape}")
        if not np.isin(values, (0, 1)).all():
            i, j = np.argwhere(~np.isin(values, (0, 1)))[0]
            raise DataValidationError(f"non-binary value {values[i, j]!r} at row {i + 1}, column {j + 1}")
        object.__setattr__(self, "values", _frozen(values.astype(np.uint8)))
        items = tuple(self.items) or tuple(ItemMeta(j + 1, f"Y{j + 1}") for j in range(J))
        if len(items) != J:
            raise DataValidationError(f"{len(items)} item labels for {J} columns")
        if [it.index for it in items] != list(range(1, J + 1)):
            raise DataValidationError("item indices must be contiguous 1..J in column order")
        codes = [it.code for it in items]
        if len(set(codes)) != J:
            raise DataValidationError("item codes must be unique")
        object.__setattr__(self, "items", items)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(it.code for it in self.items)

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return self.items == other.items and np.array_equal(self.values, other.values)

    __hash__ = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.codes)
        writer.writerows(self.values.tolist())
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _parse_binary(cell: str, row: int, column: str) -> int:
    text = cell.strip()
    try:
        value = int(text)
    except ValueError:
        value = None
    if value not in (0, 1):
        raise DataValidationError(f"row {row}, column {column!r}: value {cell!r} is not 0 or 1")
    return value


def parse_dataset(text: str, columns: Sequence[str] | None = None) -> ResponseMatrix:
    """Parse response CSV text: a header of item codes, then one row per subject."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataValidationError("empty data file")
    header = [h.strip() for h in rows[0]]
    if any(not h for h in header):
        raise DataValidationError("header contains an empty item code")
    if len(set(header)) != len(header):
        raise DataValidationError("duplicate item codes in header")
    body = rows[1:]
    if not body:
        raise DataValidationError("data file has a header but no subjects")
    if columns is None:
        keep = list(range(len(header)))
    else:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataValidationError(f"requested columns not in header: {missing}")
        wanted = set(columns)
        keep = [j for j, h in enumerate(header) if h in wanted]
    values = np.empty((len(body), len(keep)), dtype=np.uint8)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataValidationError(f"row {line}: expected {len(header)} fields, found {len(row)}")
        for out, j in enumerate(keep):
            values[i, out] = _parse_binary(row[j], line, header[j])
    items = tuple(ItemMeta(pos + 1, header[j]) for pos, j in enumerate(keep))
    return ResponseMatrix(values, items)


def load_dataset(path: str | Path, columns: Sequence[str] | None = None) -> ResponseMatrix:
    """Read and validate a response CSV.

    ``columns`` optionally restricts the load to a subset of item codes;
    column order always follows the file header. Errors name the offending
    file line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"data file not found: {path}")
    return parse_dataset(path.read_text(encoding="utf-8"), columns)


@dataclass(frozen=True)
class DimensionPartition:
    """Assignment of every item to one of ``s`` groups.

    ``assignment[j]`` is the 1-based group of the item in column ``j``.
    ``labels[d]`` records which original groups were merged into group
    ``d + 1``; for an unmerged partition it is ``((1,), (2,), ...)``.
    """

    assignment: tuple[int, ...]
    labels: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        assignment = tuple(int(a) for a in self.assignment)
        if not assignment:
            raise DataValidationError("partition must cover at least one item")
        s = max(assignment)
        if min(assignment) < 1:
            raise DataValidationError("group indices must be >= 1")
        empty = sorted(set(range(1, s + 1)) - set(assignment))
        if empty:
            raise DataValidationError(f"groups with no items: {empty}")
        object.__setattr__(self, "assignment", assignment)
        labels = self.labels
        if labels is None:
            labels = tuple((d,) for d in range(1, s + 1))
        labels = tuple(tuple(sorted(lab)) for lab in labels)
        if len(labels) != s:
            raise DataValidationError(f"{len(labels)} group labels for {s} groups")
        flat = [x for lab in labels for x in lab]
        if len(flat) != len(set(flat)) or any(not lab for lab in labels):
            raise DataValidationError("group labels must be disjoint and non-empty")
        object.__setattr__(self, "labels", labels)

    @property
    def s(self) -> int:
        return len(self.labels)

    @property
    def J(self) -> int:
        return len(self.assignment)

    @property
    def dims(self) -> np.ndarray:
        """0-based group of each item, as an integer array."""
        return np.asarray(self.assignment, dtype=np.intp) - 1

    def groups(self) -> list[np.ndarray]:
        """0-based item positions of each group."""
        dims = self.dims
        return [np.flatnonzero(dims == d) for d in range(self.s)]

    def anchors(self) -> np.ndarray:
        """0-based position of the lowest-index item of each group."""
        return np.array([g[0] for g in self.groups()], dtype=np.intp)

    def delta(self) -> np.ndarray:
        """``J x s`` 0/1 matrix with a one where item j measures group d."""
        out = np.zeros((self.J, self.s), dtype=np.uint8)
        out[np.arange(self.J), self.dims] = 1
        return out

    @classmethod
    def from_delta(cls, delta, labels=None) -> "DimensionPartition":
        delta = np.asarray(delta)
        if delta.ndim != 2 or not np.isin(delta, (0, 1)).all():
            raise DataValidationError("delta must be a 0/1 matrix")
        if not (delta.sum(axis=1) == 1).all():
            raise DataValidationError("each item must belong to exactly one group")
        return cls(tuple(int(d) + 1 for d in delta.argmax(axis=1)), labels)

    @classmethod
    def single(cls, J: int) -> "DimensionPartition":
        return cls((1,) * J)

    def merge(self, a: int, b: int) -> "DimensionPartition":
        """Collapse 1-based groups ``a`` and ``b``.

        Groups are renumbered so that they stay ordered by their smallest
        original label.
        """
        if a == b or not (1 <= a <= self.s and 1 <= b <= self.s):
            raise ValueError(f"cannot merge groups {a} and {b} of {self.s}")
        merged = tuple(sorted(self.labels[a - 1] + self.labels[b - 1]))
        old_labels = [lab for d, lab in enumerate(self.labels, 1) if d not in (a, b)] + [merged]
        new_labels = sorted(old_labels, key=lambda lab: lab[0])
        position = {lab: d for d, lab in enumerate(new_labels, 1)}

        def target(g):
            return position[merged] if g in (a, b) else position[self.labels[g - 1]]

        return DimensionPartition(tuple(target(g) for g in self.assignment), tuple(new_labels))

    def restrict(self, keep: Iterable[int]) -> "DimensionPartition":
        """Partition of the items at 1-based indices ``keep`` (ascending order).

        Groups left empty are dropped and the rest renumbered.
        """
        keep = _check_keep(keep, self.J)
        sub = [self.assignment[j - 1] for j in keep]
        present = sorted(set(sub))
        remap = {g: d for d, g in enumerate(present, 1)}
        return DimensionPartition(tuple(remap[g] for g in sub), tuple(self.labels[g - 1] for g in present))

    def describe(self) -> str:
        """Cluster string such as ``{1},{2},{3,8},{4,5}``."""
        return ",".join("{" + ",".join(map(str, lab)) + "}" for lab in self.labels)

    def to_csv(self, codes: Sequence[str]) -> str:
        if len(codes) != self.J:
            raise ValueError("one code per item required")
        lines = ["item_code,group_index"] + [f"{c},{g}" for c, g in zip(codes, self.assignment)]
        return "\n".join(lines) + "\n"


def _check_keep(keep: Iterable[int], J: int) -> list[int]:
    keep = sorted({int(j) for j in keep})
    if not keep:
        raise DataValidationError("keep set is empty")
    bad = [j for j in keep if not 1 <= j <= J]
    if bad:
        raise DataValidationError(f"item indices out of range 1..{J}: {bad}")
    return keep


def parse_partition(text: str, items: Sequence[ItemMeta]) -> DimensionPartition:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataValidationError("empty partition file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["item_code", "group_index"]:
        raise DataValidationError("partition header must be 'item_code,group_index'")
    position = {it.code: pos for pos, it in enumerate(items)}
    groups: dict[int, int] = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise DataValidationError(f"partition line {line}: expected item_code,group_index")
        code = row[0].strip()
        if code not in position:
            raise DataValidationError(f"partition line {line}: unknown item code {code!r}")
        try:
            group = int(row[1].strip())
        except ValueError:
            raise DataValidationError(f"partition line {line}: group index {row[1]!r} is not an integer") from None
        if group < 1:
            raise DataValidationError(f"partition line {line}: group index must be >= 1")
        if position[code] in groups:
            raise DataValidationError(f"partition line {line}: item {code!r} assigned twice")
        groups[position[code]] = group
    unassigned = [it.code for pos, it in enumerate(items) if pos not in groups]
    if unassigned:
        raise DataValidationError(f"items without a group: {unassigned}")
    return DimensionPartition(tuple(groups[pos] for pos in range(len(items))))


def load_partition(path: str | Path, items: Sequence[ItemMeta]) -> DimensionPartition:
    """Read an ``item_code,group_index`` CSV for the given items."""
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"partition file not found: {path}")
    return parse_partition(path.read_text(encoding="utf-8"), items)


def with_partition(data: ResponseMatrix, partition: DimensionPartition) -> ResponseMatrix:
    """Copy of ``data`` whose item metadata records each item's group."""
    if partition.J != data.J:
        raise DataValidationError(f"partition covers {partition.J} items, data has {data.J}")
    items = tuple(
        ItemMeta(it.index, it.code, it.description, g) for it, g in zip(data.items, partition.assignment)
    )
    return ResponseMatrix(data.values, items)


def restrict(data: ResponseMatrix, keep: Iterable[int]) -> ResponseMatrix:
    """Keep the columns at 1-based indices ``keep``, in ascending order.

    Kept items are renumbered 1..J' while codes, descriptions and group
    memberships are carried along.
    """
    keep = _check_keep(keep, data.J)
    if keep == list(range(1, data.J + 1)):
        return data
    cols = np.asarray(keep) - 1
    items = tuple(
        ItemMeta(pos, data.items[j - 1].code, data.items[j - 1].description, data.items[j - 1].initial_dimension)
        for pos, j in enumerate(keep, 1)
    )
    return ResponseMatrix(data.values[:, cols], items)
