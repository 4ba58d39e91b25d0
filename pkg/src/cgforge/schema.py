"""Database schema catalogs in the Spider tables.json format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DuplicateDbId, FormatError

COLUMN_TYPES = ("text", "number", "time", "boolean", "others")


@dataclass(frozen=True)
class SchemaColumn:
    table_index: int  # -1 for the '*' pseudo-column
    name: str
    ctype: str
    natural: str  # natural-language name; falls back to `name`


@dataclass
class Schema:
    """One database schema. Column index 0 is always the '*' pseudo-column
    so primary/foreign key indices line up with the catalog file."""

    db_id: str
    tables: list[str]
    columns: list[SchemaColumn]
    primary_keys: list[int]
    foreign_keys: list[tuple[int, int]]
    tables_natural: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.tables_natural:
            self.tables_natural = list(self.tables)
        self._tables_ci = {t.lower(): t for t in self.tables}
        self._cols_by_table: dict[str, dict[str, tuple[int, SchemaColumn]]] = {
            t.lower(): {} for t in self.tables
        }
        for idx, col in enumerate(self.columns):
            if col.table_index < 0:
                continue
            table = self.tables[col.table_index].lower()
            self._cols_by_table[table][col.name.lower()] = (idx, col)
        self._pk_set = set(self.primary_keys)
        self._fk_set = set(self.foreign_keys)

    # -- lookups ----------------------------------------------------------

    def table_original(self, name: str) -> str | None:
        return self._tables_ci.get(name.lower())

    def has_table(self, name: str) -> bool:
        return name.lower() in self._tables_ci

    def column_entry(self, table: str, column: str) -> tuple[int, SchemaColumn] | None:
        cols = self._cols_by_table.get(table.lower())
        if cols is None:
            return None
        return cols.get(column.lower())

    def columns_of(self, table: str) -> list[tuple[int, SchemaColumn]]:
        cols = self._cols_by_table.get(table.lower(), {})
        return sorted(cols.values(), key=lambda e: e[0])

    def column_type(self, table: str, column: str) -> str | None:
        entry = self.column_entry(table, column)
        return entry[1].ctype if entry else None

    def column_index(self, table: str, column: str) -> int | None:
        entry = self.column_entry(table, column)
        return entry[0] if entry else None

    def is_primary_key(self, table: str, column: str) -> bool:
        idx = self.column_index(table, column)
        return idx is not None and idx in self._pk_set

    def is_foreign_key_pair(self, left: tuple[str, str], right: tuple[str, str]) -> bool:
        """True when (left, right) is an FK edge (child, parent), either direction."""
        li = self.column_index(*left)
        ri = self.column_index(*right)
        if li is None or ri is None:
            return False
        return (li, ri) in self._fk_set or (ri, li) in self._fk_set

    def fk_edges_named(self) -> list[tuple[tuple[str, str], tuple[str, str]]]:
        """FK edges as ((child_table, child_col), (parent_table, parent_col))."""
        out = []
        for ci, pi in self.foreign_keys:
            c, p = self.columns[ci], self.columns[pi]
            out.append(
                ((self.tables[c.table_index], c.name), (self.tables[p.table_index], p.name))
            )
        return out

    def table_natural(self, table: str) -> str:
        orig = self.table_original(table)
        if orig is None:
            return table
        return self.tables_natural[self.tables.index(orig)]

    def column_natural(self, table: str, column: str) -> str:
        entry = self.column_entry(table, column)
        return entry[1].natural if entry else column


def _validate_schema(rec_index: int, schema: Schema) -> None:
    ncols = len(schema.columns)
    seen_tables = set()
    for t in schema.tables:
        tl = t.lower()
        if tl in seen_tables:
            raise FormatError(f"duplicate table name {t!r}", rec_index, "table_names_original")
        seen_tables.add(tl)
    per_table_cols: dict[int, set[str]] = {}
    for idx, col in enumerate(schema.columns):
        if col.table_index >= len(schema.tables):
            raise FormatError(
                f"column {idx} references table index {col.table_index}",
                rec_index,
                "column_names_original",
            )
        if col.ctype not in COLUMN_TYPES:
            raise FormatError(f"unknown column type {col.ctype!r}", rec_index, "column_types")
        if col.table_index >= 0:
            names = per_table_cols.setdefault(col.table_index, set())
            cl = col.name.lower()
            if cl in names:
                raise FormatError(
                    f"duplicate column {col.name!r} in table index {col.table_index}",
                    rec_index,
                    "column_names_original",
                )
            names.add(cl)
    for pk in schema.primary_keys:
        if not (0 <= pk < ncols) or schema.columns[pk].table_index < 0:
            raise FormatError(f"primary key index {pk} out of range", rec_index, "primary_keys")
    for ci, pi in schema.foreign_keys:
        for k in (ci, pi):
            if not (0 <= k < ncols) or schema.columns[k].table_index < 0:
                raise FormatError(f"foreign key index {k} out of range", rec_index, "foreign_keys")
        if schema.columns[ci].table_index == schema.columns[pi].table_index:
            raise FormatError(
                f"foreign key ({ci}, {pi}) links columns of the same table",
                rec_index,
                "foreign_keys",
            )


def load_schema_catalog(path) -> dict[str, Schema]:
    """Load a Spider-format schema catalog into validated Schema objects.

    Unknown extra fields in each record are ignored.
    """
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise FormatError("catalog file must be a JSON array")
    catalog: dict[str, Schema] = {}
    for i, rec in enumerate(data):
        if not isinstance(rec, dict):
            raise FormatError("catalog record must be an object", i)
        try:
            db_id = rec["db_id"]
            tables = list(rec["table_names_original"])
            raw_cols = list(rec["column_names_original"])
            types = list(rec["column_types"])
            pks = [int(x) for x in rec.get("primary_keys", [])]
            fks = [(int(a), int(b)) for a, b in rec.get("foreign_keys", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad record: {exc}", i) from exc
        if len(raw_cols) != len(types):
            raise FormatError("column_names_original and column_types differ in length", i)
        naturals = rec.get("column_names") or raw_cols
        if len(naturals) != len(raw_cols):
            naturals = raw_cols
        columns = []
        for (ti, name), ctype, nat in zip(raw_cols, types, naturals):
            nat_name = nat[1] if isinstance(nat, (list, tuple)) else nat
            columns.append(SchemaColumn(int(ti), str(name), str(ctype), str(nat_name)))
        tnat = rec.get("table_names") or tables
        if len(tnat) != len(tables):
            tnat = tables
        schema = Schema(
            db_id=str(db_id),
            tables=[str(t) for t in tables],
            columns=columns,
            primary_keys=pks,
            foreign_keys=fks,
            tables_natural=[str(t) for t in tnat],
        )
        _validate_schema(i, schema)
        if schema.db_id in catalog:
            raise DuplicateDbId(f"db_id {schema.db_id!r} appears twice", i, "db_id")
        catalog[schema.db_id] = schema
    return catalog
