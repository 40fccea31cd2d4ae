"""Shared scenario: a small retail pipeline over a 4-level highway.

level 0  sales_raw        raw CSV batches (day, city, category, units, price)
level 1  sales_clean      typed copy plus derived revenue
level 2  sales_enriched   adds the month attribute for the date hierarchy
level 3  sales_star       star: fact sales (units, revenue) x date/city/category
"""

from __future__ import annotations

import pytest

from evodw.config import EngineConfig
from evodw.engine import Engine
from evodw.model import (
    DatasetSchema,
    FieldDef,
    HighwayLevelDef,
    MappingDefinition,
    StarDimension,
    StarSpec,
    derive,
    filter_,
    load_star,
    project,
)

LEVELS = (
    HighwayLevelDef(0, 1, "raw"),
    HighwayLevelDef(1, 1, "clean"),
    HighwayLevelDef(2, 2, "enriched"),
    HighwayLevelDef(3, 4, "star"),
)

RAW_FIELDS = (
    FieldDef("day", "TIMESTAMP"),
    FieldDef("city", "TEXT"),
    FieldDef("category", "TEXT", nullable=True),
    FieldDef("units", "INTEGER"),
    FieldDef("price", "DECIMAL"),
)

STAR = StarSpec(
    fact="sales",
    measures=("units", "revenue"),
    dimensions=(
        StarDimension("date", ("day",), ("day", "month"), ("day", "month")),
        StarDimension("city", ("city",), ("city",)),
        StarDimension("category", ("category",), ("category",)),
    ),
)

CUBE = {
    "cube_id": "sales_cube",
    "fact_dataset": "sales_star",
    "dimension_attrs": [
        {"attribute": "day", "dimension": "date", "hierarchy_position": 0},
        {"attribute": "month", "dimension": "date", "hierarchy_position": 1},
        {"attribute": "city", "dimension": "city", "hierarchy_position": 0},
        {"attribute": "category", "dimension": "category", "hierarchy_position": 0},
    ],
    "measures": [
        {"field": "units", "fn": "SUM", "name": "total_units"},
        {"field": "revenue", "fn": "SUM", "name": "total_revenue"},
        {"field": "revenue", "fn": "AVG", "name": "avg_revenue"},
        {"field": "units", "fn": "COUNT", "name": "n"},
    ],
    "max_attrs": 2,
}


def build_sales_engine(data_dir, fault_injection: str = "NONE", clean_filter: str | None = None) -> Engine:
    engine = Engine(EngineConfig(data_dir=data_dir, levels=LEVELS, fault_injection=fault_injection))
    seed_sales_metadata(engine, clean_filter)
    return engine


def seed_sales_metadata(engine: Engine, clean_filter: str | None = None) -> None:
    engine.put_schema(DatasetSchema("sales_raw", 0, RAW_FIELDS, 1, "SEMISTRUCTURED"))
    engine.put_schema(
        DatasetSchema(
            "sales_clean",
            1,
            RAW_FIELDS + (FieldDef("revenue", "DECIMAL", nullable=True),),
        )
    )
    engine.put_schema(
        DatasetSchema(
            "sales_enriched",
            2,
            (
                FieldDef("day", "TIMESTAMP"),
                FieldDef("month", "TEXT", nullable=True),
                FieldDef("city", "TEXT"),
                FieldDef("category", "TEXT", nullable=True),
                FieldDef("units", "INTEGER"),
                FieldDef("revenue", "DECIMAL", nullable=True),
            ),
        )
    )
    engine.put_schema(
        DatasetSchema(
            "sales_star",
            3,
            (
                FieldDef("date_key", "INTEGER"),
                FieldDef("city_key", "INTEGER"),
                FieldDef("category_key", "INTEGER"),
                FieldDef("units", "INTEGER"),
                FieldDef("revenue", "DECIMAL", nullable=True),
            ),
        )
    )
    clean_steps = [project("day", "city", "category", "units", "price")]
    if clean_filter is not None:
        clean_steps.append(filter_(clean_filter))
    clean_steps.append(derive("revenue", "units * price", "DECIMAL"))
    engine.put_mapping(
        MappingDefinition("m_clean", "sales_clean", ("sales_raw",), tuple(clean_steps))
    )
    engine.put_mapping(
        MappingDefinition(
            "m_enrich",
            "sales_enriched",
            ("sales_clean",),
            (
                derive("month", 'substr(cast(day, "TEXT"), 1, 7)', "TEXT"),
                project("day", "month", "city", "category", "units", "revenue"),
            ),
        )
    )
    engine.put_mapping(
        MappingDefinition("m_star", "sales_star", ("sales_enriched",), (load_star(STAR),))
    )
    engine.register_source(
        {
            "source_id": "pos",
            "format": "DELIMITED",
            "delimiter": ",",
            "level0_dataset": "sales_raw",
            "latency_class": 1,
        }
    )
    engine.create_cube(CUBE)


BASE_CSV = (
    "day,city,category,units,price\n"
    "2024-01-01,Riga,food,3,2.5\n"
    "2024-01-01,Riga,tools,1,10.0\n"
    "2024-01-02,Vilnius,food,5,2.5\n"
    "2024-02-01,Riga,food,2,3.5\n"
    "2024-02-03,Tallinn,tools,4,9.5\n"
)


def csv_bytes(*rows: str, header: str = "day,city,category,units,price") -> bytes:
    return ("\n".join([header, *rows]) + "\n").encode("utf-8")


@pytest.fixture
def sales_engine(tmp_path) -> Engine:
    return build_sales_engine(tmp_path / "dw")


@pytest.fixture
def loaded_engine(sales_engine) -> Engine:
    """Scenario engine with one base batch ingested and the highway ticked to
    the top (4 ticks refresh L1..L3 with periods 1/2/4)."""
    sales_engine.ingest("pos", BASE_CSV.encode("utf-8"))
    for _ in range(4):
        sales_engine.tick()
    sales_engine.materialize("sales_cube")
    return sales_engine
