"""Bundled classification tables.

``wiod16_regions.csv``, ``wiod16_sectors.csv`` and ``product_aggregation.csv``
reproduce the published WIOD 2016 country list, sector list and IEA product
correspondence. ``example_flow_schema.csv`` and ``example_concordance.csv``
are illustrative defaults only and are marked as such in the files.
"""
from importlib import resources

from .allocation import read_aggregation_map, read_concordance
from .balance import read_schema
from .textio import read_rows


def data_path(name):
    return resources.files("eeio") / "data" / name


def _pairs(name):
    with resources.as_file(data_path(name)) as p:
        return [tuple(f) for _, f in read_rows(p)[1:]]


def wiod16_regions():
    """(code, name) for the 43 countries plus ROW."""
    return _pairs("wiod16_regions.csv")


def wiod16_sectors():
    """(code, name) for the 56 industries plus households."""
    return _pairs("wiod16_sectors.csv")


def product_aggregation_map():
    with resources.as_file(data_path("product_aggregation.csv")) as p:
        return read_aggregation_map(p)


def example_schema(unit="TJ"):
    with resources.as_file(data_path("example_flow_schema.csv")) as p:
        return read_schema(p, unit=unit, products=product_aggregation_map().sources)


def example_concordance():
    with resources.as_file(data_path("example_concordance.csv")) as p:
        return read_concordance(p)
