#!/usr/bin/env python3
"""Writes World Bank API v2 response fixtures for the client tests.

The responses follow the documented [metadata, rows] page shape. Values are
synthetic; the expected wide panel is written alongside from the same numbers.
"""
import argparse
import json
import random
from pathlib import Path

BASE = "https://api.worldbank.org/v2"
COUNTRIES = {"KEN": ("KE", "Kenya"), "NGA": ("NG", "Nigeria"), "ZAF": ("ZA", "South Africa")}
INDICATORS = {
    "NV.AGR.TOTL.CD": ("Agriculture", "Agriculture, forestry, and fishing, value added (current US$)"),
    "NV.IND.TOTL.CD": ("Industry", "Industry (including construction), value added (current US$)"),
    "NV.SRV.TOTL.CD": ("Services", "Services, value added (current US$)"),
    "NY.GDP.MKTP.CD": ("GDP", "GDP (current US$)"),
}
SECTOR_ORDER = ["Agriculture", "Industry", "Services", "GDP"]
YEARS = list(range(1991, 2021))
# (country, sector, year) cells reported as null.
NULLS = {("NGA", "Industry", y) for y in range(1991, 1995)} | {("ZAF", "Agriculture", 2020), ("KEN", "Services", 1995)}


def url(countries, indicator, y0, y1, page=1):
    u = f"{BASE}/country/{';'.join(countries)}/indicator/{indicator}?format=json&per_page=1000&date={y0}:{y1}"
    return u + (f"&page={page}" if page > 1 else "")


def row(code, indicator, year, value):
    iso2, name = COUNTRIES.get(code, (code[:2], f"Country {code}"))
    return {
        "indicator": {"id": indicator, "value": INDICATORS.get(indicator, ("", indicator))[1]},
        "country": {"id": iso2, "value": name},
        "countryiso3code": code,
        "date": str(year),
        "value": value,
        "unit": "",
        "obs_status": "",
        "decimal": 0,
    }


def page(rows, page_no, pages, total):
    meta = {"page": page_no, "pages": pages, "per_page": 1000, "total": total, "sourceid": "2", "lastupdated": "2024-06-28"}
    return [meta, rows]


def sector_values(rng):
    out = {}
    for code in COUNTRIES:
        gdp = rng.uniform(8e9, 9e10)
        growth = rng.uniform(0.02, 0.06)
        agr = rng.uniform(0.25, 0.45)
        for k, year in enumerate(YEARS):
            level = round(gdp * (1.0 + growth) ** k * (1.0 + rng.gauss(0.0, 0.03)), 2)
            a = max(0.05, agr - 0.004 * k + rng.gauss(0.0, 0.01))
            i = 0.25 + rng.gauss(0.0, 0.01)
            out[(code, "GDP", year)] = level
            out[(code, "Agriculture", year)] = round(level * a, 2)
            out[(code, "Industry", year)] = round(level * i, 2)
            out[(code, "Services", year)] = round(level * (1.0 - a - i), 2)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=20240628)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    index = {}

    values = sector_values(rng)
    countries = list(COUNTRIES)
    for indicator, (sector, _) in INDICATORS.items():
        rows = []
        for code in countries:
            for year in reversed(YEARS):  # the API lists newest first
                v = None if (code, sector, year) in NULLS else values[(code, sector, year)]
                rows.append(row(code, indicator, year, v))
        name = f"panel_{indicator}.json"
        (out / name).write_text(json.dumps(page(rows, 1, 1, len(rows))))
        index[url(countries, indicator, YEARS[0], YEARS[-1])] = {"file": name, "status": 200}

    with open(out / "expected_panel.csv", "w") as f:
        f.write("entity," + ",".join(str(y) for y in YEARS) + "\n")
        for code in sorted(countries):
            for sector in SECTOR_ORDER:
                cells = ["" if (code, sector, y) in NULLS else repr(values[(code, sector, y)]) for y in YEARS]
                f.write(f"{code}:{sector}," + ",".join(cells) + "\n")

    # 97 countries x 21 years = 2037 rows over pages of 1000, 1000 and 37.
    many = [f"C{k:02d}" for k in range(97)]
    rows = [row(code, "NY.GDP.MKTP.CD", y, round(rng.uniform(1e9, 1e11), 2)) for code in many for y in range(2020, 1999, -1)]
    pages = [rows[i:i + 1000] for i in range(0, len(rows), 1000)]
    for k, chunk in enumerate(pages, start=1):
        name = f"paged_{k}.json"
        (out / name).write_text(json.dumps(page(chunk, k, len(pages), len(rows))))
        index[url(many, "NY.GDP.MKTP.CD", 2000, 2020, k)] = {"file": name, "status": 200}

    (out / "invalid_country.json").write_text(json.dumps(
        [{"message": [{"id": "120", "key": "Invalid value", "value": "The provided parameter value is not valid"}]}]))
    index[url(["XXX"], "NY.GDP.MKTP.CD", 1991, 2020)] = {"file": "invalid_country.json", "status": 200}

    (out / "server_error.txt").write_text("Service Unavailable")
    index[url(["KEN"], "NY.GDP.MKTP.CD", 1991, 2020)] = {"file": "server_error.txt", "status": 503}

    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
