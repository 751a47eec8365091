#!/usr/bin/env python3
"""Regenerates the offline weather fixtures under data/fixtures/power.

The fixtures are synthetic: a smooth analytic surface climatology (January,
00-23 UTC) written both as raw POWER point payloads and in the client's cache
format, plus a 5-degree climatology grid for arbitrary coordinates. Rerunning
produces byte-identical files.
"""
import json
import math
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data" / "fixtures" / "power"
DATE = "20240115"
PARAMS = ["T2M", "PS", "WS10M"]


def climate(lat, lon):
    """Surface values in POWER units (degC, kPa, m/s)."""
    s = math.sin(math.radians(lat))
    c = math.cos(math.radians(lat))
    t2m = 27.0 - 52.0 * s * s + 3.0 * c * math.cos(math.radians(2.0 * lon))
    ps = 101.3 - 0.5 * math.sin(math.radians(2.0 * lat)) ** 2 + 0.3 * c * math.sin(math.radians(lon))
    ws = 3.0 + 6.0 * math.sin(math.radians(2.0 * lat)) ** 2 + 1.5 * (1.0 + math.sin(math.radians(lon + 30.0)))
    return t2m, ps, ws


def hourly(lat, lon):
    t2m, ps, ws = climate(lat, lon)
    out = {p: {} for p in PARAMS}
    for hour in range(24):
        local = (hour + lon / 15.0) % 24.0
        phase = math.cos(2.0 * math.pi * (local - 15.0) / 24.0)
        key = f"{DATE}{hour:02d}"
        out["T2M"][key] = round(t2m + 4.0 * phase, 2)
        out["PS"][key] = round(ps - 0.1 * phase, 2)
        out["WS10M"][key] = round(max(ws * (1.0 + 0.25 * phase), 0.0), 2)
    return out


def power_payload(lat, lon):
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [lon, lat, 0.0]},
        "properties": {"parameter": hourly(lat, lon)},
        "header": {"title": "synthetic fixture", "fill_value": -999.0, "start": DATE, "end": DATE},
        "parameters": {
            "T2M": {"units": "C", "longname": "Temperature at 2 Meters"},
            "PS": {"units": "kPa", "longname": "Surface Pressure"},
            "WS10M": {"units": "m/s", "longname": "Wind Speed at 10 Meters"},
        },
    }


def key(lat, lon):
    rlat = round(lat * 2.0) / 2.0
    rlon = round(lon * 2.0) / 2.0
    return f"power-hourly_{rlat:+06.1f}_{rlon:+07.1f}_{DATE}-{DATE}_" + "-".join(sorted(PARAMS))


def to_si(name, v):
    return v + 273.15 if name == "T2M" else v * 1000.0 if name == "PS" else v


def cache_entry(lat, lon, payload):
    params = payload["properties"]["parameter"]
    times = sorted(params["T2M"])
    series = {p: [to_si(p, params[p][t]) for t in times] for p in PARAMS}
    response = {
        "latitude_deg": lat,
        "longitude_deg": lon,
        "times": times,
        "series": series,
        "missing": [],
        "source": "fixture",
        "fetched_at": 1705276800.0,
    }
    return {"key": key(lat, lon), "fetched_at": 1705276800.0, "ttl": 21600.0, "response": response}


def main():
    (ROOT / "raw").mkdir(parents=True, exist_ok=True)
    for lat, lon in [(0.0, 0.0), (70.0, 20.0), (-75.0, 0.0), (35.0, -100.0), (45.0, 10.0)]:
        payload = power_payload(lat, lon)
        k = key(lat, lon)
        (ROOT / "raw" / f"{k}.json").write_text(json.dumps(payload, indent=1) + "\n")
        (ROOT / f"{k}.json").write_text(json.dumps(cache_entry(lat, lon, payload), indent=1) + "\n")
    lats = [float(v) for v in range(-90, 91, 5)]
    lons = [float(v) for v in range(-180, 180, 5)]
    grid = {"format": "pstnet-climatology 1", "time": f"{DATE}12", "lat": lats, "lon": lons}
    for i, p in enumerate(PARAMS):
        grid[p] = [[round(climate(la, lo)[i], 3) for lo in lons] for la in lats]
    (ROOT / "climatology.json").write_text(json.dumps(grid) + "\n")


if __name__ == "__main__":
    main()
