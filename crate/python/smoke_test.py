"""Smoke test for the Python bindings and the CLI file formats.

Imports the installed `pytrafficrules` module, or falls back to the library
built by `cargo build -p trafficrules-py --release --features extension-module`.
Every file the CLI writes is validated against the schemas in `schemas/`.

    python python/smoke_test.py
"""

import importlib
import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

ROOT = Path(__file__).resolve().parent.parent
TARGET = ROOT / "target"


def load_module():
    try:
        return importlib.import_module("pytrafficrules")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = TARGET / profile / "libpytrafficrules.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "pytrafficrules.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("pytrafficrules")
    sys.exit("pytrafficrules not found; build it with "
             "`cargo build -p trafficrules-py --release --features extension-module`")


def find_binary():
    for profile in ("release", "debug"):
        exe = TARGET / profile / "trafficrules"
        if exe.exists():
            return exe
    sys.exit("trafficrules binary not found; run `cargo build --release`")


def schemas():
    docs = {p.name.split(".")[0]: json.loads(p.read_text()) for p in (ROOT / "schemas").glob("*.schema.json")}
    registry = Registry().with_resources((d["$id"], Resource.from_contents(d)) for d in docs.values())
    return docs, registry


def validate(doc, schema, registry):
    cls = jsonschema.validators.validator_for(schema)
    cls(schema, registry=registry).validate(doc)


def check_bindings(m, docs, registry):
    assert m.reward([0.2, 0.8], 0.0) == 0.5
    assert m.reward([0.2, 0.8], math.inf) == 0.2
    u = m.shaped_utilities([4.0, 3.0, 2.0, 1.0])
    assert abs(sum(u)) < 1e-12 and u[0] > u[1] > u[2] == u[3]

    env = {"format_version": 1, "bounds": [10.0, 10.0], "obstacles": [[4.0, 0.0, 6.0, 8.0]]}
    validate(env, docs["environment"], registry)
    d = m.shortest_distance(json.dumps(env), 0.2, (2.0, 2.0), (8.0, 2.0))
    assert abs(d - (2 * math.hypot(1.8, 6.2) + 2.4)) < 1e-9, d

    scenarios = m.generate(7, 2, size=8)
    for s in scenarios:
        validate(json.loads(s), docs["scenario"], registry)
    crossing = m.crossing_fixture()
    report = json.loads(m.evaluate_policies([crossing], ["baseline", "expert"], runs=2, seed=1, horizon=200))
    validate(report, docs["report"], registry)
    base, expert = report["policies"]
    assert expert["r0"]["mean"] >= base["r0"]["mean"]
    try:
        m.generate(7, 1, size=3)
    except ValueError:
        pass
    else:
        raise AssertionError("an invalid size should raise ValueError")
    print(f"bindings ok: crossing R0 expert {expert['r0']['mean']:.1f} vs baseline {base['r0']['mean']:.1f}")


def check_cli(exe, docs, registry):
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "data"

        def run(*args):
            subprocess.run([str(exe), "--seed", "3", *map(str, args)], check=True, capture_output=True)

        run("gen", "--count", "2", "--out", data)
        validate(json.loads((data / "manifest.json").read_text()), docs["manifest"], registry)
        for f in sorted(data.glob("scenario_*.json")):
            validate(json.loads(f.read_text()), docs["scenario"], registry)

        run("eval", "--policy", "expert", "--policy", "baseline", "--testset", data,
            "--runs", "1", "--horizon", "80", "--out", tmp / "report.json")
        validate(json.loads((tmp / "report.json").read_text()), docs["report"], registry)

        run("replay", "--policy", "expert", "--scenario", data / "scenario_0000.json",
            "--horizon", "20", "--out", tmp / "trace.jsonl")
        lines = (tmp / "trace.jsonl").read_text().splitlines()
        trace = docs["trace"]
        header = dict(trace["$defs"]["header"], **{"$id": trace["$id"] + "#header"})
        frame = dict(trace["$defs"]["frame"], **{"$id": trace["$id"] + "#frame"})
        validate(json.loads(lines[0]), header, registry)
        for line in lines[1:]:
            validate(json.loads(line), frame, registry)
        assert len(lines) == 21

        run("profile", "--policy", "baseline", "--agents", "5,10", "--steps", "5", "--out", tmp / "profile.json")
        validate(json.loads((tmp / "profile.json").read_text()), docs["profile"], registry)
    print("cli files ok")


def main():
    docs, registry = schemas()
    check_bindings(load_module(), docs, registry)
    check_cli(find_binary(), docs, registry)


if __name__ == "__main__":
    main()
