"""End-to-end smoke test of the Python bindings.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/hydrodispatch_py-*.whl
"""

import csv
import io
import json
import math
import tempfile
from pathlib import Path

import hydrodispatch_py as hd


def main() -> None:
    eta = hd.compute_efficiency(hd.MW_PER_CFS_FT * 0.9 * 1000.0 * 300.0, 1000.0, 300.0)
    assert math.isclose(eta, 0.9, rel_tol=1e-12), eta
    assert abs(hd.pmax_available(125.0, 307.1, 380.2) - 90.81) < 0.5
    units, unserved = hd.allocate_units(238.44, 3, [90.81] * 3)
    assert [round(u, 2) for u in units] == [79.48] * 3 and unserved == 0.0

    try:
        hd.compute_efficiency(1.0, 0.0, 300.0)
    except hd.HydroError as e:
        assert e.code == "domain", e.code
    else:
        raise AssertionError("zero flow accepted")

    store = hd.Store()
    counts = store.ingest_bundle(hd.synthetic_bundle(seed=42, hours=8784 + 2 * 8760))
    assert counts["static_units"] == 17, counts
    assert sorted(p["project_name"] for p in store.plants()) == ["DOWN", "UP"]

    report = store.analyze_pair("UP", "DOWN")
    assert set(report.best_lags.values()) == {2}, report.best_lags
    assert len(store.efficiency_curves("UP", persist=True)) == 9

    models = [hd.Model.train(store, plant, epochs=4, seed=42) for plant in ("UP", "DOWN")]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "UP.json"
        models[0].save(str(path))
        assert hd.Model.load(str(path)).to_json() == models[0].to_json()
    print(models[0].report)

    runs = [hd.run(store, models, "dry:summer", links=report, seed=42) for _ in range(2)]
    assert runs[0].csv() == runs[1].csv()
    rows = list(csv.reader(io.StringIO(runs[0].csv())))
    assert len(rows) == 18, len(rows)
    assert json.loads(runs[0].to_json())["season"] == runs[0].season == "summer"
    print(runs[0].csv(), end="")
    print("smoke ok")


if __name__ == "__main__":
    main()
