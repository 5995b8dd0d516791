"""Smoke test for the fedrap_py extension.

Loads the module from an installed wheel if present, otherwise from the cargo
build output (``cargo build -p fedrap-py`` first). Exits non-zero on failure.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load_module():
    try:
        import fedrap_py

        return fedrap_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libfedrap_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            dest = tmp / "fedrap_py.so"
            shutil.copy(lib, dest)
            spec = importlib.util.spec_from_file_location("fedrap_py", dest)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("fedrap_py not found; run `cargo build -p fedrap-py` first")


def toy_rows():
    rows = []
    for u in range(12):
        for j in range(30):
            if (u * 7 + j) % 3 != 0:
                rows.append((f"u{u}", f"i{j}", 4.0, j))
    return rows


def main():
    fr = load_module()

    assert fr.hr_at_k(10) == 1.0 and fr.hr_at_k(11) == 0.0
    assert fr.ndcg_at_k(3) == 0.5
    assert fr.rank_position([0.7, 0.7, 0.7, 0.7, 0.1]) == 4
    assert abs(fr.shrink(0.3, 0.1) - 0.2) < 1e-15
    assert fr.shrink(-0.05, 0.1) == 0.0
    assert abs(fr.schedule_weight("tanh", 1.0, 10) - math.tanh(1.0)) < 1e-12
    assert fr.schedule_weight("square", 1.0, 5) == 0.0
    assert abs(fr.sensitivity_bound(0.05, 0.1, 10) - 0.001) < 1e-15

    cfg = fr.Config(rounds=3, local_epochs=2, dim=4, seed=7, v1=0.001, v2=0.01)
    assert cfg.to_dict()["rounds"] == 3
    assert fr.Config.from_toml(cfg.to_toml()).config_hash() == cfg.config_hash()
    assert fr.Config(variant="fedrap-l2").label() == "fedrap-l2"

    data = fr.Dataset.from_interactions(toy_rows(), min_interactions=5, eval_negatives=5, seed=7)
    assert data.n_users == 12 and data.n_items == 30
    client = data.client(0)
    assert len(client["eval_negatives"]) == 5

    with tempfile.TemporaryDirectory() as out:
        run = fr.train(cfg, data, out)
        assert len(run.reports) == 3
        assert run.reports[-1]["round"] == 3
        assert os.path.exists(os.path.join(out, "rounds.jsonl"))
        c = run.global_table()
        assert len(c) == 30 and len(c[0]) == 4
        assert len(run.local_table(0)) == 30
        assert 0.0 < run.score(0, 0) < 1.0
        metrics = run.evaluate()
        assert 0.0 <= metrics["hr_at_k"] <= 1.0

    again = fr.train(cfg, data)
    assert again.reports == run.reports

    try:
        fr.Config(no_such_key=1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
