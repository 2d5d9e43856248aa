"""Smoke test for the eegconn_py extension.

Uses an installed `eegconn_py` if importable, otherwise the library built by
`cargo build --release -p eegconn-py`.
"""

import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def import_module():
    try:
        import eegconn_py

        return eegconn_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libeegconn_py.so"
        if lib.exists():
            tmp = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(tmp, "eegconn_py.so"))
            sys.path.insert(0, tmp)
            import eegconn_py

            return eegconn_py
    sys.exit("eegconn_py not found; run `cargo build --release -p eegconn-py` first")


def main():
    ec = import_module()
    assert ec.features() == ["SM", "ISM", "DC", "COH", "PDC", "PCOH", "PLV"]

    m = ec.metrics_from_counts(3, 2, 1, 4)
    assert (m["sensitivity"], m["precision"], m["accuracy"]) == (0.75, 0.6, 0.7)
    assert abs(m["specificity"] - 4 / 6) < 1e-12

    assert ec.plv([0.1, 0.7, 2.0], [0.1, 0.7, 2.0]) == 1.0

    synth = {
        "coupled_recordings": 2,
        "uncoupled_recordings": 2,
        "channels": 3,
        "fs": 128.0,
        "duration_s": 60.0,
        "coupling_strength": 0.4,
        "onset_s": 10.0,
        "offset_s": 50.0,
        "windows_per_uncoupled": 2,
        "seed": 1,
    }
    windows = ec.synth_windows(synth)
    labels = [w.label for w in windows]
    assert labels.count("seizure") == 4 and labels.count("non_seizure") == 4, labels
    assert windows[0].shape == (2560, 3)

    meas = ec.mvar_measures(windows[0].samples(), 128.0, order=4)
    assert len(meas["freqs"]) == 64
    coh = meas["COH"][10]
    assert all(abs(coh[i][i] - 1.0) < 1e-12 for i in range(3))

    tensors = ec.extract_all(windows)
    assert tensors[0].shape == (7, 10, 3, 3, 5)
    stats = ec.NormStats.fit(tensors)
    normed = stats.apply(tensors)

    model = ec.FusionModel(scheme=2, channels=3, seed=5)
    assert model.n_branches == 7
    trained, history = ec.train(model, normed, {"epochs": 10, "learning_rate": 1e-2, "batch_size": 4,
                                               "optimizer": "adam", "seed": 0})
    assert len(history["epochs"]) == 10
    probs = trained.predict(normed)
    assert all(0.0 <= p <= 1.0 for p in probs)
    metrics = ec.evaluate(trained, normed)
    assert metrics["tp"] + metrics["fp"] + metrics["fn"] + metrics["tn"] == len(normed)

    report = ec.explain(trained, normed)
    for cls in report["classes"]:
        total = sum(f["percent"] for f in cls["features"])
        assert math.isclose(total, 100.0, abs_tol=1e-6), total

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        trained.save(path)
        again = ec.FusionModel.load(path)
        assert again.n_params == trained.n_params
        assert max(abs(a - b) for a, b in zip(again.predict(normed), probs)) < 1e-4

    try:
        ec.FusionModel(scheme=9)
    except ValueError as e:
        assert "scheme" in str(e)
    else:
        raise AssertionError("scheme 9 accepted")

    print(f"eegconn_py {ec.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
