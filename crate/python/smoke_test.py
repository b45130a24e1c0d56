"""Smoke test for the neurotext_py extension.

Build and install first:  pip install maturin && maturin develop -m crates/python/Cargo.toml   (inside a virtualenv; otherwise `maturin build` and pip install the wheel)
"""

import math
import random
import tempfile
from pathlib import Path

import neurotext_py as nt


def main():
    note = nt.render_note([0, 18, 0, 0, 0, 0])
    assert "complete agreement" in note, note
    assert nt.parse_note(note) == [0, 100, 0, 0, 0, 0]

    counts = [0, 0, 0, 2, 14, 10]
    assert nt.parse_note(nt.render_note(counts)) == nt.note_percentages(counts)
    assert nt.parse_note("not a note") is None

    rng = random.Random(0)
    emb = [[rng.gauss(0, 1) for _ in range(8)] for _ in range(20)]
    recall = dict(nt.recall_at_k(emb, emb))
    assert recall == {1: 1.0, 5: 1.0, 10: 1.0}, recall

    n, k = 64, 8
    frame = [math.sin(2 * math.pi * k * i / n) for i in range(n)]
    mags = nt.frame_magnitudes(frame)
    assert len(mags) == n // 2 + 1
    assert max(range(len(mags)), key=mags.__getitem__) == k

    with tempfile.TemporaryDirectory() as d:
        rows = nt.gen_data(d, patients=3, segments_per_patient=2)
        assert rows == 6
        assert (Path(d) / "manifest.csv").exists()

    try:
        nt.render_note([1, 2])
    except ValueError:
        pass
    else:
        raise AssertionError("short vote vector accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
