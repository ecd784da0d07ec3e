"""Regenerate the bundled raw-record sample under data/.

The sample is deterministic (fixed seed) so the files are stable across
regenerations; tests and the README's prepare example depend on them.
"""

from pathlib import Path

from navrisk import ioutils, synth

ROOT = Path(__file__).resolve().parent.parent


def main():
    records, whale_grid = synth.make_raw_sample()
    data_dir = ROOT / "data"
    data_dir.mkdir(exist_ok=True)
    ioutils.write_csv(data_dir / "sample_records.csv", records)
    ioutils.write_csv(data_dir / "sample_whale_grid.csv", whale_grid)
    print(f"wrote {len(records)} records and {len(whale_grid)} grid points to {data_dir}")


if __name__ == "__main__":
    main()
