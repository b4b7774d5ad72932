"""Regenerates the bundled embedding fixtures in the exporter's TSV layout."""
import pathlib
import sys

import numpy as np

HERE = pathlib.Path(__file__).parent
DIMS = {"semantic": 32, "acoustic": 24, "phonetic": 16}


def read_words():
    return (HERE / "vocabulary.txt").read_text(encoding="utf-8").split()


def write(path, encoder, words, table):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"#encoder={encoder} dim={table.shape[1]} version=1 model=fixture-gaussian-1\n")
        for w, row in zip(words, table):
            f.write(w + "\t" + "\t".join(f"{x:.6f}" for x in row) + "\n")


def main():
    words = read_words()
    tables = {}
    for i, (name, dim) in enumerate(DIMS.items()):
        rng = np.random.default_rng(1000 + i)
        tables[name] = np.round(rng.standard_normal((len(words), dim)), 6)
        write(HERE / "embeddings" / f"{name}.tsv", name, words, tables[name])
    combined = np.concatenate([tables["semantic"], tables["phonetic"]], axis=1)
    write(HERE / "embeddings" / "combined.tsv", "combined", words, combined)
    return 0


if __name__ == "__main__":
    sys.exit(main())
