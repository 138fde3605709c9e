"""CSV / JSON helpers shared by all serialization code.

Floats are written with %.17g so that float64 values round-trip exactly;
rereading a file written by these helpers reproduces the array bit for bit.
"""

import json

import numpy as np


def format_float(x):
    return "%.17g" % float(x)


def write_matrix_csv(path, matrix, header=None):
    """Write a 2-D array as CSV with a header row and 17-significant-digit floats."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if header is None:
        header = ["c%d" % j for j in range(matrix.shape[1])]
    if len(header) != matrix.shape[1]:
        raise ValueError("header length does not match column count")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_matrix_csv(path):
    """Read a CSV written by write_matrix_csv. Returns (array, header)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = [
            [float(tok) for tok in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    if data:
        arr = np.asarray(data, dtype=np.float64)
    else:
        arr = np.empty((0, len(header)), dtype=np.float64)
    return arr, header


def write_json(path, obj):
    """Deterministic JSON: sorted keys, repr-exact floats, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
