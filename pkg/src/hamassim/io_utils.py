"""Atomic file-writing helpers shared by dataset, checkpoint, and report IO."""

import os

import numpy as np


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def atomic_savetxt(path: str, rows, fmt, header: str) -> None:
    tmp = path + ".tmp"
    np.savetxt(tmp, rows, fmt=fmt, delimiter=",", header=header, comments="")
    os.replace(tmp, path)
