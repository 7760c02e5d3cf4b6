"""Reference loop for out-of-process denoisers.

A plug-in is any executable that reads framed requests on stdin and writes
framed responses on stdout (see `netframe` for the framing). This module lets
plug-in authors implement only the math:

    # my_denoiser.py
    from voxelworld.plugin import serve_denoiser

    def v(x_t, t, cond, uncond):
        return 0.0 * x_t

    if __name__ == "__main__":
        serve_denoiser(v)
"""

from __future__ import annotations

import sys

import numpy as np

from .netframe import decode_json, read_frame, write_frame


def serve_denoiser(fn) -> None:
    """Answer requests until stdin closes. `fn(x_t, t, cond, uncond) -> v`."""
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    while True:
        head = read_frame(stdin)
        if head is None:
            return
        header = decode_json(head)
        latent = read_frame(stdin)
        cond = read_frame(stdin)
        if latent is None or cond is None:
            return
        x_t = np.frombuffer(latent, dtype="<f4").reshape(header["shape"])
        cond_arr = np.frombuffer(cond, dtype="<f4")
        if header["cond_shape"]:
            cond_arr = cond_arr.reshape(header["cond_shape"])
        v = fn(x_t, int(header["t"]), cond_arr, bool(header["uncond"]))
        write_frame(stdout, np.asarray(v, dtype="<f4").tobytes())
        stdout.flush()
