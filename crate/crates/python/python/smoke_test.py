"""Smoke test for the `chroma` extension module.

Build and run from the workspace root:

    cargo build -p chroma-python --features extension-module
    cp target/debug/libchroma.so crates/python/python/chroma.so
    python3 crates/python/python/smoke_test.py
"""

import math
import os
import struct
import sys
import tempfile
import zlib

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import chroma  # noqa: E402


def write_png(path, width, height, pixel):
    rows = b"".join(
        b"\x00" + b"".join(bytes(pixel(x, y)) for x in range(width)) for y in range(height)
    )

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(rows)) + chunk(b"IEND", b""))


def main():
    L, a, b = chroma.srgb_to_lab(1.0, 0.0, 0.0)
    assert abs(L - 53.24) < 0.05 and abs(a - 80.09) < 0.05 and abs(b - 67.20) < 0.05, (L, a, b)
    r, g, bl = chroma.lab_to_srgb(L, a, b)
    assert abs(r - 1.0) < 1e-6 and abs(g) < 1e-6 and abs(bl) < 1e-6

    err = chroma.gradcheck(size=16, width=2, coords=40)
    assert err < chroma.gradcheck_tolerance(), err

    with tempfile.TemporaryDirectory() as tmp:
        raw = os.path.join(tmp, "raw")
        data = os.path.join(tmp, "data")
        os.makedirs(raw)
        for i in range(4):
            write_png(os.path.join(raw, f"img{i}.png"), 24, 20,
                      lambda x, y, i=i: ((x * 9 + i * 40) % 256, (y * 11) % 256, 90 + 30 * i))
        written, failed = chroma.prepare(raw, data, size=16)
        assert (written, failed) == (4, 0)

        trainer = chroma.Trainer({"size": 16, "width": 2, "batch": 2, "epochs": 2, "seed": 1})
        rows = trainer.train_epoch(data)
        assert [(s, c) for s, c, _, _ in rows] == [(1, "A"), (1, "B"), (2, "A"), (2, "B")]
        assert all(math.isfinite(d) and math.isfinite(g) for _, _, d, g in rows)
        assert (trainer.epoch, trainer.step) == (1, 2)

        ckpt = os.path.join(tmp, "model.ckpt")
        trainer.save(ckpt)
        resumed = chroma.Trainer.resume(ckpt)
        assert (resumed.epoch, resumed.step) == (1, 2)

        col = chroma.Colorizer(ckpt)
        assert col.image_size == 16
        px = [0.5] * (16 * 16 * 3)
        out1 = col.colorize_pixels(16, 16, px, z_seed=3)
        out2 = col.colorize_pixels(16, 16, px, z_seed=3)
        assert out1 == out2 and len(out1) == 16 * 16 * 3
        assert all(0.0 <= v <= 1.0 for v in out1)

        out_png = os.path.join(tmp, "out.png")
        col.colorize_file(os.path.join(data, "img0.png"), out_png)
        assert os.path.getsize(out_png) > 0

        csv, summary = col.evaluate(data)
        assert csv.splitlines()[0] == "path,ab_mse,psnr_db"
        assert csv.splitlines()[-1].startswith("AGGREGATE,")
        assert summary.startswith("images=4 ")

        try:
            chroma.Trainer({"lr": 0})
        except ValueError as e:
            assert "learning_rate" in str(e)
        else:
            raise AssertionError("lr=0 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
