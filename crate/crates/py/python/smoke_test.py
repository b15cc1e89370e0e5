"""Smoke test for the ngemm_py extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke_test.py`.
"""

import os
import tempfile

import ngemm_py as ng


def main():
    assert ng.kernel_shape("v256", "u8") == (32, 4, 8)
    assert ng.kernel_shape("v512", "i16") == (32, 2, 16)

    a = ng.Matrix.from_rows("u8", [[1, 2], [3, 4]])
    b = ng.Matrix.from_rows("i8", [[5, -1], [2, 0]])
    assert ng.gemm_ref(a, b).to_list() == [[3, 2], [11, 6]]

    a = ng.mat_random("u8", 37, 70, seed=1, lo=0, hi=127)
    b = ng.mat_random("i8", 13, 70, seed=2)
    want = ng.gemm_ref(a, b)
    for isa in ("scalar", "v256", "v512"):
        packed = ng.pack(a, isa, perm="kmn")
        assert packed.unpack() == a
        assert ng.gemm_ngemm(packed, b, "exact") == want
        assert ng.gemm_conventional(a, b, isa, "sat") == want

    # full-range u8 can saturate the pairwise i16 stage
    a = ng.Matrix.from_rows("u8", [[255, 255]])
    b = ng.Matrix.from_rows("i8", [[127, 127]])
    sat = ng.gemm_ngemm(ng.pack(a, "v256"), b, "sat")
    assert sat.to_list() == [[32767]] == ng.gemm_ref(a, b, saturating=True).to_list()
    assert ng.gemm_ngemm(ng.pack(a, "v256"), b, "exact").to_list() == [[64770]]

    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "w.bin")
        packed = ng.pack(ng.mat_random("i16", 9, 5, seed=3), "v256", tile=(8, 1, 2))
        packed.write(p)
        back = ng.PackedWeight.read(p)
        assert back.tile == (8, 1, 2, "mnk") and back.padded_dims == (16, 6)

    assert ng.speedup_ratio(1, 512, 32, 1.0, 1.0) == 1.3125
    samples = []
    for k in (128, 256, 512, 1024):
        l = k // 32
        samples.append((64, k, 32, 64 * (l * 5.0 + 2.0 * 5), 64 * l * 5.0))
    fit = ng.fit_constants(samples)
    assert abs(fit["c1"] - 2.0) < 1e-9 and abs(fit["c2"] - 5.0) < 1e-9

    record = ng.tune(16, 8, 32, isa="v256")
    assert record.startswith("16x8x32:u8i8:v256 ")

    try:
        ng.pack(ng.mat_random("i32", 2, 2, seed=1), "v256")
    except ValueError:
        pass
    else:
        raise AssertionError("i32 weights should be rejected")

    print(f"ngemm_py smoke test passed (host isa: {ng.host_isa()})")


if __name__ == "__main__":
    main()
