#!/usr/bin/env python3
"""Smoke test for the overlap_spmv extension module.

Uses an installed `overlap_spmv` if one is importable; otherwise locates the
cdylib that `cargo build -p overlap-spmv-py` produced and imports it in
place. Exits 0 and prints `ok` when every check passes.
"""

import math
import pathlib
import shutil
import sys
import tempfile


def import_module():
    try:
        import overlap_spmv  # noqa: F401  (already installed)

        return overlap_spmv
    except ImportError:
        pass

    root = pathlib.Path(__file__).resolve().parents[1]
    candidates = [
        p
        for profile in ("debug", "release")
        for p in [
            root / "target" / profile / "liboverlap_spmv.so",
            root / "target" / profile / "liboverlap_spmv.dylib",
            root / "target" / profile / "overlap_spmv.dll",
        ]
        if p.exists()
    ]
    if not candidates:
        sys.exit(
            "overlap_spmv is not importable and no built extension was found;\n"
            "run `cargo build -p overlap-spmv-py` first"
        )
    built = max(candidates, key=lambda p: p.stat().st_mtime)
    stage = pathlib.Path(tempfile.mkdtemp(prefix="overlap_spmv_"))
    suffix = ".pyd" if built.suffix == ".dll" else ".so"
    shutil.copy2(built, stage / f"overlap_spmv{suffix}")
    sys.path.insert(0, str(stage))
    import overlap_spmv

    return overlap_spmv


def main():
    m = import_module()

    # matrix construction and the serial kernel
    ident = m.CsrMatrix.identity(5)
    assert ident.spmv([3.0, 1.0, 4.0, 1.0, 5.0]) == [3.0, 1.0, 4.0, 1.0, 5.0]

    a = m.CsrMatrix.from_coo(2, 2, [(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0), (0, 1, 1.0)])
    assert a.n_nz == 3, "duplicate entries must be summed"
    assert a.spmv([1.0, 1.0]) == [4.0, 3.0]

    s = m.CsrMatrix.stencil7(4, 4, 4)
    assert (s.n_rows, s.n_cols) == (64, 64)
    assert s.n_nz == sum(1 for (i, j, _) in s.entries())

    # performance model: the documented 15-nonzeros-per-row numbers
    balance = m.code_balance(15.0, kappa=0.0, split=False)
    assert abs(balance - 6.8) < 1e-12
    assert abs(m.max_performance(balance, 18.1) - 18.1 / 6.8) < 1e-12
    kappa = m.estimate_kappa(2.0, 18.1, 15.0, split=False)
    assert kappa > 0.0
    assert abs(m.b_load_count(kappa, 15.0) - (1.0 + kappa * 15.0 / 8.0)) < 1e-12
    try:
        m.code_balance(-1.0)
        raise AssertionError("negative n_nzr must be rejected")
    except ValueError:
        pass

    # communication plans
    report = m.plan_report(s, 3)
    assert len(report["per_rank"]) == 3
    assert report["total_bytes"] == sum(report["per_rank_sent_bytes"])

    # the distributed engine against the serial reference, all three modes
    b0 = [math.sin(i) for i in range(s.n_cols)]
    serial = s.spmv(b0)
    for mode in m.MODES:
        out = m.run(s, b0, mode=mode, ranks=3, workers=2, iterations=1)
        assert out["max_gap"] <= 1e-12, (mode, out["max_gap"])
        assert max(abs(x - y) for x, y in zip(out["result"], serial)) < 1e-10
        assert out["gflops"] > 0.0
    no_overlap = m.run(s, b0, mode="vector-no-overlap", ranks=3, iterations=1)
    assert no_overlap["result"] == serial, "unsplit mode must match bitwise"
    assert no_overlap["comm_bytes"] == report["total_bytes"]

    # reordering and Matrix Market round trip
    bb = m.CsrMatrix.block_band(60, 6, 2, 3, 8.0, seed=7)
    reordered, perm = bb.rcm()
    assert sorted(perm) == list(range(60))
    assert reordered.n_nz == bb.n_nz
    with tempfile.TemporaryDirectory() as d:
        path = str(pathlib.Path(d) / "m.mtx")
        reordered.write_market(path)
        back = m.CsrMatrix.read_market(path)
        assert back.n_nz == reordered.n_nz
        assert back.entries() == reordered.entries()

    # triad with the exact 4/3 write-allocate correction
    t = m.triad(50_000, repetitions=3, workers=2)
    assert t["corrected_gbps"] == t["raw_gbps"] * (4.0 / 3.0)
    assert t["raw_gbps"] > 0.0

    print("ok")


if __name__ == "__main__":
    main()
