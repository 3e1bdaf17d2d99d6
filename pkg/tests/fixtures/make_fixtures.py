"""Regenerate the CSV fixtures used by the CLI tests.

Run from any directory with ``python3 make_fixtures.py``; output is
deterministic, so the committed files should not change.
"""
from pathlib import Path

from robust_mte.montecarlo import DgpSpec, dgp_sample

HERE = Path(__file__).parent


def _rows(data, w=None):
    for i in range(data.n):
        row = [f"{data.y[i]:.6f}", str(int(data.d[i])), data.instrument_levels[data.z[i]]]
        if w is not None:
            row.append(w)
        yield row


def _write(name, header, rows):
    with open(HERE / name, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def main():
    strong = dgp_sample(DgpSpec.linear((0.2, 0.5, 0.8), n=2000, seed=7))
    _write("strong.csv", ["y", "d", "z"], _rows(strong))
    _write("weak.csv", ["y", "d", "z"],
           _rows(dgp_sample(DgpSpec.linear((0.45, 0.5, 0.55), n=2000, seed=7))))
    _write("fail.csv", ["y", "d", "z"],
           _rows(dgp_sample(DgpSpec.linear((0.5, 0.5, 0.5), n=2000, seed=7))))
    _write("noz.csv", ["y", "d"], ([r[0], r[1]] for r in _rows(strong)))
    # no treated unit at the baseline level
    rows = [r if r[2] != "z0" else [r[0], "0", r[2]] for r in _rows(strong)]
    _write("overlap.csv", ["y", "d", "z"], rows)
    # two covariate cells with cell ATEs 0 and 1
    g1 = dgp_sample(DgpSpec.linear((0.2, 0.5, 0.8), n=2000, seed=8))
    g2 = dgp_sample(DgpSpec(order=1, mu1=1.0, mu0=0.0, rho1=(5.0,), rho0=(5.0,),
                            p_vec=(0.3, 0.5, 0.7), n=2000, seed=9))
    _write("cov.csv", ["y", "d", "z", "w"], [*_rows(g1, "g1"), *_rows(g2, "g2")])


if __name__ == "__main__":
    main()
