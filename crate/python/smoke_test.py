"""Build the extension with cargo, import it and reproduce the arthritis fit.

    python3 python/smoke_test.py
"""

import importlib
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "crates" / "core" / "data"


def build_module():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "lorgee-python"], cwd=ROOT, check=True
    )
    lib = ROOT / "target" / "release" / "liblorgee_py.so"
    out = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, out / "lorgee_py.so")
    sys.path.insert(0, str(out))
    return importlib.import_module("lorgee_py")


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    lg = build_module()
    art = str(DATA / "arthritis.csv")
    data = lg.load_csv(
        art, "y", "id", time="time", covariates="factor:time,factor:trt,factor:baseline"
    )
    assert (data.n_subjects, data.n_times, data.n_categories) == (301, 3, 5), data

    fit = lg.fit_ordinal(data, link="logit", structure="uniform")
    coef = fit.coef()
    assert close(coef["factor(trt)2"], -0.51212, 5e-3), coef
    assert close(coef["factor(baseline)5"], -3.96613, 5e-3), coef
    se = dict(zip(fit.coefficient_names, fit.standard_errors))
    assert close(se["factor(trt)2"], 0.16799, 5e-3), se
    assert close(fit.local_odds_ratios[0][4], 2.257, 5e-3)
    assert fit.converged and fit.iterations <= 7
    assert fit.null_test()[2] < 1e-4
    assert "GEE FOR ORDINAL MULTINOMIAL RESPONSES" in fit.summary()

    bigger = lg.fit_ordinal(
        lg.load_csv(
            art,
            "y",
            "id",
            time="time",
            covariates="factor:time,factor:trt,factor:baseline,factor:sex,age",
        ),
        structure="uniform",
    )
    w = lg.wald(fit, bigger)
    assert w["df"] == 2 and close(w["statistic"], 3.9554, 0.02), w

    phi = lg.intrinsic_pars(lg.load_csv(art, "y", "id", time="time"))
    for a, b in zip(phi, [0.6517843, 0.9097341, 0.9022272]):
        assert close(a, b, 5e-3), phi

    t = lg.matrix_lor([[1.0, 1.0], [1.0, 1.0]])
    assert all(close(v, 1 / 9, 1e-12) for row in t for v in row)
    lor = lg.local_odds_ratios(lg.matrix_lor([[2.0, 3.0], [4.0, 5.0]]))
    assert close(lor[1][0], 4.0, 1e-9), lor
    raked = lg.ipf([[1.0, 2.0], [3.0, 4.0]], [0.5, 0.5], [0.3, 0.7])
    assert close(raked[0][0] + raked[0][1], 0.5, 1e-6)

    housing = lg.load_csv(
        str(DATA / "housing.csv"), "y", "id", time="time", covariates="factor:time,factor:sec"
    )
    nom = lg.fit_nominal(housing, structure="time.exch")
    assert nom.converged and nom.link == "bcl"
    try:
        lg.fit_nominal(housing, structure="uniform")
    except ValueError:
        pass
    else:
        raise AssertionError("uniform accepted for a nominal response")

    print("smoke test passed:", fit)


if __name__ == "__main__":
    main()
