"""Smoke test for the transnet Python module.

    pip install --no-build-isolation -e crates/transnet-py
    python python/smoke.py
"""
import json
import math
import pathlib
import tempfile

import transnet

ROOT = pathlib.Path(__file__).resolve().parent.parent

PROBLEM = {
    "field": {
        "omega": [0.5, 0.5],
        "components": [
            [{"kind": "constant", "value": 1.0}],
            [{"kind": "constant", "value": -0.5}],
        ],
    },
    "u0": {"kind": "profile", "profile": {"kind": "bump", "center": [0.5], "radius": 0.5, "height": 1.0}},
    "t_hat": 0.5,
    "domain": {"lo": [0.0], "hi": [1.0]},
}


def main():
    text = json.dumps(PROBLEM)

    net = transnet.CharNet(text, 0.1)
    t, x, y = 0.3, 0.2, [0.4, -0.6]
    exact = x + t * (0.5 * y[0] * 1.0 + 0.5 * y[1] * -0.5)
    z = net.eval(t, [x], y)[0]
    assert abs(z - exact) <= 0.1, (z, exact)
    cert = json.loads(net.certify(200, 1))
    assert cert["pass"], cert
    assert json.loads(net.lipschitz(50, 1))["pass"]
    print(f"char net: size={net.size} depth={net.depth} sup_err={cert['sup_err']:.3e}")

    sol = transnet.SolutionNet(text, 0.1)
    cert = json.loads(sol.certify(50, 1))
    assert cert["pass"], cert
    print(f"solution net: size={sol.size} sup_err={cert['sup_err']:.3e}")

    slope, _, _ = transnet.fit_rate([(e, 5.0 / e**2) for e in (0.1, 0.05, 0.025)])
    assert math.isclose(slope, 2.0, abs_tol=1e-9)

    with tempfile.TemporaryDirectory() as out:
        report = json.loads(transnet.run("convergence", str(ROOT / "configs" / "smoke.json"), out))
        csv = pathlib.Path(out, "convergence.csv").read_text()
    assert csv.splitlines()[0] == transnet.CSV_HEADER
    assert all(r["status"] == "PASS" for r in report["rows"]), report["rows"]
    print(f"convergence: {len(report['rows'])} rows, checks {[c['name'] for c in report['checks']]}")

    try:
        transnet.CharNet(text, 0.1, direction="sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("bad direction accepted")
    print("ok")


if __name__ == "__main__":
    main()
