import json
import os
import time

import numpy as np
import pytest

from wandering_compacta import cli
from wandering_compacta.compacta import disc_chain
from wandering_compacta.grid import GridRegion
from wandering_compacta.rational import Constant, Piece, PiecewiseTarget, RationalMap, Translation

ACCEPTANCE = {}


def record(n, passed, detail):
    """Store the outcome of acceptance criterion ``n`` for the terminal summary."""
    ACCEPTANCE.setdefault(n, []).append((bool(passed), detail))
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        for passed, detail in ACCEPTANCE[n]:
            terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")


class Run:
    """Artifacts of one ``construct`` + ``verify`` invocation read back from disk."""

    def __init__(self, out):
        self.out = str(out)
        with open(os.path.join(self.out, "run.json")) as fh:
            self.run = json.load(fh)
        self.N = int(self.run["stages"])
        self.stage = []
        for j in range(self.N):
            with open(os.path.join(self.out, f"stage_{j}.json")) as fh:
                self.stage.append(json.load(fh))
        with open(os.path.join(self.out, "f_final.json")) as fh:
            self.f_final = RationalMap.from_json(json.load(fh))
        self.verify = None
        path = os.path.join(self.out, "verify.json")
        if os.path.exists(path):
            with open(path) as fh:
                self.verify = json.load(fh)

    def f(self, k):
        """``f_k`` for ``0 <= k <= N``."""
        if k == 0:
            return RationalMap.constant(-3.0)
        return RationalMap.from_json(self.stage[k - 1]["f_next"])

    def eps(self, k):
        """``eps_k`` for ``1 <= k <= N``."""
        return float(self.stage[k - 1]["eps_next"])

    def region(self, j, name):
        return GridRegion.from_json(self.stage[j]["regions"][name])

    def target(self, k):
        """``g_k`` on ``A_k`` (built at stage ``k - 1``)."""
        j = k - 1
        _, Delta = disc_chain(j)
        return PiecewiseTarget([Piece(Delta, self.f(j), "Delta"),
                                Piece(self.region(j, "R_j"), Constant(-3.0), "R"),
                                Piece(self.region(j, "L_image"), Translation(3.0), "L")])

    @staticmethod
    def files_in(out):
        """Contents of the JSON and CSV artifacts in ``out``."""
        found = {}
        for name in sorted(os.listdir(out)):
            if name.endswith((".json", ".csv")):
                with open(os.path.join(out, name), "rb") as fh:
                    found[name] = fh.read()
        return found


def construct_and_verify(out, *args):
    t = time.perf_counter()
    rc = cli.main(["construct", "--out", str(out), *args])
    elapsed = time.perf_counter() - t
    assert rc == 0
    rc = cli.main(["verify", "--out", str(out)])
    run = Run(out)
    run.construct_seconds = elapsed
    run.verify_rc = rc
    return run


@pytest.fixture(scope="session")
def annulus_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("annulus")
    return construct_and_verify(out, "--set", "annulus", "--resolution", "512", "--stages", "4")


@pytest.fixture(scope="session")
def carpet_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("carpet")
    return construct_and_verify(out, "--set", "carpet", "--resolution", "512", "--stages", "3")


@pytest.fixture(scope="session")
def small_annulus(tmp_path_factory):
    """Library-level annulus run (resolution 256, two stages) for unit tests."""
    from wandering_compacta.compacta import generate
    from wandering_compacta.construction import run

    K = generate("annulus", 256)
    f, stages, final = run(K, 2)
    return K, f, stages, final


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
